"""Navigation policies: the rule-based bout follower and tabular TD(lambda).

The 9-state space is 3 concentration bands (off-plume, low, high) crossed
with 3 stereo relations (left < right, equal, left > right), state id =
band * 3 + relation. Seven actions are visible to the learners; Pause and
Land exist only for the rule-based agent and the termination layer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import kernels
from .filters import BoutSignal, FilterBank, HeadingEstimate, HeadingMode

N_STATES = 9
N_ACTIONS = 7


class Action(IntEnum):
    TURN_LEFT_45 = 0
    TURN_RIGHT_45 = 1
    TURN_LEFT_90 = 2
    TURN_RIGHT_90 = 3
    SURGE = 4
    CAST_LEFT = 5
    CAST_RIGHT = 6
    # extended set, used by the rule-based agent / termination layer only
    PAUSE = 7
    LAND = 8


TURN_DELTAS = {
    Action.TURN_LEFT_45: 45.0,
    Action.TURN_RIGHT_45: -45.0,
    Action.TURN_LEFT_90: 90.0,
    Action.TURN_RIGHT_90: -90.0,
}


@dataclass(frozen=True)
class BandThresholds:
    """Concentration band cuts on the smoothed signal; off < low < high."""

    off: float
    high: float
    stereo_deadband: float

    def __post_init__(self):
        if not 0 <= self.off < self.high:
            raise ValueError("need 0 <= off < high band thresholds")
        if self.stereo_deadband < 0:
            raise ValueError("stereo deadband must be >= 0")


def encode_state(left: float, right: float, smoothed: float,
                 th: BandThresholds) -> int:
    """Map a stereo sample onto the 9-cell state table.

    Band comes from the smoothed channel maximum; the stereo relation uses
    a symmetric equality deadband on the instantaneous difference.
    """
    if smoothed < th.off:
        band = 0
    elif smoothed < th.high:
        band = 1
    else:
        band = 2
    diff = left - right
    if diff < -th.stereo_deadband:
        rel = 0
    elif diff > th.stereo_deadband:
        rel = 2
    else:
        rel = 1
    return band * 3 + rel


def calibrate_thresholds(concentration_fn, transect: list[tuple[float, float, float]],
                         t: float = 1e9, off_quantile: float = 0.05,
                         high_quantile: float = 0.60,
                         deadband_frac: float = 0.10) -> BandThresholds:
    """Derive band cuts from a calibration transect through the plume.

    Off cut is the 5th percentile of the on-plume signal along the transect,
    high cut the 60th percentile; the stereo deadband is a fraction of the
    off cut.
    """
    vals = np.array([concentration_fn(x, y, z, t) for x, y, z in transect])
    on = vals[vals > 1e-12]
    if on.size < 4:
        raise ValueError("calibration transect never crosses the plume")
    off = float(np.quantile(on, off_quantile))
    high = float(np.quantile(on, high_quantile))
    if high <= off:
        high = off * 2.0 + 1e-9
    return BandThresholds(off=off, high=high, stereo_deadband=deadband_frac * off)


# ---------------------------------------------------------------------------
# Rule-based bout follower
# ---------------------------------------------------------------------------

@dataclass
class OioParams:
    thresholds: BandThresholds
    surge_step: float = 0.30
    cast_step: float = 0.30
    cast_run_start: int = 1      # casts per leg before reversing, then widening
    cast_run_max: int = 10
    hard_turn_cutoff: float = 45.0   # |phi| at/above this -> 90 deg turn
    align_tolerance: float = 30.0    # deg of upwind misalignment tolerated while casting


class OioAgent:
    """Casting/surging policy driven by bout signals and the stereo heading.

    Off plume it keeps the nose into the wind (the local wind vector is
    observable) and flies a widening crosswind cast pattern with an upwind
    surge at each reversal. Entering the plume it surges, steering with the
    lag-derived heading; losing the plume after solid contact it comes
    about once, then resumes casting. The termination layer can override
    any decision with Pause or Land.
    """

    def __init__(self, params: OioParams):
        self.p = params
        self.reset()

    def reset(self):
        self.cast_side = 1          # +1 = left, -1 = right
        self.cast_remaining = self.p.cast_run_start
        self.cast_run = self.p.cast_run_start
        self.lost_streak = 0
        self.had_contact = False
        self.last_action: Action | None = None

    def _turn_for(self, phi: float) -> Action:
        if phi >= self.p.hard_turn_cutoff:
            return Action.TURN_LEFT_90
        if phi > 0:
            return Action.TURN_LEFT_45
        if phi <= -self.p.hard_turn_cutoff:
            return Action.TURN_RIGHT_90
        return Action.TURN_RIGHT_45

    def _align_upwind(self, heading_deg: float, wind: tuple[float, float, float]) -> Action | None:
        """Turn command to face into the wind, None when close enough."""
        wx, wy = wind[0], wind[1]
        if math.hypot(wx, wy) < 0.05:
            return None
        upwind = math.degrees(math.atan2(-wy, -wx))
        err = (upwind - heading_deg + 180.0) % 360.0 - 180.0
        if abs(err) <= self.p.align_tolerance:
            return None
        if abs(err) >= 67.5:
            return Action.TURN_LEFT_90 if err > 0 else Action.TURN_RIGHT_90
        return Action.TURN_LEFT_45 if err > 0 else Action.TURN_RIGHT_45

    def _next_cast(self, blocked_side: int = 0) -> Action:
        if self.cast_remaining <= 0:
            self.cast_side = -self.cast_side
            self.cast_run = min(self.cast_run * 2, self.p.cast_run_max)
            self.cast_remaining = self.cast_run
            return Action.SURGE    # creep upwind once per reversal
        if blocked_side == self.cast_side:
            self.cast_side = -self.cast_side
            self.cast_remaining = self.cast_run
        self.cast_remaining -= 1
        return Action.CAST_LEFT if self.cast_side > 0 else Action.CAST_RIGHT

    def notify_collision(self) -> None:
        """Feed back that the last primitive was blocked."""
        if self.last_action in (Action.CAST_LEFT, Action.CAST_RIGHT):
            self.cast_side = -self.cast_side
            self.cast_remaining = self.cast_run

    def _steer_to(self, bearing_err: float) -> Action:
        """Discrete turn/surge toward a relative bearing (deg, left positive)."""
        if abs(bearing_err) >= 67.5:
            return Action.TURN_LEFT_90 if bearing_err > 0 else Action.TURN_RIGHT_90
        if abs(bearing_err) > 25.0:
            return Action.TURN_LEFT_45 if bearing_err > 0 else Action.TURN_RIGHT_45
        return Action.SURGE

    def act(self, bout: BoutSignal, heading: HeadingEstimate, smoothed: float,
            heading_deg: float, wind: tuple[float, float, float],
            forward_range: float,
            peak_bearing_err: float | None = None,
            peak_distance: float = 0.0) -> Action:
        """One decision. ``peak_bearing_err``/``peak_distance`` describe the
        short-term inertial memory of where the strongest odor was sensed."""
        action = self._decide(bout, heading, smoothed, heading_deg, wind,
                              forward_range, peak_bearing_err, peak_distance)
        self.last_action = action
        return action

    def _decide(self, bout, heading, smoothed, heading_deg, wind, forward_range,
                peak_bearing_err, peak_distance):
        on_plume = smoothed >= self.p.thresholds.off
        if on_plume and bout is not BoutSignal.LOSING_PLUME:
            # contact held: exploit
            self.lost_streak = 0
            self.had_contact = True
            self.cast_run = self.p.cast_run_start
            self.cast_remaining = self.p.cast_run_start
            if bout is BoutSignal.ENTERING_PLUME and heading.mode is HeadingMode.TURN:
                return self._turn_for(heading.phi_deg)
            align = self._align_upwind(heading_deg, wind)
            if align is not None:
                return align
            if forward_range < 0.45:
                return self._next_cast()
            return Action.SURGE
        # losing or fully off plume: explore
        self.lost_streak += 1
        if self.lost_streak > 16:
            self.had_contact = False   # stale contact: back to broad search
        if peak_bearing_err is not None and peak_distance > 0.4:
            # plume dropped out after solid contact: fly back toward the
            # remembered odor peak (short-horizon inertial odometry)
            return self._steer_to(peak_bearing_err)
        align = self._align_upwind(heading_deg, wind)
        if align is not None and not self.had_contact:
            return align
        return self._next_cast()


# ---------------------------------------------------------------------------
# Tabular TD(lambda) learners
# ---------------------------------------------------------------------------

@dataclass
class TabularAgent:
    """Q table with accumulating eligibility traces and an epsilon schedule."""

    n_states: int = N_STATES
    n_actions: int = N_ACTIONS
    gamma: float = 0.9
    alpha: float = 1e-4
    lam: float = 0.8
    epsilon: float = 1.0
    epsilon_decay: float = 0.999
    epsilon_min: float = 0.01
    expected_uniform: bool = False   # True: strict uniform next-state average
    q: np.ndarray = field(default=None)
    e: np.ndarray = field(default=None)
    episode: int = 0

    def __post_init__(self):
        if self.q is None:
            self.q = np.zeros((self.n_states, self.n_actions))
        if self.e is None:
            self.e = np.zeros((self.n_states, self.n_actions))

    def start_episode(self):
        self.e[:] = 0.0

    def current_epsilon(self) -> float:
        return max(self.epsilon_min, self.epsilon * self.epsilon_decay ** self.episode)

    def end_episode(self):
        self.episode += 1

    def greedy_action(self, s: int) -> int:
        return int(np.argmax(self.q[s]))

    def policy_distribution(self, s: int, eps: float) -> np.ndarray:
        """Epsilon-greedy probabilities with lowest-index greedy tie break."""
        p = np.full(self.n_actions, eps / self.n_actions)
        p[self.greedy_action(s)] += 1.0 - eps
        return p


def select_action(agent: TabularAgent, s: int, rng: np.random.Generator,
                  eps: float | None = None) -> int:
    """Epsilon-greedy draw; ties between equal Q values go to the lowest index."""
    if not 0 <= s < agent.n_states:
        raise ValueError(f"state id {s} out of range")
    if eps is None:
        eps = agent.current_epsilon()
    if rng.random() < eps:
        return int(rng.integers(agent.n_actions))
    return agent.greedy_action(s)


def q_lambda_update(agent: TabularAgent, s: int, a: int, r: float, sp: int,
                    done: bool = False) -> float:
    """Watkins Q(lambda): max target, traces cut after exploratory actions."""
    greedy_taken = agent.q[s, a] >= agent.q[s].max()
    target = r if done else r + agent.gamma * float(agent.q[sp].max())
    delta = target - agent.q[s, a]
    agent.e[s, a] += 1.0
    agent.q += agent.alpha * delta * agent.e
    if not greedy_taken:
        agent.e[:] = 0.0
    else:
        agent.e *= agent.gamma * agent.lam
    return delta


def expected_sarsa_lambda_update(agent: TabularAgent, s: int, a: int, r: float,
                                 sp: int, done: bool = False,
                                 eps: float | None = None) -> float:
    """Expected SARSA(lambda): policy-averaged target, accumulating traces."""
    if eps is None:
        eps = agent.current_epsilon()
    if done:
        target = r
    else:
        if agent.expected_uniform:
            expectation = 0.0
            for j in range(agent.n_actions):
                expectation += agent.q[sp, j]
            expectation /= agent.n_actions
        else:
            expectation = 0.0
            for j in range(agent.n_actions):
                expectation += (eps / agent.n_actions) * agent.q[sp, j]
            expectation += (1.0 - eps) * agent.q[sp, agent.greedy_action(sp)]
        target = r + agent.gamma * expectation
    delta = target - agent.q[s, a]
    agent.e[s, a] += 1.0
    agent.q += agent.alpha * delta * agent.e
    agent.e *= agent.gamma * agent.lam
    return delta


@dataclass
class LearningCurve:
    returns: np.ndarray
    steps: np.ndarray

    def tail_mean(self, fraction: float = 0.1) -> float:
        n = max(1, int(round(self.returns.size * fraction)))
        return float(self.returns[-n:].mean())

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("episode,return,steps\n")
            for i, (r, s) in enumerate(zip(self.returns, self.steps)):
                f.write(f"{i},{float(r)!r},{int(s)}\n")


def train(agent: TabularAgent, env, episodes: int, seed: int,
          algo: str = "expected_sarsa", route: str | None = None) -> LearningCurve:
    """Train on an episodic env; dispatches to the packed kernel when possible.

    ``algo`` is "q_lambda" or "expected_sarsa". Envs exposing
    ``kernel_pack()`` (the miniature plume world) run inside the compiled
    loop; anything else falls back to a generic Python episode loop. Both
    paths pregenerate identical random streams, so results are seed-stable
    and route-independent.
    """
    if episodes < 0:
        raise ValueError("episodes must be >= 0")
    if algo not in ("q_lambda", "expected_sarsa"):
        raise ValueError(f"unknown algorithm {algo!r}")
    if episodes == 0:
        return LearningCurve(np.zeros(0), np.zeros(0, dtype=np.int64))
    max_steps = env.budget
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7C0FFEE]))
    u_explore = rng.random((episodes, max_steps))
    u_action = rng.integers(0, agent.n_actions, size=(episodes, max_steps))
    # precomputed in plain Python so both loop routes see identical values
    eps_schedule = np.array([
        max(agent.epsilon_min,
            agent.epsilon * agent.epsilon_decay ** (agent.episode + i))
        for i in range(episodes)])
    algo_id = kernels.ALGO_Q_LAMBDA if algo == "q_lambda" else kernels.ALGO_EXPECTED_SARSA

    if hasattr(env, "kernel_pack"):
        world, events, offsets = env.kernel_pack(episodes, seed)
        returns, steps = kernels.train_tabular(
            world, agent.q, agent.e,
            gamma=agent.gamma, alpha=agent.alpha, lam=agent.lam,
            eps_schedule=eps_schedule, episodes=episodes, max_steps=max_steps,
            algo=algo_id, uniform_expect=1 if agent.expected_uniform else 0,
            events=events, event_offsets=offsets,
            u_explore=u_explore, u_action=u_action, route=route)
        agent.episode += episodes
        return LearningCurve(returns, steps)

    returns = np.zeros(episodes)
    steps_out = np.zeros(episodes, dtype=np.int64)
    for ep in range(episodes):
        eps = float(eps_schedule[ep])
        agent.start_episode()
        s = env.reset_episode(ep, seed, episodes)
        total = 0.0
        k = 0
        for k in range(max_steps):
            if u_explore[ep, k] < eps:
                a = int(u_action[ep, k])
            else:
                a = agent.greedy_action(s)
            sp, r, done = env.step_state(a)
            if algo == "q_lambda":
                q_lambda_update(agent, s, a, r, sp, done)
            else:
                expected_sarsa_lambda_update(agent, s, a, r, sp, done, eps=eps)
            total += r
            s = sp
            if done:
                break
        returns[ep] = total
        steps_out[ep] = k + 1
        agent.end_episode()
    return LearningCurve(returns, steps_out)


def save_policy(path, agent: TabularAgent, meta: dict | None = None) -> None:
    payload = {
        "n_states": agent.n_states,
        "n_actions": agent.n_actions,
        "q": [[float(v) for v in row] for row in agent.q],
        "gamma": agent.gamma,
        "meta": meta or {},
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)


def load_policy(path) -> tuple[np.ndarray, dict]:
    with open(path) as f:
        payload = json.load(f)
    q = np.array(payload["q"], dtype=float)
    if q.shape != (payload["n_states"], payload["n_actions"]):
        raise ValueError("policy table shape does not match its metadata")
    return q, payload.get("meta", {})
