"""Episodic environment contract over the plume world and the vehicle twin.

Two flavors share the reward and action semantics:

* :class:`PlumeEnv` is the full course environment: closed-loop flight
  primitives on the digital twin, walls/obstacles, gusty wind, blanks, and
  a budgeted episode. The mission layer drives it through sensor models.
* :class:`MiniPlumeEnv` is the miniature open-room world used to train the
  tabular agents: snap kinematics on a 0.30 m lattice, raw (blank-masked)
  antenna readings, and a packed representation the compiled training loop
  consumes directly.

Reward everywhere is the running-max concentration delta minus a step cost,
plus a terminal bonus for finishing at the source; navigation therefore
never needs absolute calibrated concentrations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .agents import Action, BandThresholds, encode_state
from .control import STEP_LENGTH, FlightController, UavPose, normalize_heading
from .plume import BLANK_LIFETIME, BLANK_RADII, Course, PlumeConfig, PlumeField, build_course
from .sensors import StereoGeometry

STEP_COST = 0.01
TERMINAL_BONUS = 10.0
DEFAULT_SUCCESS_RADIUS = 1.0
DECISION_PERIOD = 1.0  # s, one decision per sensor tick


@dataclass(frozen=True)
class Observation:
    left_concentration: float
    right_concentration: float
    wind_local: tuple[float, float, float]
    forward_range: float
    time: float
    contact: bool = False   # forward_range collapsed to zero


class PlumeEnv:
    """Budgeted episodic wrapper: pose, world queries, reward bookkeeping.

    ``physics`` selects how primitives execute: "twin" runs the PIR loops on
    the velocity-command plant, "snap" teleports by the nominal displacement
    (used for fast rollouts). Collisions block the move and set an info flag.
    """

    def __init__(self, course: Course | None = None,
                 plume: PlumeConfig | None = None,
                 physics: str = "twin", budget: int = 900,
                 success_radius: float = DEFAULT_SUCCESS_RADIUS,
                 warmup: float = 300.0,
                 geometry: StereoGeometry | None = None):
        if physics not in ("twin", "snap"):
            raise ValueError(f"unknown physics mode {physics!r}")
        self.course = course if course is not None else build_course()
        self.plume_config = plume if plume is not None else PlumeConfig(
            bounds=(self.course.width, self.course.depth, self.course.height))
        self.physics = physics
        self.budget = budget
        self.success_radius = success_radius
        self.warmup = warmup
        self.geometry = geometry or StereoGeometry()
        self.field: PlumeField | None = None
        self.controller = FlightController(hover_altitude=self.course.start_pose[2])
        self.pose = UavPose()
        self.t = 0.0
        self.steps = 0
        self.run_max = 0.0
        self.done = True
        self.landed = False
        self._pause_anchor = None

    @property
    def source_xy(self) -> tuple[float, float]:
        return self.plume_config.source_position

    def distance_to_source(self) -> float:
        sx, sy = self.source_xy
        return math.hypot(self.pose.x - sx, self.pose.y - sy)

    def _antenna_positions(self) -> tuple[tuple[float, float], tuple[float, float]]:
        g = self.geometry
        h = math.radians(self.pose.heading)
        ch, sh = math.cos(h), math.sin(h)
        lx = self.pose.x + g.fore * ch - g.x_left * sh
        ly = self.pose.y + g.fore * sh + g.x_left * ch
        rx = self.pose.x + g.fore * ch - g.x_right * sh
        ry = self.pose.y + g.fore * sh + g.x_right * ch
        return (lx, ly), (rx, ry)

    def _clamped_concentration(self, x: float, y: float) -> float:
        w, d, hgt = self.plume_config.bounds
        x = min(max(x, 0.0), w)
        y = min(max(y, 0.0), d)
        z = min(max(self.pose.z, 0.0), hgt)
        return self.field.concentration_at((x, y, z), self.t)

    def observe(self) -> Observation:
        (lx, ly), (rx, ry) = self._antenna_positions()
        left = self._clamped_concentration(lx, ly)
        right = self._clamped_concentration(rx, ry)
        wind = self.field.wind_at(self.pose.position(), self.t)
        fr = self.course.raycast(self.pose.x, self.pose.y, self.pose.heading)
        return Observation(left, right, wind, fr, self.t, contact=fr <= 0.05)

    def reset(self, seed: int) -> Observation:
        """Start an episode: seeded world, UAV at the start pose, warmed plume."""
        horizon = self.warmup + (self.budget + 10) * 3.0 * DECISION_PERIOD
        self.field = PlumeField(self.plume_config, seed, duration=horizon)
        sx, sy, sz, sh = self.course.start_pose
        self.pose = UavPose(x=sx, y=sy, z=sz, heading=normalize_heading(sh))
        self.controller = FlightController(hover_altitude=sz)
        self.t = self.warmup
        self.steps = 0
        self.done = False
        self.landed = False
        self._pause_anchor = None
        obs = self.observe()
        self.run_max = max(obs.left_concentration, obs.right_concentration)
        return obs

    def _wind_fn(self, t_base: float):
        return lambda dt_local: self.field.wind_at(self.pose.position(), t_base + dt_local)

    def _move_blocked(self, x0: float, y0: float, x1: float, y1: float,
                      margin: float = 0.12) -> bool:
        """Swept clearance check that never traps a pose already near a wall.

        The start point is exempt so the vehicle can always retreat from a
        surface it drifted against; only the travelled portion and the
        endpoint must keep the margin.
        """
        steps = max(2, int(math.hypot(x1 - x0, y1 - y0) / 0.05) + 1)
        for i in range(1, steps + 1):
            f = i / steps
            if not self.course.is_free(x0 + f * (x1 - x0), y0 + f * (y1 - y0),
                                       margin=margin * f):
                return True
        return False

    def _execute(self, action: Action) -> tuple[bool, float]:
        """Run one primitive; returns (collision, seconds consumed)."""
        if action is not Action.PAUSE:
            self._pause_anchor = None
        pose0 = self.pose.copy()
        wind_fn = self._wind_fn(self.t)
        step = STEP_LENGTH
        if action in (Action.SURGE, Action.CAST_LEFT, Action.CAST_RIGHT):
            if action is Action.SURGE:
                direction = self.pose.heading
            elif action is Action.CAST_LEFT:
                direction = self.pose.heading + 90.0
            else:
                direction = self.pose.heading - 90.0
            d = math.radians(direction)
            tx = pose0.x + step * math.cos(d)
            ty = pose0.y + step * math.sin(d)
            if self._move_blocked(pose0.x, pose0.y, tx, ty):
                return True, DECISION_PERIOD
            if self.physics == "snap":
                self.pose.x, self.pose.y = tx, ty
                return False, DECISION_PERIOD
            pose, seconds = self.controller.translate(pose0, direction, step, wind_fn)
            if self._move_blocked(pose0.x, pose0.y, pose.x, pose.y):
                self.pose = pose0   # drift clipped a wall: abort the move
                return True, DECISION_PERIOD
            self.pose = pose
            return False, max(seconds, DECISION_PERIOD)
        if action in (Action.TURN_LEFT_45, Action.TURN_RIGHT_45,
                      Action.TURN_LEFT_90, Action.TURN_RIGHT_90):
            from .agents import TURN_DELTAS
            delta = TURN_DELTAS[action]
            if self.physics == "snap":
                self.pose.heading = normalize_heading(self.pose.heading + delta)
                return False, DECISION_PERIOD
            pose, seconds = self.controller.rotate(pose0, delta, wind_fn)
            self.pose = pose
            return False, max(seconds, DECISION_PERIOD)
        if action is Action.PAUSE:
            if self.physics == "twin":
                if self._pause_anchor is None:
                    self._pause_anchor = (pose0.x, pose0.y)
                pose, _ = self.controller.hold(pose0, wind_fn, DECISION_PERIOD,
                                               anchor=self._pause_anchor)
                self.pose = pose
            return False, DECISION_PERIOD
        if action is Action.LAND:
            if self.physics == "twin":
                pose, _ = self.controller.land(pose0, wind_fn)
                self.pose = pose
            else:
                self.pose.z = 0.0
            self.landed = True
            return False, DECISION_PERIOD
        raise ValueError(f"invalid action {action!r}")

    def step(self, action) -> tuple[Observation, float, bool, dict]:
        """Advance one decision: execute the primitive, sense, score, check done."""
        if self.done:
            raise RuntimeError("episode is done; call reset() first")
        action = Action(action)
        collision, seconds = self._execute(action)
        ticks = max(1, int(math.ceil(seconds / DECISION_PERIOD - 1e-9)))
        self.t += ticks * DECISION_PERIOD
        self.steps += ticks
        obs = self.observe()
        c = max(obs.left_concentration, obs.right_concentration)
        new_max = max(self.run_max, c)
        dist = self.distance_to_source()
        at_source = dist <= self.success_radius
        reward = (new_max - self.run_max) - STEP_COST
        done = False
        if self.landed:
            done = True
            if at_source:
                reward += TERMINAL_BONUS
        elif at_source and self.physics == "snap":
            # snap rollouts treat source arrival as terminal
            done = True
            reward += TERMINAL_BONUS
        if self.steps >= self.budget:
            done = True
        self.run_max = new_max
        self.done = done
        info = {"collision": collision, "distance": dist, "ticks": ticks,
                "seconds": ticks * DECISION_PERIOD, "landed": self.landed}
        return obs, reward, done, info


# ---------------------------------------------------------------------------
# Miniature training world
# ---------------------------------------------------------------------------

def _episode_blank_events(seed: int, episodes: int, sparsity: float,
                          bounds: tuple[float, float, float], duration: float,
                          u_adv: float,
                          radii: tuple[float, float, float] = BLANK_RADII,
                          lifetime: float = BLANK_LIFETIME):
    """Per-episode blank schedules, concatenated for the packed kernel.

    One generator seeded from (seed) drains the same number of draws per
    episode regardless of consumer, so the Python env and the compiled loop
    see identical schedules.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xB1A2C3]))
    w, d, h = bounds
    rx, ry, rz = radii
    cols = [[] for _ in range(8)]
    offsets = np.zeros(episodes + 1, dtype=np.int64)
    if sparsity <= 0.0:
        arrays = tuple(np.zeros(0) for _ in range(8))
        return arrays, offsets
    volume = 4.0 / 3.0 * math.pi * rx * ry * rz
    rate = -math.log(max(1e-12, 1.0 - sparsity)) / (lifetime * volume)
    x_lo, x_hi = -rx - u_adv * lifetime, w + rx
    y_lo, y_hi = -ry, d + ry
    z_lo, z_hi = -rz, h + rz
    t_lo, t_hi = -lifetime, duration
    mean_count = rate * (x_hi - x_lo) * (y_hi - y_lo) * (z_hi - z_lo) * (t_hi - t_lo)
    total = 0
    for ep in range(episodes):
        n = int(rng.poisson(mean_count))
        tb = rng.uniform(t_lo, t_hi, n)
        order = np.argsort(tb, kind="stable")
        ev = (tb[order], tb[order] + lifetime,
              rng.uniform(x_lo, x_hi, n)[order],
              rng.uniform(y_lo, y_hi, n)[order],
              rng.uniform(z_lo, z_hi, n)[order],
              np.full(n, rx), np.full(n, ry), np.full(n, rz))
        for c, arr in zip(cols, ev):
            c.append(arr)
        total += n
        offsets[ep + 1] = total
    arrays = tuple(np.concatenate(c) if total else np.zeros(0) for c in cols)
    return arrays, offsets


class MiniPlumeEnv:
    """Open-room lattice world for training the tabular agents.

    Raw antenna concentrations (blank-masked, no sensor dynamics), a fast
    EMA for the band signal, snap moves on the 0.30 m step, and proximity
    termination with the standard bonus. ``kernel_pack`` exports the world
    for the compiled loop; ``reset_episode``/``step_state`` provide the
    equivalent Python route.
    """

    def __init__(self, sparsity: float = 0.0,
                 bounds: tuple[float, float, float] = (6.0, 4.0, 3.0),
                 source: tuple[float, float] = (1.0, 2.0),
                 start: tuple[float, float] = (5.0, 2.0),
                 start_heading_idx: int = 4,    # facing -x, toward the source
                 budget: int = 60,
                 success_radius: float = 0.45,
                 plume: PlumeConfig | None = None,
                 geometry: StereoGeometry | None = None,
                 blank_radii: tuple[float, float, float] = (0.8, 0.6, 0.5),
                 blank_lifetime: float = 6.0):
        self.plume_config = plume if plume is not None else PlumeConfig(
            sparsity=sparsity, bounds=bounds, source_position=source,
            development_time=0.0)
        self.sparsity = self.plume_config.sparsity
        self.bounds = self.plume_config.bounds
        self.source = self.plume_config.source_position
        self.start = start
        self.start_heading_idx = start_heading_idx
        self.budget = budget
        self.success_radius = success_radius
        self.geometry = geometry or StereoGeometry()
        self.blank_radii = blank_radii
        self.blank_lifetime = blank_lifetime
        self.z_fly = self.plume_config.source_height
        ay, by, ey, az, bz, ez = self.plume_config.sigma_coefficients()
        self._plume_args = (self.source[0], self.source[1],
                            self.plume_config.source_height,
                            self.plume_config.emission_rate,
                            max(self.plume_config.wind_speed, 1e-6),
                            ay, by, ey, az, bz, ez, self.plume_config.diffusion,
                            self.plume_config.initial_sigma_y,
                            self.plume_config.initial_sigma_z)
        self.thresholds = self._calibrate()
        self._world = self.world_vector()
        # python-route episode state
        self._events = None
        self._offsets = None
        self._events_seed = None
        self._ep_events = None
        self._x = self._y = 0.0
        self._h = start_heading_idx
        self._ema = 0.0
        self._run_max = 0.0
        self._tick = 0

    def concentration(self, x: float, y: float) -> float:
        return kernels.plume_point(x, y, self.z_fly, *self._plume_args)

    def _calibrate(self) -> BandThresholds:
        """Band cuts from a downwind transect, 5th/60th percentile of on-plume."""
        sx, sy = self.source
        xs = np.linspace(sx + 0.3, self.bounds[0] - 0.2, 40)
        vals = np.array([self.concentration(x, sy) for x in xs])
        on = vals[vals > 1e-12]
        off = float(np.quantile(on, 0.05))
        high = float(np.quantile(on, 0.60))
        return BandThresholds(off=off, high=high, stereo_deadband=0.10 * off)

    def world_vector(self) -> np.ndarray:
        w = np.zeros(kernels.WORLD_LEN)
        (w[kernels.W_SRC_X], w[kernels.W_SRC_Y], w[kernels.W_SRC_Z],
         w[kernels.W_Q], w[kernels.W_U],
         w[kernels.W_AY], w[kernels.W_BY], w[kernels.W_EY],
         w[kernels.W_AZ], w[kernels.W_BZ], w[kernels.W_EZ],
         w[kernels.W_DIFF], w[kernels.W_SY0], w[kernels.W_SZ0]) = self._plume_args
        w[kernels.W_XMIN], w[kernels.W_YMIN] = 0.0, 0.0
        w[kernels.W_XMAX], w[kernels.W_YMAX] = self.bounds[0], self.bounds[1]
        w[kernels.W_ZFLY] = self.z_fly
        w[kernels.W_START_X], w[kernels.W_START_Y] = self.start
        w[kernels.W_START_H] = float(self.start_heading_idx)
        w[kernels.W_STEP] = STEP_LENGTH
        w[kernels.W_SUCCESS_R] = self.success_radius
        w[kernels.W_STEP_COST] = STEP_COST
        w[kernels.W_BONUS] = TERMINAL_BONUS
        w[kernels.W_ANT_FORE] = self.geometry.fore
        w[kernels.W_ANT_LAT] = self.geometry.x_left
        w[kernels.W_OFF_TH] = self.thresholds.off
        w[kernels.W_HIGH_TH] = self.thresholds.high
        w[kernels.W_DEADBAND] = self.thresholds.stereo_deadband
        w[kernels.W_EMA_ALPHA] = 2.0 / (3.0 + 1.0)   # fast EMA, period 3
        w[kernels.W_U_ADV] = self.plume_config.wind_speed
        return w

    def kernel_pack(self, episodes: int, seed: int):
        events, offsets = _episode_blank_events(
            seed, episodes, self.sparsity, self.bounds,
            float(self.budget + 1), self.plume_config.wind_speed,
            self.blank_radii, self.blank_lifetime)
        return self.world_vector(), events, offsets

    # ----- python route (same semantics as the packed loop) -----

    def _ensure_events(self, episodes: int, seed: int):
        if self._events_seed != (seed, episodes):
            self._events, self._offsets = _episode_blank_events(
                seed, episodes, self.sparsity, self.bounds,
                float(self.budget + 1), self.plume_config.wind_speed,
                self.blank_radii, self.blank_lifetime)
            self._events_seed = (seed, episodes)

    def reset_episode(self, ep: int, seed: int, total_episodes: int | None = None) -> int:
        n_ep = total_episodes if total_episodes is not None else ep + 1
        if self._events_seed is None or self._events_seed[0] != seed or \
           self._events_seed[1] < n_ep:
            self._ensure_events(max(n_ep, ep + 1), seed)
        lo, hi = self._offsets[ep], self._offsets[ep + 1]
        self._ep_events = tuple(arr[lo:hi] for arr in self._events)
        self._x, self._y = self.start
        self._h = self.start_heading_idx
        cl, cr = self._sense(0.0)
        cmax = max(cl, cr)
        self._ema = cmax
        self._run_max = cmax
        self._tick = 0
        return encode_state(cl, cr, self._ema, self.thresholds)

    def _sense(self, t: float) -> tuple[float, float]:
        u_adv = self.plume_config.wind_speed
        return kernels._sense_np(self._world, self._ep_events, u_adv,
                                 self._x, self._y, self._h, t,
                                 kernels.DIR_COS, kernels.DIR_SIN)

    def step_state(self, a: int) -> tuple[int, float, bool]:
        world = self._world
        nx, ny, nh = kernels._move_py(world, self._x, self._y, self._h, a,
                                      kernels.DIR_COS, kernels.DIR_SIN)
        self._tick += 1
        cl, cr = kernels._sense_np(world, self._ep_events,
                                   self.plume_config.wind_speed,
                                   nx, ny, nh, float(self._tick),
                                   kernels.DIR_COS, kernels.DIR_SIN)
        cmax = max(cl, cr)
        self._ema = self._ema + world[kernels.W_EMA_ALPHA] * (cmax - self._ema)
        new_max = max(self._run_max, cmax)
        ddx = nx - self.source[0]
        ddy = ny - self.source[1]
        dist = math.sqrt(ddx * ddx + ddy * ddy)
        at_source = dist <= self.success_radius
        r = (new_max - self._run_max) - STEP_COST
        if at_source:
            r += TERMINAL_BONUS
        done = at_source or self._tick >= self.budget
        self._x, self._y, self._h = nx, ny, nh
        self._run_max = new_max
        sp = encode_state(cl, cr, self._ema, self.thresholds)
        return sp, r, done
