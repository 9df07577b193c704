"""Trial harness: config loading, seeded trial execution, suites, metrics.

One trial wires the world (course + plume), the vehicle twin, a sensor
pair, the filter bank, a navigation agent, and the termination tracker
into a single decision loop at 1 Hz. The optional vision proxy stands in
for a camera confirmation: it may only be consulted once the olfactory
gradient has plateaued (a termination candidate), and a positive hit
switches the UAV into a short line-of-sight approach before landing.

Determinism contract: a trial is a pure function of (config, seed); logs
serialize floats with repr so repeated runs are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .agents import (Action, BandThresholds, OioAgent, OioParams, encode_state,
                     load_policy)
from .control import normalize_heading
from .env import DECISION_PERIOD, Observation, PlumeEnv
from .filters import (BoutSignal, EmaState, FilterBank, HeadingMode,
                      ema_update, heading_from_difference)
from .plume import Course, PlumeConfig, build_course, course_from_dict
from .sensors import EcParams, EcSensor, MoxParams, MoxSensor, StereoGeometry
from .termination import SourceTracker

LOG_COLUMNS = (
    "tick", "t", "x", "y", "z", "heading",
    "left_raw", "right_raw", "left_sensed", "right_sensed",
    "state_id", "action", "d_line", "s_line", "bout", "tau_hat", "phi",
    "m", "k", "ci_lo", "ci_hi", "candidate", "vision_used", "vision_hit",
    "collision", "distance",
)
LOG_SCHEMA_VERSION = 1


def _schema_digest() -> str:
    text = f"v{LOG_SCHEMA_VERSION}:" + ",".join(LOG_COLUMNS)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


OUTCOME_FOUND = "SourceFound"
OUTCOME_BUDGET = "BudgetExhausted"
OUTCOME_CRASHED = "Crashed"


@dataclass(frozen=True)
class TrialConfig:
    """Fully resolved settings for one trial; picklable and hashable by digest."""

    sensor_type: str = "MOX"            # MOX | EC
    agent: str = "OIO"                  # OIO | ExpectedSarsaLambda
    policy_file: str | None = None
    vision: bool = False
    vision_radius: float = 3.0
    seed: int = 0
    budget: int = 900
    warmup: float = 300.0
    success_radius: float = 1.0
    course: dict = field(default_factory=dict)
    plume: dict = field(default_factory=dict)
    mox: dict = field(default_factory=dict)
    ec: dict = field(default_factory=dict)
    geometry: dict = field(default_factory=dict)
    # termination tuning
    k_min: int = 10
    level: float = 0.95
    margin: float = 0.25
    candidate_streak: int = 8
    evidence_fraction: float = 0.6

    def __post_init__(self):
        if self.sensor_type not in ("MOX", "EC"):
            raise ValueError(f"unknown sensor type {self.sensor_type!r}")
        if self.agent not in ("OIO", "ExpectedSarsaLambda"):
            raise ValueError(f"unknown agent {self.agent!r}")
        if self.agent == "ExpectedSarsaLambda" and not self.policy_file:
            raise ValueError("RL agent requires a policy file")
        if self.vision and self.vision_radius <= 0:
            raise ValueError("vision radius must be > 0 when the proxy is enabled")

    def digest(self) -> str:
        payload = asdict(self)
        payload.pop("seed")   # the digest identifies the configuration, not the draw
        text = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @classmethod
    def from_file(cls, path, **overrides) -> "TrialConfig":
        with open(path) as f:
            raw = json.load(f)
        kwargs = dict(raw.get("trial", {}))
        for section in ("course", "plume", "mox", "ec", "geometry"):
            if section in raw:
                kwargs[section] = raw[section]
        kwargs.update(overrides)
        return cls(**kwargs)


@dataclass
class TrialRecord:
    config_digest: str
    seed: int
    outcome: str
    elapsed_s: float
    final_distance: float
    rows: list[tuple]
    source_xy: tuple[float, float]
    course_meta: dict

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write(f"# plumenav-trial-log v{LOG_SCHEMA_VERSION} schema={_schema_digest()} "
                    f"config={self.config_digest} seed={self.seed}\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for row in self.rows:
                w.writerow(row)
            w.writerow(["outcome", self.outcome, "elapsed_s", repr(self.elapsed_s),
                        "final_distance", repr(self.final_distance)])


@dataclass(frozen=True)
class SuiteMetrics:
    mean_time: float
    std_time: float
    best_time: float
    success_rate: float
    n_trials: int

    def __post_init__(self):
        if self.n_trials >= 1 and self.success_rate > 0:
            assert self.best_time <= self.mean_time + 1e-9


def vision_confirm(pose_xy: tuple[float, float], source_xy: tuple[float, float],
                   radius: float, course: Course) -> bool:
    """Range-gated line-of-sight proxy for the camera confirmation."""
    if radius <= 0:
        raise ValueError("vision radius must be > 0")
    dist = math.hypot(pose_xy[0] - source_xy[0], pose_xy[1] - source_xy[1])
    if dist > radius:
        return False
    return not course.segment_blocked(pose_xy[0], pose_xy[1],
                                      source_xy[0], source_xy[1])


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _build_world(cfg: TrialConfig) -> tuple[PlumeEnv, Course, PlumeConfig]:
    course = course_from_dict(cfg.course) if cfg.course else build_course()
    plume_kwargs = dict(cfg.plume)
    plume_kwargs.setdefault("bounds", (course.width, course.depth, course.height))
    if "source_position" not in plume_kwargs:
        plume_kwargs["source_position"] = tuple(
            cfg.course.get("source_position", (3.0, 5.0))) if cfg.course else (3.0, 5.0)
    plume = PlumeConfig(**plume_kwargs)
    geometry = StereoGeometry(**cfg.geometry) if cfg.geometry else StereoGeometry()
    env = PlumeEnv(course=course, plume=plume, physics="twin", budget=cfg.budget,
                   success_radius=cfg.success_radius, warmup=cfg.warmup,
                   geometry=geometry)
    return env, course, plume


def _steer(bearing_err: float) -> Action:
    """Discrete turn/surge toward a relative bearing (deg, left positive)."""
    if abs(bearing_err) >= 67.5:
        return Action.TURN_LEFT_90 if bearing_err > 0 else Action.TURN_RIGHT_90
    if abs(bearing_err) > 25.0:
        return Action.TURN_LEFT_45 if bearing_err > 0 else Action.TURN_RIGHT_45
    return Action.SURGE


def _approach_action(pose, target_xy, forward_range: float) -> Action:
    """Steer straight at a known target point."""
    bearing = math.degrees(math.atan2(target_xy[1] - pose.y, target_xy[0] - pose.x))
    return _steer(normalize_heading(bearing - pose.heading))


def run_trial(cfg: TrialConfig) -> TrialRecord:
    """Execute one seeded trial end to end; never raises for in-flight errors."""
    env, course, plume = _build_world(cfg)
    digest = cfg.digest()
    try:
        return _run_trial_inner(cfg, env, course, plume, digest)
    except Exception as exc:  # mid-flight failures become a Crashed record
        dist = env.distance_to_source() if env.field is not None else float("nan")
        return TrialRecord(digest, cfg.seed, OUTCOME_CRASHED,
                           elapsed_s=float(env.steps) * DECISION_PERIOD,
                           final_distance=dist, rows=[],
                           source_xy=plume.source_position,
                           course_meta={"error": repr(exc)})


def _run_trial_inner(cfg: TrialConfig, env: PlumeEnv, course: Course,
                     plume: PlumeConfig, digest: str) -> TrialRecord:
    seed = cfg.seed
    ss = np.random.SeedSequence([int(seed), 0x5EED])
    rng_left, rng_right = [np.random.default_rng(s) for s in ss.spawn(2)]

    geometry = env.geometry
    mox = MoxParams(**cfg.mox) if cfg.mox else MoxParams()
    ecp = EcParams(**cfg.ec) if cfg.ec else EcParams()
    if cfg.sensor_type == "MOX":
        left_sensor = MoxSensor(mox, "left")
        right_sensor = MoxSensor(mox, "right")
    else:
        left_sensor = EcSensor(ecp, "left")
        right_sensor = EcSensor(ecp, "right")

    bank = FilterBank(sample_period=DECISION_PERIOD)

    obs = env.reset(seed)
    # thresholds from a centerline calibration transect of this very world
    thresholds = _course_thresholds(env, mox)
    tracker = SourceTracker(on_threshold=thresholds.off, level=cfg.level,
                            margin=cfg.margin, k_min=cfg.k_min,
                            candidate_streak=cfg.candidate_streak,
                            evidence_fraction=cfg.evidence_fraction)

    if cfg.agent == "OIO":
        agent = OioAgent(OioParams(thresholds=thresholds))
        q_table = None
    else:
        q_table, meta = load_policy(cfg.policy_file)
        meta_th = meta.get("thresholds")
        if meta_th:
            thresholds = BandThresholds(off=meta_th["off"], high=meta_th["high"],
                                        stereo_deadband=meta_th["stereo_deadband"])
        agent = None

    rows: list[tuple] = []
    approach_mode = False
    candidate_seen = False
    outcome = OUTCOME_BUDGET
    peak_pose: tuple[float, float] | None = None
    landing_latched = False
    wind_ema_x = EmaState(15)
    wind_ema_y = EmaState(15)
    stagnant = 0
    tick = 0
    while True:
        t = obs.time
        if cfg.sensor_type == "MOX":
            lr = left_sensor.read(obs.left_concentration, t, DECISION_PERIOD, rng_left)
            rr = right_sensor.read(obs.right_concentration, t, DECISION_PERIOD, rng_right)
        else:
            lr = left_sensor.read(obs.left_concentration, t, rng_left)
            rr = right_sensor.read(obs.right_concentration, t, rng_right)
        sl, sr = lr.concentration, rr.concentration
        d_line, s_line, bout = bank.push(sl, sr)
        s_wind = math.hypot(obs.wind_local[0], obs.wind_local[1])
        lag_est = bank.heading(s_wind, geometry.baseline)   # logged diagnostics
        smoothed = bank.ema_fast.value
        near_peak = smoothed >= thresholds.high
        heading_est = heading_from_difference(sl, sr, thresholds.off,
                                              gain=40.0 if near_peak else 120.0)
        ema_update(wind_ema_x, obs.wind_local[0])
        ema_update(wind_ema_y, obs.wind_local[1])
        wind_steady = (wind_ema_x.value, wind_ema_y.value, 0.0)
        cur = max(sl, sr)
        tracker.observe(cur)
        record_now = tracker.k == 1 and cur >= tracker.m
        if record_now:
            peak_pose = (env.pose.x, env.pose.y)   # fresh record: remember where
        # the closed-form criterion only counts samples; require the maximum
        # itself to be a near-source reading before acting on it, otherwise
        # 17 quiet samples at the plume fringe would land the vehicle there
        at_peak = tracker.m >= thresholds.high
        candidate = tracker.candidate and at_peak
        decided_now = tracker.decided and at_peak
        landing_latched = landing_latched or decided_now
        decided = landing_latched
        candidate_seen = candidate_seen or candidate

        vision_used = False
        vision_hit = False
        if cfg.vision and candidate and not approach_mode:
            vision_used = True
            vision_hit = vision_confirm((env.pose.x, env.pose.y), env.source_xy,
                                        cfg.vision_radius, course)
            if vision_hit:
                approach_mode = True

        state_id = encode_state(sl, sr, smoothed, thresholds)
        peak_err = None
        peak_dist = 0.0
        if peak_pose is not None:
            peak_dist = math.hypot(peak_pose[0] - env.pose.x,
                                   peak_pose[1] - env.pose.y)
            bearing = math.degrees(math.atan2(peak_pose[1] - env.pose.y,
                                              peak_pose[0] - env.pose.x))
            peak_err = normalize_heading(bearing - env.pose.heading)
        # the peak memory steers recovery only after solid mid-plume contact;
        # early in the transit a lost plume means "keep exploring"
        agent_peak_err = peak_err if tracker.m >= 0.3 * thresholds.high else None

        upwind = math.degrees(math.atan2(-wind_steady[1], -wind_steady[0]))
        upwind_err = normalize_heading(upwind - env.pose.heading)

        if approach_mode:
            if env.distance_to_source() <= 0.45:
                action = Action.LAND
            else:
                action = _approach_action(env.pose, env.source_xy, obs.forward_range)
        elif decided:
            if peak_pose is not None and peak_dist > 0.15:
                # evidence is complete; descend on the remembered peak
                action = _approach_action(env.pose, peak_pose, obs.forward_range)
            else:
                action = Action.LAND
        elif cfg.agent == "OIO" and at_peak:
            # terminal phase: the plume core is narrower than the stereo
            # baseline here, so steer by records and the odor-peak memory
            if record_now:
                stagnant = 0
                action = Action.SURGE if abs(upwind_err) <= 40.0 else _steer(upwind_err)
            elif cur >= cfg.evidence_fraction * tracker.m or peak_dist <= 0.4:
                # strong spot (or sitting on the remembered peak): sample
                # in place so the evidence count can actually accumulate
                stagnant += 1
                if stagnant % 8 == 0:
                    # no progress while parked: probe one step upwind
                    action = Action.SURGE if abs(upwind_err) <= 40.0 \
                        else _steer(upwind_err)
                else:
                    action = Action.PAUSE
            else:
                stagnant = 0
                action = _steer(peak_err)
        elif q_table is not None:
            action = Action(int(np.argmax(q_table[state_id])))
        else:
            action = agent.act(bout, heading_est, smoothed, env.pose.heading,
                               wind_steady, obs.forward_range,
                               peak_bearing_err=agent_peak_err,
                               peak_distance=peak_dist)

        est = tracker.estimate()
        ci_lo, ci_hi = (est.ci if est else (0.0, 0.0))
        obs, reward, done, info = env.step(action)
        rows.append((
            tick, _fmt(t), _fmt(env.pose.x), _fmt(env.pose.y), _fmt(env.pose.z),
            _fmt(env.pose.heading),
            _fmt(obs.left_concentration), _fmt(obs.right_concentration),
            _fmt(sl), _fmt(sr), state_id, action.name, _fmt(d_line), _fmt(s_line),
            bout.name, _fmt(bank.tau_hat if bank.tau_hat is not None else float("nan")),
            _fmt(heading_est.phi_deg), _fmt(tracker.m), tracker.k,
            _fmt(ci_lo), _fmt(ci_hi), int(candidate), int(vision_used),
            int(vision_hit), int(info["collision"]), _fmt(info["distance"]),
        ))
        tick += 1
        if info["collision"] and agent is not None:
            agent.notify_collision()
        if done:
            if env.landed and info["distance"] <= cfg.success_radius:
                outcome = OUTCOME_FOUND
            break

    elapsed = float(env.steps) * DECISION_PERIOD
    return TrialRecord(digest, seed, outcome, elapsed,
                       final_distance=env.distance_to_source(), rows=rows,
                       source_xy=env.source_xy,
                       course_meta={"width": course.width, "depth": course.depth,
                                    "candidate_seen": candidate_seen})


def _course_thresholds(env: PlumeEnv, mox: MoxParams) -> BandThresholds:
    """Band cuts for this world: noise-referenced off cut, transect high cut.

    The off threshold must separate real odor from sensor noise, so it is a
    multiple of the inverse-mapped noise amplitude. The high cut comes from
    a downwind centerline transect (60th percentile of on-plume values),
    marking the near-source region.
    """
    noise_c = mox.noise_sigma * mox.c50 / (mox.v_clean - mox.v_sat)
    off = max(4.0 * noise_c, 1e-6)
    sx, sy = env.source_xy
    z = env.course.start_pose[2]
    t_ref = env.warmup if env.warmup > 0 else env.plume_config.development_time + 1.0
    near = _unmasked_concentration(env, sx + 0.8, sy, z, t_ref)
    if near <= 0:
        raise ValueError("no plume just downwind of the source; check the config")
    high = max(near, 10.0 * off)
    return BandThresholds(off=off, high=high, stereo_deadband=0.10 * off)


def _unmasked_concentration(env: PlumeEnv, x, y, z, t) -> float:
    from .kernels import plume_point
    return plume_point(x, y, z, *env.field._params) * env.field.development_factor(t)


def run_suite(cfg: TrialConfig, n_trials: int, seed_base: int,
              workers: int = 1) -> tuple[SuiteMetrics, list[TrialRecord]]:
    """Run seeds seed_base..seed_base+n-1; metrics cover successful trials."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    configs = [TrialConfig(**{**asdict(cfg), "seed": seed_base + i})
               for i in range(n_trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_trial, configs))
    else:
        records = [run_trial(c) for c in configs]
    return suite_metrics(records), records


def suite_metrics(records: list[TrialRecord]) -> SuiteMetrics:
    times = [r.elapsed_s for r in records if r.outcome == OUTCOME_FOUND]
    n = len(records)
    if times:
        mu = float(np.mean(times))
        sigma = float(np.std(times, ddof=1)) if len(times) > 1 else 0.0
        best = float(min(times))
    else:
        mu = sigma = best = float("nan")
    return SuiteMetrics(mean_time=mu, std_time=sigma, best_time=best,
                        success_rate=len(times) / n, n_trials=n)


SUITE_COLUMNS = ("row_type", "trial", "seed", "outcome", "time_s",
                 "final_distance_m", "mu_t", "sigma_t", "beta_t", "success_rate")


def write_suite_csv(path, metrics: SuiteMetrics, records: list[TrialRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUITE_COLUMNS)
        for i, r in enumerate(records):
            w.writerow(["trial", i, r.seed, r.outcome, repr(r.elapsed_s),
                        repr(r.final_distance), "", "", "", ""])
        w.writerow(["summary", "", "", "", "", "", repr(metrics.mean_time),
                    repr(metrics.std_time), repr(metrics.best_time),
                    repr(metrics.success_rate)])
