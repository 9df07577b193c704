"""Vehicle digital twin: PIR loops per axis and a velocity-command plant.

Each axis runs a proportional-integral controller with rate feedback (the
derivative acts on the measurement, not the error). The plant is a bank of
first-order velocity-command lags: controller outputs are normalized stick
commands in [-1, 1] that scale axis-specific maxima, which is how the real
vehicle's SDK is driven. Attitude axes (roll/pitch) are modeled as
standalone first-order angle loops for telemetry and step-response checks;
translation uses the velocity loops directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

AXES = ("roll", "pitch", "yaw", "altitude", "vel_lateral", "vel_longitudinal")

# gains table; ranged entries use the range midpoint
DEFAULT_GAINS = {
    "roll": (0.010, 0.002, 0.006),
    "pitch": (0.011, 0.002, 0.010),
    "yaw": (0.150, 0.012, 0.100),
    "altitude": (0.070, 0.015, 0.070),
    "vel_lateral": (0.100, 0.050, 0.005),
    "vel_longitudinal": (0.100, 0.050, 0.005),
}

# stick scaling (full-stick authority) and plant lags per axis
STICK_SCALE = {
    "roll": 60.0,            # deg
    "pitch": 60.0,           # deg
    "yaw": 120.0,            # deg/s
    "altitude": 2.0,         # m/s climb
    "vel_lateral": 1.5,      # m/s
    "vel_longitudinal": 1.5,  # m/s
}
PLANT_TAU = {
    "roll": 0.20,
    "pitch": 0.20,
    "yaw": 0.15,
    "altitude": 0.30,
    "vel_lateral": 0.12,
    "vel_longitudinal": 0.12,
}
# yaw rate feedback is sensed in stick-fraction units on the vehicle; the
# other axes feed back physical rates
RATE_FEEDBACK_SCALE = {
    "roll": 60.0, "pitch": 60.0, "yaw": 12.0,
    "altitude": 1.0, "vel_lateral": 1.0, "vel_longitudinal": 1.0,
}
INTEGRAL_LIMIT = {
    "roll": 20.0, "pitch": 20.0, "yaw": 2.0,
    "altitude": 2.0, "vel_lateral": 2.0, "vel_longitudinal": 2.0,
}

CONTROL_DT = 0.1          # s, inner loop tick (10 Hz)
STEP_LENGTH = 0.30        # m, discretized motion primitive
WIND_DRIFT_GAIN = 0.05    # fraction of wind velocity leaking into position


def normalize_heading(psi: float) -> float:
    """Wrap a heading angle into [-180, 180)."""
    return (psi + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class PirGains:
    kp: float
    ki: float
    kd: float

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ValueError("PIR gains must be >= 0")


def gains_table(overrides: dict | None = None) -> dict[str, PirGains]:
    table = {axis: PirGains(*vals) for axis, vals in DEFAULT_GAINS.items()}
    if overrides:
        for axis, vals in overrides.items():
            table[axis] = PirGains(*vals)
    return table


@dataclass
class PirState:
    """Integrator, last measurement, and filtered rate for one PIR loop."""

    dt: float = CONTROL_DT
    integral: float = 0.0
    integral_limit: float = 5.0
    y_prev: float = 0.0
    rate: float = 0.0
    rate_filter_tau: float = 0.2   # derivative low-pass; bare differencing chatters
    rate_scale: float = 1.0       # measurement-rate units per normalized stick unit
    primed: bool = False

    def reset(self):
        self.integral = 0.0
        self.rate = 0.0
        self.primed = False


def pir_step(state: PirState, gains: PirGains, command: float, measurement: float) -> float:
    """One PIR update: kp*e + ki*integral(e) - kd*rate_feedback.

    The measurement rate is low-pass filtered and normalized by the axis's
    full-stick authority (``rate_scale``) before the kd term: the loops
    command normalized actuator units, so the rate feedback lives in the
    same units. Raw one-tick differencing with these gains is not
    discretely stable.
    """
    e = command - measurement
    state.integral += e * state.dt
    state.integral = min(max(state.integral, -state.integral_limit), state.integral_limit)
    if not state.primed:
        state.rate = 0.0
        state.primed = True
    else:
        raw = (measurement - state.y_prev) / state.dt
        state.rate += (state.dt / state.rate_filter_tau) * (raw - state.rate)
    state.y_prev = measurement
    return gains.kp * e + gains.ki * state.integral - gains.kd * state.rate / state.rate_scale


@dataclass
class UavPose:
    x: float = 0.0
    y: float = 0.0
    z: float = 1.0
    heading: float = 0.0  # deg, [-180, 180), 0 = +x, counterclockwise positive
    vx: float = 0.0
    vy: float = 0.0
    vz: float = 0.0

    def copy(self) -> "UavPose":
        return UavPose(self.x, self.y, self.z, self.heading, self.vx, self.vy, self.vz)

    def position(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


def kinematics_step(pose: UavPose, v_cmd_body: tuple[float, float, float],
                    yaw_rate_cmd: float, wind: tuple[float, float, float],
                    dt: float, tau_v: float = 0.25, tau_psi: float = 0.10) -> UavPose:
    """First-order velocity-command plant with wind drift.

    ``v_cmd_body`` = (forward, left, up) m/s in the body frame; yaw rate in
    deg/s. Velocities relax toward the commanded values, position integrates
    velocity plus a drift fraction of the wind, heading integrates yaw rate.
    """
    if not 0.0 < dt <= 0.2:
        raise ValueError(f"dt must be in (0, 0.2], got {dt}")
    h = math.radians(pose.heading)
    ch, sh = math.cos(h), math.sin(h)
    fwd, lat, up = v_cmd_body
    vx_cmd = fwd * ch - lat * sh
    vy_cmd = fwd * sh + lat * ch
    k_v = dt / tau_v
    out = pose.copy()
    out.vx += k_v * (vx_cmd - pose.vx)
    out.vy += k_v * (vy_cmd - pose.vy)
    out.vz += k_v * (up - pose.vz)
    out.x += (out.vx + WIND_DRIFT_GAIN * wind[0]) * dt
    out.y += (out.vy + WIND_DRIFT_GAIN * wind[1]) * dt
    out.z += (out.vz + WIND_DRIFT_GAIN * wind[2]) * dt
    out.z = min(max(out.z, 0.0), MAX_ALTITUDE)
    # yaw through its own first-order lag toward the commanded rate
    psi_rate = pose_yaw_rate(pose)
    new_rate = psi_rate + (dt / tau_psi) * (yaw_rate_cmd - psi_rate)
    out.heading = normalize_heading(pose.heading + new_rate * dt)
    _set_yaw_rate(out, new_rate)
    return out


MAX_ALTITUDE = 3.0

# yaw rate rides along on the pose object without widening its public fields
def pose_yaw_rate(pose: UavPose) -> float:
    return getattr(pose, "_yaw_rate", 0.0)


def _set_yaw_rate(pose: UavPose, rate: float) -> None:
    pose._yaw_rate = rate


class FlightController:
    """Closed-loop executor for the discrete motion primitives.

    Holds one PIR loop per axis with the configured gains. A primitive is a
    short closed-loop maneuver (translate 0.30 m, rotate 45/90 deg, hold)
    designed to complete within one decision period.
    """

    def __init__(self, gains: dict[str, PirGains] | None = None,
                 hover_altitude: float = 1.0, dt: float = CONTROL_DT):
        self.gains = gains or gains_table()
        self.dt = dt
        self.hover_altitude = hover_altitude
        self.loops = {axis: PirState(dt=dt,
                                     rate_scale=RATE_FEEDBACK_SCALE[axis],
                                     integral_limit=INTEGRAL_LIMIT[axis])
                      for axis in AXES}

    def reset(self):
        for loop in self.loops.values():
            loop.reset()

    def _velocity_tick(self, pose: UavPose, fwd_des: float, lat_des: float,
                       heading_cmd: float, wind) -> UavPose:
        h = math.radians(pose.heading)
        ch, sh = math.cos(h), math.sin(h)
        v_fwd = pose.vx * ch + pose.vy * sh
        v_lat = -pose.vx * sh + pose.vy * ch
        # stick = feedforward of the desired speed plus the PIR trim; the
        # table gains alone are too soft to reach speed within one period
        fwd_stick = fwd_des / STICK_SCALE["vel_longitudinal"] + \
            pir_step(self.loops["vel_longitudinal"],
                     self.gains["vel_longitudinal"], fwd_des, v_fwd)
        lat_stick = lat_des / STICK_SCALE["vel_lateral"] + \
            pir_step(self.loops["vel_lateral"],
                     self.gains["vel_lateral"], lat_des, v_lat)
        alt_stick = pir_step(self.loops["altitude"], self.gains["altitude"],
                             self.hover_altitude, pose.z)
        err = normalize_heading(heading_cmd - pose.heading)
        yaw_stick = pir_step(self.loops["yaw"], self.gains["yaw"], 0.0, -err)
        clip = lambda s: min(max(s, -1.0), 1.0)
        v_cmd = (clip(fwd_stick) * STICK_SCALE["vel_longitudinal"],
                 clip(lat_stick) * STICK_SCALE["vel_lateral"],
                 clip(alt_stick) * STICK_SCALE["altitude"])
        yaw_rate = clip(yaw_stick) * STICK_SCALE["yaw"]
        return kinematics_step(pose, v_cmd, yaw_rate, wind, self.dt,
                               tau_v=PLANT_TAU["vel_longitudinal"],
                               tau_psi=PLANT_TAU["yaw"])

    def _servo_tick(self, pose: UavPose, target_xy: tuple[float, float],
                    heading_cmd: float, wind) -> UavPose:
        """One tick of the 2D position servo (lag-compensated braking law).

        Servoing on the world-frame error vector makes the velocity loops
        reject wind drift on both axes, which is what they exist for.
        """
        tau = PLANT_TAU["vel_longitudinal"]
        ex = target_xy[0] - pose.x
        ey = target_xy[1] - pose.y
        vdx = 10.0 * (ex - tau * pose.vx)
        vdy = 10.0 * (ey - tau * pose.vy)
        norm = math.hypot(vdx, vdy)
        if norm > 0.6:
            vdx *= 0.6 / norm
            vdy *= 0.6 / norm
        h = math.radians(pose.heading)
        ch, sh = math.cos(h), math.sin(h)
        fwd_des = vdx * ch + vdy * sh
        lat_des = -vdx * sh + vdy * ch
        return self._velocity_tick(pose, fwd_des, lat_des, heading_cmd, wind)

    def translate(self, pose: UavPose, direction_deg: float, distance: float,
                  wind_fn, max_time: float = 1.0) -> tuple[UavPose, float]:
        """Closed-loop translation to a point ``distance`` away, heading held."""
        heading_cmd = pose.heading
        d = math.radians(direction_deg)
        target = (pose.x + distance * math.cos(d), pose.y + distance * math.sin(d))
        t = 0.0
        while t < max_time - 1e-9:
            err = math.hypot(target[0] - pose.x, target[1] - pose.y)
            speed = math.hypot(pose.vx, pose.vy)
            if err <= 0.004 and speed < 0.05:
                break
            pose = self._servo_tick(pose, target, heading_cmd, wind_fn(t))
            t += self.dt
        return pose, max(t, self.dt)

    def rotate(self, pose: UavPose, delta_deg: float, wind_fn,
               max_time: float = 2.5, tol: float = 1.5) -> tuple[UavPose, float]:
        """Closed-loop yaw to heading + delta, holding position under the turn.

        The yaw authority and gain set settle a 90 degree rotation in about
        two decision periods.
        """
        target = normalize_heading(pose.heading + delta_deg)
        anchor = (pose.x, pose.y)
        t = 0.0
        while t < max_time - 1e-9:
            if abs(normalize_heading(target - pose.heading)) <= tol and \
               abs(pose_yaw_rate(pose)) < 15.0:
                break
            pose = self._servo_tick(pose, anchor, target, wind_fn(t))
            t += self.dt
        return pose, max(t, self.dt)

    def hold(self, pose: UavPose, wind_fn, duration: float = 1.0,
             anchor: tuple[float, float] | None = None) -> tuple[UavPose, float]:
        """Station-keep for a duration; ``anchor`` persists across calls so
        chained holds do not ratchet downwind."""
        if anchor is None:
            anchor = (pose.x, pose.y)
        t = 0.0
        while t < duration - 1e-9:
            pose = self._servo_tick(pose, anchor, pose.heading, wind_fn(t))
            t += self.dt
        return pose, t

    def land(self, pose: UavPose, wind_fn) -> tuple[UavPose, float]:
        """Descend over the current point until touchdown."""
        anchor = (pose.x, pose.y)
        saved_hover = self.hover_altitude
        self.hover_altitude = 0.0
        t = 0.0
        while pose.z > 0.05 and t < 10.0:
            pose = self._servo_tick(pose, anchor, pose.heading, wind_fn(t))
            t += self.dt
        self.hover_altitude = saved_hover
        pose.z = 0.0
        return pose, t


def step_response(axis: str, command: float, duration: float,
                  gains: dict[str, PirGains] | None = None,
                  dt: float = CONTROL_DT) -> tuple[list[float], list[float]]:
    """Closed-loop step response of one axis on its standalone plant.

    Attitude axes (roll/pitch) use a first-order angle plant; altitude uses
    the climb-velocity plant with position integration; velocity axes use
    the velocity plant directly. Returns (times, responses).
    """
    table = gains or gains_table()
    g = table[axis]
    loop = PirState(dt=dt, rate_scale=RATE_FEEDBACK_SCALE[axis],
                    integral_limit=INTEGRAL_LIMIT[axis])
    times, ys = [], []
    y = 0.0      # measured quantity (angle, altitude, or speed)
    v = 0.0      # inner rate state for integrating plants
    tau = PLANT_TAU[axis]
    scale = STICK_SCALE[axis]
    t = 0.0
    while t < duration:
        stick = pir_step(loop, g, command, y)
        stick = min(max(stick, -1.0), 1.0)
        u = stick * scale
        if axis in ("roll", "pitch"):
            y += (dt / tau) * (u - y)
        elif axis == "altitude":
            v += (dt / tau) * (u - v)
            y += v * dt
        elif axis == "yaw":
            v += (dt / tau) * (u - v)
            y += v * dt
        else:
            y += (dt / tau) * (u - y)
        times.append(t)
        ys.append(y)
        t += dt
    return times, ys
