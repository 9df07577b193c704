"""Olfaction sensor models: MOX load-divider channel and EC chronoamperometry.

Two sensing media share one interface: given the true local concentration
they produce timestamped readings on their own cadence (MOX at 1 Hz, EC
bursts every 2 s). The MOX channel models a first-order response lag and
divider noise; the EC channel synthesizes a diffusion-current transient and
runs the truncated-window fast inference on it, so navigation sees the
fitted amplitude rather than a 6 s measurement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FARADAY = 96485.0  # C/mol


class FitError(ValueError):
    """Raised when the chronoamperometry fit cannot be performed."""


@dataclass(frozen=True)
class MoxParams:
    vc: float = 5.0               # circuit voltage, V
    rl: float = 10_000.0          # load resistance, ohm
    response_tau: float = 0.8     # first-order response lag, s
    noise_sigma: float = 0.01     # additive Gaussian noise on V_RL, V
    sample_rate: float = 1.0      # Hz
    # concentration -> V_RL map: V(c) = v_sat + (v_clean - v_sat) / (1 + c/c50).
    # Saturating and monotone decreasing; navigation only uses temporal
    # differences of the inverse-mapped signal, so the exact shape is a knob.
    v_clean: float = 4.5          # V_RL in clean air
    v_sat: float = 0.5            # asymptotic V_RL at saturation
    c50: float = 5.0              # concentration producing the half-way voltage
    v_floor_margin: float = 0.05  # clip V_RL to v_sat + margin before inverting

    def __post_init__(self):
        if self.vc <= 0 or self.rl <= 0 or self.response_tau <= 0:
            raise ValueError("MOX circuit parameters must be positive")
        if not (0 < self.v_sat < self.v_clean <= self.vc):
            raise ValueError("require 0 < v_sat < v_clean <= vc")


@dataclass(frozen=True)
class EcParams:
    n_e: float = 2.0              # electrons per analyte molecule
    area: float = 2.25            # electrode area, cm^2
    c_k: float = 1e-6             # analyte concentration, mol/cm^3
    d_k: float = 1e-5             # diffusion coefficient, cm^2/s
    faraday: float = FARADAY
    sample_rate: float = 100.0    # Hz within a burst
    cutoff: float = 1.0           # s, truncated measurement window
    full_duration: float = 6.0    # s, horizon the fit extrapolates to
    read_period: float = 2.0      # s between bursts
    noise_sigma_rel: float = 0.01  # burst noise, fraction of mean |I|

    def __post_init__(self):
        if min(self.n_e, self.area, self.c_k, self.d_k, self.sample_rate) <= 0:
            raise ValueError("EC physical parameters must be positive")
        if not (0 < self.cutoff < self.full_duration):
            raise ValueError("require 0 < cutoff < full_duration")


@dataclass(frozen=True)
class StereoGeometry:
    """Lateral antenna placement on the airframe, in body coordinates."""

    x_left: float = 0.10    # m, left antenna lateral offset (left positive)
    x_right: float = -0.10  # m
    fore: float = 0.10      # m ahead of the body origin, out of rotor wash

    def __post_init__(self):
        if self.x_left == self.x_right:
            raise ValueError("stereo baseline must be non-zero")

    @property
    def delta_x(self) -> float:
        return self.x_left - self.x_right

    @property
    def baseline(self) -> float:
        return abs(self.delta_x)


@dataclass(frozen=True)
class SensorReading:
    time: float
    channel: str      # "left" or "right"
    value: float      # V_RL for MOX, inferred amplitude for EC
    concentration: float  # inverse-mapped concentration estimate, a.u.


def mox_resistance(vc: float, vrl: float, rl: float) -> float:
    """Sensor resistance from the load-divider voltages: Rs = (Vc/VRL - 1)*RL."""
    if vrl <= 0:
        raise ValueError(f"V_RL must be > 0, got {vrl}")
    if vrl > vc:
        raise ValueError(f"V_RL={vrl} exceeds circuit voltage Vc={vc}")
    return (vc / vrl - 1.0) * rl


def mox_target_voltage(p: MoxParams, concentration: float) -> float:
    """Steady-state V_RL for a given concentration (monotone decreasing)."""
    c = max(0.0, concentration)
    return p.v_sat + (p.v_clean - p.v_sat) / (1.0 + c / p.c50)


def mox_invert_voltage(p: MoxParams, vrl: float) -> float:
    """Concentration estimate from V_RL; clipped near saturation."""
    v = min(max(vrl, p.v_sat + p.v_floor_margin), p.v_clean)
    return p.c50 * ((p.v_clean - p.v_sat) / (v - p.v_sat) - 1.0)


class MoxSensor:
    """One MOX channel: first-order lag toward the mapped target voltage."""

    def __init__(self, params: MoxParams, channel: str):
        self.p = params
        self.channel = channel
        self.vrl = params.v_clean
        self._started = False

    def read(self, true_concentration: float, t: float, dt: float,
             rng: np.random.Generator | None = None) -> SensorReading:
        if dt <= 0:
            raise ValueError(f"dt must be > 0, got {dt}")
        target = mox_target_voltage(self.p, true_concentration)
        if not self._started:
            # power-on in whatever air surrounds the vehicle
            self.vrl = target
            self._started = True
        else:
            decay = math.exp(-dt / self.p.response_tau)
            self.vrl = target + (self.vrl - target) * decay
        out = self.vrl
        if rng is not None and self.p.noise_sigma > 0:
            out += self.p.noise_sigma * rng.standard_normal()
        out = min(max(out, 1e-6), self.p.vc)
        return SensorReading(t, self.channel, out, mox_invert_voltage(self.p, out))


def cottrell_current(p: EcParams, t: float) -> float:
    """Diffusion-limited current I = n*F*A*c*sqrt(D) / sqrt(pi*t), amperes."""
    if t <= 0:
        raise ValueError(f"chronoamperometry time must be > 0, got {t}")
    return p.n_e * p.faraday * p.area * p.c_k * math.sqrt(p.d_k) / math.sqrt(math.pi * t)


def cottrell_amplitude(p: EcParams) -> float:
    """Coefficient a in I(t) = a/sqrt(t): n*F*A*c*sqrt(D/pi)."""
    return p.n_e * p.faraday * p.area * p.c_k * math.sqrt(p.d_k / math.pi)


def ec_fast_infer(times: np.ndarray, currents: np.ndarray,
                  p: EcParams) -> tuple[np.ndarray, np.ndarray, float]:
    """Extrapolate a truncated chronoamperometry trace to the full horizon.

    Fits I(t) = a/sqrt(t) + b by linear least squares on the observed window
    and evaluates the fit over the full duration at the burst sample rate.
    Returns (grid_times, predicted_currents, amplitude a). The amplitude is
    proportional to c*sqrt(D), which is the quantity navigation consumes.
    """
    times = np.asarray(times, dtype=float)
    currents = np.asarray(currents, dtype=float)
    if times.size != currents.size:
        raise FitError("times and currents must be the same length")
    if times.size < 10:
        raise FitError(f"need >= 10 samples inside the window, got {times.size}")
    if np.any(times <= 0) or np.any(times > p.cutoff + 1e-12):
        raise FitError("sample times must lie in (0, cutoff]")
    design = np.column_stack([1.0 / np.sqrt(times), np.ones_like(times)])
    coef, _, rank, _ = np.linalg.lstsq(design, currents, rcond=None)
    if rank < 2:
        raise FitError("degenerate design matrix (times not distinct enough)")
    a, b = float(coef[0]), float(coef[1])
    n_full = int(round(p.full_duration * p.sample_rate))
    grid = np.arange(1, n_full + 1) / p.sample_rate
    predicted = a / np.sqrt(grid) + b
    return grid, predicted, a


class EcSensor:
    """One EC channel: synthesizes a truncated burst and fast-infers amplitude.

    Bursts fire every ``read_period`` seconds; between bursts the channel
    holds its last value. The local concentration scales the Cottrell
    amplitude linearly, so the inferred amplitude maps straight back to a.u.
    """

    def __init__(self, params: EcParams, channel: str, c_ref: float = 1.0):
        self.p = params
        self.channel = channel
        self.c_ref = c_ref          # a.u. concentration producing params.c_k
        self.last_value = 0.0
        self.last_conc = 0.0
        self.next_burst = 0.0

    def read(self, true_concentration: float, t: float,
             rng: np.random.Generator | None = None) -> SensorReading:
        if t + 1e-9 >= self.next_burst:
            self.next_burst = t + self.p.read_period
            n = int(round(self.p.cutoff * self.p.sample_rate))
            times = np.arange(1, n + 1) / self.p.sample_rate
            scale = max(0.0, true_concentration) / self.c_ref
            clean = scale * cottrell_amplitude(self.p) / np.sqrt(times)
            if rng is not None and self.p.noise_sigma_rel > 0 and scale > 0:
                noise = self.p.noise_sigma_rel * float(np.mean(np.abs(clean)))
                clean = clean + noise * rng.standard_normal(n)
            elif rng is not None:
                rng.standard_normal(n)  # keep the stream aligned across branches
            try:
                _, _, amp = ec_fast_infer(times, clean, self.p)
            except FitError:
                amp = 0.0
            self.last_value = amp
            self.last_conc = max(0.0, amp / cottrell_amplitude(self.p) * self.c_ref)
        return SensorReading(t, self.channel, self.last_value, self.last_conc)


def sample_stereo(geom: StereoGeometry, concentration_fn, pose_xy: tuple[float, float],
                  heading_deg: float, z: float, t: float) -> tuple[float, float]:
    """True concentrations at the two antenna positions in the world frame.

    ``concentration_fn(x, y, z, t)`` is the ground-truth field query. Heading
    follows the world convention (0 = +x, counterclockwise positive), so the
    left antenna sits at +90 degrees from the nose.
    """
    h = math.radians(heading_deg)
    cos_h, sin_h = math.cos(h), math.sin(h)
    x, y = pose_xy
    # body (fore, lateral-left) -> world
    lx = x + geom.fore * cos_h - geom.x_left * sin_h
    ly = y + geom.fore * sin_h + geom.x_left * cos_h
    rx = x + geom.fore * cos_h - geom.x_right * sin_h
    ry = y + geom.fore * sin_h + geom.x_right * cos_h
    left = concentration_fn(lx, ly, z, t)
    right = concentration_fn(rx, ry, z, t)
    return left, right
