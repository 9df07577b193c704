"""Temporal filtering for the olfaction stream.

Implements the dual-timescale EMA divergence/signal pair used for bout
detection, stereo time-delay estimation by normalized cross-correlation,
the lag-to-heading conversion with the 5..90 degree clipping rule, and a
scalar random-walk Kalman smoother.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

# EMA periods: fast, slow, and the smoothing period applied to their
# difference. Fast < signal < slow is required for the detector to make sense.
FAST_PERIOD = 3
SLOW_PERIOD = 8
SIGNAL_PERIOD = 5

HOLD_BAND_DEG = 5.0     # headings inside (-5, 5) degrees are not worth a turn
MAX_TURN_DEG = 90.0


class BoutSignal(Enum):
    ENTERING_PLUME = 1
    LOSING_PLUME = -1
    NEUTRAL = 0


class HeadingMode(Enum):
    HOLD = "hold"
    TURN = "turn"
    CAST = "cast"   # no usable lag estimate: fall back to exploratory casting


@dataclass
class EmaState:
    """Single exponential moving average with smoothing factor 2/(period+1)."""

    period: int
    value: float = 0.0
    initialized: bool = False

    def __post_init__(self):
        if self.period < 1:
            raise ValueError(f"EMA period must be >= 1, got {self.period}")


def ema_update(state: EmaState, x: float) -> EmaState:
    """Advance the EMA by one sample. First sample initializes value = x."""
    if not math.isfinite(x):
        raise ValueError(f"non-finite EMA input: {x}")
    if not state.initialized:
        state.value = x
        state.initialized = True
    else:
        state.value += (2.0 / (state.period + 1.0)) * (x - state.value)
    return state


@dataclass
class HeadingEstimate:
    mode: HeadingMode
    phi_deg: float = 0.0
    tau_hat: float = 0.0


class ScalarKalman:
    """Random-walk scalar Kalman filter: x_k = x_{k-1} + w, z_k = x_k + v."""

    def __init__(self, q: float = 1e-4, r: float = 1e-2, p0: float = 1.0):
        if r <= 0:
            raise ValueError("measurement noise R must be > 0")
        if q < 0:
            raise ValueError("process noise Q must be >= 0")
        self.q = q
        self.r = r
        self.p = p0
        self.x = 0.0
        self.initialized = False

    def update(self, z: float) -> float:
        if not self.initialized:
            self.x = z
            self.initialized = True
        self.p += self.q
        gain = self.p / (self.p + self.r)
        self.x += gain * (z - self.x)
        self.p *= 1.0 - gain
        return self.x


def estimate_lag(left: np.ndarray, right: np.ndarray, max_lag: int,
                 min_corr: float = 0.0) -> float | None:
    """Time delay between channels via normalized cross-correlation peak.

    Positive value means the right channel leads (the front hit the right
    sensor first). Sub-sample resolution comes from a parabolic fit around
    the integer peak. Returns None for flat (zero-variance) buffers, or when
    the peak correlation falls below ``min_corr`` (channels too dissimilar
    for the lag to mean anything); callers treat None as "no bearing".
    """
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    n = left.size
    if right.size != n:
        raise ValueError("left/right buffers must be the same length")
    if n < 2 * max_lag + 1:
        raise ValueError(f"need >= {2 * max_lag + 1} aligned samples, got {n}")
    dl = left - left.mean()
    dr = right - right.mean()
    denom = math.sqrt(float(dl @ dl) * float(dr @ dr))
    if denom == 0.0:
        return None

    lags = np.arange(-max_lag, max_lag + 1)
    cc = np.empty(lags.size)
    for i, lag in enumerate(lags):
        # positive lag: right leads, i.e. right[t - lag] aligns with left[t]
        if lag >= 0:
            a, b = dl[lag:], dr[: n - lag]
        else:
            a, b = dl[:lag], dr[-lag:]
        cc[i] = float(a @ b)
    cc /= denom

    best = int(np.argmax(cc))
    if cc[best] < min_corr:
        return None
    tau = float(lags[best])
    if 0 < best < lags.size - 1:
        c_prev, c_0, c_next = cc[best - 1], cc[best], cc[best + 1]
        curv = c_prev - 2.0 * c_0 + c_next
        if curv < 0.0:
            tau += 0.5 * (c_prev - c_next) / curv
    return tau


def heading_from_lag(tau_hat: float | None, s_wind: float, d: float,
                     hold_band: float = HOLD_BAND_DEG) -> HeadingEstimate:
    """Convert a measured stereo lag into a discrete heading command.

    phi = arcsin(tau * s / d), with the argument clamped to [-1, 1]. The
    result is Hold inside the +-hold_band, otherwise a Turn with phi clipped
    to [-90, -hold_band] U [hold_band, 90]. A missing lag estimate yields
    Cast mode.
    """
    if d <= 0:
        raise ValueError(f"sensor baseline d must be > 0, got {d}")
    if s_wind < 0:
        raise ValueError(f"wind speed must be >= 0, got {s_wind}")
    if tau_hat is None:
        return HeadingEstimate(HeadingMode.CAST)
    arg = tau_hat * s_wind / d
    arg = min(1.0, max(-1.0, arg))
    phi = math.degrees(math.asin(arg))
    if abs(phi) < hold_band:
        return HeadingEstimate(HeadingMode.HOLD, 0.0, tau_hat)
    phi = math.copysign(min(max(abs(phi), hold_band), MAX_TURN_DEG), phi)
    return HeadingEstimate(HeadingMode.TURN, phi, tau_hat)


def heading_from_difference(left: float, right: float, floor: float,
                            gain: float = 120.0,
                            hold_band: float = HOLD_BAND_DEG) -> HeadingEstimate:
    """Heading command from the instantaneous stereo amplitude difference.

    At a 1 Hz cadence and a 0.2 m baseline the true inter-antenna lags are
    deep sub-sample, so runtime steering uses tropotaxis: turn toward the
    stronger antenna, angle proportional to the normalized difference.
    Positive phi means turn left (left antenna stronger). Cast mode when
    both channels sit at or below the noise floor.
    """
    if left <= floor and right <= floor:
        return HeadingEstimate(HeadingMode.CAST)
    rel = (left - right) / (left + right + 1e-12)
    phi = gain * rel
    if abs(phi) < hold_band:
        return HeadingEstimate(HeadingMode.HOLD, 0.0, 0.0)
    phi = math.copysign(min(abs(phi), MAX_TURN_DEG), phi)
    return HeadingEstimate(HeadingMode.TURN, phi, 0.0)


@dataclass
class FilterBank:
    """Per-episode filter state for one stereo olfaction stream.

    The bout chain (fast/slow EMA, divergence D, signal line S) runs on the
    channel maximum, the strongest-antenna view of odor presence. Per-channel
    fast EMAs feed the stereo comparison, and a ring buffer of recent samples
    feeds the cross-correlation lag estimator. The Kalman filter smooths the
    raw lag before it becomes a heading command.
    """

    sample_period: float = 1.0          # seconds between pushed samples
    max_lag: int = 4                    # lag search half-window, in samples
    buffer_len: int = 24
    deadband_scale: float = 0.05        # bout deadband = scale * running std of D
    history_len: int = 64
    kalman_q: float = 1e-4
    kalman_r: float = 1e-2
    min_lag_corr: float = 0.6           # below this NCC peak the lag is noise

    def __post_init__(self):
        if self.buffer_len < 2 * self.max_lag + 1:
            raise ValueError("buffer_len too short for the requested max_lag")
        self.ema_fast = EmaState(FAST_PERIOD)
        self.ema_slow = EmaState(SLOW_PERIOD)
        self.ema_signal = EmaState(SIGNAL_PERIOD)
        self.ema_left = EmaState(FAST_PERIOD)
        self.ema_right = EmaState(FAST_PERIOD)
        self.d_history: deque[float] = deque(maxlen=self.history_len)
        self.s_history: deque[float] = deque(maxlen=self.history_len)
        self.left_buf: deque[float] = deque(maxlen=self.buffer_len)
        self.right_buf: deque[float] = deque(maxlen=self.buffer_len)
        self.lag_kalman = ScalarKalman(self.kalman_q, self.kalman_r)
        self.last_bout = BoutSignal.NEUTRAL
        self.d = 0.0
        self.s = 0.0
        self.tau_hat: float | None = None

    @property
    def ready(self) -> bool:
        return self.ema_fast.initialized and self.ema_slow.initialized

    def divergence(self, c: float) -> float:
        """D = fast EMA - slow EMA of the combined signal; appended to history."""
        ema_update(self.ema_fast, c)
        ema_update(self.ema_slow, c)
        if not self.ready:
            raise RuntimeError("EMAs not initialized")
        self.d = self.ema_fast.value - self.ema_slow.value
        self.d_history.append(self.d)
        return self.d

    def signal_line(self, d: float) -> float:
        """S = EMA of the divergence with the signal period."""
        ema_update(self.ema_signal, d)
        self.s = self.ema_signal.value
        self.s_history.append(self.s)
        return self.s

    def bout_deadband(self) -> float:
        if len(self.d_history) < 4:
            return 0.0
        return self.deadband_scale * float(np.std(np.asarray(self.d_history)))

    def detect_bout(self, d: float, s: float) -> BoutSignal:
        """Deviation of D above/below S beyond the deadband classifies the bout."""
        eps = self.bout_deadband()
        dev = d - s
        if dev > eps:
            sig = BoutSignal.ENTERING_PLUME
        elif dev < -eps:
            sig = BoutSignal.LOSING_PLUME
        else:
            sig = BoutSignal.NEUTRAL
        self.last_bout = sig
        return sig

    def push(self, left: float, right: float) -> tuple[float, float, BoutSignal]:
        """Feed one aligned stereo sample; returns (D, S, bout)."""
        ema_update(self.ema_left, left)
        ema_update(self.ema_right, right)
        self.left_buf.append(left)
        self.right_buf.append(right)
        d = self.divergence(max(left, right))
        s = self.signal_line(d)
        bout = self.detect_bout(d, s)
        return d, s, bout

    def lag_estimate(self) -> float | None:
        """Cross-correlation lag over the current buffers, in seconds."""
        if len(self.left_buf) < 2 * self.max_lag + 1:
            return None
        tau = estimate_lag(np.fromiter(self.left_buf, dtype=float),
                           np.fromiter(self.right_buf, dtype=float),
                           self.max_lag, min_corr=self.min_lag_corr)
        if tau is None:
            self.tau_hat = None
            return None
        tau_s = tau * self.sample_period
        self.tau_hat = self.lag_kalman.update(tau_s)
        return self.tau_hat

    def heading(self, s_wind: float, d_baseline: float) -> HeadingEstimate:
        return heading_from_lag(self.lag_estimate(), s_wind, d_baseline)
