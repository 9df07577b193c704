"""Landing decision: sample-maximum source estimate and its confidence interval.

The UAV cannot map the building, so "am I done?" is answered statistically:
treat the concentrations sampled while on plume as draws (with replacement)
whose unknown population maximum is the source-level concentration. The
largest observed value m over k samples gives a point estimate and a
quantile confidence interval for that maximum; the flight terminates once
the interval says the undiscovered headroom above m is small enough.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class SourceEstimate:
    """Point estimate and confidence interval for the source concentration."""

    m: float            # largest observed concentration, a.u.
    k: int              # number of samples backing the estimate
    c_hat: float        # point estimate, a.u.
    ci: tuple[float, float]
    level: float        # two-sided confidence level, e.g. 0.95


def point_estimate(m: float, k: int, printed_form: bool = False) -> float:
    """Estimate the population maximum from the sample maximum m over k draws.

    Default form is m*(k+1)/k - 1, the classical sample-maximum estimator
    (approximately 1.05*m at k=20). ``printed_form=True`` selects the
    alternative m*k/(k+1) - 1 convention, kept for comparison; it shrinks
    below m instead of inflating above it.
    """
    if k < 1:
        raise ValueError(f"sample count k must be >= 1, got {k}")
    if m <= 0:
        raise ValueError(f"sample maximum m must be > 0, got {m}")
    if printed_form:
        return m * k / (k + 1.0) - 1.0
    return m * (k + 1.0) / k - 1.0


def confidence_interval(m: float, k: int, p: float, q: float) -> tuple[float, float]:
    """Two-sided quantile interval [m/q^(1/k), m/p^(1/k)] for the maximum.

    p and q are the lower and upper quantiles of the sample maximum, with
    0 < p < q < 1. The interval always sits at or above m.
    """
    if k < 1:
        raise ValueError(f"sample count k must be >= 1, got {k}")
    if not (0.0 < p < q < 1.0):
        raise ValueError(f"quantiles must satisfy 0 < p < q < 1, got p={p}, q={q}")
    lo = m / q ** (1.0 / k)
    hi = m / p ** (1.0 / k)
    return lo, hi


def estimate_source(m: float, k: int, level: float = 0.95) -> SourceEstimate:
    """Bundle the point estimate and symmetric interval at the given level."""
    p = (1.0 - level) / 2.0
    q = 1.0 - p
    return SourceEstimate(
        m=m, k=k,
        c_hat=point_estimate(m, k),
        ci=confidence_interval(m, k, p, q),
        level=level,
    )


def should_terminate(m: float, k: int, level: float = 0.95, margin: float = 0.25,
                     k_min: int = 10) -> bool:
    """True when the plausible undiscovered maximum exceeds m by <= margin.

    Uses the symmetric (1-level) split, so the upper bound is m/p^(1/k) with
    p = (1-level)/2. Requires at least k_min samples before it can fire;
    once true for some k it stays true for every larger k (hi/m is strictly
    decreasing in k).
    """
    if k < k_min:
        return False
    p = (1.0 - level) / 2.0
    hi_ratio = (1.0 / p) ** (1.0 / k)
    return hi_ratio - 1.0 <= margin


class SourceTracker:
    """Online (m, k) bookkeeping over a stream of concentration samples.

    k counts on-plume samples (above ``on_threshold``) observed since the
    current maximum m was last raised: a strictly larger sample resets the
    evidence counter, because earlier draws clearly came from a poorer
    neighborhood of the plume. Off-plume samples never advance k.

    The tracker also exposes a weaker "candidate" condition used to gate
    the optional vision check: ``candidate_streak`` consecutive on-plume
    samples without a new maximum means the olfactory gradient has stopped
    improving.

    ``evidence_fraction`` keeps the sampling model honest: draws far below
    the running maximum come from a different neighborhood of the plume
    than the one whose maximum is being estimated, so only samples above
    that fraction of m advance k.
    """

    def __init__(self, on_threshold: float, level: float = 0.95, margin: float = 0.25,
                 k_min: int = 10, candidate_streak: int = 8,
                 evidence_fraction: float = 0.0):
        if on_threshold < 0:
            raise ValueError("on_threshold must be >= 0")
        if not 0.0 <= evidence_fraction < 1.0:
            raise ValueError("evidence_fraction must be in [0, 1)")
        self.on_threshold = on_threshold
        self.level = level
        self.margin = margin
        self.k_min = k_min
        self.candidate_streak = candidate_streak
        self.evidence_fraction = evidence_fraction
        self.m = 0.0
        self.k = 0
        self.total_on_plume = 0

    def observe(self, c: float) -> None:
        """Feed one concentration sample (any units, >= 0)."""
        if not math.isfinite(c):
            raise ValueError(f"non-finite concentration sample: {c}")
        if c <= self.on_threshold:
            return
        self.total_on_plume += 1
        if c > self.m:
            self.m = c
            self.k = 1
        elif c >= self.evidence_fraction * self.m:
            self.k += 1

    @property
    def candidate(self) -> bool:
        """Gradient-plateau condition: enough non-improving on-plume samples."""
        if self.m <= 0.0:
            return False
        return self.k >= self.candidate_streak or self.decided

    @property
    def decided(self) -> bool:
        """Full termination criterion on the current (m, k)."""
        if self.m <= 0.0:
            return False
        return should_terminate(self.m, self.k, self.level, self.margin, self.k_min)

    def estimate(self) -> SourceEstimate | None:
        if self.m <= 0.0 or self.k < 1:
            return None
        return estimate_source(self.m, self.k, self.level)
