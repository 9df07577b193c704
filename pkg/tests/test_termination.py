import math

import numpy as np
import pytest

from plumenav.termination import (SourceTracker, confidence_interval,
                                  estimate_source, point_estimate,
                                  should_terminate)


class TestPointEstimate:
    def test_k20_matches_1p05m(self):
        # at k=20 the estimator inflates the sample maximum by 5%
        for m in (1.0, 7.3, 1000.0):
            assert point_estimate(m, 20) == pytest.approx(1.05 * m - 1.0, rel=1e-12)

    def test_large_k_limit(self):
        m = 50.0
        assert point_estimate(m, 10_000_000) == pytest.approx(m - 1.0, rel=1e-6)

    def test_k1_direct(self):
        assert point_estimate(10.0, 1) == pytest.approx(19.0)

    def test_printed_form_diverges_from_worked_value(self):
        # the alternative convention shrinks below m instead of giving 1.05m
        m = 100.0
        alt = point_estimate(m, 20, printed_form=True)
        assert alt == pytest.approx(m * 20 / 21 - 1.0, rel=1e-12)
        assert abs(alt - (1.05 * m - 1.0)) > 0.05 * m

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            point_estimate(1.0, 0)
        with pytest.raises(ValueError):
            point_estimate(-1.0, 5)


class TestConfidenceInterval:
    def test_worked_example_ratios(self):
        lo, hi = confidence_interval(1.0, 20, 0.025, 0.975)
        assert lo == pytest.approx(1.00127, abs=1e-3)
        assert hi == pytest.approx(1.20253, abs=1e-3)

    def test_large_k_collapses_to_m(self):
        lo, hi = confidence_interval(5.0, 10_000_000, 0.025, 0.975)
        assert lo == pytest.approx(5.0, rel=1e-5)
        assert hi == pytest.approx(5.0, rel=1e-5)

    def test_k5_direct_evaluation(self):
        m, k, p, q = 3.0, 5, 0.05, 0.95
        lo, hi = confidence_interval(m, k, p, q)
        assert lo == pytest.approx(m / q ** 0.2, rel=1e-12)
        assert hi == pytest.approx(m / p ** 0.2, rel=1e-12)

    def test_interval_sits_at_or_above_m(self):
        for k in (1, 3, 10, 50):
            lo, hi = confidence_interval(2.0, k, 0.025, 0.975)
            assert 2.0 <= lo <= hi

    def test_scale_equivariance(self):
        lo1, hi1 = confidence_interval(1.0, 8, 0.025, 0.975)
        lo2, hi2 = confidence_interval(13.0, 8, 0.025, 0.975)
        assert lo2 == pytest.approx(13.0 * lo1, rel=1e-12)
        assert hi2 == pytest.approx(13.0 * hi1, rel=1e-12)

    def test_bad_quantiles(self):
        for p, q in ((0.0, 0.9), (0.5, 0.5), (0.9, 0.1), (0.1, 1.0)):
            with pytest.raises(ValueError):
                confidence_interval(1.0, 5, p, q)


class TestShouldTerminate:
    def test_worked_example_terminates(self):
        assert should_terminate(1.0, 20, level=0.95, margin=0.25)

    def test_below_k_min_never_fires(self):
        assert not should_terminate(1e9, 3, level=0.95, margin=0.25, k_min=10)

    def test_smallest_k_matches_closed_form_scan(self):
        # oracle: scan k upward with the closed form only
        p = 0.025
        k_star = next(k for k in range(1, 100) if (1 / p) ** (1 / k) - 1 <= 0.25)
        assert k_star == 17
        assert not should_terminate(1.0, k_star - 1, k_min=1)
        assert should_terminate(1.0, k_star, k_min=1)

    def test_monotone_in_k(self):
        fired = [should_terminate(1.0, k, k_min=1) for k in range(1, 60)]
        # once true, stays true
        first = fired.index(True)
        assert all(fired[first:])

    def test_hi_ratio_strictly_decreasing_in_k(self):
        ratios = [confidence_interval(1.0, k, 0.025, 0.975)[1] for k in range(1, 40)]
        assert all(a > b for a, b in zip(ratios, ratios[1:]))


class TestEstimateSource:
    def test_bundle_consistency(self):
        est = estimate_source(10.0, 20, level=0.95)
        assert est.c_hat == pytest.approx(point_estimate(10.0, 20))
        ref = confidence_interval(10.0, 20, 0.025, 0.975)
        assert est.ci == pytest.approx(ref, rel=1e-12)
        assert est.ci[0] <= est.ci[1]


class TestSourceTracker:
    def test_off_plume_samples_ignored(self):
        tr = SourceTracker(on_threshold=1.0)
        for _ in range(30):
            tr.observe(0.5)
        assert tr.m == 0.0 and tr.k == 0

    def test_new_max_resets_evidence(self):
        tr = SourceTracker(on_threshold=0.0, k_min=1)
        for c in (2.0, 2.0, 2.0, 5.0):
            tr.observe(c)
        assert tr.m == 5.0 and tr.k == 1

    def test_decides_after_17_quiet_samples(self):
        tr = SourceTracker(on_threshold=0.0, k_min=10)
        tr.observe(10.0)
        for _ in range(15):
            tr.observe(9.0)
        assert not tr.decided
        tr.observe(9.0)
        assert tr.k == 17
        assert tr.decided

    def test_candidate_before_decision(self):
        tr = SourceTracker(on_threshold=0.0, candidate_streak=8)
        tr.observe(10.0)
        for _ in range(7):
            tr.observe(9.0)
        assert tr.candidate and not tr.decided

    def test_evidence_fraction_filters_weak_samples(self):
        tr = SourceTracker(on_threshold=0.0, evidence_fraction=0.5)
        tr.observe(10.0)
        for _ in range(20):
            tr.observe(1.0)   # far below m: different neighborhood
        assert tr.k == 1

    def test_rejects_non_finite(self):
        tr = SourceTracker(on_threshold=0.0)
        with pytest.raises(ValueError):
            tr.observe(float("nan"))
