import math

import numpy as np
import pytest

from plumenav.filters import (BoutSignal, EmaState, FilterBank, HeadingMode,
                              ScalarKalman, ema_update, estimate_lag,
                              heading_from_difference, heading_from_lag)


def direct_ema(xs, period):
    """Independent EMA recursion used as the oracle."""
    a = 2.0 / (period + 1.0)
    out = []
    v = None
    for x in xs:
        v = x if v is None else v + a * (x - v)
        out.append(v)
    return out


class TestEma:
    def test_constant_is_fixed_point(self):
        s = EmaState(5)
        for _ in range(50):
            ema_update(s, 3.7)
            assert s.value == 3.7

    def test_period_one_tracks_input(self):
        s = EmaState(1)
        for x in (1.0, -2.0, 9.5, 0.0):
            ema_update(s, x)
            assert s.value == x

    def test_step_response_closed_form(self):
        # step 0 -> 1 at period 3: value after n post-step samples = 1 - 0.5^n
        s = EmaState(3)
        ema_update(s, 0.0)
        for n in range(1, 20):
            ema_update(s, 1.0)
            assert s.value == pytest.approx(1.0 - 0.5 ** n, rel=1e-12)

    def test_boundedness(self):
        rng = np.random.default_rng(0)
        xs = rng.normal(size=300)
        s = EmaState(8)
        for i, x in enumerate(xs):
            ema_update(s, float(x))
            assert xs[: i + 1].min() - 1e-12 <= s.value <= xs[: i + 1].max() + 1e-12

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            ema_update(EmaState(3), float("inf"))

    def test_invalid_period(self):
        with pytest.raises(ValueError):
            EmaState(0)


class TestDivergenceSignal:
    def test_constant_input_gives_exact_zero(self):
        bank = FilterBank()
        for _ in range(100):
            d, s, _ = bank.push(2.5, 2.5)
            assert d == 0.0
            assert s == 0.0

    def test_rising_signal_positive_divergence(self):
        bank = FilterBank()
        for i in range(2, 30):
            d, _, _ = bank.push(float(i), float(i))
        assert d > 0

    def test_matches_direct_recursion_oracle(self):
        rng = np.random.default_rng(42)
        xs = np.cumsum(rng.normal(0.2, 1.0, 200))
        bank = FilterBank()
        ds, ss = [], []
        for x in xs:
            d, s, _ = bank.push(float(x), float(x))
            ds.append(d)
            ss.append(s)
        fast = direct_ema(xs, 3)
        slow = direct_ema(xs, 8)
        d_ref = [f - sl for f, sl in zip(fast, slow)]
        s_ref = direct_ema(d_ref, 5)
        np.testing.assert_allclose(ds, d_ref, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(ss, s_ref, rtol=1e-12, atol=1e-12)


class TestBoutDetection:
    def test_equal_lines_neutral(self):
        bank = FilterBank()
        bank.push(1.0, 1.0)
        assert bank.detect_bout(0.5, 0.5) is BoutSignal.NEUTRAL

    def test_entry_fires_within_slow_period_of_onset(self):
        bank = FilterBank()
        for _ in range(20):
            bank.push(0.1, 0.1)
        fired_at = None
        for i in range(8):
            _, _, bout = bank.push(0.1 + 0.3 * (i + 1), 0.1 + 0.3 * (i + 1))
            if bout is BoutSignal.ENTERING_PLUME:
                fired_at = i
                break
        assert fired_at is not None and fired_at < 8

    def test_exit_triggers_losing(self):
        bank = FilterBank()
        for i in range(20):
            bank.push(2.0, 2.0)
        saw_losing = False
        for i in range(8):
            _, _, bout = bank.push(0.01, 0.01)
            saw_losing = saw_losing or bout is BoutSignal.LOSING_PLUME
        assert saw_losing


class TestLagEstimation:
    def test_constructed_integer_shift(self):
        rng = np.random.default_rng(1)
        base = np.cumsum(rng.normal(size=64))
        # right leads left by 2 samples: right[n] = left[n + 2]
        left = base[:-2]
        right = base[2:]
        tau = estimate_lag(left, right, max_lag=5)
        assert tau == pytest.approx(2.0, abs=0.5)

    def test_identical_channels_zero_lag(self):
        rng = np.random.default_rng(2)
        x = np.cumsum(rng.normal(size=50))
        assert estimate_lag(x, x, 5) == pytest.approx(0.0, abs=1e-9)

    def test_flat_buffers_return_none(self):
        x = np.ones(40)
        assert estimate_lag(x, x, 5) is None

    def test_low_correlation_gated(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=400)
        b = rng.normal(size=400)
        assert estimate_lag(a, b, 5, min_corr=0.6) is None

    def test_antisymmetry_under_swap(self):
        rng = np.random.default_rng(4)
        for trial in range(20):
            base = np.cumsum(rng.normal(size=60))
            shift = int(rng.integers(1, 4))
            left, right = base[:-shift], base[shift:]
            t1 = estimate_lag(left, right, 5)
            t2 = estimate_lag(right, left, 5)
            assert t1 is not None and t2 is not None
            assert t1 == pytest.approx(-t2, abs=1e-9)

    def test_noisy_shift_median_accuracy(self):
        # SNR >= 10 dB, 100 seeds, median error within half a sample
        errs = []
        for seed in range(100):
            rng = np.random.default_rng(seed)
            t = np.arange(70.0)
            sig = np.sin(2 * math.pi * t / 23.0) + 0.5 * np.sin(2 * math.pi * t / 7.0)
            noise_scale = math.sqrt(np.var(sig) / 10.0)  # 10 dB
            shift = 2
            left = sig[:-shift] + rng.normal(0, noise_scale, t.size - shift)
            right = sig[shift:] + rng.normal(0, noise_scale, t.size - shift)
            tau = estimate_lag(left, right, 6)
            if tau is not None:
                errs.append(abs(tau - shift))
        assert len(errs) >= 90
        assert np.median(errs) <= 0.5

    def test_buffer_length_guard(self):
        with pytest.raises(ValueError):
            estimate_lag(np.ones(5), np.ones(5), 4)


class TestHeadingFromLag:
    def test_zero_lag_holds(self):
        est = heading_from_lag(0.0, 1.0, 0.2)
        assert est.mode is HeadingMode.HOLD

    def test_full_argument_gives_90(self):
        est = heading_from_lag(0.2, 1.0, 0.2)
        assert est.mode is HeadingMode.TURN
        assert est.phi_deg == pytest.approx(90.0)

    def test_small_angle_holds(self):
        # arg 0.05 -> about 2.87 degrees, inside the hold band
        est = heading_from_lag(0.05, 1.0, 1.0)
        assert math.degrees(math.asin(0.05)) == pytest.approx(2.866, abs=1e-3)
        assert est.mode is HeadingMode.HOLD

    def test_none_gives_cast(self):
        assert heading_from_lag(None, 1.0, 0.2).mode is HeadingMode.CAST

    def test_clipping_completeness_sweep(self):
        # no finite triple may produce NaN or a turn angle inside the hold band
        rng = np.random.default_rng(7)
        taus = rng.uniform(-50, 50, 20_000)
        winds = rng.uniform(0, 20, 20_000)
        ds = rng.uniform(1e-3, 5, 20_000)
        for tau, s, d in zip(taus, winds, ds):
            est = heading_from_lag(tau, s, d)
            assert est.mode in (HeadingMode.HOLD, HeadingMode.TURN)
            assert math.isfinite(est.phi_deg)
            if est.mode is HeadingMode.TURN:
                assert 5.0 <= abs(est.phi_deg) <= 90.0

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            heading_from_lag(0.1, 1.0, 0.0)
        with pytest.raises(ValueError):
            heading_from_lag(0.1, -1.0, 0.2)


class TestHeadingFromDifference:
    def test_balanced_holds(self):
        assert heading_from_difference(1.0, 1.0, 0.1).mode is HeadingMode.HOLD

    def test_left_stronger_turns_left(self):
        est = heading_from_difference(2.0, 1.0, 0.1)
        assert est.mode is HeadingMode.TURN and est.phi_deg > 0

    def test_below_floor_casts(self):
        assert heading_from_difference(0.0, 0.0, 0.1).mode is HeadingMode.CAST


class TestScalarKalman:
    def test_tiny_r_tracks_measurement(self):
        kf = ScalarKalman(q=1e-4, r=1e-12)
        for z in (1.0, 5.0, -3.0):
            out = kf.update(z)
        assert out == pytest.approx(-3.0, abs=1e-6)

    def test_q_zero_converges_on_constant(self):
        rng = np.random.default_rng(11)
        kf = ScalarKalman(q=0.0, r=0.5)
        for _ in range(4000):
            out = kf.update(2.0 + float(rng.normal(0, 0.7)))
        assert out == pytest.approx(2.0, abs=0.1)
        assert kf.p < 1e-3

    def test_matches_two_line_recursion_oracle(self):
        q, r = 1e-3, 2e-2
        zs = [0.3, 0.5, 0.1, 0.9, 0.4, 0.6]
        kf = ScalarKalman(q=q, r=r, p0=1.0)
        outs = [kf.update(z) for z in zs]
        # independent recursion
        x, p = zs[0], 1.0
        ref = []
        for z in zs:
            p = p + q
            g = p / (p + r)
            x = x + g * (z - x)
            p = p * (1 - g)
            ref.append(x)
        np.testing.assert_allclose(outs, ref, rtol=1e-12)

    def test_variance_drops_on_first_update(self):
        kf = ScalarKalman(q=1e-4, r=1e-2, p0=1.0)
        kf.update(1.0)
        assert kf.p < 1.0

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            ScalarKalman(r=0.0)
        with pytest.raises(ValueError):
            ScalarKalman(q=-1.0)
