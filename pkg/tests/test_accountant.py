"""Accountant tests: closed forms against independent numeric oracles.

The conversion minimum is cross-checked with a golden-section search, the
calibration quadratic with bisection on the (strictly decreasing) budget
function.
"""

import math

import numpy as np
import pytest

from privrec.accountant import (
    PrivacySpec,
    RdpCurve,
    calibrate_sigma,
    delta_default,
    epsilon2,
    rdp_of_gaussian,
    rdp_to_dp,
)


def golden_min(f, lo, hi, tol=1e-12, iters=300):
    """Golden-section minimum of a unimodal function on [lo, hi]."""
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - phi * (b - a), a + phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if b - a < tol * (1.0 + abs(a)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = f(d)
    return min(fc, fd)


def bisect_sigma(target, delta, steps, clip, lo=1e-6, hi=1e6, iters=200):
    """Bisection on the strictly decreasing sigma -> epsilon2 map."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if epsilon2(mid, delta, steps, clip) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestRdpOfGaussian:
    def test_unit_case(self):
        curve = rdp_of_gaussian(1.0, 1.0, 1)
        assert curve.coefficient == pytest.approx(0.5)
        assert curve.epsilon(2.0) == pytest.approx(1.0)

    def test_quadratic_in_sensitivity(self):
        assert rdp_of_gaussian(2.0, 1.0, 1).coefficient == pytest.approx(2.0)

    def test_linear_in_steps(self):
        assert rdp_of_gaussian(1.0, 1.0, 3).coefficient == pytest.approx(1.5)

    def test_curve_linear_increasing(self):
        curve = rdp_of_gaussian(1.5, 2.0, 4)
        alphas = np.linspace(1.001, 50.0, 100)
        eps = [curve.epsilon(a) for a in alphas]
        assert np.all(np.diff(eps) > 0)
        assert eps[10] == pytest.approx(curve.coefficient * alphas[10])

    def test_invalid_parameters(self):
        with pytest.raises(ValueError, match="positive"):
            rdp_of_gaussian(1.0, 0.0, 1)
        with pytest.raises(ValueError, match="positive"):
            rdp_of_gaussian(-1.0, 1.0, 1)
        with pytest.raises(ValueError, match="> 1"):
            rdp_of_gaussian(1.0, 1.0, 1).epsilon(1.0)


class TestRdpToDp:
    def test_worked_example(self):
        # T=1, C=1, sigma=1, delta=e^-1: 0.5 + sqrt(2)
        eps = rdp_to_dp(RdpCurve(0.5), math.exp(-1.0))
        assert eps == pytest.approx(0.5 + math.sqrt(2.0), rel=1e-12)

    def test_matches_golden_section_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            steps = int(rng.integers(1, 8))
            clip = float(rng.uniform(0.1, 4.0))
            sigma = float(rng.uniform(0.2, 10.0))
            delta = float(10.0 ** rng.uniform(-9, -1))
            curve = rdp_of_gaussian(clip, sigma, steps)
            f = lambda a: curve.coefficient * a + math.log(1.0 / delta) / (a - 1.0)
            oracle = golden_min(f, 1.0 + 1e-9, 1e7)
            assert rdp_to_dp(curve, delta) == pytest.approx(oracle, rel=1e-6)

    def test_delta_near_one_limit(self):
        # log(1/delta) -> 0: eps -> coefficient (evaluated at alpha -> 1+)
        eps = rdp_to_dp(RdpCurve(0.5), 1.0 - 1e-12)
        assert eps == pytest.approx(0.5, abs=1e-5)

    def test_delta_domain(self):
        with pytest.raises(ValueError, match="delta"):
            rdp_to_dp(RdpCurve(0.5), 0.0)
        with pytest.raises(ValueError, match="delta"):
            rdp_to_dp(RdpCurve(0.5), 1.0)


class TestCalibrateSigma:
    def test_worked_value_against_bisection(self):
        sigma = calibrate_sigma(5.0, 1e-5, 1, 1.0)
        assert sigma == pytest.approx(1.054534, abs=1e-5)
        assert sigma == pytest.approx(bisect_sigma(5.0, 1e-5, 1, 1.0), abs=1e-3)

    def test_round_trip(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            steps = int(rng.integers(1, 10))
            clip = float(rng.uniform(0.05, 5.0))
            delta = float(10.0 ** rng.uniform(-9, -1))
            target = float(rng.uniform(0.05, 50.0))
            sigma = calibrate_sigma(target, delta, steps, clip)
            assert epsilon2(sigma, delta, steps, clip) == pytest.approx(target, rel=1e-9)

    def test_doubling_clip_doubles_sigma(self):
        a = calibrate_sigma(5.0, 1e-5, 2, 1.0)
        b = calibrate_sigma(5.0, 1e-5, 2, 2.0)
        assert b == pytest.approx(2.0 * a, rel=1e-12)

    def test_smaller_budget_needs_more_noise(self):
        assert calibrate_sigma(3.0, 1e-5, 1, 1.0) > calibrate_sigma(5.0, 1e-5, 1, 1.0)

    def test_invalid_targets(self):
        with pytest.raises(ValueError, match="positive"):
            calibrate_sigma(0.0, 1e-5, 1, 1.0)
        with pytest.raises(ValueError, match="positive"):
            calibrate_sigma(-2.0, 1e-5, 1, 1.0)
        with pytest.raises(ValueError, match="finite"):
            calibrate_sigma(math.inf, 1e-5, 1, 1.0)


class TestEpsilonProperties:
    def test_monotonicity(self):
        sigmas = np.linspace(0.3, 5.0, 40)
        eps = [epsilon2(s, 1e-5, 2, 1.0) for s in sigmas]
        assert np.all(np.diff(eps) < 0)
        steps = range(1, 10)
        eps_t = [epsilon2(1.0, 1e-5, t, 1.0) for t in steps]
        assert np.all(np.diff(eps_t) > 0)
        clips = np.linspace(0.1, 3.0, 30)
        eps_c = [epsilon2(1.0, 1e-5, 2, c) for c in clips]
        assert np.all(np.diff(eps_c) > 0)

    def test_scale_invariance(self):
        # eps2 depends on C/sigma and (T, delta) only
        a = epsilon2(0.7, 1e-6, 3, 0.35)
        b = epsilon2(7.0, 1e-6, 3, 3.5)
        assert a == pytest.approx(b, rel=1e-12)


class TestDeltaDefault:
    def test_examples(self):
        assert delta_default(10**6) == pytest.approx(9e-7)
        assert delta_default(1) == pytest.approx(0.9)

    def test_strictly_below_inverse(self):
        rng = np.random.default_rng(7)
        for n in rng.integers(1, 10**9, size=1000):
            assert delta_default(int(n)) * int(n) < 1.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            delta_default(0)


class TestPrivacySpec:
    def test_calibrated_consistency(self):
        spec = PrivacySpec.calibrated(20.0, 5.0, 1e-5, 2, 0.5)
        assert spec.sigma > 0
        # constructor re-checks Theorem-style consistency at 1e-9 relative
        PrivacySpec(20.0, spec.epsilon2, spec.delta, spec.steps_T,
                    spec.embed_norm_C, spec.sigma)

    def test_infinite_budget_means_no_noise(self):
        spec = PrivacySpec.calibrated(20.0, math.inf, 1e-5, 1, 1.0)
        assert spec.sigma == 0.0
        with pytest.raises(ValueError, match="sigma = 0"):
            PrivacySpec(20.0, math.inf, 1e-5, 1, 1.0, 0.5)

    def test_inconsistent_sigma_rejected(self):
        with pytest.raises(ValueError, match="inconsistent"):
            PrivacySpec(20.0, 5.0, 1e-5, 1, 1.0, 2.0)
