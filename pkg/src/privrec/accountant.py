"""Renyi-DP accounting for the noisy aggregation mechanism.

A Gaussian mechanism with L2 sensitivity C and noise scale sigma is
(alpha, C^2 alpha / (2 sigma^2))-RDP; composing T aggregation steps scales
the coefficient by T.  Converting back to (eps, delta)-DP and minimizing
over alpha gives the closed form

    eps2 = T C^2 / (2 sigma^2) + C sqrt(2 T ln(1/delta)) / sigma

which this module evaluates and inverts (noise calibration solves the
exact quadratic in C/sigma).  All arithmetic is 64-bit floating point;
tolerances are stated per operation in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class RdpCurve:
    """Linear RDP curve eps(alpha) = coefficient * alpha for alpha > 1."""

    coefficient: float

    def epsilon(self, alpha: float) -> float:
        if alpha <= 1.0:
            raise ValueError(f"RDP order must be > 1, got {alpha}")
        return self.coefficient * alpha


def rdp_of_gaussian(sensitivity, sigma, steps: int = 1) -> RdpCurve:
    """RDP curve of ``steps`` adaptive compositions of a Gaussian mechanism."""
    if sensitivity <= 0 or sigma <= 0 or steps <= 0:
        raise ValueError(
            f"sensitivity, sigma and steps must be positive, got "
            f"({sensitivity}, {sigma}, {steps})"
        )
    return RdpCurve(steps * sensitivity**2 / (2.0 * sigma**2))


def rdp_to_dp(curve: RdpCurve, delta: float) -> float:
    """Smallest eps such that the curve implies (eps, delta)-DP.

    Minimizes coefficient * alpha + ln(1/delta) / (alpha - 1) over alpha > 1;
    the minimizer is alpha* = 1 + sqrt(ln(1/delta) / coefficient), giving
    coefficient + 2 sqrt(coefficient * ln(1/delta)).
    """
    _check_delta(delta)
    c = curve.coefficient
    if c <= 0:
        raise ValueError(f"RDP coefficient must be positive, got {c}")
    log_inv_delta = math.log(1.0 / delta)
    alpha = 1.0 + math.sqrt(log_inv_delta / c)
    return c * alpha + log_inv_delta / (alpha - 1.0)


def epsilon2(sigma, delta, steps, clip_norm) -> float:
    """Closed-form privacy cost of T noisy aggregation steps."""
    return rdp_to_dp(rdp_of_gaussian(clip_norm, sigma, steps), delta)


def calibrate_sigma(target_epsilon2, delta, steps, clip_norm) -> float:
    """Noise scale achieving exactly ``target_epsilon2`` over T steps.

    eps2 is strictly decreasing in sigma, so with u = C/sigma the target
    solves (T/2) u^2 + sqrt(2 T ln(1/delta)) u - eps2 = 0; take the positive
    root and return C/u.
    """
    _check_delta(delta)
    if target_epsilon2 <= 0 or not math.isfinite(target_epsilon2):
        raise ValueError(f"target epsilon2 must be positive and finite, got {target_epsilon2}")
    if steps <= 0 or clip_norm <= 0:
        raise ValueError(f"steps and clip_norm must be positive, got ({steps}, {clip_norm})")
    b = math.sqrt(2.0 * steps * math.log(1.0 / delta))
    u = (-b + math.sqrt(b * b + 2.0 * target_epsilon2 * steps)) / steps
    return clip_norm / u


def delta_default(num_edges: int, fraction: float = 0.9) -> float:
    """Default failure probability, strictly below 1/num_edges."""
    if num_edges < 1:
        raise ValueError(f"num_edges must be >= 1, got {num_edges}")
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    return fraction / num_edges


def _check_delta(delta):
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must be in (0, 1), got {delta}")


@dataclass(frozen=True)
class PrivacySpec:
    """Privacy parameter bundle for one run.

    ``epsilon1`` covers the feature perturbation, ``epsilon2`` the noisy
    aggregation over ``steps_T`` propagation steps with row norm bound
    ``embed_norm_C``; ``sigma`` is the calibrated noise scale.  An infinite
    ``epsilon2`` means non-private aggregation (sigma = 0).
    """

    epsilon1: float
    epsilon2: float
    delta: float
    steps_T: int
    embed_norm_C: float
    sigma: float

    def __post_init__(self):
        _check_delta(self.delta)
        if self.steps_T < 1:
            raise ValueError(f"steps_T must be >= 1, got {self.steps_T}")
        if self.embed_norm_C <= 0:
            raise ValueError(f"embed_norm_C must be positive, got {self.embed_norm_C}")
        if math.isinf(self.epsilon2):
            if self.sigma != 0.0:
                raise ValueError("infinite epsilon2 requires sigma = 0")
            return
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        back = epsilon2(self.sigma, self.delta, self.steps_T, self.embed_norm_C)
        if not math.isclose(back, self.epsilon2, rel_tol=1e-9):
            raise ValueError(
                f"inconsistent spec: epsilon2={self.epsilon2} but (T, C, sigma, delta) give {back}"
            )

    @classmethod
    def calibrated(cls, epsilon1, epsilon2_target, delta, steps_T, embed_norm_C) -> "PrivacySpec":
        """Build a spec by calibrating sigma for the target budget."""
        if math.isinf(epsilon2_target):
            sigma = 0.0
        else:
            sigma = calibrate_sigma(epsilon2_target, delta, steps_T, embed_norm_C)
        return cls(epsilon1, epsilon2_target, delta, steps_T, embed_norm_C, sigma)

    def to_dict(self) -> dict:
        return {
            "epsilon1": self.epsilon1,
            "epsilon2": self.epsilon2,
            "delta": self.delta,
            "steps_T": self.steps_T,
            "embed_norm_C": self.embed_norm_C,
            "sigma": self.sigma,
        }
