"""Local differential privacy mechanisms for mixed feature vectors.

Two primitives and a driver:

* :func:`perturb_number` — piecewise mechanism for a bounded scalar.  The
  output lands in a high-probability interval around a linear map of the
  input and is uniform elsewhere; the estimator is unbiased.
* :func:`perturb_onehot` — optimized unary encoding for a one-hot vector.
  The true bit survives with probability 1/2, zero bits flip up with
  probability 1/(e^eps + 1).
* :func:`perturb_features` — perturbs a whole mixed feature vector under a
  total budget by sampling k features, spending eps/k on each, and masking
  the rest with zeros.

All randomness flows through an injected ``numpy.random.Generator`` so runs
are reproducible under a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import CATEGORICAL, NUMERICAL, FeatureVector


def _check_budget(epsilon) -> float:
    epsilon = float(epsilon)
    if not math.isfinite(epsilon) or epsilon <= 0:
        raise ValueError(f"invalid privacy budget: epsilon must be positive and finite, got {epsilon}")
    return epsilon


def pm_range_constant(epsilon) -> float:
    """Output range constant of the piecewise mechanism.

    Returns (e^{eps/2} + 1) / (e^{eps/2} - 1); strictly decreasing in eps
    and > 1 for every finite budget.
    """
    epsilon = _check_budget(epsilon)
    e_half = math.exp(epsilon / 2.0)
    return (e_half + 1.0) / (e_half - 1.0)


def pm_interval(x, epsilon):
    """High-probability interval [l(x), r(x)] of the piecewise mechanism."""
    c = pm_range_constant(epsilon)
    l = (c + 1.0) / 2.0 * np.asarray(x, dtype=float) - (c - 1.0) / 2.0
    return l, l + (c - 1.0)


def perturb_number(x, epsilon, rng):
    """Piecewise-mechanism perturbation of numbers in [-1, 1].

    Accepts a scalar or ndarray; returns the same shape.  Outputs lie in
    [-C, C] with C the range constant.  With probability
    e^{eps/2}/(e^{eps/2}+1) the output is uniform on [l(x), r(x)]; otherwise
    it is uniform on the complement [-C, l(x)) u (r(x), C], sampled
    length-proportionally so zero-length end segments get probability 0.
    """
    epsilon = _check_budget(epsilon)
    arr = np.asarray(x, dtype=float)
    if np.any(np.abs(arr) > 1.0):
        raise ValueError("piecewise mechanism input outside [-1, 1]; normalize first")

    c = pm_range_constant(epsilon)
    e_half = math.exp(epsilon / 2.0)
    p_inside = e_half / (e_half + 1.0)
    l = (c + 1.0) / 2.0 * arr - (c - 1.0) / 2.0
    r = l + (c - 1.0)

    inside = rng.random(arr.shape) < p_inside
    inner = l + rng.random(arr.shape) * (c - 1.0)
    # the two outer segments have total length (C + 1) regardless of x
    u = rng.random(arr.shape) * (c + 1.0)
    left_len = l + c
    outer = np.where(u < left_len, -c + u, r + (u - left_len))
    out = np.where(inside, inner, outer)
    return float(out) if np.isscalar(x) else out


def perturb_onehot(x, epsilon, rng) -> np.ndarray:
    """Optimized unary encoding of a one-hot vector.

    Each output bit is independent: the true bit is kept with probability
    0.5, zero bits are set with probability 1/(e^eps + 1).
    """
    epsilon = _check_budget(epsilon)
    arr = np.asarray(x)
    if arr.ndim != 1 or arr.shape[0] < 2:
        raise ValueError("one-hot input must be a vector of width >= 2")
    if not (np.all((arr == 0) | (arr == 1)) and arr.sum() == 1):
        raise ValueError("input is not one-hot")
    q = 1.0 / (math.exp(epsilon) + 1.0)
    u = rng.random(arr.shape)
    return np.where(arr == 1, u < 0.5, u < q).astype(np.int64)


def select_k(n: int, epsilon1) -> int:
    """Number of features to perturb under total budget ``epsilon1``.

    k = max(1, min(n, floor(eps1 / 2.5))) — spending eps1/k on k features
    minimizes the incurred noise variance.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    epsilon1 = _check_budget(epsilon1)
    return max(1, min(int(n), math.floor(epsilon1 / 2.5)))


@dataclass
class PerturbedFeatureVector:
    """Perturbed flat feature vector; non-selected blocks are masked to zero."""

    values: np.ndarray
    selected: tuple
    budget_per_feature: float


def perturb_features(vector: FeatureVector, epsilon1, rng) -> PerturbedFeatureVector:
    """Perturb a mixed feature vector under total budget ``epsilon1``.

    Uniformly samples k distinct features; numerical selections go through
    the piecewise mechanism at budget eps1/k and are scaled by n/k,
    categorical selections through unary encoding at eps1/k.  Everything
    else is dropped by masking with zero.
    """
    epsilon1 = _check_budget(epsilon1)
    vector.validate()
    schema = vector.schema
    n = schema.n
    k = select_k(n, epsilon1)
    budget = epsilon1 / k
    selected = np.sort(rng.choice(n, size=k, replace=False))

    out = np.zeros_like(vector.values)
    for i in selected:
        sl = schema.block(int(i))
        block = vector.values[sl]
        if schema.fields[int(i)].kind == NUMERICAL:
            out[sl] = (n / k) * perturb_number(float(block[0]), budget, rng)
        else:
            out[sl] = perturb_onehot(block, budget, rng)
    return PerturbedFeatureVector(out, tuple(int(i) for i in selected), budget)
