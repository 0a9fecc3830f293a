"""Closed-form constants and probability bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ZeroCoefficient


def c1_constant(M: float, alpha: float) -> float:
    """``5 (1 + log^2 M) / (2 alpha^2)``."""
    if not M >= 1:
        raise ValueError("M must be at least 1")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return 5.0 * (1.0 + math.log(M) ** 2) / (2.0 * alpha ** 2)


def lemma2_bound(n: int, delta: float, M: float) -> float:
    """``1 - 2 exp(-n delta^2 / (8 M))``."""
    return 1.0 - 2.0 * math.exp(-n * delta ** 2 / (8.0 * M))


def regression_c2_bound(theta_star, sigma: float) -> float:
    """Lower bound on the underestimation exponent of the Fourier regression model.

    ``12 c2 >= 1 / max_{k < k*} (1/(2 sigma^2) + Delta_{k+1}/(2 sigma^2) + 2^{k*}/pi (1 + Delta_{k+1})^2)``
    with ``Delta_{k+1} = sum_{j > k+1} theta*_j^2 / theta*_{k+1}^2``.
    """
    th = np.asarray(getattr(theta_star, "vector", theta_star), dtype=float)
    k_star = len(th)
    if k_star < 2:
        raise ValueError("the bound needs k* >= 2")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    terms = []
    for k in range(1, k_star):
        lead = th[k]
        if lead == 0:
            raise ZeroCoefficient(f"theta*_{k + 1} is zero")
        delta = float(np.sum(th[k + 1:] ** 2)) / lead ** 2
        terms.append((1 + delta) / (2 * sigma ** 2) + 2.0 ** k_star / math.pi * (1 + delta) ** 2)
    return 1.0 / (12.0 * max(terms))


def _tail_function(beta1, beta2, D2):
    def g(m):
        m = np.asarray(m, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = math.log(beta1) + beta2 * np.log(np.log(m)) + 0.5 * D2 * np.log(m)
        return inner / m
    return g


@dataclass(frozen=True)
class OverestimationConstants:
    n0: int
    delta0: float
    delta_k1_min: float

    def __iter__(self):
        return iter((self.n0, self.delta0, self.delta_k1_min))


def overestimation_constants(beta1: float, beta2: float, D1: float, D2: float, s: float, C1: float,
                             family=None, horizon: int = 10 ** 6) -> OverestimationConstants:
    """``n0``, ``delta0`` and the smallest admissible ``delta_{k,1}``.

    ``n0`` is the smallest ``n`` with ``4 max_{m >= n} g(m) <= e^-2 / 2`` where
    ``g(m) = m^-1 log[beta1 (log m)^beta2 m^(D2/2)]``; ``delta0`` is that
    value at ``n0``.  ``delta_{k,1}`` must exceed
    ``128 (1 + s)(C1 + 2)(D1 - D2)``, ``128 C1 D1`` and ``log^-3 n0``.
    """
    if not D2 < D1:
        raise ValueError("need D2 < D1")
    if not s > 0:
        raise ValueError("s must be positive")
    if not beta1 > 0:
        raise ValueError("beta1 must be positive")
    g = _tail_function(beta1, beta2, D2)
    target = math.exp(-2) / 2
    m = np.arange(3, horizon + 1)
    vals = g(m)
    vals = np.where(np.isfinite(vals), vals, -np.inf)
    far = g(np.geomspace(horizon, 1e300, 400))
    if np.any(np.diff(far) > 0) or far[0] > vals[-1] + 1e-15:
        raise ValueError("maximand is not decreasing beyond the scanned range")
    suffix = np.maximum.accumulate(vals[::-1])[::-1]
    ok = np.nonzero(4 * suffix <= target)[0]
    if not len(ok):
        raise ValueError("n0 lies beyond the scanned range; increase horizon")
    i = int(ok[0])
    n0 = int(m[i])
    delta0 = float(4 * suffix[i])
    delta_k1 = max(128 * (1 + s) * (C1 + 2) * (D1 - D2), 128 * C1 * D1, math.log(n0) ** -3)
    return OverestimationConstants(n0, delta0, float(delta_k1))
