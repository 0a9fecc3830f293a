"""Likelihood-ratio tests of a single alternative density and their error bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..density import DEFAULT_SCHEME, Density, QuadratureScheme, kl_divergence, v_max
from ..families import as_points


def phi_test(f: Density, f_star: Density, data, rho: float, c: float,
             scheme: QuadratureScheme = DEFAULT_SCHEME) -> int:
    """Reject (return 1) when ``l_{n,f} - l*_n + n H(f) >= n rho + log c``.

    ``H(f)`` is the Kullback-Leibler divergence of ``f`` from ``f_star``.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    if not 0 < c <= 1:
        raise ValueError("c must lie in (0, 1]")
    # V only enters the error bounds; f = f* (V = 0) still gives a well-defined statistic
    if not math.isfinite(v_max(f_star, f, scheme)):
        raise ValueError("V(f) must be finite")
    z = as_points(data)
    n = len(z)
    H = kl_divergence(f_star, f, scheme)
    with np.errstate(divide="ignore"):
        stat = float(np.sum(f.log_pdf(z)) - np.sum(f_star.log_pdf(z))) + n * H
    return int(stat >= n * rho + math.log(c))


@dataclass(frozen=True)
class TestBounds:
    """Upper bounds on the two error probabilities of :func:`phi_test`.

    ``type2`` is ``None`` when ``rho + rho_prime >= H_f``; the bound is not
    available there.
    """

    __test__ = False

    type1: float
    type2: float | None

    @property
    def type2_defined(self) -> bool:
        return self.type2 is not None


def log_type1_bound(rho, c, V_f, n):
    return -math.log(c) - (n * rho / 2) * min(rho / V_f, 1.0)


def log_type2_bound(rho, rho_prime, H_f, V_g, n):
    gap = H_f - (rho + rho_prime)
    if not gap > 0:
        return None
    return -(n * gap / 2) * min(gap / V_g, 1.0)


def test_error_bounds(rho: float, rho_prime: float, c: float, H_f: float, V_f: float, V_g: float,
                      n: int) -> TestBounds:
    """Type-I bound under ``f*`` and type-II bound under any ``g <= e^{rho'} f``.

    ``type1 = exp(-(n rho / 2) min(rho / V_f, 1)) / c``;
    ``type2 = exp(-(n gap / 2) min(gap / V_g, 1))`` with ``gap = H_f - rho - rho'``.
    Both are evaluated in log space.
    """
    for name, value in (("rho", rho), ("c", c), ("H_f", H_f), ("V_f", V_f), ("V_g", V_g)):
        if not value > 0:
            raise ValueError(f"{name} must be positive")
    if rho_prime < 0:
        raise ValueError("rho_prime must be nonnegative")
    if n < 0:
        raise ValueError("n must be nonnegative")
    t1 = math.exp(log_type1_bound(rho, c, V_f, n))
    l2 = log_type2_bound(rho, rho_prime, H_f, V_g, n)
    return TestBounds(t1, None if l2 is None else math.exp(l2))


test_error_bounds.__test__ = False
