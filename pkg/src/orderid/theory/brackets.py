"""Envelope brackets around Gaussian mixtures and bracketing-entropy counts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from ..density import DEFAULT_SCHEME, Density, QuadratureScheme, quadrature_grid
from ..errors import DimensionTooHigh, EtaSearchFailed
from ..families import GaussianMixture, Theta

ETA_MIN = 1e-6
ETA_MAX = 0.5
BISECTIONS = 40


@dataclass(frozen=True)
class Bracket:
    """A pair of nonnegative functions ``l <= u`` given through their logarithms.

    ``support`` lists densities whose truncated supports jointly cover where
    ``l`` and ``u`` carry mass; integrals are taken on their quadrature grid.
    """

    log_lower: Callable[[np.ndarray], np.ndarray]
    log_upper: Callable[[np.ndarray], np.ndarray]
    delta: float
    support: tuple[Density, ...] = ()
    eta: float | None = None

    def lower(self, z):
        return np.exp(self.log_lower(z))

    def upper(self, z):
        return np.exp(self.log_upper(z))


@dataclass(frozen=True)
class BracketConditions:
    """The four bracket quantities and the limits they are compared with."""

    l1_width: float
    star_log_ratio: float
    width_tilt: float
    lower_log_ratio: float
    delta: float
    contains: bool = True
    limits: tuple[float, float, float, float] = field(init=False)

    def __post_init__(self):
        d = self.delta
        object.__setattr__(self, "limits", (d, d * d, d * math.log(d) ** 2, d * math.log(d) ** 2))

    @property
    def values(self):
        return (self.l1_width, self.star_log_ratio, self.width_tilt, self.lower_log_ratio)

    @property
    def holds(self) -> bool:
        return self.contains and all(v <= lim for v, lim in zip(self.values, self.limits))


def bracket_conditions(b: Bracket, f_star: Density, scheme: QuadratureScheme = DEFAULT_SCHEME,
                       delta: float | None = None) -> BracketConditions:
    """Evaluate ``mu(u - l)``, ``P*(log u - log l)^2``, ``int (u - l)(log u - log f*)^2`` and ``int l (log u - log l)^2``."""
    delta = b.delta if delta is None else delta
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    z, w = quadrature_grid([f_star, *b.support], scheme)
    ll, lu, ls = b.log_lower(z), b.log_upper(z), f_star.log_pdf(z)
    l, u, fs = np.exp(ll), np.exp(lu), np.exp(ls)
    contains = bool(np.all(ll <= lu + 1e-12))
    with np.errstate(invalid="ignore"):
        gap = np.where(u > 0, lu - np.where(l > 0, ll, -np.inf), 0.0)
        gap_sq = np.where(gap == 0, 0.0, gap ** 2)
        tilt = np.where(u > l, (lu - ls) ** 2, 0.0)
    # log ratios are infinite where l vanishes and u does not; those points give infinite moments
    with np.errstate(invalid="ignore"):
        star = float(np.sum(w * np.where(fs > 0, fs * gap_sq, 0.0)))
        lower = float(np.sum(w * np.where(l > 0, l * gap_sq, 0.0)))
        width = float(np.sum(w * (u - l) * tilt))
    return BracketConditions(float(np.sum(w * (u - l))), star, width, lower, delta, contains)


def is_delta_bracket(b: Bracket, f_star: Density, scheme: QuadratureScheme = DEFAULT_SCHEME) -> bool:
    """Whether all four bracket conditions hold at level ``b.delta``."""
    c = bracket_conditions(b, f_star, scheme)
    return bool(np.isfinite(c.values).all() and c.holds)


def _envelope_bracket(family, theta, eps, tau, eta, support):
    w, g = family.split(theta.k, theta.array)
    w, g = w[0], g[0]
    live = w > 0
    logw = np.log(w[live])
    gam = g[live]
    lo_factor, hi_factor = math.log1p(-eps / tau), math.log1p(eps / tau)

    def pieces(z):
        z = np.ravel(np.asarray(z, dtype=float))
        env = [family.component_envelopes(gj, eta, z) for gj in gam]
        return np.array([e[0] for e in env]), np.array([e[1] for e in env])

    def log_lower(z):
        lo, _ = pieces(z)
        return lo_factor + logsumexp(lo + logw[:, None], axis=0)

    def log_upper(z):
        _, hi = pieces(z)
        return hi_factor + logsumexp(hi + logw[:, None], axis=0)

    return Bracket(log_lower, log_upper, eps, support, eta)


def build_mixture_bracket(family: GaussianMixture, theta: Theta, eps: float, tau: float = 4.0,
                          f_star: Density | None = None, scheme: QuadratureScheme = DEFAULT_SCHEME) -> Bracket:
    """Bracket ``[(1 - eps/tau) sum p_j lower_j, (1 + eps/tau) sum p_j upper_j]`` around ``f_theta``.

    ``lower_j`` and ``upper_j`` are the pointwise infimum and supremum of the
    component density over component parameters within ``eta`` of ``gamma_j``.
    The largest ``eta`` in ``[1e-6, 0.5]`` for which the result is an
    ``eps``-bracket relative to ``f_star`` (default ``f_theta``) is found by
    bisection.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if not tau >= 1:
        raise ValueError("tau must be at least 1")
    family.validate(theta)
    f_theta = family.density(theta)
    f_star = f_star or f_theta
    support = (f_theta.__class__(f_theta.weights, f_theta.means, f_theta.sds + ETA_MAX),)

    def valid(eta):
        return is_delta_bracket(_envelope_bracket(family, theta, eps, tau, eta, support), f_star, scheme)

    if valid(ETA_MAX):
        return _envelope_bracket(family, theta, eps, tau, ETA_MAX, support)
    if not valid(ETA_MIN):
        raise EtaSearchFailed(f"no envelope radius in [{ETA_MIN:g}, {ETA_MAX:g}] gives an {eps:g}-bracket")
    lo, hi = math.log(ETA_MIN), math.log(ETA_MAX)
    for _ in range(BISECTIONS):
        mid = (lo + hi) / 2
        lo, hi = (mid, hi) if valid(math.exp(mid)) else (lo, mid)
    return _envelope_bracket(family, theta, eps, tau, math.exp(lo), support)


def _probe_points(lo, hi):
    corners = np.array(np.meshgrid(*[(a, b) for a, b in zip(lo, hi)], indexing="ij")).reshape(len(lo), -1).T
    return np.concatenate([((lo + hi) / 2)[None], corners])


def entropy_estimate(family: GaussianMixture, k: int, region: tuple[Sequence[float], Sequence[float]],
                     delta: float, f_star: Density, tau: float = 4.0,
                     scheme: QuadratureScheme = DEFAULT_SCHEME) -> float:
    """Log of the size of a product cover of ``region`` by envelope brackets.

    ``region`` is a box ``(lo, hi)`` in the parameter layout of ``family``.
    Weights (including the implicit last one) are covered by geometric nets
    with ratio ``(1 + delta/tau)/(1 - delta/tau)``, which the bracket factors
    absorb; each component axis is covered by cells of width ``2 eta`` with
    ``eta`` the smallest valid radius over the box centre and corners.
    Every parameter in the box lies inside one of the counted brackets, so the
    value bounds the bracketing entropy from above.
    """
    if family.dimension(k) > 3:
        raise DimensionTooHigh(f"D({k}) = {family.dimension(k)} exceeds 3")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    lo, hi = (np.asarray(r, dtype=float) for r in region)
    if lo.shape != (family.dimension(k),) or hi.shape != lo.shape or np.any(hi < lo):
        raise ValueError("region must be a box (lo, hi) in the parameter layout")
    p_lo, p_hi = lo[:k - 1], hi[:k - 1]
    p_lo = np.append(p_lo, 1.0 - p_hi.sum())
    p_hi = np.append(p_hi, 1.0 - p_lo[:-1].sum())
    if np.any(p_lo <= 0):
        raise ValueError("region weights must stay away from zero")
    ratio = math.log1p(delta / tau) - math.log1p(-delta / tau)
    counts = [max(1, math.ceil(math.log(b / a) / ratio - 1e-12)) for a, b in zip(p_lo, p_hi)]
    eta = min(build_mixture_bracket(family, family.theta(k, v), delta, tau, f_star, scheme).eta
              for v in _probe_points(lo, hi))
    widths = hi[k - 1:] - lo[k - 1:]
    counts += [max(1, math.ceil(wd / (2 * eta) - 1e-12)) for wd in widths]
    return float(sum(math.log(c) for c in counts))
