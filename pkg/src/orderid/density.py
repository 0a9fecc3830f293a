"""Densities over the sample space and the divergence functionals built on them.

Every functional is an integral against Lebesgue measure on the declared
supports, evaluated with a tensor quadrature rule on a truncated box.  Log
densities are carried throughout; densities are only exponentiated right
before the weighted sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .errors import MomentDiverges, SupportMismatch

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# mass of f on {g = 0} tolerated before declaring a support mismatch
MISMATCH_TOL = 1e-12
# relative change allowed between successive truncation radii in q_moment
TILT_TOL = 1e-6

RULES = ("gauss-legendre", "trapezoid")


@lru_cache(maxsize=32)
def _legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


@dataclass(frozen=True)
class QuadratureScheme:
    """Tensor quadrature over the sample space.

    Attributes:
        nodes: nodes per panel and per axis.
        radius: truncation of unbounded axes, in component standard deviations.
        rule: ``"gauss-legendre"`` or ``"trapezoid"``.
    """

    nodes: int = 256
    radius: float = 8.0
    rule: str = "gauss-legendre"

    def __post_init__(self):
        if int(self.nodes) != self.nodes or self.nodes < 16:
            raise ValueError(f"nodes must be an integer >= 16, got {self.nodes}")
        if not self.radius >= 8:
            raise ValueError(f"radius must be >= 8, got {self.radius}")
        if self.rule not in RULES:
            raise ValueError(f"unknown quadrature rule {self.rule!r}")

    def interval(self, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights of the rule on ``[lo, hi]``."""
        if self.rule == "trapezoid":
            x = np.linspace(lo, hi, self.nodes)
            w = np.full(self.nodes, (hi - lo) / (self.nodes - 1))
            w[[0, -1]] *= 0.5
            return x, w
        t, w = _legendre(self.nodes)
        half = 0.5 * (hi - lo)
        return lo + half * (t + 1.0), half * w

    def axis(self, lo: float, hi: float, breaks: Sequence[float] = ()) -> tuple[np.ndarray, np.ndarray]:
        """Composite rule on ``[lo, hi]`` with one panel between consecutive breaks."""
        cuts = [lo] + sorted(b for b in set(breaks) if lo < b < hi) + [hi]
        xs, ws = zip(*(self.interval(a, b) for a, b in zip(cuts[:-1], cuts[1:]) if b > a))
        return np.concatenate(xs), np.concatenate(ws)

    def scaled(self, factor: float) -> "QuadratureScheme":
        return QuadratureScheme(self.nodes, self.radius * factor, self.rule)

    def refined(self, factor: int = 2) -> "QuadratureScheme":
        return QuadratureScheme(self.nodes * factor, self.radius, self.rule)


DEFAULT_SCHEME = QuadratureScheme()


class Density:
    """A probability density on a one- or two-dimensional sample space.

    Subclasses provide ``log_pdf``, ``sample``, ``bounds`` and ``breaks``.
    ``bounds(radius)`` gives, per axis, the box that holds all but a
    negligible part of the mass; ``breaks()`` lists, per axis, the points
    where the density is not smooth so the quadrature can split panels there.
    """

    dim: int = 1

    def log_pdf(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def pdf(self, z: np.ndarray) -> np.ndarray:
        return np.exp(self.log_pdf(z))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def bounds(self, radius: float) -> list[tuple[float, float]]:
        raise NotImplementedError

    def breaks(self) -> list[list[float]]:
        return [[] for _ in range(self.dim)]


class Normal(Density):
    def __init__(self, mean: float = 0.0, sd: float = 1.0):
        if not sd > 0:
            raise ValueError("sd must be positive")
        self.mean = float(mean)
        self.sd = float(sd)

    def log_pdf(self, z):
        z = np.asarray(z, dtype=float)
        return -0.5 * ((z - self.mean) / self.sd) ** 2 - math.log(self.sd) - LOG_SQRT_2PI

    def sample(self, n, rng):
        return rng.normal(self.mean, self.sd, size=n)

    def bounds(self, radius):
        return [(self.mean - radius * self.sd, self.mean + radius * self.sd)]

    def __repr__(self):
        return f"Normal({self.mean:g}, {self.sd:g})"


class Uniform(Density):
    def __init__(self, lo: float = 0.0, hi: float = 1.0):
        if not hi > lo:
            raise ValueError("need hi > lo")
        self.lo = float(lo)
        self.hi = float(hi)

    def log_pdf(self, z):
        z = np.asarray(z, dtype=float)
        inside = (z >= self.lo) & (z <= self.hi)
        return np.where(inside, -math.log(self.hi - self.lo), -np.inf)

    def sample(self, n, rng):
        return rng.uniform(self.lo, self.hi, size=n)

    def bounds(self, radius):
        return [(self.lo, self.hi)]

    def breaks(self):
        return [[self.lo, self.hi]]

    def __repr__(self):
        return f"Uniform({self.lo:g}, {self.hi:g})"


class GaussianMixture(Density):
    """Finite mixture of univariate normals."""

    def __init__(self, weights, means, sds):
        w = np.asarray(weights, dtype=float)
        self.means = np.asarray(means, dtype=float)
        self.sds = np.broadcast_to(np.asarray(sds, dtype=float), self.means.shape).copy()
        if w.shape != self.means.shape or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative, sum to 1 and match the means")
        if np.any(self.sds <= 0):
            raise ValueError("sds must be positive")
        self.weights = w

    def component_log_pdf(self, z):
        z = np.asarray(z, dtype=float)[..., None]
        return -0.5 * ((z - self.means) / self.sds) ** 2 - np.log(self.sds) - LOG_SQRT_2PI

    def log_pdf(self, z):
        with np.errstate(divide="ignore"):
            return logsumexp(self.component_log_pdf(z) + np.log(self.weights), axis=-1)

    def sample(self, n, rng):
        labels = rng.choice(len(self.weights), size=n, p=self.weights)
        return rng.normal(self.means[labels], self.sds[labels])

    def bounds(self, radius):
        live = self.weights > 0
        return [(float(np.min(self.means[live] - radius * self.sds[live])),
                 float(np.max(self.means[live] + radius * self.sds[live])))]

    def __repr__(self):
        parts = ", ".join(f"{w:g}*N({m:g},{s:g}^2)" for w, m, s in zip(self.weights, self.means, self.sds))
        return f"GaussianMixture({parts})"


class RegressionDensity(Density):
    """Joint density of ``(x, y)`` with ``x ~ U[0, 1]`` and ``y | x ~ N(phi(x), sigma^2)``.

    Args:
        phi: vectorised mean function on ``[0, 1]``.
        sigma: noise standard deviation.
        x_breaks: discontinuities of ``phi``.
    """

    dim = 2

    def __init__(self, phi: Callable[[np.ndarray], np.ndarray], sigma: float, x_breaks: Sequence[float] = ()):
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        self.phi = phi
        self.sigma = float(sigma)
        self.x_breaks = sorted(float(b) for b in x_breaks if 0.0 < b < 1.0)
        probe = np.concatenate([np.linspace(0.0, 1.0, 2049), np.asarray(self.x_breaks),
                                np.nextafter(np.asarray(self.x_breaks), 0.0)])
        values = phi(probe)
        self.phi_range = (float(np.min(values)), float(np.max(values)))

    def log_pdf(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        x, y = z[:, 0], z[:, 1]
        inside = (x >= 0.0) & (x <= 1.0)
        with np.errstate(invalid="ignore"):
            mean = self.phi(np.clip(x, 0.0, 1.0))
        out = -0.5 * ((y - mean) / self.sigma) ** 2 - math.log(self.sigma) - LOG_SQRT_2PI
        return np.where(inside, out, -np.inf)

    def sample(self, n, rng):
        x = rng.uniform(0.0, 1.0, size=n)
        y = self.phi(x) + rng.normal(0.0, self.sigma, size=n)
        return np.column_stack([x, y])

    def bounds(self, radius):
        lo, hi = self.phi_range
        return [(0.0, 1.0), (lo - radius * self.sigma, hi + radius * self.sigma)]

    def breaks(self):
        return [list(self.x_breaks), []]


def quadrature_grid(densities: Sequence[Density], scheme: QuadratureScheme = DEFAULT_SCHEME):
    """Nodes and weights covering the union of the truncated supports.

    Returns ``(z, w)`` with ``z`` of shape ``(m,)`` for one-dimensional
    densities and ``(m, 2)`` for two-dimensional ones.
    """
    dims = {d.dim for d in densities}
    if len(dims) != 1:
        raise ValueError("densities live on different sample spaces")
    dim = dims.pop()
    axes = []
    for a in range(dim):
        lo = min(d.bounds(scheme.radius)[a][0] for d in densities)
        hi = max(d.bounds(scheme.radius)[a][1] for d in densities)
        cuts = [b for d in densities for b in d.breaks()[a]]
        axes.append(scheme.axis(lo, hi, cuts))
    if dim == 1:
        return axes[0]
    (x, wx), (y, wy) = axes
    X, Y = np.meshgrid(x, y, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()]), np.outer(wx, wy).ravel()


@dataclass
class _Pair:
    """Log densities of ``f`` and ``g`` on a shared grid."""

    w: np.ndarray
    lf: np.ndarray
    lg: np.ndarray
    mismatch: float = field(init=False)

    def __post_init__(self):
        self.live = np.isfinite(self.lf)
        bad = self.live & ~np.isfinite(self.lg)
        self.mismatch = float(np.sum(self.w[bad] * np.exp(self.lf[bad])))
        self.live &= ~bad

    @classmethod
    def of(cls, f: Density, g: Density, scheme: QuadratureScheme):
        z, w = quadrature_grid([f, g], scheme)
        with np.errstate(divide="ignore"):
            return cls(w, f.log_pdf(z), g.log_pdf(z))

    def moment(self, power: int) -> float:
        m = self.live
        return float(np.sum(self.w[m] * np.exp(self.lf[m]) * (self.lf[m] - self.lg[m]) ** power))


def _mismatch(pair: _Pair, strict: bool, what: str) -> float | None:
    if pair.mismatch > MISMATCH_TOL:
        if strict:
            raise SupportMismatch(f"{what}: second density vanishes on a set of mass {pair.mismatch:.3g}")
        return math.inf
    return None


def kl_divergence(f: Density, g: Density, scheme: QuadratureScheme = DEFAULT_SCHEME, *, strict: bool = False) -> float:
    """Kullback-Leibler divergence ``int f (log f - log g)``.

    Returns ``inf`` when ``g`` vanishes on a set where ``f`` has mass, or
    raises :class:`SupportMismatch` if ``strict``.
    """
    pair = _Pair.of(f, g, scheme)
    bad = _mismatch(pair, strict, "kl_divergence")
    return bad if bad is not None else pair.moment(1)


def v_divergence(f: Density, g: Density, scheme: QuadratureScheme = DEFAULT_SCHEME, *, strict: bool = False) -> float:
    """Second moment ``int f (log f - log g)^2`` of the log-likelihood ratio."""
    pair = _Pair.of(f, g, scheme)
    bad = _mismatch(pair, strict, "v_divergence")
    return bad if bad is not None else pair.moment(2)


def v_max(f: Density, g: Density, scheme: QuadratureScheme = DEFAULT_SCHEME, *, strict: bool = False) -> float:
    """The larger of the two directed V divergences."""
    return max(v_divergence(f, g, scheme, strict=strict), v_divergence(g, f, scheme, strict=strict))


def _tilted(f_star: Density, f_theta: Density, alpha: float, scheme: QuadratureScheme) -> float:
    pair = _Pair.of(f_star, f_theta, scheme)
    if pair.mismatch > MISMATCH_TOL:
        return math.inf
    m = pair.live
    diff = pair.lf[m] - pair.lg[m]
    if not np.any(diff != 0.0):
        return 0.0
    with np.errstate(divide="ignore", over="ignore"):
        logs = pair.lf[m] + 2.0 * np.log(np.abs(diff)) + alpha * diff
        tilt = float(np.exp(logsumexp(logs, b=pair.w[m])))
    return tilt + pair.moment(2)


def q_moment(f_star: Density, f_theta: Density, alpha: float, scheme: QuadratureScheme = DEFAULT_SCHEME) -> float:
    """Tilted second moment ``P*(l* - l)^2 exp(alpha (l* - l)) + V(f*, f_theta)``.

    The truncation radius is doubled until the value settles; if it keeps
    moving after two doublings the moment is declared divergent.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    previous = _tilted(f_star, f_theta, alpha, scheme)
    for factor in (2.0, 4.0):
        current = _tilted(f_star, f_theta, alpha, scheme.scaled(factor))
        if not (math.isfinite(previous) and math.isfinite(current)):
            break
        if abs(current - previous) <= TILT_TOL * max(1.0, abs(current)):
            return current
        previous = current
    raise MomentDiverges(f"tilted moment with alpha={alpha:g} does not converge under truncation refinement")


def abs_integral(func: Callable[[np.ndarray], np.ndarray], densities: Sequence[Density],
                 scheme: QuadratureScheme = DEFAULT_SCHEME) -> float:
    """``int |func|`` over the grid spanned by ``densities``.

    On one-dimensional spaces the sign changes of ``func`` become panel
    breaks, so the kink of ``|func|`` does not spoil the rule.
    """
    z, w = quadrature_grid(densities, scheme)
    if densities[0].dim == 1:
        v = func(z)
        flips = np.nonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0)[0]
        if flips.size:
            roots = [brentq(lambda t: float(func(np.array([t]))[0]), z[i], z[i + 1]) for i in flips]
            cuts = [b for d in densities for b in d.breaks()[0]] + roots
            lo = min(d.bounds(scheme.radius)[0][0] for d in densities)
            hi = max(d.bounds(scheme.radius)[0][1] for d in densities)
            z, w = scheme.axis(lo, hi, cuts)
    return float(np.sum(w * np.abs(func(z))))


def l1_distance(f: Density, g: Density, scheme: QuadratureScheme = DEFAULT_SCHEME) -> float:
    """``int |f - g|``, clipped to ``[0, 2]``."""
    def diff(z):
        with np.errstate(divide="ignore"):
            return np.exp(f.log_pdf(z)) - np.exp(g.log_pdf(z))

    return min(max(abs_integral(diff, [f, g], scheme), 0.0), 2.0)


def integrate(func: Callable[[np.ndarray], np.ndarray], densities: Sequence[Density],
              scheme: QuadratureScheme = DEFAULT_SCHEME) -> float:
    """Integral of ``func`` over the grid spanned by ``densities``."""
    z, w = quadrature_grid(densities, scheme)
    return float(np.sum(w * func(z)))
