"""Nested parameter spaces, priors and dimension indices for the shipped families.

Three families are provided:

* :class:`FourierRegression` -- ``y = sum_j theta_j t_j(x) + e`` with the
  trigonometric orthonormal system on ``[0, 1]``;
* :class:`ChangePoints` -- piecewise-constant regression with ``k`` levels;
* :class:`GaussianMixture` -- ``k``-component mixtures of univariate normals,
  either in the location (known variance) or in (location, variance).

A parameter of order ``k`` is a flat vector whose layout is family specific
and documented on each class.  All vectorised methods take a batch of shape
``(B, D(k))``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

from .density import LOG_SQRT_2PI, GaussianMixture as MixtureDensity, RegressionDensity
from .errors import InvalidTheta
from .streams import RandomStream

_TOL = 1e-9
_EDGE = 1e-12


@dataclass(frozen=True)
class Theta:
    """A parameter of order ``k`` for the family named by ``family``."""

    k: int
    vector: tuple[float, ...]
    family: str

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.vector, dtype=float)


@dataclass(frozen=True)
class PriorSpec:
    """Prior ``pi(k) pi_k(theta)``.

    Attributes:
        order_weights: ``pi(1), ..., pi(k_max)``; uniform when empty.
        within: within-order prior; ``"default"`` resolves per family
            (repulsive locations for one-dimensional mixtures, uniform
            otherwise).  ``"gaussian"`` is the conjugate coefficient prior of
            the regression family, used only as a test oracle.
        scale: standard deviation of the ``"gaussian"`` coefficient prior.
    """

    order_weights: tuple[float, ...] = ()
    within: str = "default"
    scale: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.order_weights, dtype=float)
        if w.size and (np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12):
            raise ValueError("order prior must be nonnegative and sum to 1")
        if self.within not in ("default", "uniform", "repulsive", "gaussian"):
            raise ValueError(f"unknown within-order prior {self.within!r}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def order_prior(self, k_max: int) -> np.ndarray:
        if not self.order_weights:
            return np.full(k_max, 1.0 / k_max)
        if len(self.order_weights) != k_max:
            raise ValueError(f"order prior has {len(self.order_weights)} entries, expected {k_max}")
        return np.asarray(self.order_weights, dtype=float)

    def log_order(self, k: int, k_max: int) -> float:
        with np.errstate(divide="ignore"):
            return float(np.log(self.order_prior(k_max)[k - 1]))


@dataclass
class Dataset:
    """An i.i.d. sample with its provenance."""

    points: np.ndarray
    theta: Theta | None = None
    family: str | None = None
    seed: int | None = None
    index: int | None = None

    def __len__(self):
        return len(self.points)


def as_points(data) -> np.ndarray:
    return np.asarray(data.points if isinstance(data, Dataset) else data, dtype=float)


def _logit_box(u, lo, hi):
    """Map reals into ``(lo, hi)``; returns values and log Jacobian."""
    s = 0.5 * (1.0 + np.tanh(0.5 * u))
    logjac = np.log(hi - lo) - np.logaddexp(0.0, u) - np.logaddexp(0.0, -u)
    return lo + (hi - lo) * s, logjac


def _inv_logit_box(x, lo, hi):
    s = np.clip((x - lo) / (hi - lo), _EDGE, 1.0 - _EDGE)
    return np.log(s) - np.log1p(-s)


def log_sum_exp(a, axis=-1, keepdims=False):
    """``log sum exp`` of a real array; leaner than scipy's for the hot loops."""
    top = np.max(a, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - top), axis=axis, keepdims=True)) + top
    return out if keepdims else np.squeeze(out, axis=axis)


def _alr(u):
    """Additive logistic map ``R^{k-1} -> simplex``; returns first ``k-1`` parts and log Jacobian."""
    full = np.concatenate([u, np.zeros(u.shape[:-1] + (1,))], axis=-1)
    logp = full - log_sum_exp(full, keepdims=True)
    return np.exp(logp[..., :-1]), logp.sum(axis=-1)


def _inv_alr(p):
    last = np.clip(1.0 - p.sum(axis=-1, keepdims=True), _EDGE, None)
    return np.log(np.clip(p, _EDGE, None)) - np.log(last)


def fourier_basis(x: np.ndarray, k: int) -> np.ndarray:
    """``t_1 = 1``, ``t_{2m} = sqrt2 cos(2 pi m x)``, ``t_{2m+1} = sqrt2 sin(2 pi m x)``."""
    x = np.asarray(x, dtype=float)
    cols = [np.ones_like(x)]
    for j in range(2, k + 1):
        m = j // 2
        trig = np.cos if j % 2 == 0 else np.sin
        cols.append(math.sqrt(2.0) * trig(2.0 * math.pi * m * x))
    return np.stack(cols, axis=-1)


def log_selberg_half(k: int) -> float:
    """``log int_{[0,1]^k} prod_{i<j} |x_i - x_j| dx`` (Selberg integral, gamma = 1/2)."""
    j = np.arange(k)
    return float(np.sum(2 * gammaln(1 + j / 2) + gammaln(1 + (j + 1) / 2)
                        - gammaln(2 + (k + j - 1) / 2) - gammaln(1.5)))


class OrderIndexedFamily:
    """Common machinery; subclasses fill in the family specifics."""

    kind: str = ""
    sample_dim: int = 1

    def __init__(self, k_max: int):
        if k_max < 2:
            raise ValueError("k_max must be at least 2")
        self.k_max = int(k_max)

    # -- layout ---------------------------------------------------------
    def dimension(self, k: int) -> int:
        raise NotImplementedError

    def theta(self, k: int, vector: Sequence[float]) -> Theta:
        th = Theta(int(k), tuple(float(v) for v in np.ravel(vector)), self.kind)
        self.validate(th)
        return th

    def validate(self, theta: Theta) -> None:
        if theta.family != self.kind:
            raise InvalidTheta(f"theta belongs to {theta.family!r}, not {self.kind!r}")
        if theta.k < 1:
            raise InvalidTheta("order must be a positive integer")
        if len(theta.vector) != self.dimension(theta.k):
            raise InvalidTheta(f"expected {self.dimension(theta.k)} coordinates for k={theta.k}, "
                               f"got {len(theta.vector)}")
        if not np.all(np.isfinite(theta.array)):
            raise InvalidTheta("non-finite coordinate")
        self._check(theta.k, theta.array)

    def _check(self, k: int, v: np.ndarray) -> None:
        raise NotImplementedError

    def box(self, k: int, prior: PriorSpec | None = None, radius: float = 8.0) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate-wise bounds of ``Theta_k``; equal to ``Theta_k`` whenever ``D(k) <= 3``."""
        raise NotImplementedError

    # -- densities ------------------------------------------------------
    def density(self, theta: Theta):
        raise NotImplementedError

    def log_density_batch(self, k: int, vectors: np.ndarray, z: np.ndarray) -> np.ndarray:
        """``log f_theta(z)`` for a batch of parameters; shape ``(B, m)``."""
        raise NotImplementedError

    def loglik_fn(self, k: int, data) -> Callable[[np.ndarray], np.ndarray]:
        """Vectorised ``theta -> l_n(theta)`` for a fixed sample."""
        z = as_points(data)

        def loglik(vectors):
            vectors = np.atleast_2d(vectors)
            return self.log_density_batch(k, vectors, z).sum(axis=1)

        return loglik

    def sample(self, theta: Theta, n: int, stream: RandomStream) -> Dataset:
        if n < 1:
            raise ValueError("n must be at least 1")
        self.validate(theta)
        points = self.density(theta).sample(int(n), stream.generator())
        return Dataset(points, theta, self.kind, stream.seed, stream.index)

    # -- priors ---------------------------------------------------------
    def resolve_within(self, prior: PriorSpec) -> str:
        return "uniform" if prior.within == "default" else prior.within

    def log_prior_batch(self, k: int, vectors: np.ndarray, prior: PriorSpec) -> np.ndarray:
        raise NotImplementedError

    def sample_prior(self, k: int, size: int, rng: np.random.Generator, prior: PriorSpec) -> np.ndarray:
        raise NotImplementedError

    # -- unconstrained coordinates for optimisation and sampling ---------
    def to_unconstrained(self, k: int, vectors: np.ndarray, prior: PriorSpec) -> np.ndarray:
        raise NotImplementedError

    def from_unconstrained(self, k: int, u: np.ndarray, prior: PriorSpec) -> tuple[np.ndarray, np.ndarray]:
        """Parameters and ``log |d theta / d u|`` for a batch of unconstrained points."""
        raise NotImplementedError

    label_symmetric = False

    def canonical(self, k: int, vectors: np.ndarray) -> np.ndarray:
        """Representative of each label-switching orbit."""
        return np.atleast_2d(vectors)

    def to_ordered(self, k: int, vectors: np.ndarray, prior: PriorSpec) -> np.ndarray:
        """Unconstrained coordinates of the canonical region (whole space by default)."""
        return self.to_unconstrained(k, vectors, prior)

    def from_ordered(self, k: int, u: np.ndarray, prior: PriorSpec) -> tuple[np.ndarray, np.ndarray]:
        return self.from_unconstrained(k, u, prior)

    def permute_labels(self, k: int, vectors: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Each row relabelled by an independent uniform permutation."""
        return np.atleast_2d(vectors)

    def allocation_proposal(self, k: int, data, prior: PriorSpec, rng: np.random.Generator):
        """Optional family-specific importance proposal over ``Theta_k``."""
        return None

    # -- structure --------------------------------------------------------
    def relabelings(self, k: int, vector: np.ndarray) -> list[np.ndarray]:
        """Parameter vectors describing the same density up to label switching."""
        return [np.asarray(vector, dtype=float)]

    def embed(self, theta: Theta) -> Theta:
        """A parameter of order ``k + 1`` with the same density."""
        raise NotImplementedError

    def start_points(self, k: int, data, prior: PriorSpec) -> list[np.ndarray]:
        """Data-driven starting values for mode searches."""
        return []

    def effective_dimensions(self, k_star: int) -> tuple[float, float, float]:
        raise NotImplementedError


# ---------------------------------------------------------------------------


class _RegressionType(OrderIndexedFamily):
    sample_dim = 2

    def __init__(self, k_max: int = 3, sigma: float = 0.5, bound: float = 2.0):
        super().__init__(k_max)
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        if not bound > 0:
            raise ValueError("bound must be positive")
        self.sigma = float(sigma)
        self.bound = float(bound)

    @property
    def gamma_box(self) -> tuple[float, float]:
        return (-self.bound, self.bound)

    def _noise_loglik(self, resid: np.ndarray) -> np.ndarray:
        return -0.5 * (resid / self.sigma) ** 2 - math.log(self.sigma) - LOG_SQRT_2PI


class FourierRegression(_RegressionType):
    """Regression on the first ``k`` trigonometric basis functions.

    Layout: ``(theta_1, ..., theta_k)`` in ``Gamma^k`` with ``Gamma = [-bound, bound]``.
    """

    kind = "fourier-regression"

    def dimension(self, k):
        return int(k)

    def _check(self, k, v):
        if np.any(np.abs(v) > self.bound + _TOL):
            raise InvalidTheta(f"coefficient outside [-{self.bound:g}, {self.bound:g}]")

    def in_box(self, k, v):
        return bool(np.all(np.abs(np.asarray(v)) <= self.bound + _TOL))

    def box(self, k, prior=None, radius=8.0):
        if prior is not None and self.resolve_within(prior) == "gaussian":
            half = radius * prior.scale
        else:
            half = self.bound
        return np.full(k, -half), np.full(k, half)

    def phi(self, vector):
        vector = np.asarray(vector, dtype=float)
        return lambda x: fourier_basis(x, len(vector)) @ vector

    def density(self, theta):
        return RegressionDensity(self.phi(theta.array), self.sigma)

    def log_density_batch(self, k, vectors, z):
        z = np.atleast_2d(z)
        means = np.atleast_2d(vectors) @ fourier_basis(z[:, 0], k).T
        out = self._noise_loglik(z[None, :, 1] - means)
        inside = (z[:, 0] >= 0) & (z[:, 0] <= 1)
        return np.where(inside[None, :], out, -np.inf)

    def loglik_fn(self, k, data):
        z = np.atleast_2d(as_points(data)).reshape(-1, 2)
        n = len(z)
        if n and np.any((z[:, 0] < 0) | (z[:, 0] > 1)):
            return lambda vectors: np.full(len(np.atleast_2d(vectors)), -np.inf)
        T = fourier_basis(z[:, 0], k)
        G, b, syy = T.T @ T, T.T @ z[:, 1], float(z[:, 1] @ z[:, 1])
        const = -n * (math.log(self.sigma) + LOG_SQRT_2PI)
        s2 = self.sigma ** 2

        def loglik(vectors):
            V = np.atleast_2d(vectors)
            quad = np.einsum("bi,ij,bj->b", V, G, V)
            return const - (syy - 2.0 * V @ b + quad) / (2.0 * s2)

        return loglik

    def log_prior_batch(self, k, vectors, prior):
        V = np.atleast_2d(vectors)
        if self.resolve_within(prior) == "gaussian":
            s = prior.scale
            return np.sum(-0.5 * (V / s) ** 2 - math.log(s) - LOG_SQRT_2PI, axis=1)
        inside = np.all(np.abs(V) <= self.bound + _TOL, axis=1)
        return np.where(inside, -k * math.log(2 * self.bound), -np.inf)

    def sample_prior(self, k, size, rng, prior):
        if self.resolve_within(prior) == "gaussian":
            return rng.normal(0.0, prior.scale, size=(size, k))
        return rng.uniform(-self.bound, self.bound, size=(size, k))

    def to_unconstrained(self, k, vectors, prior):
        V = np.atleast_2d(vectors)
        if self.resolve_within(prior) == "gaussian":
            return V.copy()
        return _inv_logit_box(V, -self.bound, self.bound)

    def from_unconstrained(self, k, u, prior):
        u = np.atleast_2d(u)
        if self.resolve_within(prior) == "gaussian":
            return u.copy(), np.zeros(len(u))
        v, lj = _logit_box(u, -self.bound, self.bound)
        return v, lj.sum(axis=1)

    def embed(self, theta):
        return self.theta(theta.k + 1, (*theta.vector, 0.0))

    def start_points(self, k, data, prior):
        z = np.atleast_2d(as_points(data)).reshape(-1, 2)
        T = fourier_basis(z[:, 0], k)
        ols = np.linalg.lstsq(T, z[:, 1], rcond=None)[0]
        lo, hi = self.box(k, prior)
        return [np.clip(ols, 0.999 * lo, 0.999 * hi), np.zeros(k)]

    def effective_dimensions(self, k_star):
        return float(self.dimension(k_star + 1)), float(self.dimension(k_star)), 0.0

    def predicted_exponent(self, k_star):
        d1, d2, _ = self.effective_dimensions(k_star)
        return (d1 - d2) / 2


class ChangePoints(_RegressionType):
    """Piecewise-constant regression with ``k`` levels.

    Layout: ``(alpha_1, ..., alpha_k, w_1, ..., w_{k-1})`` where the knots are
    ``t_j = w_1 + ... + w_j``; increments are nonnegative with sum at most one.
    """

    kind = "change-points"

    def __init__(self, k_max: int = 3, sigma: float = 0.5, bound: float = 2.0, tau: float = 0.25):
        super().__init__(k_max, sigma, bound)
        if not 0 < tau < 0.5:
            raise ValueError("tau must lie in (0, 1/2)")
        self.tau = float(tau)

    def dimension(self, k):
        return 2 * int(k) - 1

    def split(self, k, vectors):
        V = np.atleast_2d(vectors)
        return V[:, :k], V[:, k:]

    def knots(self, k, vectors):
        _, w = self.split(k, vectors)
        return np.cumsum(w, axis=1)

    def _check(self, k, v):
        alpha, w = v[:k], v[k:]
        if np.any(np.abs(alpha) > self.bound + _TOL):
            raise InvalidTheta("level outside Gamma")
        if np.any(w < -_TOL) or w.sum() > 1.0 + _TOL:
            raise InvalidTheta("knot increments must be nonnegative with sum <= 1")

    def box(self, k, prior=None, radius=8.0):
        lo = np.concatenate([np.full(k, -self.bound), np.zeros(k - 1)])
        hi = np.concatenate([np.full(k, self.bound), np.ones(k - 1)])
        return lo, hi

    def phi(self, k, vector):
        alpha, _ = self.split(k, vector)
        t = self.knots(k, vector)[0]

        def phi(x):
            return alpha[0][np.searchsorted(t, np.asarray(x, dtype=float), side="right").clip(max=k - 1)]

        return phi

    def density(self, theta):
        t = self.knots(theta.k, theta.array)[0]
        return RegressionDensity(self.phi(theta.k, theta.array), self.sigma, x_breaks=t)

    def log_density_batch(self, k, vectors, z):
        z = np.atleast_2d(z)
        alpha, _ = self.split(k, vectors)
        t = self.knots(k, vectors)
        seg = (z[None, :, 0, None] >= t[:, None, :]).sum(axis=2).clip(max=k - 1)
        means = np.take_along_axis(alpha, seg, axis=1)
        out = self._noise_loglik(z[None, :, 1] - means)
        inside = (z[:, 0] >= 0) & (z[:, 0] <= 1)
        return np.where(inside[None, :], out, -np.inf)

    def loglik_fn(self, k, data):
        z = np.atleast_2d(as_points(data)).reshape(-1, 2)
        n = len(z)
        if n and np.any((z[:, 0] < 0) | (z[:, 0] > 1)):
            return lambda vectors: np.full(len(np.atleast_2d(vectors)), -np.inf)
        order = np.argsort(z[:, 0], kind="stable")
        xs, ys = z[order, 0], z[order, 1]
        c1 = np.concatenate([[0.0], np.cumsum(ys)])
        c2 = np.concatenate([[0.0], np.cumsum(ys ** 2)])
        const = math.log(self.sigma) + LOG_SQRT_2PI
        s2 = self.sigma ** 2

        def loglik(vectors):
            alpha, _ = self.split(k, vectors)
            t = self.knots(k, vectors)
            # x in segment j iff t_{j-1} <= x < t_j; the last segment is closed
            inner = np.searchsorted(xs, t, side="left")
            edges = np.concatenate([np.zeros((len(alpha), 1), int), inner,
                                    np.full((len(alpha), 1), n)], axis=1)
            cnt = np.diff(edges, axis=1)
            s1 = np.diff(c1[edges], axis=1)
            sq = np.diff(c2[edges], axis=1)
            rss = sq - 2 * alpha * s1 + cnt * alpha ** 2
            return -n * const - rss.sum(axis=1) / (2 * s2)

        return loglik

    def log_prior_batch(self, k, vectors, prior):
        alpha, w = self.split(k, vectors)
        ok = np.all(np.abs(alpha) <= self.bound + _TOL, axis=1)
        ok &= np.all(w >= -_TOL, axis=1) & (w.sum(axis=1) <= 1 + _TOL)
        return np.where(ok, -k * math.log(2 * self.bound) + gammaln(k), -np.inf)

    def sample_prior(self, k, size, rng, prior):
        alpha = rng.uniform(-self.bound, self.bound, size=(size, k))
        w = rng.dirichlet(np.ones(k), size=size)[:, :-1]
        return np.concatenate([alpha, w], axis=1)

    def to_unconstrained(self, k, vectors, prior):
        alpha, w = self.split(k, vectors)
        return np.concatenate([_inv_logit_box(alpha, -self.bound, self.bound), _inv_alr(w)], axis=1)

    def from_unconstrained(self, k, u, prior):
        u = np.atleast_2d(u)
        alpha, lja = _logit_box(u[:, :k], -self.bound, self.bound)
        w, ljw = _alr(u[:, k:])
        return np.concatenate([alpha, w], axis=1), lja.sum(axis=1) + ljw

    def embed(self, theta):
        k = theta.k
        alpha, w = self.split(k, theta.array)
        alpha, w = alpha[0], w[0]
        half = (1.0 - w.sum()) / 2.0
        return self.theta(k + 1, (*alpha, alpha[-1], *w, half))

    def start_points(self, k, data, prior):
        z = np.atleast_2d(as_points(data)).reshape(-1, 2)
        starts = []
        for frac in (None, 0.5):
            t = np.linspace(0, 1, k + 1)[1:-1] if frac is None else np.sort(
                np.quantile(z[:, 0], np.linspace(0.2, 0.8, k - 1))) if k > 1 else np.array([])
            seg = np.searchsorted(t, z[:, 0], side="right")
            alpha = np.array([z[seg == j, 1].mean() if np.any(seg == j) else 0.0 for j in range(k)])
            alpha = np.clip(alpha, -0.999 * self.bound, 0.999 * self.bound)
            w = np.diff(np.concatenate([[0.0], t]))
            starts.append(np.concatenate([alpha, w]))
        return starts

    def log_evidence_exact(self, k, data, prior):
        """Closed-form levels and an exact sum over knot gaps; ``k <= 3``."""
        from .segments import log_evidence_exact
        return log_evidence_exact(self, k, as_points(data))

    def allocation_proposal(self, k, data, prior, rng):
        from .segments import MAX_LEVELS, SegmentProposal
        if not 2 <= k <= MAX_LEVELS:
            return None
        return SegmentProposal(self, k, as_points(data))

    def effective_dimensions(self, k_star, tau=None):
        tau = self.tau if tau is None else tau
        d = self.dimension(k_star)
        return float(d + k_star), float(d + k_star - 1 + 2 * tau), 0.0

    def predicted_exponent(self, k_star, tau=None):
        d1, d2, _ = self.effective_dimensions(k_star, tau)
        return (d1 - d2) / 2


class GaussianMixture(OrderIndexedFamily):
    """Mixtures of normal densities ``g_gamma``.

    ``component="location"`` (d = 1): ``gamma = mu`` in ``[-bound, bound]``, known sd ``sigma``.
    ``component="location-scale"`` (d = 2): ``gamma = (mu, s)`` with variance ``s`` in
    ``[1/var_bound, var_bound]``.

    Layout: ``(p_1, ..., p_{k-1}, gamma_1, ..., gamma_k)``; the last weight is implicit.
    """

    kind = "mixture"

    def __init__(self, k_max: int = 3, bound: float = 4.0, sigma: float = 1.0,
                 component: str = "location", var_bound: float = 4.0):
        super().__init__(k_max)
        if component not in ("location", "location-scale"):
            raise ValueError(f"unknown component kind {component!r}")
        if not bound > 0 or not sigma > 0 or not var_bound > 1:
            raise ValueError("need bound > 0, sigma > 0 and var_bound > 1")
        self.bound = float(bound)
        self.sigma = float(sigma)
        self.component = component
        self.var_bound = float(var_bound)
        self.d = 1 if component == "location" else 2

    # -- layout ---------------------------------------------------------
    def dimension(self, k):
        return int(k) * (self.d + 1) - 1

    @property
    def gamma_lo(self):
        return np.array([-self.bound]) if self.d == 1 else np.array([-self.bound, 1.0 / self.var_bound])

    @property
    def gamma_hi(self):
        return np.array([self.bound]) if self.d == 1 else np.array([self.bound, self.var_bound])

    def split(self, k, vectors):
        """Full weights ``(B, k)`` and components ``(B, k, d)``."""
        V = np.atleast_2d(vectors)
        p = V[:, :k - 1]
        full = np.concatenate([p, 1.0 - p.sum(axis=1, keepdims=True)], axis=1)
        return full, V[:, k - 1:].reshape(len(V), k, self.d)

    def pack(self, weights, gammas):
        weights = np.atleast_2d(weights)
        gammas = np.asarray(gammas, dtype=float).reshape(len(weights), weights.shape[1], self.d)
        return np.concatenate([weights[:, :-1], gammas.reshape(len(weights), -1)], axis=1)

    def _check(self, k, v):
        w, g = self.split(k, v)
        if np.any(w[:, :-1] < -_TOL) or w[0, -1] < -_TOL:
            raise InvalidTheta("mixture weights must be nonnegative with sum <= 1")
        if np.any(g < self.gamma_lo - _TOL) or np.any(g > self.gamma_hi + _TOL):
            raise InvalidTheta("component parameter outside Gamma")

    def box(self, k, prior=None, radius=8.0):
        lo = np.concatenate([np.zeros(k - 1), np.tile(self.gamma_lo, k)])
        hi = np.concatenate([np.ones(k - 1), np.tile(self.gamma_hi, k)])
        return lo, hi

    # -- components -----------------------------------------------------
    def means_sds(self, gammas):
        g = np.asarray(gammas, dtype=float)
        if self.d == 1:
            return g[..., 0], np.full(g.shape[:-1], self.sigma)
        return g[..., 0], np.sqrt(g[..., 1])

    def component_log_pdf(self, gamma, z):
        mu, sd = self.means_sds(np.asarray(gamma, dtype=float).reshape(-1, self.d))
        z = np.asarray(z, dtype=float)[..., None]
        out = -0.5 * ((z - mu) / sd) ** 2 - np.log(sd) - LOG_SQRT_2PI
        return out[..., 0] if np.ndim(gamma) <= 1 else out

    def component_grad(self, gamma, z):
        """Gradient of ``g_gamma(z)`` with respect to ``gamma``; shape ``(m, d)``."""
        gamma = np.asarray(gamma, dtype=float).reshape(self.d)
        z = np.asarray(z, dtype=float)
        g = np.exp(self.component_log_pdf(gamma, z))
        if self.d == 1:
            return (g * (z - gamma[0]) / self.sigma ** 2)[:, None]
        mu, s = gamma
        return np.column_stack([g * (z - mu) / s, g * ((z - mu) ** 2 / (2 * s ** 2) - 0.5 / s)])

    def component_envelopes(self, gamma, eta, z):
        """Log of the lower and upper envelopes of ``g_gamma'`` over ``|gamma' - gamma| <= eta``.

        The supremum and infimum are taken coordinatewise over the box of
        half-width ``eta``, which contains the l1 ball.
        """
        gamma = np.asarray(gamma, dtype=float).reshape(self.d)
        z = np.asarray(z, dtype=float)
        mu_lo, mu_hi = gamma[0] - eta, gamma[0] + eta

        def logn(mu, var):
            return -0.5 * (z - mu) ** 2 / var - 0.5 * np.log(var) - LOG_SQRT_2PI

        if self.d == 1:
            var = self.sigma ** 2
            upper = logn(np.clip(z, mu_lo, mu_hi), var)
            lower = np.minimum(logn(mu_lo, var), logn(mu_hi, var))
            return lower, upper
        s_lo, s_hi = max(gamma[1] - eta, 1e-12), gamma[1] + eta
        mu_near = np.clip(z, mu_lo, mu_hi)
        upper = logn(mu_near, np.clip((z - mu_near) ** 2, s_lo, s_hi))
        lower = np.min([logn(m, s) for m in (mu_lo, mu_hi) for s in (s_lo, s_hi)], axis=0)
        return lower, upper

    # -- densities ------------------------------------------------------
    def density(self, theta):
        w, g = self.split(theta.k, theta.array)
        mu, sd = self.means_sds(g[0])
        return MixtureDensity(np.clip(w[0], 0.0, None) / np.clip(w[0], 0.0, None).sum(), mu, sd)

    def _coefficients(self, k, vectors):
        """``log p_j g_j(z) = a z^2 + b z + c`` per component; shape ``(B, k, 3)``."""
        w, g = self.split(k, vectors)
        mu, sd = self.means_sds(g)
        with np.errstate(divide="ignore"):
            logw = np.log(np.clip(w, 0.0, None))
        prec = 1.0 / sd ** 2
        a = -0.5 * prec
        b = mu * prec
        c = -0.5 * mu ** 2 * prec - np.log(sd) - LOG_SQRT_2PI + logw
        return np.stack([a, b, c], axis=-1)

    def _log_mixture(self, k, vectors, z):
        coef = self._coefficients(k, vectors)
        B = len(coef)
        feats = np.column_stack([z * z, z, np.ones_like(z)])
        comp = (feats @ coef.reshape(B * k, 3).T).reshape(len(z), B, k)
        if k == 1:
            return comp[:, :, 0].T
        if k == 2:
            return np.logaddexp(comp[:, :, 0], comp[:, :, 1]).T
        top = comp.max(axis=2)
        with np.errstate(invalid="ignore"):
            out = top + np.log(np.exp(comp - top[:, :, None]).sum(axis=2))
        return np.where(np.isneginf(top), -np.inf, out).T

    def log_density_batch(self, k, vectors, z):
        V = np.atleast_2d(vectors)
        z = np.ravel(np.asarray(z, dtype=float))
        chunk = max(1, int(1_000_000 // max(1, len(z) * k)))
        out = np.empty((len(V), len(z)))
        for s in range(0, len(V), chunk):
            out[s:s + chunk] = self._log_mixture(k, V[s:s + chunk], z)
        return out

    def loglik_fn(self, k, data):
        z = np.ravel(as_points(data)).astype(float)
        chunk = max(1, int(1_000_000 // max(1, len(z) * k)))

        def loglik(vectors):
            V = np.atleast_2d(vectors)
            out = np.empty(len(V))
            for s in range(0, len(V), chunk):
                out[s:s + chunk] = self._log_mixture(k, V[s:s + chunk], z).sum(axis=1)
            return out

        return loglik

    # -- priors ---------------------------------------------------------
    def resolve_within(self, prior):
        if prior.within == "gaussian":
            raise ValueError("the gaussian coefficient prior exists only for the regression family")
        if prior.within == "default":
            return "repulsive" if self.d == 1 else "uniform"
        if prior.within == "repulsive" and self.d != 1:
            raise ValueError("the repulsive location prior is defined for d = 1 only")
        return prior.within

    def log_location_normaliser(self, k: int) -> float:
        """``log int_{Gamma^k} prod_{i<j} |gamma_i - gamma_j| d gamma``."""
        width = 2.0 * self.bound
        return (k + k * (k - 1) / 2) * math.log(width) + log_selberg_half(k)

    def log_prior_batch(self, k, vectors, prior):
        w, g = self.split(k, vectors)
        ok = np.all(w >= -_TOL, axis=1)
        ok &= np.all((g >= self.gamma_lo - _TOL) & (g <= self.gamma_hi + _TOL), axis=(1, 2))
        out = np.full(len(w), gammaln(k))
        if self.resolve_within(prior) == "repulsive":
            mu = g[:, :, 0]
            with np.errstate(divide="ignore"):
                for i, j in itertools.combinations(range(k), 2):
                    out += np.log(np.abs(mu[:, i] - mu[:, j]))
            out -= self.log_location_normaliser(k)
        else:
            out -= k * float(np.sum(np.log(self.gamma_hi - self.gamma_lo)))
        return np.where(ok, out, -np.inf)

    def sample_prior(self, k, size, rng, prior):
        w = rng.dirichlet(np.ones(k), size=size)
        if self.resolve_within(prior) == "repulsive" and k > 1:
            # rejection from the uniform box; acceptance prod |mu_i - mu_j| / width^(k(k-1)/2)
            width = 2.0 * self.bound
            accepted, need = [], size
            while need > 0:
                batch = rng.uniform(-self.bound, self.bound, size=(max(4 * need, 64) * 4 ** (k - 1), k))
                ratio = np.ones(len(batch))
                for i, j in itertools.combinations(range(k), 2):
                    ratio *= np.abs(batch[:, i] - batch[:, j]) / width
                keep = batch[rng.uniform(size=len(batch)) < ratio][:need]
                accepted.append(keep)
                need -= len(keep)
            g = np.concatenate(accepted)[:, :, None]
        else:
            g = rng.uniform(self.gamma_lo, self.gamma_hi, size=(size, k, self.d))
        return self.pack(w, g)

    # -- unconstrained coordinates --------------------------------------
    def to_unconstrained(self, k, vectors, prior):
        V = np.atleast_2d(vectors)
        w, g = self.split(k, V)
        ug = _inv_logit_box(g, self.gamma_lo, self.gamma_hi).reshape(len(V), -1)
        return np.concatenate([_inv_alr(w[:, :-1]), ug], axis=1)

    def from_unconstrained(self, k, u, prior):
        u = np.atleast_2d(u)
        p, ljw = _alr(u[:, :k - 1])
        g, ljg = _logit_box(u[:, k - 1:].reshape(len(u), k, self.d), self.gamma_lo, self.gamma_hi)
        return np.concatenate([p, g.reshape(len(u), -1)], axis=1), ljw + ljg.sum(axis=(1, 2))

    # The prior and the likelihood are exchangeable in the component labels, so
    # integrals over Theta_k equal k! times integrals over the region where the
    # means increase.  That region is parameterised through the cumulative sums
    # of a (k+1)-part simplex.
    label_symmetric = True

    def canonical(self, k, vectors):
        w, g = self.split(k, vectors)
        order = np.argsort(g[:, :, 0], axis=1, kind="stable")
        w = np.take_along_axis(w, order, axis=1)
        g = np.take_along_axis(g, order[:, :, None], axis=1)
        return self.pack(w, g)

    def to_ordered(self, k, vectors, prior):
        V = self.canonical(k, vectors)
        w, g = self.split(k, V)
        c = (g[:, :, 0] + self.bound) / (2 * self.bound)
        gaps = np.diff(np.concatenate([np.zeros((len(V), 1)), c, np.ones((len(V), 1))], axis=1), axis=1)
        gaps = np.clip(gaps, _EDGE, None)
        um = np.log(gaps[:, :-1]) - np.log(gaps[:, -1:])
        parts = [_inv_alr(w[:, :-1])]
        if self.d == 1:
            parts.append(um)
        else:
            us = _inv_logit_box(g[:, :, 1], self.gamma_lo[1], self.gamma_hi[1])
            parts.append(np.stack([um, us], axis=2).reshape(len(V), -1))
        return np.concatenate(parts, axis=1)

    def from_ordered(self, k, u, prior):
        u = np.atleast_2d(u)
        p, ljw = _alr(u[:, :k - 1])
        rest = u[:, k - 1:].reshape(len(u), k, self.d)
        gaps, ljm = _alr(rest[:, :, 0])
        mu = -self.bound + 2 * self.bound * np.cumsum(gaps, axis=1)
        logjac = ljw + ljm + k * math.log(2 * self.bound)
        if self.d == 1:
            g = mu[:, :, None]
        else:
            s, ljs = _logit_box(rest[:, :, 1], self.gamma_lo[1], self.gamma_hi[1])
            g = np.stack([mu, s], axis=2)
            logjac = logjac + ljs.sum(axis=1)
        return np.concatenate([p, g.reshape(len(u), -1)], axis=1), logjac

    def permute_labels(self, k, vectors, rng):
        w, g = self.split(k, vectors)
        perm = np.argsort(rng.uniform(size=w.shape), axis=1)
        return self.pack(np.take_along_axis(w, perm, axis=1), np.take_along_axis(g, perm[:, :, None], axis=1))

    def allocation_proposal(self, k, data, prior, rng):
        if self.d != 1 or k < 2:
            return None
        from .allocation import AllocationProposal
        return AllocationProposal(self, k, as_points(data), rng,
                                  repulsive=self.resolve_within(prior) == "repulsive")

    # -- structure --------------------------------------------------------
    def relabelings(self, k, vector):
        w, g = self.split(k, vector)
        out = []
        for perm in itertools.permutations(range(k)):
            out.append(self.pack(w[:, perm], g[:, perm])[0])
        return out

    def embed(self, theta):
        k = theta.k
        w, g = self.split(k, theta.array)
        w2 = np.concatenate([w[0, :-1], [w[0, -1] / 2, w[0, -1] / 2]])
        g2 = np.concatenate([g[0], g[0, -1:]], axis=0)
        return self.theta(k + 1, self.pack(w2[None], g2[None])[0])

    def start_points(self, k, data, prior):
        z = np.sort(np.ravel(as_points(data)))
        starts = []
        for spread in (1.0, 0.6):
            qs = 0.5 + spread * (np.arange(k) + 0.5 - k / 2) / k
            mu = np.clip(np.quantile(z, qs), -0.99 * self.bound, 0.99 * self.bound)
            if self.d == 1:
                g = mu[:, None]
            else:
                var = np.clip(np.var(z) / k ** 2, 1.01 / self.var_bound, 0.99 * self.var_bound)
                g = np.column_stack([mu, np.full(k, var)])
            starts.append(self.pack(np.full((1, k), 1.0 / k), g[None])[0])
        return starts

    def effective_dimensions(self, k_star):
        d = self.dimension(k_star)
        return float(d + 1), float(d), 0.0

    def predicted_exponent(self, k_star):
        d1, d2, _ = self.effective_dimensions(k_star)
        return (d1 - d2) / 2


# ---------------------------------------------------------------------------
# Functional surface


def density_at(family: OrderIndexedFamily, theta: Theta, z) -> np.ndarray | float:
    """``f_theta(z)``; scalar in, scalar out."""
    family.validate(theta)
    z_arr = np.asarray(z, dtype=float)
    scalar = z_arr.ndim == 0 or (family.sample_dim == 2 and z_arr.ndim == 1)
    pts = z_arr.reshape(-1, family.sample_dim) if family.sample_dim == 2 else z_arr.ravel()
    values = np.exp(family.log_density_batch(theta.k, theta.array[None], pts)[0])
    return float(values[0]) if scalar else values


def sample(family: OrderIndexedFamily, theta: Theta, n: int, stream: RandomStream) -> Dataset:
    return family.sample(theta, n, stream)


def log_prior_density(family: OrderIndexedFamily, prior: PriorSpec, theta: Theta) -> float:
    """Within-order prior log density ``log pi_k(theta)``; ``-inf`` outside the support."""
    try:
        family.validate(theta)
    except InvalidTheta:
        return -math.inf
    return float(family.log_prior_batch(theta.k, theta.array[None], prior)[0])


def model_dimension(family: OrderIndexedFamily, k: int) -> int:
    if k < 1:
        raise ValueError("k must be at least 1")
    return family.dimension(k)


def effective_dimensions(family: OrderIndexedFamily, k_star: int, tau: float | None = None):
    """``(D1(k*+1), D2(k*), beta2)`` used by the overestimation rates."""
    if k_star < 1:
        raise ValueError("k_star must be at least 1")
    if isinstance(family, ChangePoints):
        return family.effective_dimensions(k_star, tau)
    return family.effective_dimensions(k_star)


def predicted_exponent(family: OrderIndexedFamily, k_star: int) -> float:
    """The power of ``n`` in the overestimation rate, ``(D1 - D2) / 2``."""
    d1, d2, _ = effective_dimensions(family, k_star)
    return (d1 - d2) / 2


FAMILIES = {cls.kind: cls for cls in (FourierRegression, ChangePoints, GaussianMixture)}
