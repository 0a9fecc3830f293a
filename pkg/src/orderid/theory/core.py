"""Kullback-Leibler geometry of the nested families: ``H*_k``, ``S_k(delta)``, moment bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from ..density import DEFAULT_SCHEME, QuadratureScheme, kl_divergence, q_moment, quadrature_grid, v_max
from ..errors import DomainViolation
from ..families import ChangePoints, FourierRegression, GaussianMixture, OrderIndexedFamily, PriorSpec, Theta
from ..posterior import log_bn
from ..streams import RandomStream
from .constants import lemma2_bound

GRID_PER_AXIS = 17
MAX_GRID = GRID_PER_AXIS ** 3
UNIFORM = PriorSpec(within="uniform")


def _validate_star(family, theta_star):
    family.validate(theta_star)
    return theta_star


def kl_batch(family: OrderIndexedFamily, theta_star: Theta, k: int, vectors: np.ndarray,
             scheme: QuadratureScheme = DEFAULT_SCHEME) -> np.ndarray:
    """``H(theta) = KL(f*, f_theta)`` for a batch of order-``k`` parameters.

    Regression-type families use ``||phi_theta - phi*||^2 / (2 sigma^2)``;
    mixtures integrate on the quadrature grid of ``f*``.
    """
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    if isinstance(family, FourierRegression):
        width = max(k, theta_star.k)
        a = np.zeros((len(V), width))
        a[:, :k] = V
        b = np.zeros(width)
        b[:theta_star.k] = theta_star.array
        return np.sum((a - b) ** 2, axis=1) / (2 * family.sigma ** 2)
    if isinstance(family, ChangePoints):
        return _change_point_kl(family, theta_star, k, V)
    f_star = family.density(theta_star)
    z, w = quadrature_grid([f_star], scheme)
    lf = f_star.log_pdf(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        lg = family.log_density_batch(k, V, z)
        terms = np.where(np.isfinite(lg), w * np.exp(lf) * (lf - lg), np.inf)
    return np.maximum(terms.sum(axis=1), 0.0)


def _change_point_kl(family, theta_star, k, V):
    alpha_s, _ = family.split(theta_star.k, theta_star.array)
    t_s = family.knots(theta_star.k, theta_star.array)[0]
    alpha, _ = family.split(k, V)
    t = family.knots(k, V)
    B = len(V)
    cuts = np.sort(np.concatenate([np.zeros((B, 1)), t, np.broadcast_to(t_s, (B, len(t_s))),
                                   np.ones((B, 1))], axis=1), axis=1)
    width = np.diff(cuts, axis=1)
    mid = (cuts[:, 1:] + cuts[:, :-1]) / 2
    seg = (mid[:, :, None] >= t[:, None, :]).sum(axis=2).clip(max=k - 1)
    phi = np.take_along_axis(alpha, seg, axis=1)
    seg_s = np.searchsorted(t_s, mid, side="right").clip(max=theta_star.k - 1)
    phi_s = alpha_s[0][seg_s]
    return np.sum(width * (phi - phi_s) ** 2, axis=1) / (2 * family.sigma ** 2)


def kl_at(family, theta_star, theta, scheme=DEFAULT_SCHEME) -> float:
    return float(kl_batch(family, theta_star, theta.k, theta.array[None], scheme)[0])


def _coarse_points(family, k, rng):
    lo, hi = family.box(k, UNIFORM)
    dim = len(lo)
    if GRID_PER_AXIS ** dim <= MAX_GRID:
        axes = [np.linspace(a, b, GRID_PER_AXIS) for a, b in zip(lo, hi)]
        pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(dim, -1).T
    else:
        pts = family.sample_prior(k, MAX_GRID, rng, UNIFORM)
    ok = np.isfinite(family.log_prior_batch(k, pts, UNIFORM))
    return pts[ok]


def _embedded(family, theta_star, k):
    th = theta_star
    while th.k < k:
        th = family.embed(th)
    return th.array


@dataclass(frozen=True)
class HStar:
    value: float
    argmin: Theta

    def __iter__(self):
        return iter((self.value, self.argmin))


def h_star(family: OrderIndexedFamily, k: int, theta_star: Theta,
           scheme: QuadratureScheme = DEFAULT_SCHEME, starts: int = 5) -> HStar:
    """``inf { H(theta) : theta in Theta_k }`` with a minimiser.

    A coarse grid (17 points per axis, or 4913 prior draws beyond three
    dimensions) seeds Nelder-Mead runs in unconstrained coordinates from the
    five best points; when ``k >= k*`` the embedded truth is an extra start.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    _validate_star(family, theta_star)
    rng = RandomStream(0x5EED, k).generator()
    pts = _coarse_points(family, k, rng)
    vals = kl_batch(family, theta_star, k, pts, scheme)
    order = np.argsort(vals, kind="stable")[:starts]
    cands = [pts[i] for i in order]
    if k >= theta_star.k:
        cands.insert(0, _embedded(family, theta_star, k))

    def objective(u):
        V, _ = family.from_unconstrained(k, u[None], UNIFORM)
        return float(kl_batch(family, theta_star, k, V, scheme)[0])

    best_v, best_x = math.inf, None
    for c in cands:
        v0 = float(kl_batch(family, theta_star, k, c[None], scheme)[0])
        if v0 < best_v:
            best_v, best_x = v0, c
        if v0 <= 1e-14:
            continue
        u0 = family.to_unconstrained(k, c[None], UNIFORM)[0]
        res = minimize(objective, u0, method="Nelder-Mead",
                       options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 4000 * len(u0)})
        if res.fun < best_v:
            best_v = float(res.fun)
            best_x = family.from_unconstrained(k, res.x[None], UNIFORM)[0][0]
    return HStar(max(best_v, 0.0), family.theta(k, best_x))


def in_s_k_delta(family, k, theta, theta_star, delta, hstar_value, scheme=DEFAULT_SCHEME) -> bool:
    """Whether ``H(theta) <= H*_k + delta / 2``."""
    if theta.k != k:
        raise ValueError("theta has the wrong order")
    return kl_at(family, theta_star, theta, scheme) <= hstar_value + delta / 2


@dataclass(frozen=True)
class MomentEstimate:
    """Grid lower estimate of ``sup { q(theta, alpha) : theta in S_k(delta) }``."""

    value: float
    argmax: Theta | None
    grid_points: int
    in_set: int

    def __float__(self):
        return self.value


def estimate_m_alpha(family: OrderIndexedFamily, k: int, delta: float, alpha: float, theta_star: Theta,
                     grid_size: int = 9, scheme: QuadratureScheme = DEFAULT_SCHEME,
                     hstar: HStar | None = None) -> MomentEstimate:
    """Largest ``q(theta, alpha)`` over a grid restricted to ``S_k(delta)``, refined by local ascent.

    The supremum itself is not computable; this is a lower estimate.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if not delta > 0:
        raise ValueError("delta must be positive")
    hstar = hstar or h_star(family, k, theta_star, scheme)
    lo, hi = family.box(k, UNIFORM)
    axes = [np.linspace(a, b, grid_size) for a, b in zip(lo, hi)]
    pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(lo), -1).T
    pts = pts[np.isfinite(family.log_prior_batch(k, pts, UNIFORM))]
    pts = np.concatenate([pts, hstar.argmin.array[None]])
    limit = hstar.value + delta / 2
    inside = pts[kl_batch(family, theta_star, k, pts, scheme) <= limit]
    f_star = family.density(theta_star)

    def q(v):
        return q_moment(f_star, family.density(family.theta(k, v)), alpha, scheme)

    values = np.array([q(v) for v in inside])
    best = int(np.argmax(values))
    best_v, best_x = float(values[best]), inside[best]

    def neg(u):
        v = family.from_unconstrained(k, u[None], UNIFORM)[0][0]
        if kl_batch(family, theta_star, k, v[None], scheme)[0] > limit:
            return 0.0
        return -q(v)

    u0 = family.to_unconstrained(k, best_x[None], UNIFORM)[0]
    res = minimize(neg, u0, method="Nelder-Mead", options={"xatol": 1e-4, "fatol": 1e-6, "maxiter": 200})
    if -res.fun > best_v:
        best_v = float(-res.fun)
        best_x = family.from_unconstrained(k, res.x[None], UNIFORM)[0][0]
    return MomentEstimate(best_v, family.theta(k, best_x), len(pts), len(inside))


@dataclass(frozen=True)
class InequalityCheck:
    holds: bool
    lhs: float
    rhs: float

    def __iter__(self):
        return iter((self.holds, self.lhs, self.rhs))


def check_hv_inequality(family, theta, theta_star, C1, scheme=DEFAULT_SCHEME) -> InequalityCheck:
    """Compare ``V(theta)`` with ``C1 H(theta) log^2 H(theta)``; stated only for ``H <= e^-2``."""
    f_star = family.density(theta_star)
    f = family.density(theta)
    H = max(kl_divergence(f_star, f, scheme), 0.0)
    if H > math.exp(-2):
        raise DomainViolation(f"H(theta) = {H:.4g} exceeds e^-2")
    V = v_max(f_star, f, scheme)
    rhs = C1 * H * math.log(H) ** 2 if H > 0 else 0.0
    return InequalityCheck(V <= rhs + 1e-12, V, rhs)


def prior_mass_s_k(family, prior, k, theta_star, delta, hstar_value, draws=20000, stream=None,
                   scheme=DEFAULT_SCHEME) -> float:
    """Monte Carlo estimate of ``pi_k { S_k(delta) }``."""
    rng = (stream or RandomStream(0x5EED, 1)).generator()
    V = family.sample_prior(k, draws, rng, prior)
    return float(np.mean(kl_batch(family, theta_star, k, V, scheme) <= hstar_value + delta / 2))


@dataclass(frozen=True)
class Lemma2Result:
    frequency: float
    bound: float
    successes: int
    reps: int
    prior_mass: float
    h_star: float
    threshold_offset: float

    @property
    def stderr(self) -> float:
        p = self.bound
        return math.sqrt(max(p * (1 - p), 0.0) / self.reps)


def verify_lemma2(family: OrderIndexedFamily, prior: PriorSpec, k: int, delta: float, n: int, reps: int,
                  theta_star: Theta, M: float, stream: RandomStream, alpha: float = 1.0,
                  delta0: float | None = None, evidence_method: str = "auto") -> Lemma2Result:
    """Frequency of ``log B_n(k) >= log(pi(k) pi_k{S_k(delta)} / 2) - n (H*_k + delta)``.

    Reported next to ``1 - 2 exp(-n delta^2 / (8 M))``.
    """
    if not 0 < delta <= alpha * M:
        raise ValueError("delta must lie in (0, alpha M]")
    if delta0 is not None and delta > delta0:
        raise ValueError("delta exceeds delta0")
    hs = h_star(family, k, theta_star)
    mass = prior_mass_s_k(family, prior, k, theta_star, delta, hs.value, stream=stream.child(0))
    if mass <= 0:
        raise ValueError("S_k(delta) has no estimated prior mass")
    offset = math.log(prior.order_prior(family.k_max)[k - 1] * mass / 2)
    threshold = offset - n * (hs.value + delta)
    hits = 0
    for r in range(reps):
        data = family.sample(theta_star, n, stream.child(1).child(r))
        value = log_bn(family, prior, k, data, theta_star, method=evidence_method,
                       stream=stream.child(2).child(r))
        hits += value >= threshold
    return Lemma2Result(hits / reps, lemma2_bound(n, delta, M), hits, reps, mass, hs.value, offset)
