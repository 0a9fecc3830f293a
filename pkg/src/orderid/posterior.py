"""Evidence per order, the order posterior, and the three order estimators."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp
from scipy.stats import multivariate_normal, multivariate_t

from .cubature import log_integrate
from .density import QuadratureScheme
from .errors import DegenerateProposal, DimensionTooHigh, InvalidTheta
from .families import OrderIndexedFamily, PriorSpec, Theta, as_points
from .streams import RandomStream

MAX_GRID_DIM = 3
DEFENSIVE = 0.05
INFLATION = 2.0
T_DF = 5.0
BOOTSTRAP = 200


@dataclass(frozen=True)
class LogEvidence:
    """``log int exp(l_n) d pi_k`` for one order."""

    k: int
    log: float
    method: str
    stderr: float = 0.0
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if not np.isfinite(self.log):
            raise ValueError(f"log evidence for k={self.k} is not finite")
        if self.stderr < 0:
            raise ValueError("standard error must be nonnegative")


@dataclass(frozen=True)
class OrderPosterior:
    """``Pi(k | Z^n)`` for ``k = 1..k_max``; ``probs[k - 1]`` is the mass of order ``k``."""

    probs: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or not len(p) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("posterior must be a nonnegative vector summing to 1")

    @classmethod
    def from_mapping(cls, probs: Mapping[int, float]) -> "OrderPosterior":
        keys = sorted(probs)
        if keys != list(range(1, len(keys) + 1)):
            raise ValueError("posterior keys must be 1..k_max")
        return cls(tuple(float(probs[k]) for k in keys))

    @property
    def k_max(self) -> int:
        return len(self.probs)

    def __getitem__(self, k: int) -> float:
        return self.probs[k - 1]

    def as_dict(self) -> dict[int, float]:
        return {k + 1: p for k, p in enumerate(self.probs)}


# ---------------------------------------------------------------------------
# likelihood and evidence


def log_likelihood(family: OrderIndexedFamily, theta: Theta, data) -> float:
    """``sum_i log f_theta(Z_i)``."""
    family.validate(theta)
    z = as_points(data)
    if not len(z):
        raise ValueError("data must be nonempty")
    with np.errstate(divide="ignore"):
        return float(family.loglik_fn(theta.k, z)(theta.array[None])[0])


def _log_target(family, prior, k, data):
    z = as_points(data)
    loglik = family.loglik_fn(k, z) if len(z) else (lambda V: np.zeros(len(np.atleast_2d(V))))

    def log_f(V):
        V = np.atleast_2d(V)
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = family.log_prior_batch(k, V, prior)
            out = np.full(len(V), -np.inf)
            ok = np.isfinite(lp)
            if np.any(ok):
                out[ok] = lp[ok] + loglik(V[ok])
        return np.where(np.isnan(out), -np.inf, out)

    return log_f


def log_evidence_quadrature(family: OrderIndexedFamily, prior: PriorSpec, k: int, data,
                            scheme: QuadratureScheme | None = None) -> LogEvidence:
    """Deterministic evidence by adaptive product Gauss-Legendre cubature over ``Theta_k``.

    The number of starting cells per axis is ``scheme.nodes // 32``; cells are
    bisected until their values stabilise relative to the total.  Families
    whose likelihood jumps in some coordinates (change points) supply an exact
    rule instead, which is used whenever available.
    """
    dim = family.dimension(k)
    if dim > MAX_GRID_DIM:
        raise DimensionTooHigh(f"D({k}) = {dim} exceeds {MAX_GRID_DIM}")
    if not len(as_points(data)):
        return LogEvidence(k, 0.0, "quadrature")
    exact = getattr(family, "log_evidence_exact", None)
    if exact is not None:
        return LogEvidence(k, exact(k, data, prior), "quadrature")
    scheme = scheme or QuadratureScheme()
    lo, hi = family.box(k, prior, radius=scheme.radius)
    value = log_integrate(_log_target(family, prior, k, data), lo, hi, cells=max(2, scheme.nodes // 32))
    return LogEvidence(k, value, "quadrature")


class _Target:
    """Posterior kernel in unconstrained coordinates.

    For label-symmetric families the coordinates cover only the canonical
    (ordered) region and the kernel carries the ``log k!`` multiplicity.
    """

    def __init__(self, family, prior, k, data):
        self.family, self.prior, self.k = family, prior, k
        self.log_f = _log_target(family, prior, k, data)
        self.ordered = family.label_symmetric and k > 1
        self.offset = math.lgamma(k + 1) if self.ordered else 0.0

    def theta(self, U):
        U = np.atleast_2d(U)
        if self.ordered:
            return self.family.from_ordered(self.k, U, self.prior)
        return self.family.from_unconstrained(self.k, U, self.prior)

    def to_u(self, V):
        if self.ordered:
            return self.family.to_ordered(self.k, V, self.prior)
        return self.family.to_unconstrained(self.k, V, self.prior)

    def __call__(self, U):
        V, logjac = self.theta(U)
        return self.log_f(V) + logjac + self.offset

    def log_prior(self, U):
        V, logjac = self.theta(U)
        with np.errstate(divide="ignore"):
            return self.family.log_prior_batch(self.k, V, self.prior) + logjac + self.offset

    def sample_prior(self, size, rng):
        return self.to_u(self.family.sample_prior(self.k, size, rng, self.prior))


def _gradient(target, u, h=1e-5):
    dim = len(u)
    steps = np.eye(dim) * h * (1 + np.abs(u))[:, None]
    vals = target(np.concatenate([u + steps, u - steps]))
    with np.errstate(invalid="ignore"):
        return (vals[:dim] - vals[dim:]) / (2 * np.diag(steps))


def _hessian(target, u, h=1e-4):
    dim = len(u)
    hs = h * (1 + np.abs(u))
    pts = [u]
    for i in range(dim):
        for j in range(i, dim):
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                p = u.copy()
                p[i] += si * hs[i]
                p[j] += sj * hs[j]
                pts.append(p)
    vals = target(np.array(pts))
    H = np.empty((dim, dim))
    c = 1
    for i in range(dim):
        for j in range(i, dim):
            fpp, fpm, fmp, fmm = vals[c:c + 4]
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4 * hs[i] * hs[j])
            c += 4
    return H


def _maximise(target, u0):
    def neg(u):
        v = target(u[None])[0]
        return 1e300 if not np.isfinite(v) else -v

    def jac(u):
        g = _gradient(target, u)
        return np.where(np.isfinite(g), -g, 0.0)

    res = minimize(neg, u0, jac=jac, method="L-BFGS-B", options={"maxiter": 500})
    return res.x, -res.fun


def _laplace_covariance(target, u):
    """Inverse negative Hessian, regularised by escalating ridges."""
    H = -_hessian(target, u)
    if not np.all(np.isfinite(H)):
        raise DegenerateProposal("non-finite Hessian at the mode")
    scale = max(1.0, float(np.max(np.abs(np.diag(H)))))
    for ridge in (0.0, *(scale * 10.0 ** e for e in range(-10, 1))):
        A = H + ridge * np.eye(len(u))
        try:
            np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            continue
        cov = np.linalg.inv(A)
        return (cov + cov.T) / 2
    raise DegenerateProposal("Hessian not positive definite after regularisation")


def find_modes(family, prior, k, data, rng, extra_starts: int = 4, keep: float = 25.0):
    """Distinct local maxima of the posterior kernel in unconstrained coordinates."""
    target = _Target(family, prior, k, data)
    starts = [np.asarray(s, dtype=float) for s in family.start_points(k, data, prior)]
    starts += list(family.sample_prior(k, extra_starts, rng, prior))
    found = []
    for s in starts:
        u0 = target.to_u(s[None])[0]
        if np.isfinite(target(u0[None])[0]):
            found.append(_maximise(target, u0))
    if not found:
        return target, []
    best = max(v for _, v in found)
    modes = []
    for u, v in sorted(found, key=lambda t: -t[1]):
        if v >= best - keep and all(np.max(np.abs(u - m)) > 1e-3 * (1 + np.max(np.abs(m))) for m, _ in modes):
            modes.append((u, v))
    return target, modes


class _PriorComponent:
    def __init__(self, target):
        self.target = target

    def sample(self, size, rng):
        t = self.target
        return t.family.sample_prior(t.k, size, rng, t.prior)

    def logpdf(self, V):
        t = self.target
        with np.errstate(divide="ignore"):
            return t.family.log_prior_batch(t.k, V, t.prior)


class _StudentComponent:
    """Multivariate t in unconstrained coordinates, pushed to parameter space.

    On label-symmetric families the draw is given a uniformly random labelling,
    so the density is spread evenly over the ``k!`` copies of the ordered region.
    """

    def __init__(self, target, mean, cov):
        self.target = target
        self.dist = multivariate_t(loc=mean, shape=cov, df=T_DF)

    def sample(self, size, rng):
        t = self.target
        U = np.atleast_2d(self.dist.rvs(size=size, random_state=rng)).reshape(size, -1)
        V = t.theta(U)[0]
        return t.family.permute_labels(t.k, V, rng) if t.ordered else V

    def logpdf(self, V):
        t = self.target
        U = t.to_u(V)
        _, logjac = t.theta(U)
        return self.dist.logpdf(U) - logjac - t.offset


def _mixture_logpdf(components, weights, V):
    with np.errstate(divide="ignore"):
        parts = [math.log(w) + c.logpdf(V) for c, w in zip(components, weights) if w > 0]
    return logsumexp(np.array(parts), axis=0)


def _mixture_sample(components, weights, size, rng):
    counts = rng.multinomial(size, np.asarray(weights) / np.sum(weights))
    return np.concatenate([c.sample(n, rng) for c, n in zip(components, counts) if n])


def _weighted_em(X, w, means, covs, iters=30):
    """Gaussian mixture fitted to a weighted sample."""
    dim = X.shape[1]
    G = len(means)
    means, covs = [m.copy() for m in means], [c.copy() for c in covs]
    mix = np.full(G, 1.0 / G)
    w = w / w.sum()
    ridge = 1e-8 * np.eye(dim)
    for _ in range(iters):
        logr = np.array([np.log(mix[g]) + multivariate_normal.logpdf(X, means[g], covs[g], allow_singular=True)
                         for g in range(len(mix))])
        r = np.exp(logr - logsumexp(logr, axis=0)) * w
        mass = r.sum(axis=1)
        live = mass > 1e-4
        if not np.any(live):
            break
        r, mass = r[live], mass[live]
        means = [r[g] @ X / mass[g] for g in range(len(mass))]
        covs = []
        for g in range(len(mass)):
            Y = X - means[g]
            C = (r[g][:, None] * Y).T @ Y / mass[g] + ridge
            covs.append((C + C.T) / 2)
        mix = mass / mass.sum()
    return mix, means, covs


def _laplace_components(target, modes, flags):
    comps, masses = [], []
    for u, v in modes:
        try:
            cov = _laplace_covariance(target, u)
        except DegenerateProposal:
            continue
        comps.append(_StudentComponent(target, u, INFLATION * cov))
        masses.append(v + 0.5 * np.linalg.slogdet(cov)[1])
    if not comps:
        flags.append("degenerate-proposal")
        warnings.warn("degenerate Laplace proposal; falling back to prior sampling", RuntimeWarning, stacklevel=3)
        return [], np.zeros(0)
    w = np.exp(np.array(masses) - max(masses))
    w = np.maximum(w / w.sum(), 0.05 / len(w))
    return comps, w / w.sum()


def _adapted_components(target, comps, weights, size, rng):
    """Stage one: sample the Laplace mixture and fit a Gaussian mixture to the weighted draws."""
    prior = _PriorComponent(target)
    stage = comps + [prior]
    sw = list((1 - DEFENSIVE) * weights) + [DEFENSIVE] if comps else [1.0]
    V = _mixture_sample(stage, sw, size, rng)
    lw = target.log_f(V) - _mixture_logpdf(stage, sw, V)
    lw = np.where(np.isfinite(lw), lw, -np.inf)
    if not np.any(np.isfinite(lw)):
        return [], np.zeros(0)
    U = target.to_u(V)
    w = np.exp(lw - np.max(lw))
    pick = rng.choice(len(U), size=min(4, len(U)), p=w / w.sum())
    glob = np.atleast_2d(np.cov(U.T, aweights=w + 1e-300)) + 1e-8 * np.eye(U.shape[1])
    init_m = [c.dist.loc for c in comps] + [U[i] for i in pick]
    init_c = [c.dist.shape / INFLATION for c in comps] + [glob / 2] * len(pick)
    mix, means, covs = _weighted_em(U, w, init_m, init_c)
    return [_StudentComponent(target, m, 1.5 * c) for m, c in zip(means, covs)], mix


def log_evidence_importance(family: OrderIndexedFamily, prior: PriorSpec, k: int, data,
                            draws: int = 4000, stream: RandomStream | None = None) -> LogEvidence:
    """Evidence by importance sampling with a defensive Laplace mixture proposal.

    Multivariate t components (5 degrees of freedom, covariance inflated
    twice) sit at every distinct posterior mode of the unconstrained kernel and
    the prior keeps 5% of the mass.  The proposal is then enriched: for
    one-dimensional location mixtures by an allocation-conditional mixture
    built from a Gibbs run, otherwise by a Gaussian mixture fitted to a weighted
    pilot sample.  The estimate and its bootstrap standard error use ``draws``
    fresh points from the final proposal.
    """
    if draws < 1000:
        raise ValueError("draws must be at least 1000")
    stream = stream or RandomStream(0)
    z = as_points(data)
    if not len(z):
        return LogEvidence(k, 0.0, "importance")
    rng = stream.generator()
    flags: list[str] = []
    extra = family.allocation_proposal(k, z, prior, rng)
    target, modes = find_modes(family, prior, k, z, rng, extra_starts=4 if extra is None else 1)
    laplace, lw_ = _laplace_components(target, modes, flags)
    if extra is not None:
        rich, rich_w = [extra], np.array([1.0])
    else:
        rich, rich_w = _adapted_components(target, laplace, lw_, max(1000, draws // 2), rng)
    comps = laplace + rich + [_PriorComponent(target)]
    share = 1.0 - DEFENSIVE
    if laplace and rich:
        lap_share = 0.1 if extra is not None else 0.5
        weights = list(share * lap_share * lw_) + list(share * (1 - lap_share) * rich_w / rich_w.sum())
    elif laplace:
        weights = list(share * lw_)
    elif rich:
        weights = list(share * rich_w / rich_w.sum())
    else:
        weights = []
    weights = weights + [1.0 - sum(weights)]
    V = _mixture_sample(comps, weights, draws, rng)
    logp = target.log_f(V)
    logw = np.where(np.isfinite(logp), logp - _mixture_logpdf(comps, weights, V), -np.inf)
    est = float(logsumexp(logw) - math.log(draws))
    boot = rng.integers(0, draws, size=(BOOTSTRAP, draws))
    boot_est = logsumexp(logw[boot], axis=1) - math.log(draws)
    se = float(np.std(boot_est[np.isfinite(boot_est)], ddof=1))
    return LogEvidence(k, est, "importance", se, tuple(flags))


def log_evidence(family, prior, k, data, method="auto", scheme=None, draws=4000, stream=None) -> LogEvidence:
    """Evidence by the requested method.

    ``"auto"`` uses quadrature whenever ``D(k) <= 3``.  ``"hybrid"`` also
    sends label-symmetric models with ``k >= 2`` to importance sampling, whose
    allocation proposal is much cheaper than cubature over their ridges.
    """
    if method == "hybrid":
        symmetric = family.label_symmetric and k > 1
        method = "importance" if symmetric or family.dimension(k) > MAX_GRID_DIM else "quadrature"
    elif method == "auto":
        method = "quadrature" if family.dimension(k) <= MAX_GRID_DIM else "importance"
    if method == "quadrature":
        return log_evidence_quadrature(family, prior, k, data, scheme)
    if method == "importance":
        return log_evidence_importance(family, prior, k, data, draws, stream)
    raise ValueError(f"unknown evidence method {method!r}")


def all_evidences(family, prior, data, method="auto", scheme=None, draws=4000,
                  stream: RandomStream | None = None) -> list[LogEvidence]:
    stream = stream or RandomStream(0)
    return [log_evidence(family, prior, k, data, method, scheme, draws, stream.child(k))
            for k in range(1, family.k_max + 1)]


# ---------------------------------------------------------------------------
# posterior and estimators


def _log_joint(evidences: Sequence[LogEvidence], prior: PriorSpec) -> np.ndarray:
    ev = sorted(evidences, key=lambda e: e.k)
    if [e.k for e in ev] != list(range(1, len(ev) + 1)):
        raise ValueError("need exactly one evidence per k = 1..k_max")
    with np.errstate(divide="ignore"):
        logpi = np.log(prior.order_prior(len(ev)))
    return logpi + np.array([e.log for e in ev])


def order_posterior(evidences: Sequence[LogEvidence], prior: PriorSpec) -> OrderPosterior:
    lj = _log_joint(evidences, prior)
    p = np.exp(lj - logsumexp(lj))
    return OrderPosterior(tuple(float(x) for x in p / p.sum()))


def estimate_global(posterior: OrderPosterior) -> int:
    """Posterior mode; ties go to the smallest order."""
    return int(np.argmax(posterior.probs)) + 1


def estimate_local(posterior: OrderPosterior) -> int:
    """Smallest ``k`` with ``Pi(k) >= Pi(k + 1)``, taking ``Pi(k_max + 1) = 0``."""
    p = posterior.probs
    for k in range(1, len(p)):
        if p[k - 1] >= p[k]:
            return k
    return len(p)


def estimate_bayes_factor(evidences: Sequence[LogEvidence], prior: PriorSpec) -> int:
    """Smallest ``k`` whose evidence exceeds that of ``k + 1`` (Bayes factor strictly below one)."""
    _log_joint(evidences, prior)
    ev = sorted(evidences, key=lambda e: e.k)
    for a, b in zip(ev, ev[1:]):
        if b.log - a.log < 0:
            return a.k
    return len(ev)


ESTIMATORS = ("global", "local", "bayes-factor")
EVIDENCE_METHODS = ("auto", "hybrid", "quadrature", "importance")


def apply_estimator(name: str, evidences: Sequence[LogEvidence], prior: PriorSpec) -> int:
    if name == "global":
        return estimate_global(order_posterior(evidences, prior))
    if name == "local":
        return estimate_local(order_posterior(evidences, prior))
    if name == "bayes-factor":
        return estimate_bayes_factor(evidences, prior)
    raise ValueError(f"unknown estimator {name!r}")


def log_bn(family: OrderIndexedFamily, prior: PriorSpec, k: int, data, theta_star: Theta,
           evidence: LogEvidence | None = None, **kwargs) -> float:
    """``log pi(k) + log evidence - l_n(theta*)``."""
    evidence = evidence or log_evidence(family, prior, k, data, **kwargs)
    return prior.log_order(k, family.k_max) + evidence.log - log_likelihood(family, theta_star, data)
