"""Allocation-conditional proposals for Gaussian location mixtures.

A Gibbs sampler over component allocations visits the posterior; each
visited allocation ``z`` gives a conditional density of ``(p, mu)`` that is
Dirichlet in the weights and truncated normal in the locations.  Their
average, symmetrised over label permutations, is a proposal that follows the
curved ridges of overfitted mixtures which a Laplace fit cannot.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import gammaln, log_ndtr, ndtr, ndtri, ndtri_exp

from .families import log_sum_exp

LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


def truncated_standard_normal(a, b, rng):
    """Inverse-CDF draws from ``N(0, 1)`` restricted to ``[a, b]``, stable in both tails."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    flip = a > 0
    lo, hi = np.where(flip, -b, a), np.where(flip, -a, b)
    u = rng.uniform(size=lo.shape)
    # lower-tail intervals: work with log Phi to keep precision
    la, lb = log_ndtr(lo), log_ndtr(hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.exp(la - lb)
        tail = ndtri_exp(lb + np.log(ratio + u * (1 - ratio)))
    mid = ndtri(ndtr(lo) + u * (ndtr(hi) - ndtr(lo)))
    x = np.where(hi < 0, tail, mid)
    x = np.clip(x, lo, hi)
    return np.where(flip, -x, x)


class AllocationProposal:
    """Rao-Blackwellised mixture of allocation conditionals.

    Args:
        family: a one-dimensional location :class:`~orderid.families.GaussianMixture`.
        k: order.
        x: observations.
        rng: generator driving the Gibbs chains.
        repulsive: whether the location prior carries the ``prod |mu_i - mu_j|`` factor.
        chains, sweeps, burn, thin: Gibbs run layout; chains run in lockstep.
    """

    def __init__(self, family, k, x, rng, repulsive=True, chains=32, sweeps=80, burn=20, thin=5):
        self.family, self.k = family, k
        self.bound, self.sigma = family.bound, family.sigma
        a, mean, sd = self._gibbs(np.ravel(x), rng, repulsive, chains, sweeps, burn, thin)
        self.a, self.mean, self.sd = a, mean, sd
        self.finite = np.isfinite(sd)
        sdf = np.where(self.finite, sd, 1.0)
        lo, hi = (-self.bound - mean) / sdf, (self.bound - mean) / sdf
        mass = np.clip(ndtr(hi) - ndtr(lo), 1e-300, None)
        self.lognorm = np.where(self.finite, np.log(mass), 0.0)
        self.logdir = gammaln(a.sum(axis=1)) - gammaln(a).sum(axis=1)
        self.log_count = math.log(len(a)) + math.lgamma(k + 1)

    def _inits(self, x, rng, chains):
        k = self.k
        qs = np.quantile(x, (np.arange(k) + 0.5) / k)
        inits = [qs]
        for c in range(1, chains):
            inits.append(np.sort(rng.choice(x, size=k, replace=len(x) < k)))
        return np.clip(np.array(inits), -0.99 * self.bound, 0.99 * self.bound)

    def _draw_locations(self, mean, sd, rng):
        out = rng.uniform(-self.bound, self.bound, size=mean.shape)
        fin = np.isfinite(sd)
        if np.any(fin):
            m, s = mean[fin], sd[fin]
            out[fin] = m + s * truncated_standard_normal((-self.bound - m) / s, (self.bound - m) / s, rng)
        return out

    def _gibbs(self, x, rng, repulsive, chains, sweeps, burn, thin):
        k, s2, n = self.k, self.sigma ** 2, len(x)
        mu = self._inits(x, rng, chains)
        p = np.full((chains, k), 1.0 / k)
        recs_a, recs_m, recs_s = [], [], []
        for it in range(sweeps):
            logr = np.log(p)[:, None, :] - (x[None, :, None] - mu[:, None, :]) ** 2 / (2 * s2)
            r = np.exp(logr - logr.max(axis=2, keepdims=True))
            cdf = np.cumsum(r, axis=2)
            z = (cdf > rng.uniform(size=(chains, n, 1)) * cdf[:, :, -1:]).argmax(axis=2)
            onehot = z[:, :, None] == np.arange(k)
            cnt = onehot.sum(axis=1)
            tot = np.einsum("cnk,n->ck", onehot, x)
            g = rng.standard_gamma(1.0 + cnt)
            p = np.clip(g / g.sum(axis=1, keepdims=True), 1e-300, None)
            mean = np.where(cnt > 0, tot / np.maximum(cnt, 1), 0.0)
            sd = np.where(cnt > 0, np.sqrt(s2 / np.maximum(cnt, 1)), np.inf)
            new = self._draw_locations(mean, sd, rng)
            if repulsive and k > 1:
                # independence Metropolis step for the repulsion factor, one component at a time
                for j in range(k):
                    others = np.delete(mu, j, axis=1)
                    with np.errstate(divide="ignore"):
                        log_ratio = (np.log(np.abs(new[:, j:j + 1] - others)).sum(axis=1)
                                     - np.log(np.abs(mu[:, j:j + 1] - others)).sum(axis=1))
                    accept = np.log(rng.uniform(size=chains)) < log_ratio
                    mu[accept, j] = new[accept, j]
            else:
                mu = new
            if it >= burn and (it - burn) % thin == 0:
                recs_a.append(1.0 + cnt)
                recs_m.append(mean)
                recs_s.append(sd)
        return (np.concatenate(recs_a).astype(float), np.concatenate(recs_m), np.concatenate(recs_s))

    def sample(self, size, rng):
        k = self.k
        idx = rng.integers(0, len(self.a), size=size)
        g = rng.standard_gamma(self.a[idx])
        p = g / g.sum(axis=1, keepdims=True)
        mu = self._draw_locations(self.mean[idx], self.sd[idx], rng)
        perm = np.argsort(rng.uniform(size=(size, k)), axis=1)
        p = np.take_along_axis(p, perm, axis=1)
        mu = np.take_along_axis(mu, perm, axis=1)
        return self.family.pack(p, mu[:, :, None])

    def logpdf(self, V):
        w, g = self.family.split(self.k, V)
        mu = g[:, :, 0]
        # finite floor so that a zero weight under a - 1 = 0 contributes 0, not 0 * -inf
        with np.errstate(divide="ignore"):
            logw = np.maximum(np.log(np.clip(w, 0.0, None)), -1e300)
        # infinite-sd slots are uniform on the box: zero precision, constant term
        prec = np.where(self.finite, 1.0 / np.where(self.finite, self.sd, 1.0), 0.0)
        const = np.where(self.finite, np.log(prec, where=self.finite, out=np.zeros_like(prec)) - LOG_SQRT_2PI
                         - self.lognorm, -math.log(2 * self.bound))
        base = self.logdir + const.sum(axis=1)
        out = []
        for perm in itertools.permutations(range(self.k)):
            lw, pm = logw[:, perm], mu[:, perm]
            with np.errstate(over="ignore"):
                ld = base[None, :] + np.einsum("sk,bk->bs", self.a - 1.0, lw)
            zsc = (pm[:, None, :] - self.mean[None]) * prec[None]
            out.append(ld - 0.5 * np.einsum("bsk,bsk->bs", zsc, zsc))
        res = log_sum_exp(np.concatenate(out, axis=1), axis=1) - self.log_count
        inside = np.all(np.abs(mu) <= self.bound, axis=1) & np.all(w >= 0, axis=1)
        return np.where(inside, res, -np.inf)
