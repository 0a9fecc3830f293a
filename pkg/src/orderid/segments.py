"""Exact and proposal computations for piecewise-constant regression.

Given the knots, the levels are independent a posteriori: each one is a
normal mean restricted to ``[-bound, bound]`` and integrates in closed form.
The likelihood depends on the knots only through which gaps between sorted
design points they fall in, so integrating over the knots is an exact finite
sum over gap tuples weighted by their volume.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import log_ndtr, logsumexp

from .allocation import truncated_standard_normal

LOG_2PI = math.log(2 * math.pi)
MAX_LEVELS = 3


def log_normal_interval(lo, hi):
    """``log(Phi(hi) - Phi(lo))`` for ``lo <= hi``, accurate in both tails."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    flip = lo > 0
    a, b = np.where(flip, -hi, lo), np.where(flip, -lo, hi)
    la, lb = log_ndtr(a), log_ndtr(b)
    with np.errstate(divide="ignore"):
        return lb + np.log1p(-np.exp(la - lb))


class _Sorted:
    def __init__(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float)).reshape(-1, 2)
        order = np.argsort(z[:, 0], kind="stable")
        self.x, self.y = z[order, 0], z[order, 1]
        self.n = len(self.x)
        self.c1 = np.concatenate([[0.0], np.cumsum(self.y)])
        self.c2 = np.concatenate([[0.0], np.cumsum(self.y ** 2)])
        edges = np.concatenate([[0.0], self.x, [1.0]])
        self.gaps = np.diff(edges)
        with np.errstate(divide="ignore"):
            self.log_gaps = np.log(self.gaps)

    def moments(self, a, b):
        """Count, mean and residual sum of squares of the sorted slice ``[a, b)``."""
        a, b = np.asarray(a), np.asarray(b)
        m = b - a
        s1 = self.c1[b] - self.c1[a]
        s2 = self.c2[b] - self.c2[a]
        mean = np.where(m > 0, s1 / np.maximum(m, 1), 0.0)
        rss = np.where(m > 0, s2 - s1 * mean, 0.0)
        return m, mean, np.maximum(rss, 0.0)


def _segment_table(data, sigma, bound, kind):
    """``T[a, b]`` for every slice ``a <= b``: integrated (``"exact"``) or profile (``"profile"``) log level factor.

    The level carries the uniform prior density ``1 / (2 bound)``.
    """
    s = data
    idx = np.arange(s.n + 1)
    A, B = np.meshgrid(idx, idx, indexing="ij")
    upper = A <= B
    m, mean, rss = s.moments(np.where(upper, A, 0), np.where(upper, B, 0))
    s2 = sigma ** 2
    base = -0.5 * m * (LOG_2PI + math.log(s2)) - rss / (2 * s2) - math.log(2 * bound)
    mm = np.maximum(m, 1)
    if kind == "exact":
        sd = sigma / np.sqrt(mm)
        lev = 0.5 * (LOG_2PI + 2 * np.log(sd)) + log_normal_interval((-bound - mean) / sd, (bound - mean) / sd)
    else:
        clipped = np.clip(mean, -bound, bound)
        lev = -mm * (clipped - mean) ** 2 / (2 * s2)
    table = np.where(m > 0, base + lev, 0.0)
    return np.where(upper, table, -np.inf)


def _log_gap_volume(s, k):
    """Log volume weights of knot placements, as an array over gap tuples (``k - 1`` axes)."""
    lg = s.log_gaps
    if k == 2:
        return lg
    G = lg[:, None] + lg[None, :]
    i = np.arange(len(lg))
    G[i, i] = 2 * lg - math.log(2)
    return np.where(i[:, None] <= i[None, :], G, -np.inf)


def _log_tuple_scores(s, k, table):
    n = s.n
    if k == 1:
        return np.array(table[0, n])
    if k == 2:
        i = np.arange(n + 1)
        return table[0, i] + table[i, n] + _log_gap_volume(s, 2)
    i = np.arange(n + 1)
    with np.errstate(invalid="ignore"):
        out = table[0, i][:, None] + table + table[:, n][None, :] + _log_gap_volume(s, 3)
    return np.where(np.isnan(out), -np.inf, out)


def log_evidence_exact(family, k, data):
    """``log int exp(l_n) d pi_k`` for the change-point family, exact up to rounding.

    Only ``k <= 3`` is supported; the cost is ``O(n^(k-1))``.
    """
    if not 1 <= k <= MAX_LEVELS:
        raise ValueError(f"exact change-point evidence is available for k <= {MAX_LEVELS}")
    s = _Sorted(data)
    table = _segment_table(s, family.sigma, family.bound, "exact")
    # knot increments are uniform on the simplex, density (k - 1)!
    return float(logsumexp(_log_tuple_scores(s, k, table)) + math.lgamma(k))


class SegmentProposal:
    """Importance proposal for change-point parameters built from profile fits.

    Gap tuples are drawn with probability proportional to the profile
    likelihood (levels at their clipped segment means) times the knot volume;
    knots are then uniform within their gaps and levels are normal around the
    segment means, truncated to ``[-bound, bound]``, or uniform for empty
    segments.
    """

    def __init__(self, family, k, z):
        if not 2 <= k <= MAX_LEVELS:
            raise ValueError(f"segment proposals cover 2 <= k <= {MAX_LEVELS}")
        self.family, self.k = family, k
        self.bound, self.sigma = family.bound, family.sigma
        self.s = _Sorted(z)
        scores = _log_tuple_scores(self.s, k, _segment_table(self.s, self.sigma, self.bound, "profile"))
        self.shape = scores.shape
        flat = scores.ravel()
        self.log_p = flat - logsumexp(flat)
        self.p = np.exp(self.log_p)

    def _slices(self, tuples):
        n = self.s.n
        cols = [np.zeros(len(tuples), int), *tuples.T, np.full(len(tuples), n)]
        return np.column_stack(cols)

    def _level_stats(self, edges):
        m, mean, _ = self.s.moments(edges[:, :-1], edges[:, 1:])
        sd = np.where(m > 0, self.sigma / np.sqrt(np.maximum(m, 1)), np.inf)
        return mean, sd

    def sample(self, size, rng):
        k, s = self.k, self.s
        pick = rng.choice(len(self.p), size=size, p=self.p)
        tuples = np.column_stack(np.unravel_index(pick, self.shape))
        lo = np.concatenate([[0.0], s.x])[tuples]
        t = np.sort(lo + rng.uniform(size=tuples.shape) * s.gaps[tuples], axis=1)
        mean, sd = self._level_stats(self._slices(tuples))
        fin = np.isfinite(sd)
        alpha = rng.uniform(-self.bound, self.bound, size=mean.shape)
        m, sdf = mean[fin], sd[fin]
        alpha[fin] = m + sdf * truncated_standard_normal((-self.bound - m) / sdf, (self.bound - m) / sdf, rng)
        w = np.diff(np.concatenate([np.zeros((size, 1)), t], axis=1), axis=1)
        return np.concatenate([alpha, w], axis=1)

    def logpdf(self, V):
        k, s = self.k, self.s
        alpha, w = self.family.split(k, V)
        t = np.cumsum(w, axis=1)
        ok = np.all(np.abs(alpha) <= self.bound, axis=1) & np.all(w >= 0, axis=1) & (t[:, -1] <= 1)
        tuples = np.searchsorted(s.x, np.clip(t, 0, 1), side="left")
        flat = np.ravel_multi_index(tuples.T, self.shape)
        out = self.log_p[flat]
        # uniform knots inside their gaps; two knots sharing a gap are an ordered pair
        for j in range(k - 1):
            out = out - s.log_gaps[tuples[:, j]]
        if k == 3:
            out = out + np.where(tuples[:, 0] == tuples[:, 1], math.log(2), 0.0)
        mean, sd = self._level_stats(self._slices(tuples))
        fin = np.isfinite(sd)
        sdf = np.where(fin, sd, 1.0)
        zsc = (alpha - mean) / sdf
        lt = -0.5 * zsc ** 2 - np.log(sdf) - 0.5 * LOG_2PI - log_normal_interval((-self.bound - mean) / sdf,
                                                                                  (self.bound - mean) / sdf)
        out = out + np.where(fin, lt, -math.log(2 * self.bound)).sum(axis=1)
        return np.where(ok, out, -np.inf)
