"""Adaptive tensor Gauss-Legendre cubature of ``exp(log_f)`` over a box, in log space."""

from __future__ import annotations

import itertools
import math
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .density import _legendre

_POINTS = 4
_BATCH = 65536


def _rule(dim: int):
    x, w = _legendre(_POINTS)
    x = (x + 1.0) / 2.0
    w = w / 2.0
    nodes = np.array(list(itertools.product(x, repeat=dim)))
    logw = np.array([np.log(w[list(ix)]).sum() for ix in itertools.product(range(_POINTS), repeat=dim)])
    return nodes, logw


def _cell_values(log_f, lo, hi, nodes, logw):
    """Log integral of each cell under the product rule."""
    width = hi - lo
    pts = lo[:, None, :] + width[:, None, :] * nodes[None, :, :]
    flat = pts.reshape(-1, lo.shape[1])
    vals = np.empty(len(flat))
    for s in range(0, len(flat), _BATCH):
        vals[s:s + _BATCH] = log_f(flat[s:s + _BATCH])
    vals = vals.reshape(len(lo), len(nodes))
    with np.errstate(divide="ignore"):
        logvol = np.log(width).sum(axis=1)
    return logsumexp(vals + logw[None, :], axis=1) + logvol


def _split(lo, hi):
    dim = lo.shape[1]
    mid = (lo + hi) / 2
    corners = np.array(list(itertools.product((0, 1), repeat=dim)))
    clo = np.where(corners[None] == 0, lo[:, None, :], mid[:, None, :])
    chi = np.where(corners[None] == 0, mid[:, None, :], hi[:, None, :])
    return clo.reshape(-1, dim), chi.reshape(-1, dim)


def log_integrate(log_f: Callable[[np.ndarray], np.ndarray], lo, hi, cells: int = 8,
                  rel_tol: float = 1e-6, drop: float = 30.0, max_depth: int = 24) -> float:
    """``log int_box exp(log_f)``.

    Starts from ``cells`` cells per axis and bisects every cell whose
    product-rule value disagrees with the sum over its children by more than
    ``rel_tol`` of the running total.  Cells more than ``drop`` nats below the
    total are frozen.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    dim = len(lo)
    nodes, logw = _rule(dim)
    grid = [np.linspace(lo[i], hi[i], cells + 1) for i in range(dim)]
    idx = np.array(list(itertools.product(range(cells), repeat=dim)))
    clo = np.column_stack([grid[i][idx[:, i]] for i in range(dim)])
    chi = np.column_stack([grid[i][idx[:, i] + 1] for i in range(dim)])
    val = _cell_values(log_f, clo, chi, nodes, logw)

    done: list[np.ndarray] = []
    for _ in range(max_depth):
        total = logsumexp(np.concatenate([val, *done])) if len(val) or done else -math.inf
        if not np.isfinite(total):
            return float(total)
        live = val > total - drop
        done.append(val[~live])
        clo, chi, val = clo[live], chi[live], val[live]
        if not len(val):
            break
        klo, khi = _split(clo, chi)
        kval = _cell_values(log_f, klo, khi, nodes, logw).reshape(len(val), -1)
        ksum = logsumexp(kval, axis=1)
        err = np.abs(np.exp(val - total) - np.exp(ksum - total))
        good = err <= rel_tol
        done.append(ksum[good])
        bad = np.repeat(~good, 2 ** dim)
        clo, chi, val = klo[bad], khi[bad], kval[~good].ravel()
        if not len(val):
            break
    return float(logsumexp(np.concatenate([val, *done])))
