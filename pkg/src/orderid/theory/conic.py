"""L1 locally conic coordinates of an overfitted mixture around the true one."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..density import DEFAULT_SCHEME, Normal, QuadratureScheme, abs_integral
from ..errors import DegenerateWeight
from ..families import GaussianMixture, Theta


@dataclass(frozen=True)
class ConicCoords:
    """``(t, gamma_extra, R)`` with the matching permutation.

    ``permutation[j]`` is the (0-based) component of ``theta`` matched with
    true component ``j``; the last entry is the extra component.
    ``R = (rho_1, ..., rho_{k*-1}, r_1, ..., r_{k*})`` with each ``r_j`` of
    length ``d``.
    """

    t: float
    gamma_extra: tuple[float, ...]
    R: tuple[float, ...]
    permutation: tuple[int, ...]
    rho: tuple[float, ...]
    p_extra: float
    norm: float


def match_components(gamma, gamma_star) -> tuple[int, ...]:
    """Greedy matching by smallest ``|gamma*_j - gamma_j'|_1``, ties broken lexicographically in ``(j, j')``."""
    gamma = np.asarray(gamma, dtype=float)
    gamma_star = np.asarray(gamma_star, dtype=float)
    k_star = len(gamma_star)
    dist = np.abs(gamma_star[:, None, :] - gamma[None, :, :]).sum(axis=2)
    sigma = [-1] * k_star
    free_j, free_jp = set(range(k_star)), set(range(len(gamma)))
    for _ in range(k_star):
        best = min((dist[j, jp], j, jp) for j in free_j for jp in free_jp)
        _, j, jp = best
        sigma[j] = jp
        free_j.discard(j)
        free_jp.discard(jp)
    return tuple(sigma) + tuple(sorted(free_jp))


def _support(family, theta_star, gammas):
    mus, sds = family.means_sds(np.asarray(gammas).reshape(-1, family.d))
    return [family.density(theta_star), *[Normal(m, s) for m, s in zip(mus, sds)]]


def _norm(family, theta_star, gamma_extra, rho, r, scheme):
    w_star, g_star = family.split(theta_star.k, theta_star.array)
    w_star, g_star = w_star[0], g_star[0]

    def combination(z):
        total = np.exp(family.component_log_pdf(gamma_extra, z))
        for j in range(theta_star.k):
            total = total + w_star[j] * family.component_grad(g_star[j], z) @ r[j]
            total = total + rho[j] * np.exp(family.component_log_pdf(g_star[j], z))
        return total

    return abs_integral(combination, _support(family, theta_star, np.concatenate([g_star, gamma_extra[None]])),
                        scheme)


def conic_coords(family: GaussianMixture, theta: Theta, theta_star: Theta,
                 scheme: QuadratureScheme = DEFAULT_SCHEME) -> ConicCoords:
    """Coordinates of ``theta`` in ``Theta_{k*+1}`` relative to ``theta_star`` in ``Theta_{k*}``.

    After relabelling by the matching, ``p_theta`` and ``gamma_theta`` are the
    extra weight and component, ``rho_j = (p_j - p*_j)/p_theta``,
    ``r_j = (gamma_j - gamma*_j)/p_theta`` and ``t = p_theta N`` where ``N`` is
    the L1 norm of ``g_{gamma_theta} + sum p*_j r_j . grad g_{gamma*_j} + sum rho_j g_{gamma*_j}``.
    """
    k_star = theta_star.k
    if theta.k != k_star + 1:
        raise ValueError("theta must have exactly one more component than theta_star")
    family.validate(theta)
    family.validate(theta_star)
    w, g = family.split(theta.k, theta.array)
    w, g = w[0], g[0]
    w_star, g_star = family.split(k_star, theta_star.array)
    w_star, g_star = w_star[0], g_star[0]
    perm = match_components(g, g_star)
    w, g = w[list(perm)], g[list(perm)]
    p_extra = float(w[-1])
    if p_extra <= 0:
        raise DegenerateWeight("the extra component has zero weight")
    rho = (w[:k_star] - w_star) / p_extra
    r = (g[:k_star] - g_star) / p_extra
    norm = _norm(family, theta_star, g[-1], rho, r, scheme)
    return ConicCoords(p_extra * norm, tuple(g[-1]), tuple(rho[:-1]) + tuple(r.ravel()), perm,
                       tuple(rho), p_extra, norm)


def conic_inverse(family: GaussianMixture, coords: ConicCoords, theta_star: Theta,
                  scheme: QuadratureScheme = DEFAULT_SCHEME) -> Theta:
    """Rebuild ``theta`` from ``(t, gamma_extra, R)`` and the permutation."""
    k_star, d = theta_star.k, family.d
    w_star, g_star = family.split(k_star, theta_star.array)
    w_star, g_star = w_star[0], g_star[0]
    R = np.asarray(coords.R, dtype=float)
    rho = np.append(R[:k_star - 1], -1.0 - R[:k_star - 1].sum())
    r = R[k_star - 1:].reshape(k_star, d)
    gamma_extra = np.asarray(coords.gamma_extra, dtype=float)
    norm = _norm(family, theta_star, gamma_extra, rho, r, scheme)
    p_extra = coords.t / norm
    w_rel = np.append(w_star + rho * p_extra, p_extra)
    g_rel = np.concatenate([g_star + r * p_extra, gamma_extra[None]])
    w_out, g_out = np.empty_like(w_rel), np.empty_like(g_rel)
    w_out[list(coords.permutation)] = w_rel
    g_out[list(coords.permutation)] = g_rel
    return family.theta(k_star + 1, family.pack(w_out[None], g_out[None])[0])


def conic_t_bound(family: GaussianMixture, theta: Theta, theta_star: Theta,
                  scheme: QuadratureScheme = DEFAULT_SCHEME) -> float:
    """``2 + sum_j p*_j ||(gamma_j - gamma*_j) . grad g_{gamma*_j}||_1`` after matching."""
    k_star = theta_star.k
    w, g = family.split(theta.k, theta.array)
    w_star, g_star = family.split(k_star, theta_star.array)
    w_star, g_star = w_star[0], g_star[0]
    perm = match_components(g[0], g_star)
    g = g[0][list(perm)]
    support = _support(family, theta_star, g)
    total = 2.0
    for j in range(k_star):
        total += w_star[j] * abs_integral(lambda z: family.component_grad(g_star[j], z) @ (g[j] - g_star[j]),
                                          support, scheme)
    return total
