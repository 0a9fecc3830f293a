import itertools
import math

import numpy as np
import pytest
from scipy.stats import norm

from orderid.density import integrate, kl_divergence
from orderid.errors import InvalidTheta
from orderid.families import (
    FAMILIES,
    ChangePoints,
    FourierRegression,
    GaussianMixture,
    PriorSpec,
    Theta,
    density_at,
    effective_dimensions,
    fourier_basis,
    log_prior_density,
    log_selberg_half,
    model_dimension,
    predicted_exponent,
    sample,
)
from orderid.streams import RandomStream

RNG_SEED = 20240611


def _gl(lo, hi, n):
    t, w = np.polynomial.legendre.leggauss(n)
    return lo + 0.5 * (hi - lo) * (t + 1), 0.5 * (hi - lo) * w


def _random_theta(family, k, rng):
    v = family.sample_prior(k, 1, rng, PriorSpec(within="uniform"))[0]
    return family.theta(k, v)


FAMILY_CASES = [
    FourierRegression(k_max=4, sigma=0.5),
    ChangePoints(k_max=4, sigma=0.5),
    GaussianMixture(k_max=4),
    GaussianMixture(k_max=4, component="location-scale"),
]


class TestDensityAt:
    def test_mixture_single_component(self):
        fam = GaussianMixture(sigma=1.3)
        th = fam.theta(1, [0.7])
        assert density_at(fam, th, 0.2) == pytest.approx(norm.pdf(0.2, 0.7, 1.3), rel=1e-13)

    def test_mixture_at_zero(self):
        fam = GaussianMixture()
        th = fam.theta(2, [0.5, -2.0, 2.0])
        expected = 0.5 * norm.pdf(0, -2, 1) + 0.5 * norm.pdf(0, 2, 1)
        assert density_at(fam, th, 0.0) == pytest.approx(expected, rel=1e-13)

    def test_change_points_selects_segment(self):
        fam = ChangePoints(sigma=0.5)
        th = fam.theta(2, [0.0, 1.0, 0.5])
        for y in (-0.3, 1.0, 1.8):
            assert density_at(fam, th, [0.7, y]) == pytest.approx(norm.pdf(y, 1.0, 0.5), rel=1e-13)
            assert density_at(fam, th, [0.2, y]) == pytest.approx(norm.pdf(y, 0.0, 0.5), rel=1e-13)

    def test_fourier_regression_mean(self):
        fam = FourierRegression(sigma=0.5)
        th = fam.theta(3, [1.0, 0.5, -0.25])
        x = 0.3
        phi = 1.0 + 0.5 * math.sqrt(2) * math.cos(2 * math.pi * x) - 0.25 * math.sqrt(2) * math.sin(2 * math.pi * x)
        assert density_at(fam, th, [x, 0.4]) == pytest.approx(norm.pdf(0.4, phi, 0.5), rel=1e-12)

    def test_fourier_basis_orthonormal(self):
        x, w = _gl(0.0, 1.0, 64)
        B = fourier_basis(x, 7)
        assert np.allclose(B.T @ (w[:, None] * B), np.eye(7), atol=1e-12)

    @pytest.mark.parametrize("family, k, vector", [
        (GaussianMixture(), 2, [1.2, 0.0, 0.0]),
        (GaussianMixture(), 2, [0.5, -5.0, 0.0]),
        (GaussianMixture(), 2, [0.5, 0.0]),
        (FourierRegression(bound=2.0), 1, [3.0]),
        (ChangePoints(), 2, [0.0, 1.0, -0.1]),
        (ChangePoints(), 3, [0.0, 1.0, 0.0, 0.7, 0.6]),
    ])
    def test_invalid_theta(self, family, k, vector):
        with pytest.raises(InvalidTheta):
            family.theta(k, vector)

    def test_wrong_family_tag(self):
        with pytest.raises(InvalidTheta):
            density_at(GaussianMixture(), Theta(1, (0.0,), "change-points"), 0.0)

    @pytest.mark.parametrize("family", FAMILY_CASES, ids=lambda f: f"{f.kind}-{getattr(f, 'd', '')}")
    def test_integrates_to_one(self, family):
        rng = np.random.default_rng(RNG_SEED)
        for k in (1, 2, 3):
            dens = family.density(_random_theta(family, k, rng))
            assert integrate(dens.pdf, [dens]) == pytest.approx(1.0, abs=1e-6)

    def test_label_permutation_invariance(self):
        fam = GaussianMixture(k_max=4, component="location-scale")
        p = np.array([0.2, 0.3, 0.1, 0.4])
        g = np.array([[-1.0, 0.5], [0.3, 2.0], [2.5, 1.0], [-3.0, 3.0]])
        z = np.linspace(-8, 8, 101)
        ref = density_at(fam, fam.theta(4, fam.pack(p[None], g[None])[0]), z)
        for perm in itertools.permutations(range(4)):
            perm = list(perm)
            th = fam.theta(4, fam.pack(p[None, perm], g[None, perm])[0])
            assert np.allclose(density_at(fam, th, z), ref, rtol=1e-13, atol=0)


class TestNesting:
    @pytest.mark.parametrize("family", FAMILY_CASES, ids=lambda f: f"{f.kind}-{getattr(f, 'd', '')}")
    def test_embed_preserves_density(self, family):
        rng = np.random.default_rng(RNG_SEED + 1)
        if family.sample_dim == 1:
            z = np.linspace(-10, 10, 201)
        else:
            X, Y = np.meshgrid(np.linspace(0, 0.999, 51), np.linspace(-4, 4, 41))
            z = np.column_stack([X.ravel(), Y.ravel()])
        for k in (1, 2, 3):
            th = _random_theta(family, k, rng)
            up = family.embed(th)
            assert up.k == k + 1
            family.validate(up)
            assert np.allclose(density_at(family, up, z), density_at(family, th, z), rtol=1e-12, atol=1e-300)

    def test_mixture_zero_weight_also_nests(self):
        fam = GaussianMixture()
        z = np.linspace(-6, 6, 61)
        th = fam.theta(1, [0.4])
        zero = fam.theta(2, [1.0, 0.4, 3.0])
        assert np.allclose(density_at(fam, zero, z), density_at(fam, th, z), rtol=1e-13)

    def test_regression_zero_coefficient(self):
        fam = FourierRegression(k_max=4)
        th = fam.theta(2, [0.3, -0.2])
        assert fam.embed(th).vector == (0.3, -0.2, 0.0)


class TestSampling:
    def test_zero_size_rejected(self):
        fam = GaussianMixture()
        with pytest.raises(ValueError):
            sample(fam, fam.theta(1, [0.0]), 0, RandomStream(1, 1))

    def test_invalid_theta_rejected(self):
        fam = GaussianMixture()
        with pytest.raises(InvalidTheta):
            sample(fam, Theta(2, (2.0, 0.0, 0.0), "mixture"), 10, RandomStream(1, 1))

    def test_reproducible_with_provenance(self):
        fam = ChangePoints()
        th = fam.theta(2, [0.0, 1.0, 0.5])
        a = sample(fam, th, 50, RandomStream(3, 9))
        b = sample(fam, th, 50, RandomStream(3, 9))
        assert np.array_equal(a.points, b.points)
        assert (a.seed, a.index, a.theta) == (3, 9, th)

    def test_regression_coefficients_by_projection(self):
        # E[y t_j(x)] = theta_j for x ~ U[0, 1] and an orthonormal basis
        fam = FourierRegression(sigma=0.5)
        th = fam.theta(3, [1.0, 0.5, -0.7])
        pts = sample(fam, th, 100_000, RandomStream(5, 1)).points
        proj = pts[:, 1:2] * fourier_basis(pts[:, 0], 3)
        se = proj.std(axis=0, ddof=1) / math.sqrt(len(pts))
        assert np.all(np.abs(proj.mean(axis=0) - th.array) < 4 * se)

    def test_regression_slice_mean(self):
        fam = FourierRegression(sigma=0.5)
        th = fam.theta(2, [1.0, 0.5])
        pts = sample(fam, th, 100_000, RandomStream(5, 2)).points
        resid = pts[:, 1] - fam.phi(th.array)(pts[:, 0])
        assert abs(resid.mean()) < 4 * resid.std(ddof=1) / math.sqrt(len(resid))

    def test_mixture_component_frequencies(self):
        # components 8 sds apart, so the sign identifies the label up to ~3e-5
        fam = GaussianMixture()
        th = fam.theta(2, [0.3, -4.0, 4.0])
        z = sample(fam, th, 100_000, RandomStream(5, 3)).points
        frac = float(np.mean(z < 0))
        assert abs(frac - 0.3) < 4 * math.sqrt(0.3 * 0.7 / len(z))


class TestPriors:
    def test_uniform_box_constant(self):
        fam = FourierRegression(bound=2.0)
        assert log_prior_density(fam, PriorSpec(), fam.theta(2, [0.1, 0.2])) == pytest.approx(-2 * math.log(4.0))
        assert log_prior_density(fam, PriorSpec(), Theta(2, (3.0, 0.0), fam.kind)) == -math.inf

    def test_repulsive_prior_vanishes_at_coincident_locations(self):
        fam = GaussianMixture()
        assert log_prior_density(fam, PriorSpec(), fam.theta(2, [0.5, 1.0, 1.0])) == -math.inf
        assert math.isfinite(log_prior_density(fam, PriorSpec(), fam.theta(2, [0.5, 1.0, 1.1])))

    def test_repulsive_prior_normalised_on_theta2(self):
        fam = GaussianMixture(bound=4.0)
        p, wp = _gl(0.0, 1.0, 8)
        mu1, w1 = _gl(-4.0, 4.0, 120)
        total = 0.0
        for m, wm in zip(mu1, w1):
            a, wa = _gl(-4.0, m, 60)
            b, wb = _gl(m, 4.0, 60)
            mu2, w2 = np.concatenate([a, b]), np.concatenate([wa, wb])
            P, M2 = np.meshgrid(p, mu2, indexing="ij")
            V = np.column_stack([P.ravel(), np.full(P.size, m), M2.ravel()])
            lp = fam.log_prior_batch(2, V, PriorSpec())
            total += wm * np.sum(np.outer(wp, w2).ravel() * np.exp(lp))
        assert total == pytest.approx(1.0, abs=1e-3)

    def test_selberg_constant_against_brute_force(self):
        # int_[0,1]^3 prod |x_i - x_j| dx by Monte Carlo with 2e6 points
        rng = np.random.default_rng(1)
        x = rng.uniform(size=(2_000_000, 3))
        vals = np.abs(x[:, 0] - x[:, 1]) * np.abs(x[:, 0] - x[:, 2]) * np.abs(x[:, 1] - x[:, 2])
        se = vals.std() / math.sqrt(len(vals))
        assert abs(math.exp(log_selberg_half(3)) - vals.mean()) < 4 * se
        assert math.exp(log_selberg_half(2)) == pytest.approx(1 / 3, rel=1e-12)

    def test_change_point_prior_normalised(self):
        fam = ChangePoints(bound=2.0)
        rng = np.random.default_rng(2)
        # box volume for k = 3 levels and increments (w1, w2) in [0, 1]^2
        V = np.column_stack([rng.uniform(-2, 2, (400_000, 3)), rng.uniform(0, 1, (400_000, 2))])
        dens = np.exp(fam.log_prior_batch(3, V, PriorSpec()))
        est = dens.mean() * 4.0 ** 3
        assert est == pytest.approx(1.0, abs=4 * dens.std() * 64 / math.sqrt(len(V)))

    def test_location_scale_uniform_prior_normalised(self):
        fam = GaussianMixture(component="location-scale", bound=2.0, var_bound=3.0)
        th = fam.theta(1, [0.0, 1.0])
        assert log_prior_density(fam, PriorSpec(), th) == pytest.approx(-math.log(4.0 * (3.0 - 1 / 3)))

    def test_prior_sampler_matches_density_support(self):
        fam = GaussianMixture()
        rng = np.random.default_rng(3)
        V = fam.sample_prior(3, 500, rng, PriorSpec())
        assert np.all(np.isfinite(fam.log_prior_batch(3, V, PriorSpec())))

    def test_order_prior(self):
        assert PriorSpec().order_prior(4).tolist() == [0.25] * 4
        with pytest.raises(ValueError):
            PriorSpec(order_weights=(0.5, 0.6))
        with pytest.raises(ValueError):
            PriorSpec(order_weights=(0.5, 0.5)).order_prior(3)


class TestDimensions:
    def test_model_dimension(self):
        assert model_dimension(GaussianMixture(), 2) == 3
        assert model_dimension(GaussianMixture(component="location-scale"), 3) == 8
        assert model_dimension(FourierRegression(), 4) == 4
        assert model_dimension(ChangePoints(), 3) == 5

    def test_effective_dimensions(self):
        assert effective_dimensions(GaussianMixture(component="location-scale"), 2) == (6, 5, 0)
        assert effective_dimensions(ChangePoints(), 2, tau=0.25) == (5, 4.5, 0)
        assert effective_dimensions(FourierRegression(), 2) == (3, 2, 0)
        assert effective_dimensions(GaussianMixture(), 2) == (4, 3, 0)

    def test_predicted_exponent_for_mixtures(self):
        assert predicted_exponent(GaussianMixture(), 2) == 0.5

    def test_family_registry(self):
        assert set(FAMILIES) == {"fourier-regression", "change-points", "mixture"}


def test_regression_kl_equals_coefficient_distance():
    fam = FourierRegression(k_max=4, sigma=0.5)
    star = fam.theta(2, [1.0, 0.5])
    rng = np.random.default_rng(RNG_SEED + 2)
    for _ in range(5):
        th = _random_theta(fam, 3, rng)
        diff = th.array - np.append(star.array, 0.0)
        kl = kl_divergence(fam.density(star), fam.density(th))
        assert 2 * fam.sigma ** 2 * kl == pytest.approx(float(diff @ diff), abs=1e-6)
