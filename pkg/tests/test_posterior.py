import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from scipy.stats import multivariate_normal

import orderid.posterior as post
from orderid.density import QuadratureScheme
from orderid.errors import DegenerateProposal, DimensionTooHigh, InvalidTheta
from orderid.families import (
    ChangePoints,
    FourierRegression,
    GaussianMixture,
    PriorSpec,
    Theta,
    fourier_basis,
    sample,
)
from orderid.posterior import (
    LogEvidence,
    OrderPosterior,
    all_evidences,
    apply_estimator,
    estimate_bayes_factor,
    estimate_global,
    estimate_local,
    log_bn,
    log_evidence,
    log_evidence_importance,
    log_evidence_quadrature,
    log_likelihood,
    order_posterior,
)
from orderid.streams import RandomStream


def conjugate_log_evidence(points, k, sigma, scale):
    """Marginal of y under y = B theta + e, theta ~ N(0, scale^2 I), e ~ N(0, sigma^2 I)."""
    B = fourier_basis(points[:, 0], k)
    cov = sigma ** 2 * np.eye(len(points)) + scale ** 2 * B @ B.T
    return float(multivariate_normal(np.zeros(len(points)), cov).logpdf(points[:, 1]))


def _evidences(values):
    return [LogEvidence(k + 1, v, "quadrature") for k, v in enumerate(values)]


class TestLogLikelihood:
    def test_unit_density_point(self):
        fam = FourierRegression(sigma=1 / math.sqrt(2 * math.pi))
        th = fam.theta(1, [0.5])
        assert log_likelihood(fam, th, np.array([[0.3, 0.5]])) == pytest.approx(0.0, abs=1e-14)

    def test_additive_over_points(self):
        fam = ChangePoints()
        th = fam.theta(2, [-0.5, 1.0, 0.4])
        data = sample(fam, th, 30, RandomStream(2, 2))
        single = sum(log_likelihood(fam, th, p[None]) for p in data.points)
        assert log_likelihood(fam, th, data) == pytest.approx(single, rel=1e-13)

    def test_mixture_against_extended_precision_product(self):
        getcontext().prec = 50
        fam = GaussianMixture()
        th = fam.theta(2, [0.3, -1.0, 2.5])
        z = sample(fam, th, 20, RandomStream(4, 1)).points
        prod = Decimal(1)
        two_pi = Decimal(2) * Decimal("3.14159265358979323846264338327950288419716939937510")
        for x in z:
            x = Decimal(float(x))
            comp = lambda m: (-(x - Decimal(m)) ** 2 / 2).exp() / two_pi.sqrt()
            prod *= Decimal("0.3") * comp(-1.0) + Decimal("0.7") * comp(2.5)
        assert log_likelihood(fam, th, z) == pytest.approx(float(prod.ln()), rel=1e-13)

    def test_zero_density_point(self):
        fam = ChangePoints()
        th = fam.theta(1, [0.0])
        assert log_likelihood(fam, th, np.array([[1.5, 0.0]])) == -math.inf

    def test_errors(self):
        fam = GaussianMixture()
        with pytest.raises(InvalidTheta):
            log_likelihood(fam, Theta(2, (1.5, 0.0, 0.0), "mixture"), np.zeros(3))
        with pytest.raises(ValueError):
            log_likelihood(fam, fam.theta(1, [0.0]), np.zeros(0))


class TestQuadrature:
    def test_empty_data_gives_zero(self):
        fam = GaussianMixture()
        assert log_evidence_quadrature(fam, PriorSpec(), 2, np.zeros(0)).log == 0.0

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_conjugate_regression(self, k):
        fam = FourierRegression(k_max=3, sigma=0.5)
        prior = PriorSpec(within="gaussian", scale=1.0)
        data = sample(fam, fam.theta(2, [1.0, 0.5]), 60, RandomStream(8, k)).points
        ev = log_evidence_quadrature(fam, prior, k, data)
        assert ev.log == pytest.approx(conjugate_log_evidence(data, k, 0.5, 1.0), abs=1e-4)

    def test_node_doubling_mixture(self):
        fam = GaussianMixture()
        data = sample(fam, fam.theta(2, [0.5, -2.0, 2.0]), 50, RandomStream(1, 2))
        a = log_evidence_quadrature(fam, PriorSpec(), 2, data, QuadratureScheme(256))
        b = log_evidence_quadrature(fam, PriorSpec(), 2, data, QuadratureScheme(512))
        assert abs(a.log - b.log) < 1e-4

    def test_dimension_guard(self):
        fam = GaussianMixture()
        with pytest.raises(DimensionTooHigh):
            log_evidence_quadrature(fam, PriorSpec(), 3, np.zeros(5))

    def test_change_point_exact_rule_against_gap_sum(self):
        # likelihood is constant in t1 between sorted x; levels integrated by 400-node Gauss-Legendre
        fam = ChangePoints(sigma=0.5, bound=2.0)
        data = sample(fam, fam.theta(2, [0.0, 1.0, 0.5]), 40, RandomStream(3, 3)).points
        x, y = data[np.argsort(data[:, 0])].T
        a, wa = np.polynomial.legendre.leggauss(400)
        a, wa = 2.0 * a, 2.0 * wa / 4.0

        def log_level_integral(ys):
            ll = (-0.5 * ((ys[:, None] - a) / 0.5) ** 2 - math.log(0.5 * math.sqrt(2 * math.pi))).sum(axis=0)
            return float(np.log(np.sum(wa * np.exp(ll - ll.max()))) + ll.max())

        edges = np.concatenate([[0.0], x, [1.0]])
        terms = [math.log(edges[i + 1] - edges[i]) + log_level_integral(y[:i]) + log_level_integral(y[i:])
                 for i in range(len(edges) - 1)]
        oracle = float(np.logaddexp.reduce(terms))
        assert log_evidence_quadrature(fam, PriorSpec(), 2, data).log == pytest.approx(oracle, abs=1e-8)

    def test_deterministic(self):
        fam = FourierRegression()
        data = sample(fam, fam.theta(1, [0.5]), 20, RandomStream(1, 1))
        assert log_evidence_quadrature(fam, PriorSpec(), 2, data) == log_evidence_quadrature(fam, PriorSpec(), 2, data)


class TestImportance:
    def test_conjugate_regression(self):
        fam = FourierRegression(k_max=3, sigma=0.5)
        prior = PriorSpec(within="gaussian", scale=1.0)
        data = sample(fam, fam.theta(2, [1.0, 0.5]), 60, RandomStream(8, 2)).points
        ev = log_evidence_importance(fam, prior, 2, data, draws=4000, stream=RandomStream(1, 1))
        assert ev.method == "importance" and ev.stderr > 0
        assert abs(ev.log - conjugate_log_evidence(data, 2, 0.5, 1.0)) < 3 * ev.stderr

    def test_mixture_matches_quadrature(self):
        fam = GaussianMixture()
        data = sample(fam, fam.theta(2, [0.5, -2.0, 2.0]), 80, RandomStream(5, 5)).points
        q = log_evidence_quadrature(fam, PriorSpec(), 2, data)
        s = log_evidence_importance(fam, PriorSpec(), 2, data, draws=3000, stream=RandomStream(5, 6))
        assert abs(q.log - s.log) < 3 * s.stderr

    def test_reproducible_from_stream(self):
        fam = ChangePoints()
        data = sample(fam, fam.theta(2, [0.0, 1.0, 0.5]), 40, RandomStream(3, 3)).points
        a = log_evidence_importance(fam, PriorSpec(), 2, data, draws=1000, stream=RandomStream(9, 4))
        b = log_evidence_importance(fam, PriorSpec(), 2, data, draws=1000, stream=RandomStream(9, 4))
        c = log_evidence_importance(fam, PriorSpec(), 2, data, draws=1000, stream=RandomStream(9, 5))
        assert a == b
        assert a.log != c.log

    def test_draws_floor(self):
        with pytest.raises(ValueError):
            log_evidence_importance(GaussianMixture(), PriorSpec(), 1, np.zeros(3), draws=500)

    def test_degenerate_hessian_falls_back_to_prior(self, monkeypatch):
        def broken(target, u):
            raise DegenerateProposal("forced")

        monkeypatch.setattr(post, "_laplace_covariance", broken)
        fam = FourierRegression(sigma=0.5)
        data = sample(fam, fam.theta(1, [0.5]), 10, RandomStream(1, 1)).points
        with pytest.warns(RuntimeWarning, match="prior sampling"):
            ev = log_evidence_importance(fam, PriorSpec(), 1, data, draws=2000, stream=RandomStream(2, 2))
        assert "degenerate-proposal" in ev.flags
        q = log_evidence_quadrature(fam, PriorSpec(), 1, data)
        assert abs(ev.log - q.log) < 3 * ev.stderr + 1e-3

    def test_allocation_density_at_zero_weight(self):
        from orderid.allocation import AllocationProposal

        fam = GaussianMixture()
        data = sample(fam, fam.theta(2, [0.5, -2.0, 2.0]), 50, RandomStream(4, 4)).points
        prop = AllocationProposal(fam, 3, data, np.random.default_rng(1), chains=4, sweeps=10, burn=2, thin=2)
        assert np.any(prop.a == 1.0)  # an empty slot, where w**(a - 1) is 1 even at w = 0
        V = fam.pack(np.array([[0.0, 0.5, 0.5], [0.2, 0.3, 0.5]]), np.array([[[-2.0], [0.0], [2.0]]] * 2))
        lp = prop.logpdf(V)
        assert not np.any(np.isnan(lp))
        assert np.isfinite(lp[1])

    def test_method_dispatch(self):
        fam = GaussianMixture()
        data = sample(fam, fam.theta(1, [0.0]), 20, RandomStream(1, 1)).points
        assert log_evidence(fam, PriorSpec(), 1, data, method="auto").method == "quadrature"
        assert log_evidence(fam, PriorSpec(), 1, data, method="hybrid").method == "quadrature"
        assert log_evidence(fam, PriorSpec(), 3, data, method="auto", draws=1000).method == "importance"
        with pytest.raises(ValueError):
            log_evidence(fam, PriorSpec(), 1, data, method="magic")

    def test_all_evidences_cover_orders(self):
        fam = FourierRegression(k_max=3)
        data = sample(fam, fam.theta(1, [0.5]), 20, RandomStream(1, 1)).points
        evs = all_evidences(fam, PriorSpec(), data)
        assert [e.k for e in evs] == [1, 2, 3]


class TestOrderPosterior:
    def test_single_order(self):
        assert order_posterior(_evidences([-3.0]), PriorSpec()).as_dict() == {1: 1.0}

    def test_equal_evidences(self):
        assert order_posterior(_evidences([-5.0] * 4), PriorSpec()).probs == pytest.approx([0.25] * 4)

    def test_shift_invariance(self):
        values = np.array([-120.0, -118.5, -119.0])
        a = order_posterior(_evidences(values), PriorSpec()).probs
        b = order_posterior(_evidences(values + 1234.5), PriorSpec()).probs
        assert np.allclose(a, b, rtol=1e-12)

    def test_order_prior_weights(self):
        p = order_posterior(_evidences([0.0, 0.0]), PriorSpec(order_weights=(0.25, 0.75)))
        assert p.probs == pytest.approx([0.25, 0.75])

    def test_large_gaps_stay_normalised(self):
        p = order_posterior(_evidences([-1000.0, 0.0, -2000.0]), PriorSpec())
        assert sum(p.probs) == pytest.approx(1.0, abs=1e-12)
        assert p[2] == 1.0

    def test_needs_every_order(self):
        with pytest.raises(ValueError):
            order_posterior([LogEvidence(1, 0.0, "quadrature"), LogEvidence(3, 0.0, "quadrature")], PriorSpec())

    def test_invariants(self):
        with pytest.raises(ValueError):
            OrderPosterior((0.5, 0.6))
        with pytest.raises(ValueError):
            LogEvidence(1, math.inf, "quadrature")
        with pytest.raises(ValueError):
            LogEvidence(1, 0.0, "importance", -1.0)


class TestEstimators:
    @pytest.mark.parametrize("probs, g, l", [
        ({1: 0.2, 2: 0.5, 3: 0.3}, 2, 2),
        ({1: 0.5, 2: 0.5}, 1, 1),
        ({1: 0.3, 2: 0.25, 3: 0.45}, 3, 1),
        ({1: 0.1, 2: 0.2, 3: 0.7}, 3, 3),
    ])
    def test_examples(self, probs, g, l):
        p = OrderPosterior.from_mapping(probs)
        assert estimate_global(p) == g
        assert estimate_local(p) == l

    def test_bayes_factor_monotone_decreasing(self):
        assert estimate_bayes_factor(_evidences([-1.0, -2.0, -3.0]), PriorSpec()) == 1

    def test_bayes_factor_tie_goes_on(self):
        # Bayes factor exactly one is not "less than one"; the local estimator stops at the tie
        evs = _evidences([-1.0, -1.0, -3.0])
        assert estimate_bayes_factor(evs, PriorSpec()) == 2
        assert estimate_local(order_posterior(evs, PriorSpec())) == 1

    def test_property_local_le_global(self):
        rng = np.random.default_rng(3)
        for _ in range(2000):
            k = rng.integers(1, 7)
            p = rng.dirichlet(np.full(k, 0.5))
            post_ = OrderPosterior(tuple(p / p.sum()))
            assert estimate_local(post_) <= estimate_global(post_)

    def test_unimodal_posteriors_agree(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            k = int(rng.integers(2, 7))
            mode = int(rng.integers(0, k))
            up = np.sort(rng.uniform(size=mode + 1))
            down = np.sort(rng.uniform(size=k - mode - 1))[::-1] * up[-1]
            p = np.concatenate([up, down])
            post_ = OrderPosterior(tuple(p / p.sum()))
            assert estimate_local(post_) == estimate_global(post_) == mode + 1

    def test_bayes_factor_equals_local_without_ties(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            evs = _evidences(rng.normal(0, 3, size=int(rng.integers(1, 6))))
            assert estimate_bayes_factor(evs, PriorSpec()) == estimate_local(order_posterior(evs, PriorSpec()))

    def test_estimators_are_pure(self):
        p = OrderPosterior.from_mapping({1: 0.3, 2: 0.25, 3: 0.45})
        before = p.probs
        assert [estimate_local(p), estimate_global(p)] == [estimate_local(p), estimate_global(p)]
        assert p.probs == before

    def test_apply_estimator(self):
        evs = _evidences([0.0, 1.0, 0.5])
        assert apply_estimator("global", evs, PriorSpec()) == 2
        assert apply_estimator("local", evs, PriorSpec()) == 2
        assert apply_estimator("bayes-factor", evs, PriorSpec()) == 2
        with pytest.raises(ValueError):
            apply_estimator("median", evs, PriorSpec())


class TestLogBn:
    def setup_method(self):
        self.fam = FourierRegression(sigma=0.5)
        self.star = self.fam.theta(2, [1.0, 0.5])
        self.data = sample(self.fam, self.star, 100, RandomStream(6, 1)).points

    def test_definition(self):
        ev = log_evidence(self.fam, PriorSpec(), 2, self.data)
        expected = math.log(1 / 3) + ev.log - log_likelihood(self.fam, self.star, self.data)
        assert log_bn(self.fam, PriorSpec(), 2, self.data, self.star) == pytest.approx(expected, rel=1e-13)

    def test_monotone_in_order_prior(self):
        low = log_bn(self.fam, PriorSpec(order_weights=(0.6, 0.2, 0.2)), 2, self.data, self.star)
        high = log_bn(self.fam, PriorSpec(order_weights=(0.2, 0.6, 0.2)), 2, self.data, self.star)
        assert high > low

    def test_laplace_growth(self):
        # E[-log B_n(k*)] = (D/2) log n + O(1): slope over n in {200, 400, 800}
        means = []
        for n in (200, 400, 800):
            vals = [-log_bn(self.fam, PriorSpec(), 2, sample(self.fam, self.star, n, RandomStream(9, (n << 32) | r)),
                            self.star, method="quadrature") for r in range(150)]
            means.append(np.mean(vals))
        slope = np.polyfit(np.log([200, 400, 800]), means, 1)[0]
        assert slope == pytest.approx(1.0, rel=0.25)
