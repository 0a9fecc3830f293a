import math

import numpy as np
import pytest
from scipy import stats

from orderid.density import (
    DEFAULT_SCHEME,
    GaussianMixture,
    Normal,
    QuadratureScheme,
    RegressionDensity,
    Uniform,
    integrate,
    kl_divergence,
    l1_distance,
    q_moment,
    v_divergence,
    v_max,
)
from orderid.errors import MomentDiverges, SupportMismatch
from orderid.streams import RandomStream, replication_index

# Frozen oracles from adaptive scipy.integrate.quad at epsrel 1e-13.
MIX = GaussianMixture([0.5, 0.5], [-2.0, 2.0], 1.0)
KL_MIX_NORMAL = 1.367279806263133
V_MIX_NORMAL = 5.427438925913997
KL_NORMAL_MIX = 0.9433404337671587
V_NORMAL_MIX = 2.0385745163419022
# D = l* - l ~ N(1/8, 1/4) under f*: E[D^2 e^{D/2}] + E[D^2] in closed form.
Q_SHIFT_HALF = math.exp(0.09375) * 0.3125 + 0.265625
L1_UNIT_SHIFT = 2 * math.erf(1 / (2 * math.sqrt(2)))

BATTERY = [
    (Normal(0, 1), Normal(1, 1)),
    (Normal(0, 1), Normal(0.3, 1.5)),
    (Normal(-1, 0.7), Normal(0.5, 1.2)),
    (MIX, Normal(0, 1)),
    (Normal(0, 1), MIX),
    (GaussianMixture([0.3, 0.7], [-1, 1.5], [0.8, 1.1]), Normal(0.5, 1.4)),
]


def test_identical_densities_have_zero_divergences():
    f = Normal(0.3, 1.7)
    assert kl_divergence(f, f) == 0.0
    assert v_divergence(f, f) == 0.0
    assert v_max(f, f) == 0.0
    assert q_moment(f, f, 0.7) == 0.0
    assert l1_distance(f, f) == 0.0


def test_gaussian_shift_closed_forms():
    f, g = Normal(0, 1), Normal(1, 1)
    assert kl_divergence(f, g) == pytest.approx(0.5, abs=1e-8)
    assert v_divergence(f, g) == pytest.approx(1.25, abs=1e-8)
    assert v_divergence(g, f) == pytest.approx(1.25, abs=1e-8)
    assert v_max(f, g) == pytest.approx(1.25, abs=1e-8)


def test_gaussian_scale_change_closed_form():
    s1, s2, m = 0.7, 1.3, 0.4
    expected = math.log(s2 / s1) + (s1 ** 2 + m ** 2) / (2 * s2 ** 2) - 0.5
    assert kl_divergence(Normal(0, s1), Normal(m, s2)) == pytest.approx(expected, abs=1e-10)


def test_mixture_against_adaptive_quadrature():
    assert kl_divergence(MIX, Normal()) == pytest.approx(KL_MIX_NORMAL, abs=1e-9)
    assert v_divergence(MIX, Normal()) == pytest.approx(V_MIX_NORMAL, abs=1e-9)
    assert kl_divergence(Normal(), MIX) == pytest.approx(KL_NORMAL_MIX, abs=1e-9)
    assert v_divergence(Normal(), MIX) == pytest.approx(V_NORMAL_MIX, abs=1e-9)


def test_v_max_is_larger_direction():
    f, g = MIX, Normal(0.5, 1.3)
    assert v_max(f, g) == max(v_divergence(f, g), v_divergence(g, f))


def test_q_moment_closed_form():
    assert q_moment(Normal(0, 1), Normal(0.5, 1), 0.5) == pytest.approx(Q_SHIFT_HALF, rel=1e-9)


def test_q_moment_diverges_for_heavy_log_ratio():
    # l* - l grows like 3z^2/8 while f* decays like exp(-z^2/8)
    with pytest.raises(MomentDiverges):
        q_moment(Normal(0, 2), Normal(0, 1), 1.0)


def test_q_moment_requires_positive_alpha():
    with pytest.raises(ValueError):
        q_moment(Normal(), Normal(1, 1), 0.0)


def test_l1_distance_values():
    assert l1_distance(Normal(), Normal(1, 1)) == pytest.approx(L1_UNIT_SHIFT, abs=1e-10)
    assert l1_distance(Uniform(0, 1), Uniform(2, 3)) == 2.0
    assert l1_distance(Uniform(0, 1), Uniform(0.5, 2)) == pytest.approx(4 / 3, abs=1e-12)


def test_support_mismatch():
    f, g = Uniform(0, 1), Uniform(0.5, 2)
    assert kl_divergence(f, g) == math.inf
    assert v_divergence(f, g) == math.inf
    with pytest.raises(SupportMismatch):
        kl_divergence(f, g, strict=True)
    with pytest.raises(SupportMismatch):
        v_max(f, g, strict=True)
    assert kl_divergence(Uniform(0.2, 0.8), Uniform(0, 1)) == pytest.approx(math.log(1 / 0.6), abs=1e-12)


@pytest.mark.parametrize("f, g", BATTERY)
def test_kl_nonnegative_and_jensen(f, g):
    kl = kl_divergence(f, g)
    assert kl >= 0
    assert v_divergence(f, g) >= kl ** 2


@pytest.mark.parametrize("f, g", BATTERY)
def test_node_doubling_is_stable(f, g):
    fine = DEFAULT_SCHEME.refined()
    assert abs(kl_divergence(f, g) - kl_divergence(f, g, fine)) < 1e-6
    assert abs(v_divergence(f, g) - v_divergence(f, g, fine)) < 1e-6
    assert abs(l1_distance(f, g) - l1_distance(f, g, fine)) < 1e-6


def test_densities_integrate_to_one():
    for d in (Normal(1, 2), MIX, Uniform(-1, 3)):
        assert integrate(d.pdf, [d]) == pytest.approx(1.0, abs=1e-10)
    reg = RegressionDensity(lambda x: np.where(x < 0.4, -1.0, 2.0), 0.5, x_breaks=[0.4])
    assert integrate(reg.pdf, [reg]) == pytest.approx(1.0, abs=1e-8)


def test_log_pdf_is_minus_inf_off_support():
    assert Uniform(0, 1).log_pdf(np.array([-0.1, 1.1])).tolist() == [-math.inf, -math.inf]
    reg = RegressionDensity(lambda x: 0 * x, 1.0)
    assert reg.log_pdf(np.array([[1.5, 0.0]]))[0] == -math.inf


def test_regression_gaussian_shift():
    f = RegressionDensity(lambda x: 0 * x, 0.5)
    g = RegressionDensity(lambda x: 0 * x + 0.5, 0.5)
    assert kl_divergence(f, g) == pytest.approx(0.5, abs=1e-8)


@pytest.mark.parametrize("density, cdf", [
    (Normal(0.5, 2.0), stats.norm(0.5, 2.0).cdf),
    (Uniform(-1, 2), stats.uniform(-1, 3).cdf),
    (MIX, lambda x: 0.5 * stats.norm.cdf(x, -2, 1) + 0.5 * stats.norm.cdf(x, 2, 1)),
])
def test_samplers_pass_ks(density, cdf):
    draws = density.sample(100_000, RandomStream(11, 3).generator())
    res = stats.kstest(draws, cdf)
    assert res.statistic < 1.63 / math.sqrt(len(draws))


def test_quadrature_scheme_invariants():
    with pytest.raises(ValueError):
        QuadratureScheme(nodes=8)
    with pytest.raises(ValueError):
        QuadratureScheme(radius=4)
    with pytest.raises(ValueError):
        QuadratureScheme(rule="simpson")
    trap = QuadratureScheme(nodes=4001, rule="trapezoid")
    assert kl_divergence(Normal(), Normal(1, 1), trap) == pytest.approx(0.5, abs=1e-6)


def test_random_stream_reproducible_and_distinct():
    a = RandomStream(7, 5).generator().random(1000)
    b = RandomStream(7, 5).generator().random(1000)
    c = RandomStream(7, 6).generator().random(1000)
    d = RandomStream(8, 5).generator().random(1000)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)
    assert abs(np.corrcoef(a, c)[0, 1]) < 0.15


def test_child_streams_are_stable():
    s = RandomStream(1, replication_index(100, 3))
    x = s.child(0).generator().normal(size=5)
    assert np.array_equal(x, RandomStream(1, replication_index(100, 3)).child(0).generator().normal(size=5))
    assert not np.array_equal(x, s.child(1).generator().normal(size=5))
    assert replication_index(100, 3) != replication_index(3, 100)
