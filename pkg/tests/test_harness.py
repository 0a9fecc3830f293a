import math

import numpy as np
import pytest

import orderid.harness as harness
from orderid.errors import InsufficientData
from orderid.families import ChangePoints, GaussianMixture, predicted_exponent
from orderid.harness import (
    ErrorCurve,
    ErrorRecord,
    ExperimentConfig,
    RateFit,
    default_workers,
    fit_exponential_rate,
    fit_polylog_rate,
    replicate,
    run_error_experiment,
)

BIG = 10 ** 15


def square(key):
    return key * key


def count_one(key):
    return 1


def fail_on_odd(key):
    if key % 2:
        raise RuntimeError(f"odd key {key}")
    return key


def _curve(n_grid, freqs, kind="under", reps=BIG):
    records = []
    for n, f in zip(n_grid, freqs):
        c = int(round(f * reps))
        under, over = (c, 0) if kind == "under" else (0, c)
        records.append(ErrorRecord(n, reps, under, over, reps - c))
    return ErrorCurve(tuple(records), "synthetic")


def _small_config(**kw):
    base = dict(family="fourier-regression", theta_star=(1.0, 0.5), k_star=2, n_grid=(20, 40),
                replications=3, family_options={"sigma": 0.5})
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfig:
    @pytest.mark.parametrize("kw", [
        {"n_grid": (40, 20)},
        {"n_grid": ()},
        {"replications": 0},
        {"k_star": 4},
        {"estimator": "mean"},
        {"evidence_method": "guess"},
        {"family": "ar"},
        {"draws": 10},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            _small_config(**kw)

    def test_round_trip_and_fingerprint(self):
        cfg = _small_config()
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again == cfg and again.fingerprint == cfg.fingerprint
        assert _small_config(seed=7).fingerprint != cfg.fingerprint

    def test_family_options_order_does_not_matter(self):
        a = _small_config(family_options={"sigma": 0.5, "bound": 2.0})
        b = _small_config(family_options={"bound": 2.0, "sigma": 0.5})
        assert a.fingerprint == b.fingerprint


class TestReplicate:
    def test_serial_equals_parallel(self):
        keys = list(range(200))
        assert replicate(square, keys, workers=1) == replicate(square, keys, workers=3)

    def test_key_order_irrelevant(self):
        keys = list(range(50))
        shuffled = list(np.random.default_rng(0).permutation(keys))
        a = replicate(square, keys)
        b = replicate(square, [int(k) for k in shuffled])
        assert a == b and list(b.results) == keys

    def test_counting(self):
        out = replicate(count_one, range(10_000), workers=2)
        assert sum(out.results.values()) == 10_000

    def test_failures_collected(self):
        out = replicate(fail_on_odd, range(10), workers=2)
        assert sorted(out.results) == [0, 2, 4, 6, 8]
        assert sorted(out.failures) == [1, 3, 5, 7, 9]
        assert "RuntimeError" in out.failures[3]

    def test_duplicate_keys_rejected(self):
        with pytest.raises(ValueError):
            replicate(square, [1, 1])

    def test_default_workers(self, monkeypatch):
        monkeypatch.delenv("ORDERID_WORKERS", raising=False)
        assert default_workers() == 1
        monkeypatch.setenv("ORDERID_WORKERS", "3")
        assert default_workers() == 3
        monkeypatch.setenv("ORDERID_WORKERS", "0")
        with pytest.raises(ValueError):
            default_workers()


class TestExperiment:
    def test_single_record(self):
        curve = run_error_experiment(_small_config(n_grid=(30,), replications=1))
        (rec,) = curve.records
        assert rec.n == 30 and rec.replications == 1
        assert rec.under_count + rec.over_count + rec.correct_count == 1

    def test_deterministic(self):
        cfg = _small_config()
        assert run_error_experiment(cfg) == run_error_experiment(cfg)

    def test_grid_extension_keeps_replications(self):
        short = run_error_experiment(_small_config(n_grid=(20,)))
        longer = run_error_experiment(_small_config(n_grid=(20, 40)))
        assert [o for o in longer.outcomes if o[0] == 20] == list(short.outcomes)

    def test_local_never_exceeds_global(self):
        curve = run_error_experiment(_small_config(n_grid=(10, 30), replications=6))
        assert all(loc <= glob for _, _, glob, loc, _ in curve.outcomes)

    def test_retally(self):
        curve = run_error_experiment(_small_config(replications=4))
        local = curve.retally("local")
        assert local.estimator == "local"
        for rec in local.records:
            est = [o[3] for o in curve.outcomes if o[0] == rec.n]
            assert rec.under_count == sum(e < 2 for e in est)

    def test_failures_are_excluded(self, monkeypatch):
        real = harness.run_replication

        def flaky(config, key):
            if key == (20, 1):
                raise FloatingPointError("boom")
            return real(config, key)

        monkeypatch.setattr(harness, "run_replication", flaky)
        curve = run_error_experiment(_small_config())
        rec20 = curve.records[0]
        assert rec20.replications == 2 and rec20.excluded == 1
        assert curve.failures == ((20, 1, "FloatingPointError: boom"),)

    def test_counts_must_sum(self):
        with pytest.raises(ValueError):
            ErrorRecord(10, 5, 1, 1, 1)


class TestFits:
    def test_exponential_exact(self):
        n = np.array([10, 20, 30, 40])
        fit = fit_exponential_rate(_curve(n, 0.5 * np.exp(-0.1 * n)), "under")
        assert fit.coefficients["c2"] == pytest.approx(0.1, abs=1e-9)
        assert fit.coefficients["log_c1"] == pytest.approx(math.log(0.5), abs=1e-7)
        assert fit.r_squared == pytest.approx(1.0)
        assert fit.exponent == fit.coefficients["c2"]

    def test_polylog_exact(self):
        n = np.array([50, 100, 200, 400, 800])
        fit = fit_polylog_rate(_curve(n, n ** -0.5, kind="over"), "over", 4, 3)
        assert fit.coefficients["c"] == pytest.approx(0.5, abs=1e-9)
        assert fit.coefficients["b"] == pytest.approx(0.0, abs=1e-8)
        assert fit.predicted_exponent == 0.5

    def test_all_zero_counts(self):
        curve = _curve([50, 100, 200], [0.0, 0.0, 0.0], reps=100)
        with pytest.raises(InsufficientData):
            fit_exponential_rate(curve, "under")
        with pytest.raises(InsufficientData):
            fit_polylog_rate(curve, "over", 4, 3)

    def test_two_nonzero_points_are_not_enough(self):
        curve = _curve([50, 100, 200, 400], [0.3, 0.1, 0.0, 0.0], reps=100)
        with pytest.raises(InsufficientData):
            fit_exponential_rate(curve, "under")

    def test_continuity_correction(self):
        curve = _curve([50, 100, 200, 400], [0.3, 0.1, 0.02, 0.0], reps=100)
        fit = fit_exponential_rate(curve, "under")
        y = np.log((np.array([30, 10, 2, 0]) + 0.5) / 101)
        slope, icept = np.polyfit([50, 100, 200, 400], y, 1)
        assert fit.coefficients["c2"] == pytest.approx(-slope, rel=1e-10)
        raw = fit_exponential_rate(curve, "under", correction=False)
        assert raw.points == 3

    def test_weighted_variant(self):
        curve = _curve([50, 100, 200, 400], [0.3, 0.1, 0.05, 0.01], reps=200)
        plain = fit_exponential_rate(curve, "under")
        weighted = fit_exponential_rate(curve, "under", weighted=True)
        assert weighted.weighted and not plain.weighted
        assert weighted.coefficients != plain.coefficients
        assert 0 <= weighted.r_squared <= 1

    def test_predicted_exponents(self):
        assert predicted_exponent(GaussianMixture(), 2) == 0.5
        assert predicted_exponent(ChangePoints(tau=0.25), 2) == pytest.approx(0.25)

    def test_rate_fit_validates_r2(self):
        with pytest.raises(ValueError):
            RateFit("exponential", {"log_c1": 0.0, "c2": 0.1}, 1.5, 3)
