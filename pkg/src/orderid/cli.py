"""Command-line entry point: ``orderid <subcommand> [--config PATH] [--seed N] [--workers N] [--out DIR]``."""

from __future__ import annotations

import argparse
import math
import os
import re
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import theory
from .config import RunConfig, parse_config, serialize
from .density import GaussianMixture as MixtureDensity, Normal, QuadratureScheme, Uniform
from .density import kl_divergence, l1_distance, q_moment, v_divergence, v_max
from .errors import ConfigError, InsufficientData, OrderIdError, ValidationError
from .families import FAMILIES, FourierRegression, GaussianMixture, PriorSpec, effective_dimensions
from .harness import ExperimentConfig, fit_exponential_rate, fit_polylog_rate, run_error_experiment
from .posterior import ESTIMATORS, all_evidences, apply_estimator, order_posterior
from .report import curve_rows, CURVE_HEADER, emit_plot, fit_dict, versions, write_csv, write_json
from .streams import RandomStream

SUBCOMMANDS = ("divergence", "posterior", "estimate", "experiment", "theory-check", "entropy")
DEFAULT_SEED = 42
BUNDLED = "bundled:"


# ---------------------------------------------------------------------------
# inputs


def parse_density(text: str):
    """``normal(mean, sd)``, ``uniform(lo, hi)`` or ``mixture(w:mean:sd, ...)``."""
    m = re.fullmatch(r"\s*(normal|uniform|mixture)\s*\((.*)\)\s*", text)
    if not m:
        raise ValidationError(f"cannot read density {text!r}")
    kind, body = m.groups()
    try:
        if kind == "mixture":
            comps = [tuple(float(v) for v in part.split(":")) for part in body.split(",")]
            if any(len(c) != 3 for c in comps):
                raise ValueError
            w, mu, sd = zip(*comps)
            return MixtureDensity(w, mu, sd)
        args = [float(v) for v in body.split(",")]
        if len(args) != 2:
            raise ValueError
        return Normal(*args) if kind == "normal" else Uniform(*args)
    except ValueError as exc:
        raise ValidationError(f"bad parameters in density {text!r}: {exc}") from None


def load_points(path: str) -> np.ndarray:
    """Numeric CSV with a header; one column (``z``) or two (``x, y``)."""
    if path.startswith(BUNDLED):
        text = resources.files("orderid").joinpath("data", path[len(BUNDLED):] + ".csv").read_text()
    else:
        text = Path(path).read_text(encoding="utf-8")
    rows = [line.split(",") for line in text.strip().splitlines()[1:] if line.strip()]
    data = np.array(rows, dtype=float)
    return data[:, 0] if data.shape[1] == 1 else data


def resolve_seed(flag, config: RunConfig) -> int:
    """Command-line flag, then ``ORDERID_SEED``, then the config file, then 42."""
    if flag is not None:
        return int(flag)
    env = os.environ.get("ORDERID_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"ORDERID_SEED must be an integer, got {env!r}") from None
    if config.is_set("run", "seed"):
        return config.get("run", "seed")
    return DEFAULT_SEED


def resolve_workers(flag, config: RunConfig) -> int:
    if flag is not None:
        value = int(flag)
    elif os.environ.get("ORDERID_WORKERS") is not None:
        try:
            value = int(os.environ["ORDERID_WORKERS"])
        except ValueError:
            raise ValidationError("ORDERID_WORKERS must be an integer") from None
    else:
        value = config.get("run", "workers")
    if value < 1:
        raise ValidationError("worker count must be at least 1")
    return value


def _family(config):
    fam = config["family"]
    return FAMILIES[fam["name"]](k_max=fam["k_max"], **config.family_options())


def _prior(config):
    p = config["prior"]
    return PriorSpec(order_weights=p["order_weights"], within=p["within"], scale=p["scale"])


def _theta_star(config, family):
    fam = config["family"]
    if not fam["theta_star"] or not fam["k_star"]:
        raise ValidationError("[family] theta_star and k_star are required for this subcommand")
    try:
        return family.theta(fam["k_star"], fam["theta_star"])
    except (ValueError, OrderIdError) as exc:
        raise ValidationError(f"{config.where('family', 'theta_star')}[family] theta_star: {exc}") from None


def _data(config, family, seed):
    d = config["data"]
    if d["path"]:
        return load_points(d["path"]), {"source": d["path"]}
    theta = _theta_star(config, family)
    data = family.sample(theta, d["n"], RandomStream(seed, 1))
    return data.points, {"source": "simulated", "n": d["n"]}


# ---------------------------------------------------------------------------
# subcommands


def cmd_divergence(config, seed, workers, out):
    d = config["divergence"]
    f, g = parse_density(d["f"]), parse_density(d["g"])
    results = {"kl": kl_divergence(f, g), "kl_reverse": kl_divergence(g, f), "v": v_divergence(f, g),
               "v_reverse": v_divergence(g, f), "v_max": v_max(f, g), "l1": l1_distance(f, g),
               "f": repr(f), "g": repr(g)}
    if d["alpha"] > 0:
        results["q_moment"] = q_moment(f, g, d["alpha"])
    write_csv(out / "divergence.csv", ("quantity", "value"),
              [(k, v) for k, v in results.items() if isinstance(v, float)])
    return results


def _posterior_results(config, seed):
    family, prior = _family(config), _prior(config)
    points, source = _data(config, family, seed)
    ev = config["evidence"]
    evidences = all_evidences(family, prior, points, method=ev["method"], scheme=QuadratureScheme(nodes=ev["nodes"]),
                              draws=ev["draws"], stream=RandomStream(seed, 0))
    post = order_posterior(evidences, prior)
    rows = [(e.k, e.log, e.method, e.stderr, post[e.k]) for e in evidences]
    results = {"data": source, "family": family.kind,
               "evidences": [{"k": e.k, "log": e.log, "method": e.method, "stderr": e.stderr, "flags": list(e.flags)}
                             for e in evidences],
               "posterior": [post[k] for k in range(1, post.k_max + 1)]}
    return results, rows, evidences, prior


def cmd_posterior(config, seed, workers, out):
    results, rows, _, _ = _posterior_results(config, seed)
    write_csv(out / "posterior.csv", ("k", "log_evidence", "method", "stderr", "posterior"), rows)
    return results


def cmd_estimate(config, seed, workers, out):
    results, rows, evidences, prior = _posterior_results(config, seed)
    results["estimates"] = {name: apply_estimator(name, evidences, prior) for name in ESTIMATORS}
    write_csv(out / "posterior.csv", ("k", "log_evidence", "method", "stderr", "posterior"), rows)
    write_csv(out / "estimates.csv", ("estimator", "k"), results["estimates"].items())
    return results


def experiment_config(config, seed) -> ExperimentConfig:
    fam, exp, ev, pr = config["family"], config["experiment"], config["evidence"], config["prior"]
    family = _family(config)
    theta = _theta_star(config, family)
    return ExperimentConfig(fam["name"], tuple(theta.vector), theta.k, exp["n_grid"], exp["replications"],
                            exp["estimator"], fam["k_max"], config.family_options(), pr["within"], pr["scale"],
                            pr["order_weights"], ev["method"], ev["draws"], seed)


def cmd_experiment(config, seed, workers, out):
    exp = experiment_config(config, seed)
    curve = run_error_experiment(exp, workers=workers)
    write_csv(out / "curve.csv", CURVE_HEADER, curve_rows(curve))
    family = exp.make_family()
    d1, d2, beta2 = effective_dimensions(family, exp.k_star)
    fits, notes = {}, {}
    for kind, fitter in (("under", lambda: fit_exponential_rate(curve, "under")),
                         ("over", lambda: fit_polylog_rate(curve, "over", d1, d2, beta2))):
        try:
            fits[kind] = fitter()
        except InsufficientData as exc:
            notes[kind] = str(exc)
    emit_plot(curve, fits, out / "plot.svg", title=f"{exp.family}, estimator {exp.estimator}")
    return {"fingerprint": curve.fingerprint, "experiment": exp.to_dict(),
            "records": [r.__dict__ for r in curve.records],
            "failures": [list(f) for f in curve.failures],
            "fits": {k: fit_dict(v) for k, v in fits.items()}, "fit_notes": notes,
            "effective_dimensions": [d1, d2, beta2], "predicted_exponent": (d1 - d2) / 2}


def cmd_theory_check(config, seed, workers, out):
    family, prior = _family(config), _prior(config)
    theta_star = _theta_star(config, family)
    th = config["theory"]
    k = th["k"] or theta_star.k
    rows = []
    hstars = [theory.h_star(family, j, theta_star).value for j in range(1, family.k_max + 1)]
    rows += [(f"h_star_{j}", v) for j, v in enumerate(hstars, start=1)]
    d1, d2, beta2 = effective_dimensions(family, theta_star.k)
    m_est = theory.estimate_m_alpha(family, k, th["delta"], th["alpha"], theta_star, grid_size=th["grid_size"])
    M = max(1.0, m_est.value)
    C1 = theory.c1_constant(M, th["alpha"])
    consts = theory.overestimation_constants(th["beta1"], beta2, d1, d2, th["s"], C1)
    results = {"h_star": hstars, "effective_dimensions": [d1, d2, beta2], "predicted_exponent": (d1 - d2) / 2,
               "M_estimate": m_est.value, "M": M, "C1": C1,
               "n0": consts.n0, "delta0": consts.delta0, "delta_k1_min": consts.delta_k1_min}
    rows += [("M_estimate", m_est.value), ("C1", C1), ("n0", consts.n0), ("delta0", consts.delta0),
             ("delta_k1_min", consts.delta_k1_min)]
    if isinstance(family, FourierRegression) and theta_star.k >= 2:
        results["c2_bound"] = theory.regression_c2_bound(theta_star, family.sigma)
        rows.append(("c2_bound", results["c2_bound"]))
    if th["reps"] > 0:
        res = theory.verify_lemma2(family, prior, k, th["delta"], th["n"], th["reps"], theta_star, M,
                                   RandomStream(seed, 2), alpha=th["alpha"],
                                   evidence_method=config.get("evidence", "method"))
        results["lemma2"] = {"frequency": res.frequency, "bound": res.bound, "reps": res.reps,
                             "prior_mass": res.prior_mass, "stderr": res.stderr,
                             "holds": res.frequency >= res.bound - 3 * res.stderr}
        rows += [("lemma2_frequency", res.frequency), ("lemma2_bound", res.bound)]
    write_csv(out / "theory.csv", ("quantity", "value"), rows)
    return results


def cmd_entropy(config, seed, workers, out):
    family = _family(config)
    if not isinstance(family, GaussianMixture):
        raise ValidationError("[family] name: the entropy subcommand needs the mixture family")
    theta_star = _theta_star(config, family)
    e = config["entropy"]
    k = e["k"]
    lo, hi = e["region_lo"], e["region_hi"]
    if not lo:
        if k != theta_star.k:
            raise ValidationError("[entropy] region_lo: required unless k equals k_star")
        w = theta_star.array
        width = np.concatenate([np.full(k - 1, 0.1), np.full(len(w) - k + 1, 0.3)])
        lo, hi = w - width, w + width
    f_star = family.density(theta_star)
    values = [theory.entropy_estimate(family, k, (lo, hi), d, f_star, tau=e["tau"]) for d in e["deltas"]]
    x = -np.log(e["deltas"])
    slope, intercept = (np.polyfit(x, values, 1) if len(x) > 1 else (math.nan, math.nan))
    write_csv(out / "entropy.csv", ("delta", "neg_log_delta", "entropy"), zip(e["deltas"], x, values))
    return {"k": k, "region": [list(map(float, lo)), list(map(float, hi))], "deltas": list(e["deltas"]),
            "entropy": values, "slope": float(slope), "intercept": float(intercept)}


COMMANDS = {"divergence": cmd_divergence, "posterior": cmd_posterior, "estimate": cmd_estimate,
            "experiment": cmd_experiment, "theory-check": cmd_theory_check, "entropy": cmd_entropy}


def run_subcommand(name: str, config: RunConfig, seed: int | None = None, workers: int | None = None,
                   out: str | Path | None = None) -> dict:
    """Run one subcommand, write its files and ``report.json``; returns the report."""
    if name not in COMMANDS:
        raise ValueError(f"unknown subcommand {name!r}; choose from {', '.join(SUBCOMMANDS)}")
    seed = resolve_seed(seed, config)
    workers = resolve_workers(workers, config)
    out = Path(out if out is not None else config.get("run", "out"))
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    results = COMMANDS[name](config, seed, workers, out)
    report = {"subcommand": name, "inputs": {"config": serialize(config), "seed": seed},
              "seed": seed, "workers": workers, "results": results, "versions": versions(),
              "wall_time": time.perf_counter() - start}
    write_json(out / "report.json", report)
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orderid", description="Order estimation for nested parametric families.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="configuration file (defaults are used when omitted)")
    parser.add_argument("--seed", type=int, help="master seed; overrides ORDERID_SEED and the config")
    parser.add_argument("--workers", type=int, help="worker processes; overrides ORDERID_WORKERS")
    parser.add_argument("--out", help="output directory; overrides [run] out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
        config = parse_config(text)
        report = run_subcommand(args.subcommand, config, args.seed, args.workers, args.out)
    except ConfigError as exc:
        print(f"orderid: configuration error: {exc}", file=sys.stderr)
        return 2
    except (OrderIdError, ValueError, OSError) as exc:
        print(f"orderid: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out or config.get("run", "out"))
    print(f"{args.subcommand}: wrote {out / 'report.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
