"""Seeded Monte Carlo experiments on order-estimation errors and rate fits.

Each replication draws its data and its importance-sampling randomness from a
stream keyed by ``(seed, n, replication)``, so results do not depend on the
number of workers, on scheduling, or on which other grid points are run.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Any, Callable, Hashable, Iterable, Mapping

import numpy as np

from .errors import InsufficientData
from .families import FAMILIES, OrderIndexedFamily, PriorSpec, Theta
from .posterior import ESTIMATORS, EVIDENCE_METHODS, all_evidences, apply_estimator
from .streams import RandomStream, replication_index

ERROR_KINDS = ("under", "over")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an :class:`ErrorCurve`.

    ``family_options`` are keyword arguments of the family constructor other
    than ``k_max``; ``evidence_method`` is one of ``auto``, ``hybrid``,
    ``quadrature`` or ``importance`` and ``draws`` its sampling budget.
    """

    family: str
    theta_star: tuple[float, ...]
    k_star: int
    n_grid: tuple[int, ...]
    replications: int
    estimator: str = "global"
    k_max: int = 3
    family_options: tuple[tuple[str, Any], ...] = ()
    prior_within: str = "default"
    prior_scale: float = 1.0
    order_weights: tuple[float, ...] = ()
    evidence_method: str = "hybrid"
    draws: int = 2000
    seed: int = 42

    def __post_init__(self):
        object.__setattr__(self, "theta_star", tuple(float(v) for v in self.theta_star))
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        opts = self.family_options.items() if isinstance(self.family_options, Mapping) else self.family_options
        object.__setattr__(self, "family_options", tuple(sorted((str(k), v) for k, v in opts)))
        object.__setattr__(self, "order_weights", tuple(float(w) for w in self.order_weights))
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {sorted(FAMILIES)}")
        if not self.n_grid or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ValueError("n grid must be nonempty and strictly increasing")
        if self.n_grid[0] < 1:
            raise ValueError("sample sizes must be positive")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not 1 <= self.k_star <= self.k_max:
            raise ValueError("need 1 <= k* <= k_max")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.evidence_method not in EVIDENCE_METHODS:
            raise ValueError(f"evidence method must be one of {EVIDENCE_METHODS}")
        if self.draws < 1000:
            raise ValueError("draws must be at least 1000")
        self.make_family().theta(self.k_star, self.theta_star)

    def make_family(self) -> OrderIndexedFamily:
        return FAMILIES[self.family](k_max=self.k_max, **dict(self.family_options))

    def make_prior(self) -> PriorSpec:
        return PriorSpec(order_weights=self.order_weights, within=self.prior_within, scale=self.prior_scale)

    def make_theta(self) -> Theta:
        return self.make_family().theta(self.k_star, self.theta_star)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family_options"] = dict(self.family_options)
        for key in ("theta_star", "n_grid", "order_weights"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        return cls(**dict(d))

    @property
    def fingerprint(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ErrorRecord:
    n: int
    replications: int
    under_count: int
    over_count: int
    correct_count: int
    excluded: int = 0

    def __post_init__(self):
        if self.under_count + self.over_count + self.correct_count != self.replications:
            raise ValueError("counts must sum to the number of replications")

    def count(self, kind: str) -> int:
        if kind not in ERROR_KINDS:
            raise ValueError(f"error kind must be one of {ERROR_KINDS}")
        return self.under_count if kind == "under" else self.over_count

    def frequency(self, kind: str) -> float:
        return self.count(kind) / self.replications if self.replications else math.nan


@dataclass(frozen=True)
class ErrorCurve:
    """Error tallies per sample size for one estimator.

    ``outcomes`` keeps, per successful replication, ``(n, replication,
    global, local, bayes_factor)`` estimates; ``failures`` keeps
    ``(n, replication, message)`` for replications whose evidence failed.
    """

    records: tuple[ErrorRecord, ...]
    fingerprint: str
    estimator: str = "global"
    k_star: int = 1
    outcomes: tuple[tuple[int, int, int, int, int], ...] = ()
    failures: tuple[tuple[int, int, str], ...] = ()

    @property
    def n_values(self) -> np.ndarray:
        return np.array([r.n for r in self.records], dtype=float)

    def frequencies(self, kind: str) -> np.ndarray:
        return np.array([r.frequency(kind) for r in self.records])

    def retally(self, estimator: str) -> "ErrorCurve":
        """The same replications scored with another estimator."""
        col = 2 + ESTIMATORS.index(estimator)
        return ErrorCurve(_tally(self.records, self.outcomes, col, self.k_star), self.fingerprint, estimator,
                          self.k_star, self.outcomes, self.failures)


def _tally(records, outcomes, col, k_star):
    out = []
    for r in records:
        est = [o[col] for o in outcomes if o[0] == r.n]
        under = sum(e < k_star for e in est)
        over = sum(e > k_star for e in est)
        out.append(ErrorRecord(r.n, len(est), under, over, len(est) - under - over, r.excluded))
    return tuple(out)


# ---------------------------------------------------------------------------
# parallel execution


@dataclass(frozen=True)
class Replicated:
    """Results and failures keyed by task key, both sorted by key."""

    results: dict
    failures: dict = field(default_factory=dict)


def _guarded(task, key):
    try:
        return key, True, task(key)
    except Exception as exc:  # a failing replication is recorded, not fatal
        return key, False, f"{type(exc).__name__}: {exc}"


def replicate(task: Callable[[Hashable], Any], keys: Iterable[Hashable], workers: int = 1,
              chunksize: int | None = None) -> Replicated:
    """Run ``task(key)`` for every key and merge by sorted key.

    With ``workers > 1`` tasks run in a process pool; ``task`` and keys must
    then be picklable.  The merged output does not depend on ``workers`` or on
    the order of ``keys``.
    """
    keys = list(keys)
    if len(set(keys)) != len(keys):
        raise ValueError("task keys must be unique")
    if workers < 1:
        raise ValueError("workers must be at least 1")
    run = partial(_guarded, task)
    if workers == 1 or len(keys) <= 1:
        raw = [run(k) for k in keys]
    else:
        size = chunksize or max(1, len(keys) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(run, keys, chunksize=size))
    raw.sort(key=lambda item: item[0])
    return Replicated({k: v for k, ok, v in raw if ok}, {k: v for k, ok, v in raw if not ok})


def default_workers() -> int:
    value = os.environ.get("ORDERID_WORKERS")
    if value is None:
        return 1
    workers = int(value)
    if workers < 1:
        raise ValueError("ORDERID_WORKERS must be a positive integer")
    return workers


# ---------------------------------------------------------------------------
# experiments


def run_replication(config: ExperimentConfig, key: tuple[int, int]) -> tuple[int, int, int]:
    """Estimates ``(global, local, bayes_factor)`` for replication ``key = (n, rep)``."""
    n, rep = key
    family = config.make_family()
    prior = config.make_prior()
    stream = RandomStream(config.seed, replication_index(n, rep))
    data = family.sample(config.make_theta(), n, stream.child(0))
    evidences = all_evidences(family, prior, data, method=config.evidence_method, draws=config.draws,
                              stream=stream.child(1))
    return tuple(apply_estimator(name, evidences, prior) for name in ESTIMATORS)


def run_error_experiment(config: ExperimentConfig, workers: int = 1) -> ErrorCurve:
    """Tally under-, over- and correct estimates of ``k*`` at every ``n``.

    Replications whose evidence computation fails are excluded and counted
    in ``ErrorRecord.excluded``.
    """
    keys = [(n, r) for n in config.n_grid for r in range(config.replications)]
    done = replicate(partial(run_replication, config), keys, workers)
    outcomes = tuple((n, r, *est) for (n, r), est in done.results.items())
    failures = tuple((n, r, msg) for (n, r), msg in done.failures.items())
    skeleton = tuple(ErrorRecord(n, 0, 0, 0, 0, sum(f[0] == n for f in failures)) for n in config.n_grid)
    col = 2 + ESTIMATORS.index(config.estimator)
    records = _tally(skeleton, outcomes, col, config.k_star)
    return ErrorCurve(records, config.fingerprint, config.estimator, config.k_star, outcomes, failures)


# ---------------------------------------------------------------------------
# rate fits


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of log error frequency against a rate shape.

    ``exponential``: ``log p = log_c1 - c2 n``.
    ``poly-log``: ``log p = a - c log n + b log log n``.
    """

    model: str
    coefficients: dict
    r_squared: float
    points: int
    predicted_exponent: float | None = None
    weighted: bool = False

    def __post_init__(self):
        if not 0.0 <= self.r_squared <= 1.0:
            raise ValueError("R^2 must lie in [0, 1]")

    @property
    def exponent(self) -> float:
        return self.coefficients["c2" if self.model == "exponential" else "c"]

    def predict(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        c = self.coefficients
        if self.model == "exponential":
            return c["log_c1"] - c["c2"] * n
        return c["a"] - c["c"] * np.log(n) + c["b"] * np.log(np.log(n))


def _fit_points(curve: ErrorCurve, kind: str, correction: bool):
    if kind not in ERROR_KINDS:
        raise ValueError(f"error kind must be one of {ERROR_KINDS}")
    recs = [r for r in curve.records if r.replications > 0]
    nonzero = sum(r.count(kind) > 0 for r in recs)
    if nonzero < 3:
        raise InsufficientData(f"{nonzero} grid points with nonzero {kind}-error counts; need 3")
    if correction:
        n = np.array([r.n for r in recs], dtype=float)
        reps = np.array([r.replications for r in recs], dtype=float)
        p = (np.array([r.count(kind) for r in recs]) + 0.5) / (reps + 1)
    else:
        recs = [r for r in recs if r.count(kind) > 0]
        n = np.array([r.n for r in recs], dtype=float)
        reps = np.array([r.replications for r in recs], dtype=float)
        p = np.array([r.count(kind) for r in recs]) / reps
    return n, np.log(p), reps, p


def _least_squares(X, y, w):
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    resid = y - X @ beta
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    ss_res = float(np.sum(w * resid ** 2))
    r2 = 1.0 if ss_tot <= 1e-300 else 1.0 - ss_res / ss_tot
    return beta, min(max(r2, 0.0), 1.0)


def _weights(reps, p, weighted):
    # delta-method variance of log p-hat is (1 - p) / (reps p)
    return reps * p / (1 - p) if weighted else np.ones_like(p)


def fit_exponential_rate(curve: ErrorCurve, error_kind: str, weighted: bool = False,
                         correction: bool = True) -> RateFit:
    """Fit ``log p = log c1 - c2 n`` to the error frequencies.

    Frequencies are continuity corrected to ``(count + 0.5)/(reps + 1)``
    unless ``correction=False``, in which case only nonzero counts are used.
    """
    n, y, reps, p = _fit_points(curve, error_kind, correction)
    beta, r2 = _least_squares(np.column_stack([np.ones_like(n), -n]), y, _weights(reps, p, weighted))
    return RateFit("exponential", {"log_c1": float(beta[0]), "c2": float(beta[1])}, r2, len(n), None, weighted)


def fit_polylog_rate(curve: ErrorCurve, error_kind: str, D1: float, D2: float, beta2: float = 0.0,
                     weighted: bool = False, correction: bool = True) -> RateFit:
    """Fit ``log p = a - c log n + b log log n``; reports ``(D1 - D2)/2`` as the predicted ``c``."""
    n, y, reps, p = _fit_points(curve, error_kind, correction)
    X = np.column_stack([np.ones_like(n), -np.log(n), np.log(np.log(n))])
    beta, r2 = _least_squares(X, y, _weights(reps, p, weighted))
    coef = {"a": float(beta[0]), "c": float(beta[1]), "b": float(beta[2]), "beta2": float(beta2)}
    return RateFit("poly-log", coef, r2, len(n), (D1 - D2) / 2, weighted)
