"""Run configuration: ``[section]`` headers followed by ``key = value`` lines.

Blank lines and lines starting with ``#`` or ``;`` are ignored, as is text
after `` #`` on a value line.  Lists are comma separated.  Every key has a
type, a default and a range; unknown sections or keys are rejected with the
offending line number.

Example::

    [family]
    name = mixture
    theta_star = 0.5, -2, 2
    k_star = 2

    [experiment]
    n_grid = 50, 100, 200, 400
    replications = 400
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import ParseError, ValidationError

_SECTION = re.compile(r"^\[([A-Za-z][\w-]*)\]$")
_KEY = re.compile(r"^([A-Za-z][\w-]*)\s*=\s*(.*)$")


@dataclass(frozen=True)
class Field:
    kind: str  # int | float | str | ints | floats
    default: Any
    check: Callable[[Any], bool] | None = None
    constraint: str = ""
    choices: tuple[str, ...] = ()


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


SCHEMA: dict[str, dict[str, Field]] = {
    "family": {
        "name": Field("str", "mixture", choices=("fourier-regression", "change-points", "mixture")),
        "k_max": Field("int", 3, lambda v: 1 <= v <= 8, "must be between 1 and 8"),
        "theta_star": Field("floats", ()),
        "k_star": Field("int", 0, _nonneg, "must be nonnegative (0 means unset)"),
        "sigma": Field("float", None, _positive, "must be positive"),
        "bound": Field("float", None, _positive, "must be positive"),
        "tau": Field("float", None, lambda v: 0 < v < 0.5, "must lie in (0, 0.5)"),
        "component": Field("str", None, choices=("location", "location-scale")),
        "var_bound": Field("float", None, lambda v: v > 1, "must exceed 1"),
    },
    "prior": {
        "within": Field("str", "default", choices=("default", "uniform", "repulsive", "gaussian")),
        "scale": Field("float", 1.0, _positive, "must be positive"),
        "order_weights": Field("floats", (), lambda v: all(w >= 0 for w in v) and (not v or sum(v) > 0),
                               "must be nonnegative with a positive sum"),
    },
    "data": {
        "path": Field("str", ""),
        "n": Field("int", 200, _positive, "must be positive"),
    },
    "evidence": {
        "method": Field("str", "hybrid", choices=("auto", "hybrid", "quadrature", "importance")),
        "draws": Field("int", 2000, lambda v: v >= 1000, "must be at least 1000"),
        "nodes": Field("int", 256, lambda v: v >= 64, "must be at least 64"),
    },
    "experiment": {
        "estimator": Field("str", "global", choices=("global", "local", "bayes-factor")),
        "n_grid": Field("ints", (50, 100, 200, 400),
                        lambda v: len(v) > 0 and v[0] > 0 and all(b > a for a, b in zip(v, v[1:])),
                        "must be positive and strictly increasing"),
        "replications": Field("int", 200, lambda v: v >= 1, "must be at least 1"),
    },
    "theory": {
        "k": Field("int", 0, _nonneg, "must be nonnegative (0 means k*)"),
        "delta": Field("float", 0.5, _positive, "must be positive"),
        "alpha": Field("float", 1.0, _positive, "must be positive"),
        "n": Field("int", 200, _positive, "must be positive"),
        "reps": Field("int", 0, _nonneg, "must be nonnegative"),
        "grid_size": Field("int", 9, lambda v: v >= 2, "must be at least 2"),
        "s": Field("float", 1.0, _positive, "must be positive"),
        "beta1": Field("float", 1.0, _positive, "must be positive"),
    },
    "divergence": {
        "f": Field("str", "normal(0, 1)"),
        "g": Field("str", "normal(1, 1)"),
        "alpha": Field("float", 0.0, _nonneg, "must be nonnegative (0 skips the tilted moment)"),
    },
    "entropy": {
        "k": Field("int", 2, lambda v: v >= 1, "must be at least 1"),
        "region_lo": Field("floats", ()),
        "region_hi": Field("floats", ()),
        "deltas": Field("floats", (0.08, 0.04, 0.02, 0.01, 0.005), lambda v: len(v) > 0 and all(0 < d < 1 for d in v),
                        "must lie in (0, 1)"),
        "tau": Field("float", 4.0, lambda v: v >= 1, "must be at least 1"),
    },
    "run": {
        "seed": Field("int", 42, lambda v: 0 <= v < 2 ** 63, "must lie in [0, 2^63)"),
        "out": Field("str", "orderid-out"),
        "workers": Field("int", 1, lambda v: v >= 1, "must be at least 1"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``values[section][key]`` with defaults filled in.

    ``lines`` maps ``(section, key)`` to the line it was read from and
    ``explicit`` lists the keys that appeared in the text.
    """

    values: dict
    explicit: frozenset = frozenset()
    lines: dict = field(default_factory=dict, compare=False)

    def __getitem__(self, section):
        return self.values[section]

    def get(self, section, key):
        return self.values[section][key]

    def is_set(self, section, key) -> bool:
        return (section, key) in self.explicit

    def where(self, section, key) -> str:
        line = self.lines.get((section, key))
        return f"line {line}: " if line else ""

    def family_options(self) -> dict:
        opts = {}
        for key in ("sigma", "bound", "tau", "component", "var_bound"):
            if self.values["family"][key] is not None:
                opts[key] = self.values["family"][key]
        return opts


def _convert(raw: str, spec: Field, where: str):
    def number(text, cast):
        try:
            value = cast(text)
        except ValueError:
            raise ValidationError(f"{where}expected {'an integer' if cast is int else 'a number'}, got {text!r}") from None
        if cast is float and not math.isfinite(value):
            raise ValidationError(f"{where}value must be finite")
        return value

    if spec.kind == "int":
        return number(raw, int)
    if spec.kind == "float":
        return number(raw, float)
    if spec.kind in ("ints", "floats"):
        parts = [p.strip() for p in raw.split(",")] if raw.strip() else []
        if any(not p for p in parts):
            raise ValidationError(f"{where}empty list element")
        return tuple(number(p, int if spec.kind == "ints" else float) for p in parts)
    return raw


def _validate(value, spec: Field, where: str):
    if spec.choices and value not in spec.choices:
        raise ValidationError(f"{where}must be one of {', '.join(spec.choices)}; got {value!r}")
    if spec.check is not None and value is not None and not spec.check(value):
        raise ValidationError(f"{where}{spec.constraint}")


def parse_config(text: str) -> RunConfig:
    """Parse and validate configuration text.

    Raises:
        ParseError: malformed lines, unknown sections or keys, duplicates.
        ValidationError: values of the wrong type or outside their range.
    """
    values = {s: {k: f.default for k, f in keys.items()} for s, keys in SCHEMA.items()}
    explicit, lines = set(), {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        m = _SECTION.match(stripped)
        if m:
            section = m.group(1)
            if section not in SCHEMA:
                raise ParseError(f"line {lineno}: unknown section [{section}]")
            continue
        m = _KEY.match(stripped)
        if not m:
            raise ParseError(f"line {lineno}: expected '[section]' or 'key = value', got {stripped!r}")
        if section is None:
            raise ParseError(f"line {lineno}: key outside of any section")
        key, raw = m.group(1), m.group(2)
        raw = re.split(r"\s+#", raw, maxsplit=1)[0].strip()
        if key not in SCHEMA[section]:
            raise ParseError(f"line {lineno}: unknown key {key!r} in [{section}]")
        if (section, key) in explicit:
            raise ParseError(f"line {lineno}: duplicate key {key!r} in [{section}]")
        spec = SCHEMA[section][key]
        where = f"line {lineno}: [{section}] {key}: "
        value = _convert(raw, spec, where)
        _validate(value, spec, where)
        values[section][key] = value
        explicit.add((section, key))
        lines[(section, key)] = lineno
    config = RunConfig(values, frozenset(explicit), lines)
    _cross_check(config)
    return config


def _cross_check(config: RunConfig):
    fam = config["family"]
    if fam["k_star"] > fam["k_max"]:
        raise ValidationError(f"{config.where('family', 'k_star')}[family] k_star: must not exceed k_max")
    lo, hi = config["entropy"]["region_lo"], config["entropy"]["region_hi"]
    if len(lo) != len(hi) or any(b < a for a, b in zip(lo, hi)):
        raise ValidationError(f"{config.where('entropy', 'region_hi')}[entropy] region_hi: "
                              "must match region_lo in length and dominate it")


def _format(value, spec: Field) -> str:
    if spec.kind in ("ints", "floats"):
        return ", ".join(repr(v) for v in value)
    return repr(value) if spec.kind == "float" else str(value)


def serialize(config: RunConfig) -> str:
    """Text that :func:`parse_config` maps back to an equal :class:`RunConfig`.

    Only explicitly set keys are written, so defaults stay defaults.
    """
    out = []
    for section, keys in SCHEMA.items():
        body = [f"{k} = {_format(config.values[section][k], spec)}" for k, spec in keys.items()
                if config.is_set(section, k)]
        if body:
            out.append(f"[{section}]")
            out.extend(body)
            out.append("")
    return "\n".join(out)
