"""JSON reports, CSV tables and SVG error-rate plots."""

from __future__ import annotations

import csv
import io
import json
import math
import platform
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np
import scipy

from . import __version__
from .harness import ERROR_KINDS, ErrorCurve, RateFit

CURVE_HEADER = ("n", "replications", "under_count", "over_count", "correct_count")


def versions() -> dict:
    return {"orderid": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def format_number(value) -> str:
    """Locale-free text with 17 significant digits for floats."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_number(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.write_text(csv_text(header, rows), encoding="utf-8")
    return path


def curve_rows(curve: ErrorCurve):
    return [(r.n, r.replications, r.under_count, r.over_count, r.correct_count) for r in curve.records]


def curve_csv(curve: ErrorCurve) -> str:
    return csv_text(CURVE_HEADER, curve_rows(curve))


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, report: Mapping) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def fit_dict(fit: RateFit) -> dict:
    return {"model": fit.model, "coefficients": dict(fit.coefficients), "r_squared": fit.r_squared,
            "points": fit.points, "exponent": fit.exponent, "predicted_exponent": fit.predicted_exponent,
            "weighted": fit.weighted}


def legend_text(kind: str, fit: RateFit) -> str:
    text = f"{kind}: {fit.model} fit, exponent {fit.exponent:.4g}, R2 {fit.r_squared:.3f}"
    if fit.predicted_exponent is not None:
        text += f" (predicted {fit.predicted_exponent:.4g})"
    return text


_COLORS = {"under": "#1f77b4", "over": "#d62728"}
_W, _H, _L, _R, _T, _B = 640, 420, 70, 20, 20, 110


def emit_plot(curve: ErrorCurve, fits: Mapping[str, RateFit], path, title: str = "") -> Path:
    """Standalone SVG of log error frequency against ``n`` on a log axis.

    Points use the continuity-corrected frequency ``(count + 0.5)/(reps + 1)``
    so that zero counts stay visible; fitted curves are drawn for the kinds in
    ``fits`` when the curve has more than one point.
    """
    recs = [r for r in curve.records if r.replications > 0]
    if not recs:
        raise ValueError("cannot plot an empty curve")
    n = np.array([r.n for r in recs], dtype=float)
    ys = {kind: np.log([(r.count(kind) + 0.5) / (r.replications + 1) for r in recs]) for kind in ERROR_KINDS}
    x_lo, x_hi = math.log(n.min()), math.log(n.max())
    if x_hi - x_lo < 1e-9:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    fit_grid = np.exp(np.linspace(x_lo, x_hi, 60))
    draw_fits = len(recs) > 1
    all_y = np.concatenate([*ys.values(), *([fits[k].predict(fit_grid) for k in fits] if draw_fits else [])])
    y_lo, y_hi = float(all_y.min()), float(all_y.max())
    if y_hi - y_lo < 1e-9:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def px(v):
        return _L + (math.log(v) - x_lo) / (x_hi - x_lo) * (_W - _L - _R)

    def py(v):
        return _T + (y_hi - v) / (y_hi - y_lo) * (_H - _T - _B)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
           f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
           f'<line x1="{_L}" y1="{_H - _B}" x2="{_W - _R}" y2="{_H - _B}" stroke="black"/>',
           f'<line x1="{_L}" y1="{_T}" x2="{_L}" y2="{_H - _B}" stroke="black"/>']
    for v in n:
        out.append(f'<text x="{px(v):.2f}" y="{_H - _B + 16}" font-size="11" text-anchor="middle">{int(v)}</text>')
    for v in np.linspace(y_lo, y_hi, 5):
        out.append(f'<text x="{_L - 6}" y="{py(v) + 4:.2f}" font-size="11" text-anchor="end">{v:.2f}</text>')
    out.append(f'<text x="{(_W + _L) / 2:.1f}" y="{_H - _B + 34}" font-size="12" text-anchor="middle">n (log scale)</text>')
    out.append(f'<text x="16" y="{(_H - _B) / 2:.1f}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {(_H - _B) / 2:.1f})">log error frequency</text>')
    if title:
        out.append(f'<text x="{_W / 2:.1f}" y="14" font-size="12" text-anchor="middle">{escape(title)}</text>')
    legend = []
    for kind in ERROR_KINDS:
        color = _COLORS[kind]
        for v, y in zip(n, ys[kind]):
            out.append(f'<circle class="point {kind}" cx="{px(v):.2f}" cy="{py(y):.2f}" r="4" fill="{color}"/>')
        legend.append((color, f"{kind}: observed"))
        if kind in fits and draw_fits:
            pts = " ".join(f"{px(v):.2f},{py(y):.2f}" for v, y in zip(fit_grid, fits[kind].predict(fit_grid)))
            out.append(f'<polyline class="fit {kind}" points="{pts}" fill="none" stroke="{color}" '
                       f'stroke-dasharray="5,3"/>')
        if kind in fits:
            legend.append((color, legend_text(kind, fits[kind])))
    for i, (color, text) in enumerate(legend):
        y = _H - _B + 52 + 14 * i
        out.append(f'<rect x="{_L}" y="{y - 8}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text class="legend" x="{_L + 16}" y="{y + 1}" font-size="11">{escape(text)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
    return path
