"""Dependency-free SVG line charts for sweep reports and decay series.

Every chart embeds its data table in an XML comment and is written next to a
CSV holding the same numbers.  Output is deterministic; a generation
timestamp is added only when explicitly requested.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bilinear_lab import SweepReport

__all__ = ["DecaySeries", "LOG_FLOOR", "emit_plot", "slope_with_error"]

LOG_FLOOR = 1e-300
WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=80, right=30, top=40, bottom=60)


@dataclass
class DecaySeries:
    times: list[float]
    values: list[float]
    label: str = "||u(t)||"


def slope_with_error(x, y) -> tuple[float, float]:
    """Least-squares slope of ``log y`` on ``log x`` and its standard error (0 for two points)."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    k, c = np.polyfit(lx, ly, 1)
    n = lx.size
    if n <= 2:
        return float(k), 0.0
    resid = ly - (k * lx + c)
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    return float(k), float(math.sqrt(float(np.sum(resid**2)) / (n - 2) / sxx))


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Axes:
    def __init__(self, xs, ys, logx: bool, logy: bool):
        self.logx, self.logy = logx, logy
        tx = [self._tx(v) for v in xs]
        ty = [self._ty(v) for v in ys]
        self.x0, self.x1 = _padded(min(tx), max(tx))
        self.y0, self.y1 = _padded(min(ty), max(ty))

    def _tx(self, v):
        return math.log10(v) if self.logx else v

    def _ty(self, v):
        return math.log10(max(v, LOG_FLOOR)) if self.logy else v

    def px(self, v) -> float:
        w = WIDTH - MARGIN["left"] - MARGIN["right"]
        return MARGIN["left"] + (self._tx(v) - self.x0) / (self.x1 - self.x0) * w

    def py(self, v) -> float:
        h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
        return HEIGHT - MARGIN["bottom"] - (self._ty(v) - self.y0) / (self.y1 - self.y0) * h


def _padded(lo: float, hi: float) -> tuple[float, float]:
    if hi - lo < 1e-12:
        return lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _ticks(lo: float, hi: float, log: bool) -> list[tuple[float, str]]:
    if log:
        a, b = math.ceil(lo), math.floor(hi)
        step = max(1, math.ceil((b - a + 1) / 8))
        return [(10.0**e, f"1e{e}") for e in range(a, b + 1, step)]
    vals = np.linspace(lo, hi, 6)
    return [(float(v), f"{v:.3g}") for v in vals]


def _frame(ax: _Axes, xlabel: str, ylabel: str, title: str) -> list[str]:
    l, r, t, b = MARGIN["left"], WIDTH - MARGIN["right"], MARGIN["top"], HEIGHT - MARGIN["bottom"]
    out = [f'<rect x="{l}" y="{t}" width="{r - l}" height="{b - t}" fill="none" stroke="black"/>',
           f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="15">{title}</text>',
           f'<text x="{WIDTH / 2}" y="{HEIGHT - 15}" text-anchor="middle" font-size="13">{xlabel}</text>',
           f'<text x="18" y="{HEIGHT / 2}" text-anchor="middle" font-size="13" '
           f'transform="rotate(-90 18 {HEIGHT / 2})">{ylabel}</text>']
    for v, lab in _ticks(ax.x0, ax.x1, ax.logx):
        x = ax.px(v)
        out.append(f'<line x1="{_fmt(x)}" y1="{b}" x2="{_fmt(x)}" y2="{b + 5}" stroke="black"/>')
        out.append(f'<text x="{_fmt(x)}" y="{b + 20}" text-anchor="middle" font-size="11">{lab}</text>')
    for v, lab in _ticks(ax.y0, ax.y1, ax.logy):
        y = ax.py(v)
        out.append(f'<line x1="{l - 5}" y1="{_fmt(y)}" x2="{l}" y2="{_fmt(y)}" stroke="black"/>')
        out.append(f'<text x="{l - 8}" y="{_fmt(y + 4)}" text-anchor="end" font-size="11">{lab}</text>')
    return out


def _document(body: list[str], header: list[str], rows, timestamp: str | None) -> str:
    table = "\n".join([",".join(header)] + [",".join(repr(float(v)) for v in r) for r in rows])
    lines = ['<?xml version="1.0" encoding="UTF-8"?>',
             f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
             f'viewBox="0 0 {WIDTH} {HEIGHT}">',
             f"<!-- data\n{table}\n-->"]
    if timestamp is not None:
        lines.append(f"<!-- generated {timestamp} -->")
    lines.extend(body)
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def _sweep_svg(rep: SweepReport, timestamp):
    xs, ys = list(rep.n1_values), list(rep.ratios)
    ax = _Axes(xs, ys, True, True)
    body = _frame(ax, "N1", "weighted ratio", f"alpha={rep.alpha:g}, s={rep.s:g}: {rep.verdict}")
    k, se = slope_with_error(xs, ys)
    c = float(np.mean(np.log(ys)) - k * np.mean(np.log(xs)))
    fit = [(x, math.exp(c) * x**k) for x in (xs[0], xs[-1])]
    body.append(f'<line x1="{_fmt(ax.px(fit[0][0]))}" y1="{_fmt(ax.py(fit[0][1]))}" '
                f'x2="{_fmt(ax.px(fit[1][0]))}" y2="{_fmt(ax.py(fit[1][1]))}" '
                f'stroke="firebrick" stroke-dasharray="6 4"/>')
    pts = " ".join(f"{_fmt(ax.px(x))},{_fmt(ax.py(y))}" for x, y in zip(xs, ys))
    body.append(f'<polyline points="{pts}" fill="none" stroke="steelblue"/>')
    body.extend(f'<circle cx="{_fmt(ax.px(x))}" cy="{_fmt(ax.py(y))}" r="4" fill="steelblue"/>'
                for x, y in zip(xs, ys))
    body.append(f'<text x="{MARGIN["left"] + 10}" y="{MARGIN["top"] + 18}" font-size="13">'
                f'slope={k:.3f}±{se:.3f} (predicted {rep.predicted_slope:.3f})</text>')
    rows = list(zip(xs, ys))
    return _document(body, ["N1", "ratio"], rows, timestamp), ["N1", "ratio"], rows


def _decay_svg(series: DecaySeries, timestamp):
    xs = list(series.times)
    ys = [max(float(v), LOG_FLOOR) for v in series.values]
    ax = _Axes(xs, ys, False, True)
    body = _frame(ax, "t", f"{series.label} (log scale, floor {LOG_FLOOR:g})", "decay")
    pts = " ".join(f"{_fmt(ax.px(x))},{_fmt(ax.py(y))}" for x, y in zip(xs, ys))
    body.append(f'<polyline points="{pts}" fill="none" stroke="steelblue"/>')
    rows = list(zip(xs, series.values))
    return _document(body, ["t", "value"], rows, timestamp), ["t", "value"], rows


def emit_plot(report, path, *, timestamp: str | None = None) -> None:
    """Write an SVG chart of ``report`` to ``path`` and its data to ``path`` with suffix ``.csv``.

    Sweep reports are drawn on log-log axes with the fitted line and a
    ``slope=k±se`` annotation; decay series on a semilog axis where values
    below ``1e-300`` (including exact zeros) are drawn at the floor.
    """
    path = Path(path)
    if isinstance(report, SweepReport):
        if not report.n1_values:
            raise ValueError("empty sweep report")
        svg, header, rows = _sweep_svg(report, timestamp)
    elif isinstance(report, DecaySeries):
        if not report.times:
            raise ValueError("empty decay series")
        svg, header, rows = _decay_svg(report, timestamp)
    else:
        raise TypeError(f"cannot plot {type(report).__name__}")
    path.write_text(svg)
    if isinstance(report, SweepReport):
        report.write_csv(path.with_suffix(".csv"))
    else:
        _write_csv(path.with_suffix(".csv"), header, rows)
