"""Standalone SVG rendering of ROC/FROC curves with a CSV sidecar of exact points."""

from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .classification import CurveSeries
from .errors import OutputError

W, H = 480, 440
LEFT, RIGHT, TOP, BOTTOM = 60, 20, 40, 50


def _fmt(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".")


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".csv")


def _polyline(points, sx, sy, style) -> str:
    coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in points)
    return f'<polyline fill="none" {style} points="{coords}"/>'


def render_svg(
    curve: CurveSeries,
    band: tuple[Sequence[tuple[float, float]], Sequence[tuple[float, float]]] | None = None,
    title: str | None = None,
) -> str:
    if not curve.points:
        raise ValueError("curve has no points")
    xs = [float(x) for x, _ in curve.points]
    x_max = 1.0 if curve.kind == "roc" else max(1.0, max(xs))
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    sx = lambda x: LEFT + float(x) / x_max * pw
    sy = lambda y: TOP + (1.0 - float(y)) * ph
    xlabel = "False positive rate" if curve.kind == "roc" else "False positives per image"
    ylabel = "Sensitivity"
    title = title or f"{curve.kind.upper()} - {curve.label}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{W // 2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<g id="axes" stroke="black" stroke-width="1">'
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}"/>'
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}"/></g>',
    ]
    ticks = []
    for k in range(5):
        fx = x_max * k / 4
        fy = k / 4
        ticks.append(
            f'<text x="{_fmt(sx(fx))}" y="{TOP + ph + 16}" text-anchor="middle">{_fmt(fx)}</text>'
            f'<text x="{LEFT - 6}" y="{_fmt(sy(fy) + 4)}" text-anchor="end">{_fmt(fy)}</text>'
        )
    out.append(f'<g id="ticks" font-family="sans-serif" font-size="10">{"".join(ticks)}</g>')
    out.append(
        f'<text x="{LEFT + pw // 2}" y="{H - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">{xlabel}</text>'
        f'<text x="16" y="{TOP + ph // 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {TOP + ph // 2})">{ylabel}</text>'
    )
    if curve.kind == "roc":
        out.append(_polyline([(0, 0), (1, 1)], sx, sy, 'class="chance" stroke="#999" stroke-dasharray="2,3"'))
    if band is not None:
        for name, pts in zip(("band-lo", "band-hi"), band):
            out.append(_polyline(pts, sx, sy, f'class="{name}" stroke="red" stroke-dasharray="5,4"'))
    out.append(_polyline(curve.points, sx, sy, 'class="curve" stroke="#1f4fbf" stroke-width="2"'))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_curve_svg(curve: CurveSeries, path, band=None, title: str | None = None) -> Path:
    """Write ``path`` (SVG) and a sidecar CSV ``series,x,y`` with exact float reprs."""
    text = render_svg(curve, band, title)
    side = sidecar_path(path)
    try:
        Path(path).write_text(text, encoding="utf-8")
        with open(side, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["series", "x", "y"])
            for x, y in curve.points:
                w.writerow(["curve", repr(float(x)), repr(float(y))])
            if band is not None:
                for name, pts in zip(("band_lo", "band_hi"), band):
                    for x, y in pts:
                        w.writerow([name, repr(float(x)), repr(float(y))])
    except OSError as exc:
        raise OutputError(os.fspath(path), exc.strerror or exc) from exc
    return side


def read_sidecar(path) -> dict[str, list[tuple[float, float]]]:
    out: dict[str, list[tuple[float, float]]] = {}
    with open(sidecar_path(path), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["series"], []).append((float(row["x"]), float(row["y"])))
    return out
