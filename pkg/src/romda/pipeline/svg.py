"""Minimal SVG emitters: line charts, grouped bars and a field heat map with markers."""
from __future__ import annotations

from html import escape
from pathlib import Path

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")
W, H = 640, 360
PAD_L, PAD_R, PAD_T, PAD_B = 64, 150, 36, 44


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _frame(title, xlabel, ylabel, body):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">\n'
        f'<rect width="{W}" height="{H}" fill="white"/>\n'
        f'<text x="{W / 2:.1f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>\n'
        f'<text x="{PAD_L + (W - PAD_L - PAD_R) / 2:.1f}" y="{H - 8}" text-anchor="middle">'
        f'{escape(xlabel)}</text>\n'
        f'<text x="14" y="{H / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {H / 2:.1f})">{escape(ylabel)}</text>\n'
        + body + "</svg>\n"
    )


def _scale(lo, hi, a, b):
    if hi == lo:
        hi = lo + 1.0
    return lambda v: a + (v - lo) * (b - a) / (hi - lo)


def _axes(xlo, xhi, ylo, yhi):
    x0, x1, y0, y1 = PAD_L, W - PAD_R, H - PAD_B, PAD_T
    out = [f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="#444"/>']
    sy = _scale(ylo, yhi, y0, y1)
    sx = _scale(xlo, xhi, x0, x1)
    for v in np.linspace(ylo, yhi, 5):
        out.append(f'<text x="{x0 - 4}" y="{sy(v) + 4:.1f}" text-anchor="end">{_fmt(v)}</text>')
    for v in np.linspace(xlo, xhi, 5):
        out.append(f'<text x="{sx(v):.1f}" y="{y0 + 14}" text-anchor="middle">{_fmt(v)}</text>')
    return "\n".join(out) + "\n", sx, sy


def _legend(names):
    out = []
    for i, name in enumerate(names):
        y = PAD_T + 14 * i + 6
        c = PALETTE[i % len(PALETTE)]
        out.append(f'<line x1="{W - PAD_R + 10}" y1="{y}" x2="{W - PAD_R + 28}" y2="{y}" '
                   f'stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{W - PAD_R + 32}" y="{y + 4}">{escape(str(name))}</text>')
    return "\n".join(out) + "\n"


def line_chart(series: dict, title="", xlabel="", ylabel="", x=None) -> str:
    """``series`` maps a label to a 1-D array (or an ``(x, y)`` pair)."""
    pairs = {}
    for name, s in series.items():
        if isinstance(s, tuple):
            xs, ys = np.asarray(s[0], float), np.asarray(s[1], float)
        else:
            ys = np.asarray(s, float)
            xs = np.arange(ys.size, dtype=float) if x is None else np.asarray(x, float)
        pairs[name] = (xs, ys)
    allx = np.concatenate([p[0] for p in pairs.values()])
    ally = np.concatenate([p[1] for p in pairs.values()])
    body, sx, sy = _axes(allx.min(), allx.max(), ally.min(), ally.max())
    for i, (name, (xs, ys)) in enumerate(pairs.items()):
        pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(xs, ys))
        body += (f'<polyline fill="none" stroke="{PALETTE[i % len(PALETTE)]}" stroke-width="1.5" '
                 f'points="{pts}"/>\n')
    return _frame(title, xlabel, ylabel, body + _legend(pairs))


def bar_chart(categories, groups: dict, title="", xlabel="", ylabel="") -> str:
    """Grouped bars; ``groups`` maps a label to one value per category."""
    cats = [str(c) for c in categories]
    vals = {k: np.asarray(v, float) for k, v in groups.items()}
    top = max(float(v.max()) for v in vals.values())
    body, _, sy = _axes(0, len(cats), 0.0, top if top > 0 else 1.0)
    span = (W - PAD_L - PAD_R) / max(1, len(cats))
    bw = 0.8 * span / max(1, len(vals))
    for gi, (name, v) in enumerate(vals.items()):
        c = PALETTE[gi % len(PALETTE)]
        for ci, val in enumerate(v):
            x = PAD_L + ci * span + 0.1 * span + gi * bw
            y = sy(val)
            body += (f'<rect x="{x:.1f}" y="{y:.1f}" width="{bw:.1f}" '
                     f'height="{H - PAD_B - y:.1f}" fill="{c}"/>\n')
    for ci, cat in enumerate(cats):
        body += (f'<text x="{PAD_L + (ci + 0.5) * span:.1f}" y="{H - PAD_B + 28}" '
                 f'text-anchor="middle">{escape(cat)}</text>\n')
    return _frame(title, xlabel, ylabel, body + _legend(vals))


def field_map(field2d, markers=(), title="") -> str:
    """Heat map of a (ny, nx) field; ``markers`` are (row, col) cells to circle."""
    f = np.asarray(field2d, float)
    ny, nx = f.shape
    cell = min((W - 40) / nx, (H - 60) / ny)
    lo, hi = float(f.min()), float(f.max())
    norm = _scale(lo, hi, 0.0, 1.0)
    out = []
    for r in range(ny):
        for c in range(nx):
            t = norm(f[r, c])
            red, blue = int(255 * t), int(255 * (1 - t))
            y = 40 + (ny - 1 - r) * cell
            out.append(f'<rect x="{20 + c * cell:.1f}" y="{y:.1f}" width="{cell:.2f}" '
                       f'height="{cell:.2f}" fill="rgb({red},{min(red, blue)},{blue})"/>')
    for r, c in markers:
        out.append(f'<circle cx="{20 + (c + 0.5) * cell:.1f}" cy="{40 + (ny - 1 - r + 0.5) * cell:.1f}" '
                   f'r="{cell / 3:.1f}" fill="none" stroke="black" stroke-width="2"/>')
    body = "\n".join(out) + "\n"
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">\n'
            f'<rect width="{W}" height="{H}" fill="white"/>\n'
            f'<text x="{W / 2:.1f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>\n'
            + body + "</svg>\n")


def write_svg(path, text: str) -> Path:
    path = Path(path)
    path.write_text(text)
    return path
