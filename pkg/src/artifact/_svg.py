"""Minimal SVG writers: line plots and a heatmap with polyline overlays."""

import math
from xml.sax.saxutils import escape

import numpy as np

W, H = 640, 440
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 55
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(lo), math.ceil(hi)
        return [float(k) for k in range(a, b + 1)]
    return list(np.linspace(lo, hi, 5))


def _header(title, config_hash):
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">']
    if config_hash:
        out.append(f"<!-- config_hash={config_hash} -->")
    out.append(f'<rect width="{W}" height="{H}" fill="white"/>')
    out.append(f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>')
    return out


def line_plot(path, series, title, xlabel, ylabel, logx=False, logy=False, config_hash=None, note=None):
    """``series`` is a list of (label, xs, ys)."""
    tx = (lambda v: np.log10(v)) if logx else (lambda v: np.asarray(v, float))
    ty = (lambda v: np.log10(v)) if logy else (lambda v: np.asarray(v, float))
    xs_all = np.concatenate([tx(np.asarray(s[1], float)) for s in series])
    ys_all = np.concatenate([ty(np.asarray(s[2], float)) for s in series])
    ok = np.isfinite(xs_all) & np.isfinite(ys_all)
    x0, x1 = float(xs_all[ok].min()), float(xs_all[ok].max())
    y0, y1 = float(ys_all[ok].min()), float(ys_all[ok].max())
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(v):
        return LEFT + (v - x0) / (x1 - x0) * (W - LEFT - RIGHT)

    def py(v):
        return H - BOTTOM - (v - y0) / (y1 - y0) * (H - TOP - BOTTOM)

    out = _header(title, config_hash)
    out.append(f'<rect x="{LEFT}" y="{TOP}" width="{W - LEFT - RIGHT}" height="{H - TOP - BOTTOM}" '
               'fill="none" stroke="black"/>')
    for t in _ticks(x0, x1, logx):
        if x0 <= t <= x1:
            lab = f"1e{int(t)}" if logx else f"{t:.3g}"
            out.append(f'<text x="{px(t):.1f}" y="{H - BOTTOM + 16}" text-anchor="middle" font-size="11">{lab}</text>')
    for t in _ticks(y0, y1, logy):
        if y0 <= t <= y1:
            lab = f"1e{int(t)}" if logy else f"{t:.3g}"
            out.append(f'<text x="{LEFT - 6}" y="{py(t) + 4:.1f}" text-anchor="end" font-size="11">{lab}</text>')
    out.append(f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{H / 2}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 16 {H / 2})">{escape(ylabel)}</text>')
    for k, (label, xs, ys) in enumerate(series):
        col = COLORS[k % len(COLORS)]
        X, Y = tx(np.asarray(xs, float)), ty(np.asarray(ys, float))
        good = np.isfinite(X) & np.isfinite(Y)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(X[good], Y[good]))
        if good.sum() > 1:
            out.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="1.6"/>')
        for a, b in zip(X[good], Y[good]):
            out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="2.5" fill="{col}"/>')
        out.append(f'<text x="{W - RIGHT - 8}" y="{TOP + 16 + 14 * k}" text-anchor="end" font-size="11" '
                   f'fill="{col}">{escape(label)}</text>')
    if note:
        out.append(f'<text x="{LEFT + 6}" y="{TOP + 14}" font-size="11" fill="#a00">{escape(note)}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
    return path


def _color(v, lo, hi):
    t = 0.0 if hi <= lo else min(max((v - lo) / (hi - lo), 0.0), 1.0)
    # blue -> yellow ramp
    r, g, b = int(40 + 215 * t), int(60 + 170 * t), int(160 - 120 * t)
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(path, xs, ys, values, title, overlays=(), config_hash=None, max_cells=120):
    """Cell colors from ``values[i, j]`` at (xs[i], ys[j]); NaN cells are left blank."""
    step = max(1, int(math.ceil(max(len(xs), len(ys)) / max_cells)))
    xs_s, ys_s, V = xs[::step], ys[::step], values[::step, ::step]
    finite = V[np.isfinite(V)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    x0, x1, y0, y1 = xs[0], xs[-1], ys[0], ys[-1]
    sw = (W - LEFT - RIGHT) / len(xs_s)
    sh = (H - TOP - BOTTOM) / len(ys_s)

    def px(v):
        return LEFT + (v - x0) / (x1 - x0) * (W - LEFT - RIGHT)

    def py(v):
        return H - BOTTOM - (v - y0) / (y1 - y0) * (H - TOP - BOTTOM)

    out = _header(title, config_hash)
    for i in range(len(xs_s)):
        for j in range(len(ys_s)):
            v = V[i, j]
            if np.isfinite(v):
                out.append(f'<rect x="{LEFT + i * sw:.2f}" y="{H - BOTTOM - (j + 1) * sh:.2f}" '
                           f'width="{sw + 0.3:.2f}" height="{sh + 0.3:.2f}" fill="{_color(v, lo, hi)}"/>')
    for pts in overlays:
        poly = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in pts)
        out.append(f'<polyline points="{poly}" fill="none" stroke="black" stroke-width="0.8"/>')
    out.append(f'<rect x="{LEFT}" y="{TOP}" width="{W - LEFT - RIGHT}" height="{H - TOP - BOTTOM}" '
               'fill="none" stroke="black"/>')
    out.append(f'<text x="{LEFT}" y="{H - 20}" font-size="11">min {lo:.4g}   max {hi:.4g}</text>')
    out.append(f'<text x="{W / 2}" y="{H - 6}" text-anchor="middle" font-size="11">x1 in [{x0:.3g}, {x1:.3g}], '
               f'x2 in [{y0:.3g}, {y1:.3g}]</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
    return path
