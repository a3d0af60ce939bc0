"""Standalone SVG emitter for sweep accuracy plots.

One polyline per (patch_size, layers) variant, head count on the x axis and
test accuracy (fixed [0, 1] range) on the y axis. No imaging dependency; the
output is plain XML that tests can inspect structurally.
"""

from __future__ import annotations

from .sweep import SweepRow

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")

_WIDTH, _HEIGHT = 720, 440
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 60, 180, 30, 50


def render_sweep_svg(rows: list[SweepRow]) -> str:
    """Render sweep rows as an SVG document string."""
    usable = [r for r in rows if r.status == "ok" and r.test_acc is not None]
    if not usable:
        raise ValueError("no plottable rows (need status=ok rows with test accuracy)")

    heads = sorted({r.heads for r in usable})
    variants = sorted({(r.patch_size, r.layers) for r in usable})
    by_key = {(r.patch_size, r.layers, r.heads): r.test_acc for r in usable}

    x_lo, x_hi = _MARGIN_L, _WIDTH - _MARGIN_R
    y_lo, y_hi = _HEIGHT - _MARGIN_B, _MARGIN_T
    h_min, h_max = heads[0], heads[-1]

    def x_pos(h: int) -> float:
        if h_max == h_min:
            return (x_lo + x_hi) / 2.0
        return x_lo + (h - h_min) / (h_max - h_min) * (x_hi - x_lo)

    def y_pos(acc: float) -> float:
        return y_lo + acc * (y_hi - y_lo)

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<line x1="{x_lo}" y1="{y_lo}" x2="{x_hi}" y2="{y_lo}" stroke="black"/>',
        f'<line x1="{x_lo}" y1="{y_lo}" x2="{x_lo}" y2="{y_hi}" stroke="black"/>',
    ]
    for tick in range(0, 11, 2):
        acc = tick / 10.0
        y = y_pos(acc)
        parts.append(f'<line x1="{x_lo - 4}" y1="{y:.1f}" x2="{x_lo}" y2="{y:.1f}" '
                     'stroke="black"/>')
        parts.append(f'<text x="{x_lo - 8}" y="{y + 4:.1f}" text-anchor="end">'
                     f'{acc:.1f}</text>')
    for h in heads:
        x = x_pos(h)
        parts.append(f'<line x1="{x:.1f}" y1="{y_lo}" x2="{x:.1f}" y2="{y_lo + 4}" '
                     'stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{y_lo + 18}" text-anchor="middle">{h}</text>')
    parts.append(f'<text x="{(x_lo + x_hi) / 2:.1f}" y="{_HEIGHT - 12}" '
                 'text-anchor="middle">number of heads</text>')
    parts.append(f'<text x="16" y="{(y_lo + y_hi) / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 16 {(y_lo + y_hi) / 2:.1f})">test accuracy</text>')

    legend_x = x_hi + 16
    legend_y = _MARGIN_T + 10
    for i, (patch, layers) in enumerate(variants):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{x_pos(h):.1f},{y_pos(by_key[(patch, layers, h)]):.1f}"
                       for h in heads if (patch, layers, h) in by_key)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     'stroke-width="2"/>')
        ly = legend_y + 18 * i
        parts.append(f'<line x1="{legend_x}" y1="{ly - 4}" x2="{legend_x + 22}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{legend_x + 28}" y="{ly}">'
                     f'ViT-{patch} (layers={layers})</text>')

    parts.append("</svg>")
    return "\n".join(parts)
