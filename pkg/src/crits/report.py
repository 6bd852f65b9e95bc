"""Standalone SVG rendering: saliency heatmaps and metric boxplots.

Output is plain text with fixed number formatting and no timestamps, so
identical inputs produce identical files.
"""

from __future__ import annotations

from html import escape

import numpy as np

from crits.evaluation import EvalReport, _setting_key

__all__ = ["heatmap_svg", "boxplot_svg", "report_svgs", "diverging_color"]

PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")


def _n(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def diverging_color(value: float, scale: float) -> str:
    """Blue (negative) - white (zero) - red (positive), symmetric in ``scale``."""
    if scale <= 0:
        return "#ffffff"
    t = max(-1.0, min(1.0, value / scale))
    if t >= 0:
        r, g, b = 255, round(255 * (1 - t)), round(255 * (1 - t))
    else:
        r, g, b = round(255 * (1 + t)), round(255 * (1 + t)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(values, title: str = "", series=None, cell_w: float | None = None, cell_h: float = 24.0) -> str:
    """Heatmap of an (m, T) map with a zero-centred diverging scale.

    When ``series`` (same shape) is given, each channel's values are drawn
    as a polyline over its row.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    m, T = values.shape
    if cell_w is None:
        cell_w = max(2.0, min(16.0, 800.0 / T))
    left, top, legend = 60.0, 40.0 if title else 16.0, 40.0
    width = left + T * cell_w + 20
    height = top + m * cell_h + legend
    scale = float(np.max(np.abs(values))) if values.size else 0.0
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_n(width)}" height="{_n(height)}" '
        f'viewBox="0 0 {_n(width)} {_n(height)}">',
        f'<rect width="{_n(width)}" height="{_n(height)}" fill="#ffffff"/>',
    ]
    if title:
        out.append(f'<text x="{_n(left)}" y="24" font-family="sans-serif" font-size="14">{escape(title)}</text>')
    for c in range(m):
        y = top + c * cell_h
        out.append(f'<text x="{_n(left - 6)}" y="{_n(y + cell_h / 2 + 4)}" font-family="sans-serif" '
                   f'font-size="11" text-anchor="end">ch{c}</text>')
        for t in range(T):
            out.append(f'<rect x="{_n(left + t * cell_w)}" y="{_n(y)}" width="{_n(cell_w)}" '
                       f'height="{_n(cell_h)}" fill="{diverging_color(values[c, t], scale)}"/>')
        if series is not None:
            s = np.asarray(series, dtype=np.float64)[c]
            lo, hi = float(s.min()), float(s.max())
            span = hi - lo if hi > lo else 1.0
            pts = " ".join(
                f"{_n(left + (t + 0.5) * cell_w)},{_n(y + cell_h - 2 - (cell_h - 4) * (s[t] - lo) / span)}"
                for t in range(T)
            )
            out.append(f'<polyline points="{pts}" fill="none" stroke="#000000" stroke-width="1"/>')
    ly = top + m * cell_h + 12
    out.append(f'<text x="{_n(left)}" y="{_n(ly + 12)}" font-family="sans-serif" font-size="11">'
               f'scale: -{scale:.4g} (blue) .. 0 (white) .. +{scale:.4g} (red)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _box_stats(v: np.ndarray):
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo = v[v >= q1 - 1.5 * iqr].min()
    hi = v[v <= q3 + 1.5 * iqr].max()
    outliers = v[(v < lo) | (v > hi)]
    return float(q1), float(med), float(q3), float(lo), float(hi), outliers


def boxplot_svg(groups: dict, title: str = "", ylabel: str = "") -> str:
    """Grouped boxplots.

    ``groups`` maps a group label to ``{series label: values}``; each group
    gets one box per series, coloured consistently across groups.
    """
    series_names = sorted({s for g in groups.values() for s in g})
    colors = {s: PALETTE[i % len(PALETTE)] for i, s in enumerate(series_names)}
    all_vals = np.concatenate([np.asarray(v, float) for g in groups.values() for v in g.values()] or [np.zeros(1)])
    vmin, vmax = float(all_vals.min()), float(all_vals.max())
    if vmax <= vmin:
        vmax = vmin + 1.0
    pad = 0.05 * (vmax - vmin)
    vmin, vmax = vmin - pad, vmax + pad

    box_w, gap = 18.0, 28.0
    group_w = max(1, len(series_names)) * box_w + gap
    left, top, plot_h = 70.0, 40.0, 260.0
    width = left + len(groups) * group_w + 160
    height = top + plot_h + 60

    def ys(v):
        return top + plot_h * (1 - (v - vmin) / (vmax - vmin))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_n(width)}" height="{_n(height)}" '
        f'viewBox="0 0 {_n(width)} {_n(height)}">',
        f'<rect width="{_n(width)}" height="{_n(height)}" fill="#ffffff"/>',
        f'<text x="{_n(left)}" y="24" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<line x1="{_n(left)}" y1="{_n(top)}" x2="{_n(left)}" y2="{_n(top + plot_h)}" stroke="#000000"/>',
        f'<line x1="{_n(left)}" y1="{_n(top + plot_h)}" x2="{_n(width - 160)}" y2="{_n(top + plot_h)}" stroke="#000000"/>',
    ]
    for tick in np.linspace(vmin + pad, vmax - pad, 5):
        out.append(f'<text x="{_n(left - 6)}" y="{_n(ys(tick) + 4)}" font-family="sans-serif" font-size="10" '
                   f'text-anchor="end">{tick:.3g}</text>')
        out.append(f'<line x1="{_n(left - 3)}" y1="{_n(ys(tick))}" x2="{_n(left)}" y2="{_n(ys(tick))}" stroke="#000000"/>')
    if ylabel:
        out.append(f'<text x="14" y="{_n(top + plot_h / 2)}" font-family="sans-serif" font-size="11" '
                   f'transform="rotate(-90 14 {_n(top + plot_h / 2)})" text-anchor="middle">{escape(ylabel)}</text>')
    for gi, (glabel, series) in enumerate(groups.items()):
        gx = left + gap / 2 + gi * group_w
        for si, name in enumerate(series_names):
            if name not in series or len(series[name]) == 0:
                continue
            v = np.asarray(series[name], dtype=np.float64)
            q1, med, q3, lo, hi, outliers = _box_stats(v)
            x = gx + si * box_w
            cx = x + box_w / 2 - 2
            col = colors[name]
            out.append(f'<line x1="{_n(cx)}" y1="{_n(ys(lo))}" x2="{_n(cx)}" y2="{_n(ys(hi))}" stroke="{col}"/>')
            out.append(f'<rect x="{_n(x)}" y="{_n(ys(q3))}" width="{_n(box_w - 4)}" '
                       f'height="{_n(max(ys(q1) - ys(q3), 0.5))}" fill="{col}" fill-opacity="0.5" stroke="{col}"/>')
            out.append(f'<line x1="{_n(x)}" y1="{_n(ys(med))}" x2="{_n(x + box_w - 4)}" y2="{_n(ys(med))}" '
                       f'stroke="#000000" stroke-width="1.5"/>')
            for o in outliers:
                out.append(f'<circle cx="{_n(cx)}" cy="{_n(ys(o))}" r="2" fill="none" stroke="{col}"/>')
        out.append(f'<text x="{_n(gx + (group_w - gap) / 2)}" y="{_n(top + plot_h + 16)}" font-family="sans-serif" '
                   f'font-size="11" text-anchor="middle">{escape(str(glabel))}</text>')
    lx = width - 150
    for i, name in enumerate(series_names):
        y = top + 14 * i
        out.append(f'<rect x="{_n(lx)}" y="{_n(y)}" width="10" height="10" fill="{colors[name]}"/>')
        out.append(f'<text x="{_n(lx + 14)}" y="{_n(y + 9)}" font-family="sans-serif" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def report_svgs(report: EvalReport) -> dict[str, str]:
    """One boxplot per metric: alignment by perturbation, input-sensitivity by
    noise level (boxes over repetitions) and sparsity by explainer (boxes
    over instances)."""
    figures = {}
    for metric, ylabel in (("alignment", "A (RMSE of probability change)"),
                           ("input_sensitivity", "IS (RMSE between explanations)")):
        rows = [r for r in report.records if r[2] == metric]
        if not rows:
            continue
        settings = sorted({r[3] for r in rows}, key=_setting_key)
        groups = {s: {} for s in settings}
        for e, _, _, s, _, v in rows:
            groups[s].setdefault(e, []).append(v)
        figures[metric] = boxplot_svg(groups, f"{metric} ({report.metadata.get('dataset', '')})", ylabel)
    rows = [r for r in report.records if r[2] == "sparsity"]
    if rows:
        groups = {}
        for e, _, _, _, _, v in rows:
            groups.setdefault(e, {}).setdefault(e, []).append(v)
        figures["sparsity"] = boxplot_svg(dict(sorted(groups.items())),
                                          f"sparsity ({report.metadata.get('dataset', '')})", "S")
    return figures
