"""Self-contained SVG line charts of sweep results (mean with 95% interval bars)."""

import math
from xml.sax.saxutils import escape

from .errors import EmptyResultError

WIDTH, HEIGHT = 640, 420
MARGIN = (70, 20, 40, 150)  # left, top, bottom, right
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
AXIS_LABEL = {"users": "Number of users", "distance_m": "Distance from AP [m]", "snr_db": "Receive SNR [dB]"}
METRIC_LABEL = {"sum_rate_mbps": "Sum rate [Mbps]", "total_energy_mw": "Total energy [mW]"}


def _metric_for(scheme):
    return "total_energy_mw" if scheme.endswith("/energy") else "sum_rate_mbps"


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (m * step) <= n:
            step *= m
            break
    first = math.ceil(lo / step) * step
    return [first + k * step for k in range(int((hi - first) / step + 1e-9) + 1)]


def _panel(result, metric, schemes, x0, title):
    """SVG fragments for one chart panel at horizontal offset ``x0``."""
    var = result.sweep_variable()
    summary = result.summary(metric)
    series = {s: [(x, st) for x, st, _ in summary[s] if st is not None] for s in schemes}
    pts = [(x, st) for ser in series.values() for x, st in ser]
    if not pts:
        return [f'<text x="{x0 + 100}" y="{HEIGHT / 2}">no converged trials</text>']
    log_y = metric == "total_energy_mw" and min(st["mean"] for _, st in pts) > 0
    xs = [x for x, _ in pts]
    ys = [v for _, st in pts for v in (st["ci_low"], st["ci_high"], st["mean"])]
    if log_y:
        ys = [math.log10(v) for v in ys if v > 0]
    xlo, xhi = min(xs), max(xs)
    ylo, yhi = min(ys), max(ys)
    if xhi == xlo:
        xlo, xhi = xlo - 1, xhi + 1
    if yhi == ylo:
        ylo, yhi = ylo - 1, yhi + 1
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad
    left, top, bottom, right = MARGIN
    w = WIDTH - left - right
    h = HEIGHT - top - bottom

    def px(x):
        return x0 + left + (x - xlo) / (xhi - xlo) * w

    def py(y):
        if log_y:
            y = math.log10(max(y, 1e-300))
        return top + (yhi - y) / (yhi - ylo) * h

    out = [f'<g class="panel" data-metric="{metric}">']
    out.append(f'<rect x="{x0 + left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="#000"/>')
    for t in _ticks(xlo, xhi):
        out.append(f'<text x="{px(t):.2f}" y="{top + h + 16}" text-anchor="middle" font-size="11">{t:g}</text>')
    for t in _ticks(ylo, yhi):
        label = f"1e{t:g}" if log_y else f"{t:g}"
        y = top + (yhi - t) / (yhi - ylo) * h
        out.append(f'<text x="{x0 + left - 6}" y="{y + 4:.2f}" text-anchor="end" font-size="11">{label}</text>')
    out.append(f'<text x="{x0 + left + w / 2}" y="{HEIGHT - 6}" text-anchor="middle" font-size="12">'
               f"{escape(AXIS_LABEL.get(var, var))}</text>")
    ylab = METRIC_LABEL[metric] + (" (log)" if log_y else "")
    out.append(f'<text x="{x0 + 14}" y="{top + h / 2}" transform="rotate(-90 {x0 + 14} {top + h / 2})" '
               f'text-anchor="middle" font-size="12">{escape(ylab)}</text>')
    out.append(f'<text x="{x0 + left + w / 2}" y="{top - 4}" text-anchor="middle" font-size="12">{escape(title)}'
               "</text>")
    for k, s in enumerate(schemes):
        color = PALETTE[k % len(PALETTE)]
        ser = series[s]
        if not ser:
            continue
        line = " ".join(f"{px(x):.2f},{py(st['mean']):.2f}" for x, st in ser)
        out.append(f'<polyline data-scheme="{escape(s)}" points="{line}" fill="none" stroke="{color}" '
                   'stroke-width="1.5"/>')
        for x, st in ser:
            lo = st["ci_low"] if not log_y or st["ci_low"] > 0 else st["mean"]
            out.append(f'<line x1="{px(x):.2f}" y1="{py(lo):.2f}" x2="{px(x):.2f}" y2="{py(st["ci_high"]):.2f}" '
                       f'stroke="{color}"/>')
        ly = top + 14 + 16 * k
        lx = x0 + left + w + 10
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 22}" y="{ly + 4}" font-size="11">{escape(s)}</text>')
    out.append("</g>")
    return out


def to_svg(result, title=""):
    """Render one panel per metric present (rate and/or energy rows)."""
    if not result.rows:
        raise EmptyResultError("nothing to plot")
    groups = {}
    for s in result.schemes():
        groups.setdefault(_metric_for(s), []).append(s)
    panels = [m for m in ("sum_rate_mbps", "total_energy_mw") if m in groups]
    total_w = WIDTH * len(panels)
    body = []
    for k, metric in enumerate(panels):
        body += _panel(result, metric, groups[metric], k * WIDTH, title)
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{HEIGHT}" '
            f'viewBox="0 0 {total_w} {HEIGHT}" font-family="sans-serif">')
    return "\n".join([head, f'<rect width="{total_w}" height="{HEIGHT}" fill="#fff"/>'] + body + ["</svg>"]) + "\n"


def write_svg(result, path, title=""):
    with open(path, "w") as fh:
        fh.write(to_svg(result, title))
