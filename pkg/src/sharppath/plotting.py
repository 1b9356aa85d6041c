"""Minimal SVG rendering of training logs. No plotting dependency; every
plotted number comes straight from a log row."""
import math
from xml.sax.saxutils import escape

from .errors import ConfigError

KINDS = ("eigenvalue-trace", "accuracy", "alignment", "alpha-delta", "surface-scan")
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
          "#bcbd22", "#17becf")
W, H = 640, 400
ML, MR, MT, MB = 70, 150, 40, 50


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12 * abs(hi):
        out.append(round(v, 12))
        v += step
    return out


class _Canvas:
    def __init__(self, xlo, xhi, ylo, yhi, log_y=False):
        if xhi == xlo:
            xlo, xhi = xlo - 0.5, xhi + 0.5
        self.log_y = log_y
        if log_y:
            ylo, yhi = math.log10(ylo), math.log10(yhi)
        if yhi == ylo:
            ylo, yhi = ylo - 0.5, yhi + 0.5
        self.x = (xlo, xhi)
        self.y = (ylo, yhi)
        self.parts = []

    def px(self, x):
        lo, hi = self.x
        return ML + (x - lo) / (hi - lo) * (W - ML - MR)

    def py(self, y):
        if self.log_y:
            y = math.log10(y)
        lo, hi = self.y
        return H - MB - (y - lo) / (hi - lo) * (H - MT - MB)

    def axes(self, title, xlabel, ylabel):
        p = self.parts
        p.append(f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" fill="none" stroke="#333"/>')
        p.append(f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>')
        p.append(f'<text x="{(ML + W - MR) / 2:.1f}" y="{H - 10}" text-anchor="middle" font-size="12">'
                 f'{escape(xlabel)}</text>')
        p.append(f'<text x="16" y="{H / 2:.1f}" text-anchor="middle" font-size="12" '
                 f'transform="rotate(-90 16 {H / 2:.1f})">{escape(ylabel)}</text>')
        for t in _ticks(*self.x):
            x = self.px(t)
            p.append(f'<line x1="{x:.2f}" y1="{H - MB}" x2="{x:.2f}" y2="{H - MB + 5}" stroke="#333"/>')
            p.append(f'<text x="{x:.2f}" y="{H - MB + 18}" text-anchor="middle" font-size="10">{t:g}</text>')
        if self.log_y:
            yt = [10.0 ** e for e in range(math.floor(self.y[0]), math.ceil(self.y[1]) + 1)]
            yt = [t for t in yt if self.y[0] - 1e-9 <= math.log10(t) <= self.y[1] + 1e-9] or [10 ** self.y[0]]
        else:
            yt = _ticks(*self.y)
        for t in yt:
            y = self.py(t)
            p.append(f'<line x1="{ML - 5}" y1="{y:.2f}" x2="{ML}" y2="{y:.2f}" stroke="#333"/>')
            p.append(f'<text x="{ML - 8}" y="{y + 3:.2f}" text-anchor="end" font-size="10">{t:g}</text>')

    def polyline(self, xs, ys, color, label, idx, dashed=False):
        pts = " ".join(f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in zip(xs, ys))
        dash = ' stroke-dasharray="5,3"' if dashed else ""
        self.parts.append(f'<polyline class="series" data-label="{escape(label)}" fill="none" stroke="{color}" '
                          f'stroke-width="1.6"{dash} points="{pts}"/>')
        self.legend(label, color, idx)

    def legend(self, label, color, idx):
        y = MT + 14 + 16 * idx
        self.parts.append(f'<line x1="{W - MR + 10}" y1="{y - 4}" x2="{W - MR + 28}" y2="{y - 4}" '
                          f'stroke="{color}" stroke-width="2"/>')
        self.parts.append(f'<text x="{W - MR + 32}" y="{y}" font-size="10">{escape(label)}</text>')

    def svg(self):
        body = "\n".join(self.parts)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
                f'viewBox="0 0 {W} {H}">\n<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n')


def line_chart(series, title, xlabel, ylabel, log_y=False):
    """``series`` is a list of (label, xs, ys[, dashed])."""
    xs = [x for s in series for x in s[1]]
    ys = [y for s in series for y in s[2]]
    if not xs:
        raise ConfigError("nothing to plot")
    if log_y:
        ys = [y for y in ys if y > 0]
        if not ys:
            raise ConfigError("log-scale plot needs positive values")
    c = _Canvas(min(xs), max(xs), min(ys), max(ys), log_y)
    c.axes(title, xlabel, ylabel)
    for i, s in enumerate(series):
        label, sx, sy = s[:3]
        dashed = len(s) > 3 and s[3]
        pts = [(x, y) for x, y in zip(sx, sy) if not log_y or y > 0]
        c.polyline([p[0] for p in pts], [p[1] for p in pts], COLORS[i % len(COLORS)], label, i, dashed)
    return c.svg()


def bar_chart(groups, title, xlabel, ylabel):
    """``groups``: list of (label, {category: value}); bars grouped by category."""
    cats = sorted({k for _, d in groups for k in d})
    vals = [v for _, d in groups for v in d.values()]
    if not vals:
        raise ConfigError("nothing to plot")
    lo, hi = min(0.0, min(vals)), max(0.0, max(vals))
    c = _Canvas(-0.5, len(cats) - 0.5, lo, hi)
    c.axes(title, xlabel, ylabel)
    width = 0.8 / max(1, len(groups))
    zero = c.py(0.0)
    for gi, (label, d) in enumerate(groups):
        color = COLORS[gi % len(COLORS)]
        for ci, cat in enumerate(cats):
            if cat not in d:
                continue
            x0 = c.px(ci - 0.4 + gi * width)
            x1 = c.px(ci - 0.4 + (gi + 1) * width)
            y = c.py(d[cat])
            c.parts.append(f'<rect class="bar" data-label="{escape(str(label))}" data-cat="{cat}" '
                           f'data-value="{d[cat]!r}" x="{x0:.2f}" y="{min(y, zero):.2f}" '
                           f'width="{x1 - x0:.2f}" height="{abs(zero - y):.2f}" fill="{color}"/>')
        c.legend(str(label), color, gi)
    for ci, cat in enumerate(cats):
        c.parts.append(f'<text x="{c.px(ci):.2f}" y="{H - MB + 32}" text-anchor="middle" font-size="10">'
                       f'alpha={cat:g}</text>')
    c.parts.append(f'<line x1="{ML}" y1="{zero:.2f}" x2="{W - MR}" y2="{zero:.2f}" stroke="#999"/>')
    return c.svg()


def _name(log, i):
    return log.config.get("name") or f"run {i}"


def render(logs, kind, names=None):
    """SVG text for ``kind`` from a list of TrainingLogs."""
    if kind not in KINDS:
        raise ConfigError(f"unknown plot kind {kind!r}; expected one of {', '.join(KINDS)}")
    if not logs or all(not lg.records and not lg.probes for lg in logs):
        raise ConfigError("no records to plot")
    names = names or [_name(lg, i) for i, lg in enumerate(logs)]
    if kind == "eigenvalue-trace":
        series = []
        for name, lg in zip(names, logs):
            rows = [r for r in lg.records if r.lambdas]
            series.append((name, [r.t for r in rows], [r.lambdas[0] for r in rows]))
        return line_chart(series, "Largest Hessian eigenvalue", "iteration", "lambda_1", log_y=True)
    if kind == "accuracy":
        series = []
        for name, lg in zip(names, logs):
            rows = lg.boundary_records()
            for field in ("train_acc", "val_acc", "test_acc"):
                pts = [(r.epoch, getattr(r, field)) for r in rows if getattr(r, field) is not None]
                if pts:
                    series.append((f"{name} {field}", [p[0] for p in pts], [p[1] for p in pts], field != "train_acc"))
        return line_chart(series, "Accuracy", "epoch", "accuracy")
    if kind == "alignment":
        series = []
        for name, lg in zip(names, logs):
            rows = [r for r in lg.boundary_records() if r.alignment is not None and r.train_acc is not None]
            series.append((name, [r.train_acc for r in rows], [r.alignment for r in rows]))
        return line_chart(series, "Gradient alignment with top eigenvectors", "training accuracy", "mean |cos|")
    if kind == "alpha-delta":
        groups = []
        for name, lg in zip(names, logs):
            if not lg.probes:
                continue
            alphas = sorted({a for p in lg.probes for a in p.deltas})
            groups.append((name, {a: sum(p.deltas[a] for p in lg.probes) / len(lg.probes) for a in alphas}))
        if not groups:
            raise ConfigError("logs hold no probe results")
        return bar_chart(groups, "Mean loss change along e_i", "step multiplier", "loss change")
    series = []
    for name, lg in zip(names, logs):
        for p in lg.probes:
            series.append((f"{name} t={p.step}", [k for k, _ in p.scan], [v for _, v in p.scan]))
    if not series:
        raise ConfigError("logs hold no probe results")
    return line_chart(series, "Loss along the top eigenvector", "k (units of expected step)", "loss")
