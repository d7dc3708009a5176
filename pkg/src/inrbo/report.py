"""Run summaries: convergence CSV, a dependency-free SVG plot and a top-k table."""
from __future__ import annotations

import csv
import io
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .driver import RunState, best
from .errors import EmptyRun


def convergence_rows(state: RunState) -> list[tuple[int, str, float, float]]:
    running = state.best_so_far()
    return [(t.index, t.phase, t.score, float(b)) for t, b in zip(state.trials, running)]


def convergence_csv(state: RunState) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["trial", "phase", "score", "best_so_far"])
    for index, phase, score, running in convergence_rows(state):
        writer.writerow([index, phase, repr(score), repr(running)])
    return buf.getvalue()


def convergence_svg(state: RunState, width: int = 640, height: int = 400) -> str:
    """Line plot of best-so-far against trial index; the initial design is shaded."""
    if not state.trials:
        raise EmptyRun("no trials to plot")
    rows = convergence_rows(state)
    xs = np.array([r[0] for r in rows], dtype=float)
    scores = np.array([r[2] for r in rows])
    ys = np.array([r[3] for r in rows])
    left, right, top, bottom = 60, 20, 30, 50
    pw, ph = width - left - right, height - top - bottom
    x_hi = max(xs[-1], 1.0)
    y_lo, y_hi = float(min(scores.min(), ys.min())), float(ys.max())
    if y_hi - y_lo < 1e-12:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def px(x):
        return left + pw * x / x_hi

    def py(y):
        return top + ph * (1.0 - (y - y_lo) / (y_hi - y_lo))

    n_init = sum(1 for r in rows if r[1] == "init")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if n_init:
        shade_end = px(min(n_init - 0.5, x_hi))
        parts.append(f'<rect x="{left}" y="{top}" width="{shade_end - left:.2f}" height="{ph}" '
                     f'fill="#dde6f0"/>')
        parts.append(f'<text x="{left + 4}" y="{top + 14}" fill="#456">initial design</text>')
    parts.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for k in range(5):
        v = y_lo + (y_hi - y_lo) * k / 4
        parts.append(f'<text x="{left - 6}" y="{py(v) + 4:.2f}" text-anchor="end">{v:.3g}</text>')
    for k in range(5):
        v = x_hi * k / 4
        parts.append(f'<text x="{px(v):.2f}" y="{top + ph + 18}" text-anchor="middle">{v:.0f}</text>')
    dots = "".join(f'<circle cx="{px(x):.2f}" cy="{py(s):.2f}" r="2" fill="#999"/>'
                   for x, s in zip(xs, scores))
    parts.append(dots)
    line = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
    parts.append(f'<polyline points="{line}" fill="none" stroke="#c0392b" stroke-width="2"/>')
    metric = escape(state.trials[0].metric)
    parts.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">trial</text>')
    parts.append(f'<text x="{left}" y="{top - 10}">best-so-far {metric}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def top_table(state: RunState, k: int = 5) -> str:
    best(state)  # raises EmptyRun on an empty run
    order = sorted(range(len(state.trials)), key=lambda i: (-state.trials[i].score, i))[:k]
    lines = [f"{'rank':>4}  {'trial':>5}  {'phase':<4}  {'score':>10}  configuration"]
    for rank, i in enumerate(order, start=1):
        t = state.trials[i]
        cfg = t.config
        layers = "; ".join(
            f"{layer.activation.value}(w0={layer.omega0:.3g}, s0={layer.s0:.3g}, b={layer.bias_scale:.3g}, "
            f"r={layer.weight_range:.3g}, lr={layer.lr:.2e}, siren_init={'y' if layer.siren_init else 'n'})"
            for layer in cfg.layers)
        pe = f"pe={cfg.pe_scale:.3g}" if cfg.use_pe else "pe=off"
        lines.append(f"{rank:>4}  {t.index:>5}  {t.phase:<4}  {t.score:>10.4f}  {pe} | {layers}")
    return "\n".join(lines) + "\n"


def write_report(state: RunState, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "convergence.csv", "svg": out / "convergence.svg", "top": out / "top5.txt"}
    table = top_table(state)
    paths["csv"].write_text(convergence_csv(state), encoding="utf-8")
    paths["svg"].write_text(convergence_svg(state), encoding="utf-8")
    paths["top"].write_text(table, encoding="utf-8")
    return paths


__all__ = ["convergence_csv", "convergence_rows", "convergence_svg", "top_table", "write_report"]
