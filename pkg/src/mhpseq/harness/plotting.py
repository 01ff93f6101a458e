"""Trajectory drawings: a standalone SVG scene and matplotlib report figures."""
from __future__ import annotations

from xml.sax.saxutils import quoteattr

import numpy as np

OBSERVED = "#1f77b4"
TRUTH = "#2ca02c"
HYPOTHESIS = "#ffbf00"


def _shape(points, color, width):
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(p) == 1:
        return (f'<circle cx="{p[0, 0]:.6g}" cy="{-p[0, 1]:.6g}" r="{1.5 * width:.6g}" '
                f'fill={quoteattr(color)} />')
    coords = " ".join(f"{x:.6g},{-y:.6g}" for x, y in p)
    return (f'<polyline points="{coords}" fill="none" stroke={quoteattr(color)} '
            f'stroke-width="{width:.6g}" stroke-linejoin="round" />')


def plot_trajectories(observed=None, truth=None, hypotheses=()):
    """SVG document for one scene; map y points up, so SVG y is negated."""
    layers = [(observed, OBSERVED), (truth, TRUTH)] + [(h, HYPOTHESIS) for h in hypotheses]
    layers = [(np.asarray(p, dtype=float).reshape(-1, 2), c) for p, c in layers if p is not None and len(p)]
    if not layers:
        raise ValueError("nothing to draw")
    allp = np.concatenate([p for p, _ in layers])
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    margin = 0.05 * span
    lo, hi = lo - margin, hi + margin
    w, h = hi - lo
    width = 0.006 * max(w, h)
    body = "\n".join("  " + _shape(p, c, width) for p, c in layers)
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{lo[0]:.6g} {-hi[1]:.6g} {w:.6g} {h:.6g}" '
        'width="480" height="480" preserveAspectRatio="xMidYMid meet">\n'
        f'{body}\n</svg>\n'
    )


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def save_scene_figure(path, observed, truth, hypotheses, title=""):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4, 4))
    if observed is not None and len(observed):
        ax.plot(*np.asarray(observed).T, "-o", color=OBSERVED, ms=2, lw=1.2, label="observed")
    if truth is not None and len(truth):
        ax.plot(*np.asarray(truth).T, "-", color=TRUTH, lw=1.2, label="ground truth")
    for k, hyp in enumerate(hypotheses):
        ax.plot(*np.asarray(hyp).T, "-", color=HYPOTHESIS, lw=1.2, label="hypotheses" if k == 0 else None)
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(fontsize=7, loc="best")
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_correctness_figure(path, points, correct, title=""):
    """Points where the prediction set equals the label set in green, else red."""
    plt = _pyplot()
    pts = np.asarray(points).reshape(-1, 2)
    ok = np.asarray(correct, dtype=bool).reshape(-1)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(*pts[~ok].T, s=1, c="#d62728", label="set mismatch")
    ax.scatter(*pts[ok].T, s=1, c=TRUTH, label="set match")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(fontsize=7, markerscale=6, loc="best")
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_metrics_figure(path, report):
    plt = _pyplot()
    names = [n for n, _ in report.rows]
    metrics = report.metrics
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(metrics), 3))
    width = 0.8 / max(len(names), 1)
    xs = np.arange(len(metrics))
    for k, (name, values) in enumerate(report.rows):
        ax.bar(xs + k * width, [values[m] for m in metrics], width, label=name)
    ax.set_xticks(xs + 0.4 - width / 2)
    ax.set_xticklabels(metrics)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
