"""Figure rendering for the CLI report path.

Figures land next to the delimited output: a log-log MSE scaling plot with
fitted slopes when the run sweeps several population sizes, and a variance
bar chart per estimator at the largest size.
"""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_report", "loglog_slope"]


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    if lx.size < 2:
        raise ValueError("need at least two points for a slope")
    coeffs = np.polyfit(lx, ly, 1)
    return float(coeffs[0])


def render_report(outdir: Path, summaries) -> list[Path]:
    outdir = Path(outdir)
    written: list[Path] = []

    by_est: dict[str, list] = defaultdict(list)
    for s in summaries:
        by_est[s.estimator].append(s)

    multi_n = any(len(rows) > 1 for rows in by_est.values())
    if multi_n:
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for name, rows in by_est.items():
            rows = sorted(rows, key=lambda r: r.n)
            ns = [r.n for r in rows]
            mses = [r.mse for r in rows]
            label = name
            if len(ns) >= 2 and all(m > 0 for m in mses):
                label = f"{name} (slope {loglog_slope(ns, mses):+.2f})"
            ax.loglog(ns, mses, marker="o", label=label)
        ax.set_xlabel("population size n")
        ax.set_ylabel("MSE")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        fig.tight_layout()
        path = outdir / "mse_scaling.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    largest = max(s.n for s in summaries)
    rows = [s for s in summaries if s.n == largest]
    if rows:
        fig, ax = plt.subplots(figsize=(6, 4))
        names = [r.estimator for r in rows]
        variances = [r.var for r in rows]
        ax.bar(names, variances, color="#4878a8")
        for i, r in enumerate(rows):
            if r.pred_var is not None:
                ax.plot([i - 0.4, i + 0.4], [r.pred_var] * 2, "r--", lw=1.5)
        ax.set_ylabel(f"empirical variance at n={largest}")
        if all(v > 0 for v in variances) and max(variances) / min(variances) > 50:
            ax.set_yscale("log")
        ax.tick_params(axis="x", rotation=20)
        fig.tight_layout()
        path = outdir / "variance_by_estimator.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    return written


def render_comparison(outdir: Path, rows) -> Path | None:
    """Bar chart of paired variance ratios with bootstrap intervals."""
    if not rows:
        return None
    outdir = Path(outdir)
    fig, ax = plt.subplots(figsize=(6.5, 4))
    labels = [f"{r.estimator_a}/{r.estimator_b}\nn={r.n}" for r in rows]
    ratios = [r.var_ratio for r in rows]
    err_low = [max(r.var_ratio - r.ci_low, 0.0) for r in rows]
    err_high = [max(r.ci_high - r.var_ratio, 0.0) for r in rows]
    ax.bar(range(len(rows)), ratios, yerr=[err_low, err_high], capsize=3, color="#a85948")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.axhline(1.0, color="k", lw=0.8, ls=":")
    ax.set_ylabel("variance ratio")
    if ratios and max(ratios) > 50:
        ax.set_yscale("log")
    fig.tight_layout()
    path = outdir / "variance_ratios.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
