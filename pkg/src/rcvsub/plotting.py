"""Report figures written next to the CSV outputs (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_intervals(coefs, path, max_coefs: int = 30):
    """Point estimates with confidence intervals for the first coefficients."""
    shown = [c for c in coefs if np.isfinite(c.beta_hat)][:max_coefs]
    fig, ax = plt.subplots(figsize=(6, 0.6 + 0.28 * max(len(shown), 1)))
    y = np.arange(len(shown))[::-1]
    if shown:
        b = np.array([c.beta_hat for c in shown])
        lo = np.array([c.ci_lo for c in shown])
        hi = np.array([c.ci_hi for c in shown])
        sel = np.array([c.selected_fold1 or c.selected_fold2 for c in shown])
        ax.hlines(y, lo, hi, color="0.4")
        ax.plot(b[~sel], y[~sel], "o", color="0.4", ms=4, label="not selected")
        ax.plot(b[sel], y[sel], "o", color="C3", ms=5, label="selected")
        ax.set_yticks(y, [c.name for c in shown], fontsize=7)
        ax.legend(fontsize=7, loc="best")
    ax.axvline(0.0, color="k", lw=0.6)
    ax.set_xlabel("estimate")
    return _save(fig, path)


def plot_ase(summary: list[dict], path):
    """Average estimated standard error per method and subsample size."""
    rs = sorted({s["r"] for s in summary})
    methods = sorted({s["method"] for s in summary})
    fig, ax = plt.subplots(figsize=(5, 3.2))
    width = 0.8 / max(len(methods), 1)
    for k, m in enumerate(methods):
        vals = [next((s["ase"] for s in summary if s["method"] == m and s["r"] == r), np.nan)
                for r in rs]
        ax.bar(np.arange(len(rs)) + k * width, vals, width, label=m.upper())
    ax.set_xticks(np.arange(len(rs)) + width * (len(methods) - 1) / 2, [f"r={r}" for r in rs])
    ax.set_ylabel("ASE")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_ssd_ese(metrics: list, path, first: int = 6):
    """Empirical against average estimated standard errors."""
    fig, ax = plt.subplots(figsize=(4, 4))
    hi = 0.0
    for k, m in enumerate(metrics):
        ssd, ese = m.ssd[:first], m.ese[:first]
        ax.plot(ssd, ese, "o", color=f"C{k}", label=f"{m.method.upper()} r={m.r}")
        hi = max(hi, np.nanmax(np.r_[ssd, ese, 0.0]))
    ax.plot([0, hi * 1.1], [0, hi * 1.1], "k--", lw=0.6)
    ax.set_xlabel("SSD")
    ax.set_ylabel("ESE")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_times(rows: list[dict], path):
    fig, ax = plt.subplots(figsize=(5, 3))
    names = [r["method"] for r in rows]
    ax.bar(names, [r["mean_time"] for r in rows], color="C0")
    ax.set_ylabel("mean wall time (s)")
    ax.set_yscale("log")
    return _save(fig, path)
