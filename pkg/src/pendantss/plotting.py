"""Figure rendering for datasets, reconstructions and battery summaries.

Figures are written with the non-interactive Agg backend and with creation
metadata stripped so repeated runs produce identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_dataset", "plot_solution", "plot_trace", "plot_battery"]

_METADATA = {"Software": None}


def _save(fig, path) -> None:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_METADATA)
    plt.close(fig)


def plot_dataset(path, y, truth=None) -> None:
    """Observation with its clean components when known."""
    fig, ax = plt.subplots(figsize=(8, 3.5))
    n = np.arange(len(y))
    ax.plot(n, y, color="0.3", lw=1, label="observation")
    if truth is not None:
        ax.plot(n, truth.peak_signal, lw=1, label="peaks")
        ax.plot(n, truth.trend, lw=1, ls="--", label="trend")
    ax.set_xlabel("sample")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_solution(path, y, s_hat, pi_hat, t_hat, truth=None) -> None:
    """Estimated spikes, kernel and trend, overlaid on the truth when known."""
    fig, axes = plt.subplots(3, 1, figsize=(8, 8))
    n = np.arange(len(y))
    ax = axes[0]
    if truth is not None:
        ax.stem(n, truth.spikes, linefmt="C0-", markerfmt="C0o", basefmt=" ", label="true")
    ax.stem(n, s_hat, linefmt="C3-", markerfmt="C3x", basefmt=" ", label="estimate")
    ax.set_title("spikes", fontsize=9)
    ax.legend(fontsize=8)

    ax = axes[1]
    taps = np.arange(len(pi_hat)) - (len(pi_hat) - 1) // 2
    if truth is not None:
        ax.plot(taps, truth.kernel, "C0o-", label="true")
    ax.plot(taps, pi_hat, "C3x--", label="estimate")
    ax.set_title("kernel", fontsize=9)
    ax.legend(fontsize=8)

    ax = axes[2]
    ax.plot(n, y, color="0.6", lw=1, label="observation")
    if truth is not None:
        ax.plot(n, truth.trend, "C0", label="true trend")
    ax.plot(n, t_hat, "C3--", label="estimated trend")
    ax.set_title("trend", fontsize=9)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_trace(path, objective_trace: Sequence[float]) -> None:
    """Objective after each block update, shifted by its final value."""
    trace = np.asarray(objective_trace, dtype=float)
    gap = trace - trace[-1]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    positive = gap > 0
    ax.semilogy(np.flatnonzero(positive) / 2, gap[positive], lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective - final")
    fig.tight_layout()
    _save(fig, path)


def plot_battery(path, rows: Sequence[dict], metrics: Sequence[str] = ("snr_s", "snr_t", "snr_pi"),
                 title: Optional[str] = None) -> None:
    """Box plot of per-seed metrics."""
    ok = [r for r in rows if r.get("status") == "ok"]
    data = [[float(r[m]) for r in ok] for m in metrics]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.boxplot(data)
    ax.set_xticks(range(1, len(metrics) + 1), list(metrics))
    ax.set_ylabel("dB")
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    _save(fig, path)
