"""Figure rendering with a fixed, timestamp-free style so outputs are
byte-stable for identical inputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .table import AXIS_COLUMNS, TableError, load_history, load_results

# one fixed (color, marker) per scheme so every sweep figure is comparable
SCHEME_STYLE = {
    "hybrid_meta": ("#d62728", "o"),
    "joint_ae": ("#1f77b4", "s"),
    "bpsk_ml_mmse": ("#2ca02c", "^"),
    "bpsk_neural_scratch": ("#9467bd", "v"),
    "bpsk_neural_joint": ("#8c564b", "D"),
    "bpsk_neural_meta": ("#e377c2", "P"),
}
FALLBACK_STYLE = ("#7f7f7f", "x")

AXIS_LABEL = {
    "P": "pilot blocks per test frame",
    "frames": "training frames",
    "rho": "frame-to-frame channel correlation",
}

LOG_FLOOR = 1e-6   # keeps zero-error points visible on the log axis


def _stable_figure():
    plt.rcParams["svg.hashsalt"] = "linkplot"
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    return fig, ax


def _save(fig, out_path):
    fig.tight_layout()
    fig.savefig(out_path, metadata={"Date": None})
    plt.close(fig)


def plot_sweep(csv_path, axis: str, out_path) -> None:
    """Mean BLER with one-standard-deviation error bars per scheme."""
    if axis not in AXIS_COLUMNS:
        raise TableError(f"axis must be one of {sorted(AXIS_COLUMNS)}, got {axis!r}")
    table = load_results(csv_path)
    fig, ax = _stable_figure()
    for scheme in table.schemes():
        xs, means, stds = table.series(scheme, axis)
        color, marker = SCHEME_STYLE.get(scheme, FALLBACK_STYLE)
        ax.errorbar(xs, np.maximum(means, LOG_FLOOR), yerr=stds, label=scheme,
                    color=color, marker=marker, capsize=3, linewidth=1.4,
                    markersize=5)
    ax.set_yscale("log")
    ax.set_xlabel(AXIS_LABEL[axis])
    ax.set_ylabel("block error rate")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, out_path)


def plot_history(csv_path, out_path) -> None:
    """Per-frame mean training loss, one line per scheme."""
    curves = load_history(csv_path)
    fig, ax = _stable_figure()
    for scheme in sorted(curves):
        taus, losses = curves[scheme]
        color, _ = SCHEME_STYLE.get(scheme, FALLBACK_STYLE)
        ax.plot(taus, losses, label=scheme, color=color, linewidth=1.0)
    ax.set_xlabel("training frame")
    ax.set_ylabel("mean frame log-loss")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, out_path)
