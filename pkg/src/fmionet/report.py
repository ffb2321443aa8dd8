"""Figure rendering for training runs and evaluations.

Every function writes a PNG next to the delimited outputs and returns the
path. Rendering uses the Agg backend; nothing opens a display.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402


def training_curve(history, path) -> Path:
    """Train/validation loss per epoch, log-scaled."""
    epochs = [h["epoch"] for h in history if "epoch" in h]
    train = [h["train_loss"] for h in history if "epoch" in h]
    val = [h["val_loss"] for h in history if "epoch" in h]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(epochs, train, "o-", label="train", ms=3)
    ax.semilogy(epochs, val, "s-", label="validation", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("relative loss")
    ax.legend(frameon=False)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def r2_per_snapshot(reports, path, labels=None) -> Path:
    """R2 against snapshot time, seen snapshots marked solid, unseen hollow."""
    if not isinstance(reports, (list, tuple)):
        reports = [reports]
    labels = labels or [r.model for r in reports]
    fig, ax = plt.subplots(figsize=(7, 4))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for rep, label, color in zip(reports, labels, colors):
        days = [s.time_days for s in rep.per_snapshot]
        vals = [s.r2 for s in rep.per_snapshot]
        seen = [s.seen for s in rep.per_snapshot]
        ax.plot(days, vals, "-", color=color, lw=1, label=label)
        ax.plot([d for d, s in zip(days, seen) if s],
                [v for v, s in zip(vals, seen) if s], "o", color=color, ms=5)
        ax.plot([d for d, s in zip(days, seen) if not s],
                [v for v, s in zip(vals, seen) if not s], "o", mfc="none",
                color=color, ms=5)
    ax.set_xscale("log")
    ax.set_xlabel("time (days)")
    ax.set_ylabel(r"$R^2$")
    ax.set_ylim(min(0.0, ax.get_ylim()[0]), 1.02)
    ax.legend(frameon=False, loc="lower right")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def field_maps(truth, pred, times_days, path, value_label="gas saturation") -> Path:
    """Reference / prediction / absolute-error map rows per requested time."""
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    n_t = truth.shape[0]
    fig, axes = plt.subplots(n_t, 3, figsize=(10, 2.2 * n_t), squeeze=False)
    vmax = max(truth.max(), pred.max(), 1e-9)
    for i in range(n_t):
        err = np.abs(pred[i] - truth[i])
        panels = [(truth[i], f"reference, t = {times_days[i]:g} d", vmax),
                  (pred[i], "prediction", vmax),
                  (err, "absolute error", max(err.max(), 1e-9))]
        for j, (img, title, vm) in enumerate(panels):
            ax = axes[i, j]
            im = ax.imshow(img, origin="upper", aspect="auto", vmin=0, vmax=vm,
                           cmap="viridis" if j < 2 else "magma")
            ax.set_title(title, fontsize=9)
            ax.set_xticks([])
            ax.set_yticks([])
            fig.colorbar(im, ax=ax, shrink=0.8)
    fig.suptitle(value_label, fontsize=10)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def suite_comparison(reports: dict, path) -> Path:
    """Per-snapshot R2 curves for the nonuniform sampling cases."""
    fig, axes = plt.subplots(2, 3, figsize=(12, 6), sharey=True)
    for ax, (name, rep) in zip(axes.ravel(), sorted(reports.items())):
        days = [s.time_days for s in rep.per_snapshot]
        vals = [s.r2 for s in rep.per_snapshot]
        seen = [s.seen for s in rep.per_snapshot]
        ax.plot(days, vals, "-", lw=1, color="tab:blue")
        ax.plot([d for d, s in zip(days, seen) if s],
                [v for v, s in zip(vals, seen) if s], "o", color="tab:blue", ms=4)
        ax.plot([d for d, s in zip(days, seen) if not s],
                [v for v, s in zip(vals, seen) if not s], "o", mfc="none",
                color="tab:blue", ms=4)
        ax.set_xscale("log")
        ax.set_title(f"{name}: pooled $R^2$ = {rep.r2_all:.3f}", fontsize=9)
        ax.set_xlabel("time (days)")
    axes[0, 0].set_ylabel(r"$R^2$")
    axes[1, 0].set_ylabel(r"$R^2$")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
