"""Figures written next to the CSV/JSON outputs (Agg backend, files only)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 150


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def plot_confusion(confusion, path, title="confusion (row-normalised)", groups=None):
    conf = np.asarray(confusion, dtype=float)
    support = conf.sum(axis=1, keepdims=True)
    norm = np.divide(conf, support, out=np.zeros_like(conf), where=support > 0)
    c = conf.shape[0]
    size = min(12, 3 + 0.25 * c)
    fig, ax = plt.subplots(figsize=(size, size))
    im = ax.imshow(norm, cmap="viridis", vmin=0, vmax=1)
    ax.set_xlabel("predicted class")
    ax.set_ylabel("true class")
    ax.set_title(title)
    if c <= 20:
        ax.set_xticks(range(c))
        ax.set_yticks(range(c))
    if groups is not None:
        # mark Many/Medium/Few boundaries along the diagonal
        for i in range(1, c):
            if groups[i] != groups[i - 1]:
                ax.axhline(i - 0.5, color="w", lw=0.8)
                ax.axvline(i - 0.5, color="w", lw=0.8)
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    return _save(fig, path)


def plot_training_curves(epoch_rows, path):
    epochs = [r["epoch"] for r in epoch_rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for key in ("l_c", "l_cb", "l_sim", "total"):
        ax1.plot(epochs, [float(r[key]) for r in epoch_rows], label=key)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend(frameon=False, fontsize=8)
    ax2.plot(epochs, [float(r["alpha"]) for r in epoch_rows], label="alpha")
    acc = [(e, float(r["eval_top1"])) for e, r in zip(epochs, epoch_rows)
           if r.get("eval_top1") not in (None, "")]
    if acc:
        ax2.plot(*zip(*acc), marker=".", label="top-1")
    ax2.set_xlabel("epoch")
    ax2.set_ylim(0, 1.02)
    ax2.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_gamma_sweep(rows, path):
    """``rows``: dicts with ``gamma``, ``median_top1`` and per-seed ``top1`` lists."""
    rows = sorted(rows, key=lambda r: r["gamma"])
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    xs = [r["gamma"] for r in rows]
    ax.plot(xs, [100 * r["median_top1"] for r in rows], marker="o", color="k")
    for r in rows:
        ax.scatter([r["gamma"]] * len(r["top1"]), [100 * v for v in r["top1"]],
                   s=10, color="0.6", zorder=0)
    ax.set_xlabel("consistency weight gamma")
    ax.set_ylabel("top-1 accuracy (%)")
    return _save(fig, path)


def plot_k_grid(grid, reweight_ks, resample_ks, path):
    """Heatmap of median top-1 over (resample k rows, reweight k columns)."""
    fig, ax = plt.subplots(figsize=(1.5 + 0.8 * len(reweight_ks), 1.2 + 0.6 * len(resample_ks)))
    data = 100 * np.asarray(grid, dtype=float)
    im = ax.imshow(data, cmap="magma", aspect="auto")
    ax.set_xticks(range(len(reweight_ks)), [f"{k:g}" for k in reweight_ks])
    ax.set_yticks(range(len(resample_ks)), [f"{k:g}" for k in resample_ks])
    ax.set_xlabel("label reweighting k")
    ax.set_ylabel("resample k")
    for i in range(data.shape[0]):
        for j in range(data.shape[1]):
            if np.isfinite(data[i, j]):
                ax.text(j, i, f"{data[i, j]:.1f}", ha="center", va="center", fontsize=7,
                        color="w" if data[i, j] < np.nanmax(data) - 5 else "k")
    fig.colorbar(im, ax=ax)
    return _save(fig, path)
