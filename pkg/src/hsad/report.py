"""Matplotlib renderings of run outputs, written next to the CSV exports."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_roc(curve, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4.2))
    ax.plot(curve.far, curve.pd, lw=1.8)
    ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="gray")
    ax.set_xlabel("false alarm rate")
    ax.set_ylabel("detection probability")
    ax.set_title(f"ROC (AUC = {curve.auc:.4f})")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_trace(trace, path) -> None:
    """Convergence trace: objective plus residuals on a log axis."""
    iters = [rec.iteration if hasattr(rec, "iteration") else rec.stage for rec in trace]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    if hasattr(trace[0], "objective"):
        ax1.plot(iters, [rec.objective for rec in trace], lw=1.5)
        ax1.set_ylabel("objective")
    else:
        ax1.semilogy(iters, [max(rec.loss, 1e-300) for rec in trace], lw=1.5)
        ax1.set_ylabel("reconstruction loss")
    ax1.set_xlabel("sweep")
    ax2.semilogy(iters, [max(rec.primal_residual, 1e-300) for rec in trace], lw=1.5,
                 label="coupling residual")
    ax2.semilogy(iters, [max(rec.recon_error, 1e-300) for rec in trace], lw=1.5,
                 label="recon error")
    ax2.set_xlabel("sweep")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_loss_history(history, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.semilogy(range(len(history)), [max(v, 1e-300) for v in history], marker=".", lw=1.2)
    ax.set_xlabel("accepted step")
    ax.set_ylabel("loss")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_score_map(scores: np.ndarray, path, mask=None) -> None:
    """Score heat map; ground-truth anomalies outlined when a mask is given."""
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(np.asarray(scores), cmap="viridis", vmin=0.0, vmax=1.0)
    fig.colorbar(im, ax=ax, shrink=0.85)
    if mask is not None:
        labels = np.asarray(getattr(mask, "labels", mask))
        if labels.any():
            ax.contour(labels, levels=[0.5], colors="red", linewidths=0.8)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
