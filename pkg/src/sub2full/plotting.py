"""Report figures written next to the CSV outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SCHEME_COLORS = {"R1": "0.55", "Merged": "0.3", "S2F": "#c0392b", "N2N": "#2471a3", "N2V": "#239b56"}


def _save(fig, path: str | Path) -> None:
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, dpi=110, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)


def plot_history(histories: dict, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for label, h in histories.items():
        epochs = np.arange(0, h.epochs_run + 1)
        line, = ax.plot(epochs, [h.initial_val_loss] + h.val_loss, label=f"{label} val")
        ax.plot(epochs[1:], h.train_loss, ls="--", color=line.get_color(), alpha=0.6, label=f"{label} train")
        ax.axvline(h.convergence_epoch, color=line.get_color(), lw=0.8, ls=":")
    ax.set_xlabel("epoch")
    ax.set_ylabel("L2 loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8, frameon=False)
    _save(fig, path)


def plot_comparison(means: dict[str, dict], path: str | Path) -> None:
    """Bar panels of mean SNR / CNR / VAR / PSNR per model row."""
    keys = [("snr_db", "SNR (dB)"), ("cnr_db", "CNR (dB)"), ("var_value", "VAR"), ("psnr_db", "PSNR (dB)")]
    labels = list(means)
    fig, axes = plt.subplots(1, len(keys), figsize=(12, 3.2))
    for ax, (key, title) in zip(axes, keys):
        vals = [means[m].get(key) or np.nan for m in labels]
        ax.bar(labels, vals, color=[SCHEME_COLORS.get(m, "0.5") for m in labels])
        ax.set_title(title, fontsize=10)
        ax.tick_params(axis="x", labelrotation=45, labelsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_sweep(rows: list[dict], path: str | Path) -> None:
    betas = [float(r["beta"]) for r in rows]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.4))
    a1.plot(betas, [float(r["input_fwhm_px"]) for r in rows], "o-", label="measured")
    full = float(rows[0]["full_fwhm_px"])
    grid = np.linspace(min(betas), 1.0, 100)
    a1.plot(grid, full * np.sqrt(1 + grid**2) / grid, "k:", label="Gaussian product law")
    a1.set_xlabel("window bandwidth fraction")
    a1.set_ylabel("input axial FWHM (px)")
    a1.legend(frameon=False, fontsize=8)
    for key, label in (("snr_db", "SNR"), ("cnr_db", "CNR"), ("psnr_db", "PSNR")):
        a2.plot(betas, [float(r[key]) for r in rows], "o-", label=label)
    a2.set_xlabel("window bandwidth fraction")
    a2.set_ylabel("dB")
    a2.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_panels(images: dict[str, np.ndarray], path: str | Path) -> None:
    fig, axes = plt.subplots(1, len(images), figsize=(3 * len(images), 3.2))
    for ax, (title, img) in zip(np.atleast_1d(axes), images.items()):
        ax.imshow(img, cmap="gray", vmin=0, vmax=1, aspect="auto")
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    _save(fig, path)
