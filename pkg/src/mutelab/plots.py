"""Matplotlib figure emission for reports.

Every report path that writes delimited data (CSV/JSONL) also renders a
figure next to it through these helpers. Rendering uses the Agg backend so
runs work headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .features import MelSpectrogram


def save_attack_training_curves(log: dict, path) -> Path:
    """Loss and dev mute-rate curves of one attack training run."""
    path = Path(path)
    fig, ax1 = plt.subplots(figsize=(7, 4))
    epochs = log["epoch"]
    losses = [x if x is not None else np.nan for x in log["loss"]]
    ax1.plot(epochs, losses, color="tab:red", label="training loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("negative log-likelihood", color="tab:red")
    if any(v is not None for v in log["dev_mute_pct"]):
        ax2 = ax1.twinx()
        mutes = [x if x is not None else np.nan for x in log["dev_mute_pct"]]
        ax2.plot(epochs, mutes, color="tab:blue", label="dev mute rate")
        ax2.set_ylabel("dev mute rate (%)", color="tab:blue")
        ax2.set_ylim(-2, 102)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_model_training_curve(history: dict, path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(range(1, len(history["epoch_loss"]) + 1), history["epoch_loss"])
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross entropy")
    if "dev_wer" in history:
        ax.set_title(f"dev WER {history['dev_wer']:.2f}%")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_spectrogram_figure(
    spec: MelSpectrogram, path, boundary_frame: int | None = None, title: str = ""
) -> Path:
    """Rendered mel spectrogram; an optional vertical line marks the
    segment/speech boundary."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(8, 3.2))
    im = ax.imshow(
        spec.frames.T,
        origin="lower",
        aspect="auto",
        interpolation="nearest",
        extent=[0, spec.n_frames * spec.hop / spec.sample_rate, 0, spec.n_mels],
        cmap="magma",
    )
    if boundary_frame is not None:
        ax.axvline(boundary_frame * spec.hop / spec.sample_rate, color="cyan", lw=1.2)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("mel bin")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, label="log10 power")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_saliency_figure(series: np.ndarray, boundary_sample: int, sample_rate: int, path,
                         title: str = "") -> Path:
    """Frame-level |gradient| trace with the segment boundary marked."""
    path = Path(path)
    t = np.arange(series.size) / sample_rate
    fig, ax = plt.subplots(figsize=(8, 3.2))
    ax.plot(t, series, lw=0.4)
    ax.axvline(boundary_sample / sample_rate, color="red", lw=1.0)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("|gradient|")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_asl_histogram(noattack_counts, attacked_counts, path) -> Path:
    """Word-count histograms of the no-attack and attacked decodes."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 3.6))
    top = max([*noattack_counts, *(attacked_counts or [0])]) + 1
    bins = np.arange(0, top + 1) - 0.5
    ax.hist(noattack_counts, bins=bins, alpha=0.6, label="no attack")
    if attacked_counts is not None:
        ax.hist(attacked_counts, bins=bins, alpha=0.6, label="attack")
    ax.set_xlabel("decoded words")
    ax.set_ylabel("samples")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
