"""Differentiable log-mel spectrogram front end.

The short-time transform is realized as a framed matrix multiply against
precomputed Hann-windowed DFT bases, so gradients flow from the decoder loss
all the way back to raw waveform samples through the ordinary tensor ops.
The filterbank is a fixed constant matrix; nothing in the front end is
learnable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .audio import AudioSignal

LOG10 = math.log(10.0)


@dataclass(frozen=True)
class FeatureConfig:
    window: int = 400
    hop: int = 160
    n_mels: int = 64
    sample_rate: int = 16000
    fmin: float = 0.0
    fmax: float = 8000.0
    power_floor: float = 1e-10

    @property
    def n_bins(self) -> int:
        return self.window // 2 + 1

    def frame_count(self, n_samples: int) -> int:
        if n_samples < self.window:
            raise ValueError(
                f"signal of {n_samples} samples is shorter than one "
                f"{self.window}-sample window"
            )
        return (n_samples - self.window) // self.hop + 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: FeatureConfig) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter."""
    pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return mel_to_hz(pts)[1:-1]


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_bins), peak 1."""
    mel_pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    freqs = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.window
    fb = np.zeros((cfg.n_mels, cfg.n_bins))
    for m in range(cfg.n_mels):
        lo, mid, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb.astype(np.float32)


def windowed_dft_bases(cfg: FeatureConfig) -> tuple[np.ndarray, np.ndarray]:
    """Cos/sin DFT bases with the periodic Hann window folded in,
    each shaped (window, n_bins)."""
    n = np.arange(cfg.window, dtype=np.float64)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / cfg.window)
    k = np.arange(cfg.n_bins, dtype=np.float64)
    angle = 2.0 * np.pi * np.outer(n, k) / cfg.window
    return (
        (hann[:, None] * np.cos(angle)).astype(np.float32),
        (hann[:, None] * np.sin(angle)).astype(np.float32),
    )


@dataclass
class MelSpectrogram:
    """Time-by-mel matrix of log10 power values (floor applied)."""

    frames: np.ndarray  # (n_frames, n_mels)
    hop: int
    window: int
    n_mels: int
    sample_rate: int

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


class LogMelFrontEnd:
    """Callable front end; accepts arrays or Tensors of shape (..., N)."""

    def __init__(self, cfg: FeatureConfig | None = None):
        self.cfg = cfg or FeatureConfig()
        cos, sin = windowed_dft_bases(self.cfg)
        self._cos = T.Tensor(cos)
        self._sin = T.Tensor(sin)
        self._mel_t = T.Tensor(mel_filterbank(self.cfg).T.copy())

    def __call__(self, samples) -> T.Tensor:
        if isinstance(samples, AudioSignal):
            samples = samples.samples
        x = T.as_tensor(samples)
        self.cfg.frame_count(x.shape[-1])
        frames = T.frame_signal(x, self.cfg.window, self.cfg.hop)
        re = frames @ self._cos
        im = frames @ self._sin
        power = re * re + im * im
        mel = power @ self._mel_t
        return T.log(T.maximum(mel, self.cfg.power_floor)) * (1.0 / LOG10)


def log_mel(signal, cfg: FeatureConfig | None = None) -> MelSpectrogram:
    """Non-differentiable convenience wrapper returning a MelSpectrogram."""
    cfg = cfg or FeatureConfig()
    front = LogMelFrontEnd(cfg)
    sr = signal.sample_rate if isinstance(signal, AudioSignal) else cfg.sample_rate
    out = front(signal).data
    if out.ndim != 2:
        raise ValueError("log_mel expects a single 1-D signal")
    return MelSpectrogram(
        frames=out,
        hop=cfg.hop,
        window=cfg.window,
        n_mels=cfg.n_mels,
        sample_rate=sr,
    )


def emit_spectrogram_image(spec: MelSpectrogram, path) -> None:
    """Write a grayscale P5 PGM plus a CSV matrix next to it.

    Pixel values are min-max normalized per image; a constant spectrogram
    maps to 0 everywhere. Time runs along the horizontal axis and the
    highest mel bin is the top row. The CSV holds raw values, one frame
    per row.
    """
    path = Path(path)
    v = np.asarray(spec.frames, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi > lo:
        norm = (v - lo) / (hi - lo)
    else:
        norm = np.zeros_like(v)
    img = np.rint(norm * 255).astype(np.uint8).T[::-1]  # (n_mels, n_frames)
    header = f"P5\n{spec.n_frames} {spec.n_mels}\n255\n".encode()
    path.write_bytes(header + img.tobytes())
    csv_path = path.with_suffix(".csv")
    np.savetxt(csv_path, spec.frames, delimiter=",", fmt="%.6f")
