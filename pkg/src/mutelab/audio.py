"""Waveform container, 16-bit PCM WAV input/output, and prepend concatenation."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class WavParseError(Exception):
    """Raised when a WAV file is malformed or uses an unsupported layout."""


@dataclass
class AudioSignal:
    """A mono sampled waveform with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("AudioSignal requires a non-empty 1-D sample array")
        peak = float(np.abs(self.samples).max())
        if peak > 1.0:
            raise ValueError(f"samples exceed [-1, 1] (peak {peak:.4f})")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def read_wav(path) -> AudioSignal:
    """Read a 16-bit PCM mono WAV file; samples are scaled by 1/32768."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavParseError(f"{path}: header: missing RIFF/WAVE signature")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise WavParseError(f"{path}: fmt chunk: truncated")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            data = body
        pos += 8 + chunk_size + (chunk_size & 1)
    if fmt is None:
        raise WavParseError(f"{path}: fmt chunk: missing")
    if data is None:
        raise WavParseError(f"{path}: data chunk: missing")
    audio_format, channels, sample_rate, _, _, bit_depth = fmt
    if audio_format != 1:
        raise WavParseError(f"{path}: audio format: expected PCM (1), got {audio_format}")
    if channels != 1:
        raise WavParseError(f"{path}: channel count: expected 1, got {channels}")
    if bit_depth != 16:
        raise WavParseError(f"{path}: bit depth: expected 16, got {bit_depth}")
    pcm = np.frombuffer(data[: len(data) - (len(data) % 2)], dtype="<i2")
    if pcm.size == 0:
        raise WavParseError(f"{path}: data chunk: empty payload")
    return AudioSignal(pcm.astype(np.float32) / 32768.0, sample_rate=int(sample_rate))


def write_wav(path, signal: AudioSignal) -> None:
    """Write 16-bit PCM mono; float samples are quantized by round(x * 32768)."""
    pcm = np.clip(np.rint(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    data = pcm.tobytes()
    sr = signal.sample_rate
    header = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, sr, sr * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(data))
    Path(path).write_bytes(header + data)


def prepend(segment, signal: AudioSignal) -> AudioSignal:
    """Concatenate an adversarial segment in front of a speech signal.

    ``segment`` is anything exposing ``samples`` and ``sample_rate`` (an
    AdversarialSegment or another AudioSignal). Both parts are preserved
    bit-exactly; the result has length T + N.
    """
    if segment.sample_rate != signal.sample_rate:
        raise ValueError(
            f"sample rate mismatch: segment {segment.sample_rate} Hz "
            f"vs signal {signal.sample_rate} Hz"
        )
    seg = np.asarray(segment.samples, dtype=np.float32)
    if seg.size == 0:
        return AudioSignal(signal.samples.copy(), signal.sample_rate)
    out = np.concatenate([seg, signal.samples])
    return AudioSignal(out, signal.sample_rate)
