"""Input-gradient sensitivity analysis of attacked decodes.

For an attacked input (segment prepended to speech) the gradient of the
realized token's probability is taken with respect to the raw waveform, then
split at the segment/speech boundary: the L2 norm over the first T samples
measures sensitivity to the adversarial segment, the norm over the remainder
measures sensitivity to the natural speech. Samples beyond the model's fixed
audio context cannot influence the output and carry zero gradient.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .audio import AudioSignal
from .decode import greedy_decode, ModelStepper
from .vocab import decoder_prefix


@dataclass
class SaliencyRecord:
    sample_id: str
    segment_norm: float  # gradient L2 over the adversarial segment samples
    speech_norm: float  # gradient L2 over the natural speech samples
    segment_len: int
    speech_len: int
    realized_token: int
    cohort: str | None = None  # "success" or "failed" when known
    series: np.ndarray | None = None  # |gradient| per sample, length T+N

    @property
    def segment_norm_per_sample(self) -> float:
        return self.segment_norm / np.sqrt(max(1, self.segment_len))

    @property
    def speech_norm_per_sample(self) -> float:
        return self.speech_norm / np.sqrt(max(1, self.speech_len))


def _decode_attacked(model, segment, signal, task: str, timestamps: bool):
    from .audio import prepend

    attacked = prepend(segment, signal)
    prefix = decoder_prefix(model.vocab, task=task, timestamps=timestamps)
    enc = model.encode_signals([attacked]).data[0]
    budget = model.cfg.max_dec_len - len(prefix)
    return greedy_decode(ModelStepper(model, enc, prefix), model.vocab, budget), prefix


def saliency(
    model,
    segment,
    signal: AudioSignal,
    m: int = 1,
    task: str = "transcribe",
    timestamps: bool = False,
    keep_series: bool = False,
    sample_id: str = "",
) -> SaliencyRecord:
    """Sensitivity of the m-th generated token's probability.

    The token is fixed by a greedy decode of the attacked input first; the
    gradient is then taken of that realized token's post-softmax
    probability in a single backward pass through the concatenated input.
    """
    transcript, prefix = _decode_attacked(model, segment, signal, task, timestamps)
    if m < 1 or m > len(transcript.token_ids):
        raise ValueError(
            f"step {m} outside the decoded transcript (length {len(transcript.token_ids)})"
        )
    realized = transcript.token_ids[m - 1]
    seg_t = T.Tensor(np.asarray(segment.samples, np.float32), requires_grad=True)
    speech_t = T.Tensor(signal.samples, requires_grad=True)
    audio = T.concat([seg_t, speech_t], axis=0).reshape(1, -1)
    feats = model.features_from_audio(audio)
    enc = model.encode(feats)
    tokens = np.asarray([list(prefix) + transcript.token_ids[: m - 1]], dtype=np.int64)
    logits = model.decode_logits(enc, tokens)
    prob = T.softmax(logits[:, -1, :])[0, realized]
    g_seg, g_speech = T.gradients(prob, [seg_t, speech_t])
    series = None
    if keep_series:
        series = np.abs(np.concatenate([g_seg, g_speech])).astype(np.float64)
    return SaliencyRecord(
        sample_id=sample_id,
        segment_norm=float(np.linalg.norm(g_seg.astype(np.float64))),
        speech_norm=float(np.linalg.norm(g_speech.astype(np.float64))),
        segment_len=int(seg_t.size),
        speech_len=int(speech_t.size),
        realized_token=int(realized),
        series=series,
    )


def saliency_report(
    model,
    segment,
    manifest,
    split: str = "test",
    domain: str | None = None,
    task: str = "transcribe",
    timestamps: bool = False,
    max_entries: int | None = None,
) -> dict:
    """Cohort-averaged sensitivity table.

    Cohorts follow the attack-success definition of the chosen prefix mode;
    each cohort row reports mean and standard deviation of both norms plus
    region-length-normalized variants. Empty cohorts are absent (None).
    """
    entries = manifest.select(split=split, domain=domain)
    if max_entries is not None:
        entries = entries[:max_entries]
    vocab = model.vocab
    records: list[SaliencyRecord] = []
    for e in entries:
        sig = manifest.load_audio(e)
        transcript, _ = _decode_attacked(model, segment, sig, task, timestamps)
        if timestamps:
            success = transcript.n_words == 0
        else:
            success = bool(transcript.token_ids) and transcript.token_ids[0] == vocab.eot_id
        rec = saliency(
            model, segment, sig, m=1, task=task, timestamps=timestamps, sample_id=e.id
        )
        rec.cohort = "success" if success else "failed"
        records.append(rec)
    records.sort(key=lambda r: r.sample_id)
    table: dict = {"meta": {
        "model_id": model.model_id, "split": split, "domain": domain,
        "task": task, "prefix_mode": "timestamps" if timestamps else "notimestamps",
        "samples": len(records),
    }}
    for name in ("success", "failed"):
        cohort = [r for r in records if r.cohort == name]
        if not cohort:
            table[name] = None
            continue
        seg = np.array([r.segment_norm for r in cohort])
        spc = np.array([r.speech_norm for r in cohort])
        table[name] = {
            "count": len(cohort),
            "segment_mean": float(seg.mean()),
            "segment_std": float(seg.std()),
            "speech_mean": float(spc.mean()),
            "speech_std": float(spc.std()),
            "segment_mean_per_sample": float(
                np.mean([r.segment_norm_per_sample for r in cohort])
            ),
            "speech_mean_per_sample": float(
                np.mean([r.speech_norm_per_sample for r in cohort])
            ),
        }
    table["records"] = [
        {
            "id": r.sample_id,
            "cohort": r.cohort,
            "segment_norm": r.segment_norm,
            "speech_norm": r.speech_norm,
        }
        for r in records
    ]
    return table


def frame_saliency_series(
    model,
    segment,
    signal: AudioSignal,
    out_csv=None,
    task: str = "transcribe",
    timestamps: bool = False,
    hop: int | None = None,
    sample_id: str = "",
) -> dict:
    """Per-sample absolute gradient series plus a per-frame (hop-aggregated)
    series; optionally emitted as CSV with boundary metadata."""
    rec = saliency(
        model, segment, signal, m=1, task=task, timestamps=timestamps,
        keep_series=True, sample_id=sample_id,
    )
    hop = hop or model.cfg.feature.hop
    series = rec.series
    n_frames = series.size // hop
    framed = np.array([
        float(np.linalg.norm(series[i * hop : (i + 1) * hop]))
        for i in range(n_frames)
    ])
    out = {
        "record": rec,
        "series": series,
        "frame_series": framed,
        "boundary_sample": rec.segment_len,
        "boundary_frame": rec.segment_len // hop,
        "hop": hop,
    }
    if out_csv is not None:
        out_csv = Path(out_csv)
        with open(out_csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["sample_index", "abs_gradient"])
            for i, v in enumerate(series):
                w.writerow([i, f"{v:.8e}"])
        meta = {
            "boundary_sample": out["boundary_sample"],
            "boundary_frame": out["boundary_frame"],
            "hop": hop,
            "segment_norm": rec.segment_norm,
            "speech_norm": rec.speech_norm,
            "realized_token": rec.realized_token,
        }
        out_csv.with_suffix(".json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n"
        )
    return out
