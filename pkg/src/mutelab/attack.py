"""Universal (and per-sample) adversarial prepend training.

The segment is the only trainable quantity: model weights stay frozen and
are checksummed before and after. Each optimizer step minimizes the negative
log-likelihood of the end-of-text token being generated first, summed over
the attacked models and averaged over the batch, then clamps the segment
back into the amplitude box. Training uses the no-timestamps prefix; the
evaluation default elsewhere is the timestamp prefix.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .audio import AudioSignal, read_wav, write_wav
from .corpus import CorpusManifest
from .optim import AdamW


class AttackDivergedError(Exception):
    """Loss became non-finite during segment training."""

    def __init__(self, message: str, log: dict):
        super().__init__(message)
        self.log = log


@dataclass
class AdversarialSegment:
    samples: np.ndarray
    epsilon: float
    sample_rate: int = 16000
    seed: int | None = None
    model_ids: list[str] = field(default_factory=list)
    config_digest: str | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise ValueError("segment samples must be 1-D")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        peak = float(np.abs(self.samples).max()) if self.samples.size else 0.0
        if peak > self.epsilon:
            raise ValueError(
                f"segment violates its own amplitude bound: peak {peak:.5f} > {self.epsilon}"
            )

    @property
    def n_frames(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class AttackConfig:
    n_frames: int = 10240
    epsilon: float = 0.02
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 80
    seed: int = 0
    init: str = "random"  # or "warm"
    warm_start_path: str | None = None
    train_domain: str | None = "clean"
    task: str = "transcribe"
    dev_probe_entries: int = 32

    def validate(self) -> None:
        if self.n_frames <= 0:
            raise ValueError("segment frame count must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("epoch budget must be at least 1")
        if self.init not in ("random", "warm"):
            raise ValueError(f"unknown init mode {self.init!r}")
        if self.init == "warm" and not self.warm_start_path:
            raise ValueError("warm init requires warm_start_path")

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True).encode()
        ).hexdigest()[:12]


def project_linf(samples: np.ndarray, epsilon: float) -> np.ndarray:
    """Clamp every sample into [-epsilon, epsilon]; idempotent."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return np.clip(samples, -epsilon, epsilon)


def init_segment(
    mode: str,
    epsilon: float,
    n_frames: int,
    seed: int | None = None,
    path=None,
    sample_rate: int = 16000,
) -> AdversarialSegment:
    """Random init is i.i.d. uniform in the amplitude box; warm start loads
    a stored segment verbatim (its frame count must match and its own bound
    must not exceed the target bound)."""
    if n_frames <= 0:
        raise ValueError("segment frame count must be positive")
    if mode == "random":
        rng = np.random.default_rng(seed)
        samples = rng.uniform(-epsilon, epsilon, n_frames).astype(np.float32)
        return AdversarialSegment(samples, epsilon, sample_rate, seed=seed)
    if mode == "warm":
        prev = load_segment(path)
        if prev.n_frames != n_frames:
            raise ValueError(
                f"warm start frame count {prev.n_frames} does not match {n_frames}"
            )
        if prev.epsilon > epsilon + 1e-12:
            raise ValueError(
                f"warm start bound {prev.epsilon} exceeds target bound {epsilon}"
            )
        return AdversarialSegment(
            prev.samples, epsilon, prev.sample_rate, seed=prev.seed,
            model_ids=prev.model_ids, config_digest=prev.config_digest,
        )
    raise ValueError(f"unknown init mode {mode!r}")


def save_segment(base_path, segment: AdversarialSegment) -> tuple[Path, Path]:
    """Persist as a playable WAV plus a JSON sidecar.

    WAV quantization floors the integer amplitude at the bound, so a
    reloaded segment still satisfies it exactly.
    """
    base = Path(base_path)
    wav_path = base.with_suffix(".wav")
    meta_path = base.with_suffix(".json")
    cap = int(math.floor(segment.epsilon * 32768.0))
    pcm = np.clip(np.rint(segment.samples * 32768.0), -cap, cap) / 32768.0
    write_wav(wav_path, AudioSignal(pcm.astype(np.float32), segment.sample_rate))
    meta = {
        "epsilon": segment.epsilon,
        "n_frames": segment.n_frames,
        "sample_rate": segment.sample_rate,
        "seed": segment.seed,
        "model_ids": segment.model_ids,
        "config_digest": segment.config_digest,
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return wav_path, meta_path


def load_segment(path) -> AdversarialSegment:
    path = Path(path)
    wav_path = path.with_suffix(".wav")
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text())
    sig = read_wav(wav_path)
    if sig.samples.size != meta["n_frames"]:
        raise ValueError(
            f"{wav_path}: expected {meta['n_frames']} frames, found {sig.samples.size}"
        )
    return AdversarialSegment(
        samples=sig.samples,
        epsilon=meta["epsilon"],
        sample_rate=meta["sample_rate"],
        seed=meta["seed"],
        model_ids=list(meta.get("model_ids") or []),
        config_digest=meta.get("config_digest"),
    )


# -- loss -------------------------------------------------------------------------


def _attacked_batch(model, seg_t: T.Tensor, signals: list[np.ndarray]) -> T.Tensor:
    """Differentiable (B, context) batch of segment-prepended waveforms."""
    ctx = model.cfg.context_samples
    t = seg_t.shape[0]
    base = np.zeros((len(signals), ctx), dtype=np.float32)
    for i, s in enumerate(signals):
        arr = s.samples if isinstance(s, AudioSignal) else np.asarray(s, np.float32)
        n = min(arr.size, max(0, ctx - t))
        base[i, t : t + n] = arr[:n]
    if t > ctx:
        seg_t = seg_t[:ctx]
    elif t < ctx:
        seg_t = T.concat([seg_t, T.Tensor(np.zeros(ctx - t, dtype=np.float32))], axis=0)
    return T.Tensor(base) + seg_t


def attack_loss(models, segment, signals) -> T.Tensor:
    """Negative log-likelihood of a first-token end-of-text, averaged over
    the batch and summed over models. Differentiable w.r.t. the segment."""
    if not signals:
        raise ValueError("attack loss over an empty batch")
    seg_t = segment if isinstance(segment, T.Tensor) else T.Tensor(
        np.asarray(segment.samples if isinstance(segment, AdversarialSegment) else segment,
                   dtype=np.float32)
    )
    total = None
    for model in models:
        audio = _attacked_batch(model, seg_t, signals)
        logp = model.first_token_log_probs(audio, timestamps=False)
        eot = model.vocab.eot_id
        term = -logp[:, eot].mean()
        total = term if total is None else total + term
    return total


# -- training ---------------------------------------------------------------------


def _mute_probe(models, seg_data: np.ndarray, signals: list[np.ndarray]) -> float:
    """Fraction (%) of signals whose first greedy token is end-of-text under
    the no-timestamps prefix, averaged over models."""
    seg_t = T.Tensor(seg_data)
    rates = []
    with T.no_grad():
        for model in models:
            hits = 0
            for start in range(0, len(signals), 32):
                chunk = signals[start : start + 32]
                audio = _attacked_batch(model, seg_t, chunk)
                logp = model.first_token_log_probs(audio, timestamps=False)
                hits += int((logp.data.argmax(axis=1) == model.vocab.eot_id).sum())
            rates.append(100.0 * hits / len(signals))
    return float(np.mean(rates))


def _train_segment(
    models,
    signals: list[np.ndarray],
    dev_signals: list[np.ndarray],
    cfg: AttackConfig,
) -> tuple[AdversarialSegment, dict]:
    cfg.validate()
    if not signals:
        raise ValueError("no training signals selected")
    before = [hashlib.sha256(m.param_blob()).hexdigest() for m in models]
    init = init_segment(
        cfg.init, cfg.epsilon, cfg.n_frames, seed=cfg.seed, path=cfg.warm_start_path,
        sample_rate=models[0].cfg.feature.sample_rate,
    )
    seg = T.Tensor(init.samples.copy(), requires_grad=True)
    opt = AdamW([seg], lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 99])
    log: dict = {
        "epoch": [], "loss": [], "dev_mute_pct": [],
        "max_abs_per_step": [], "monotonicity_violations": [],
    }
    dev0 = _mute_probe(models, seg.data, dev_signals) if dev_signals else None
    log["epoch"].append(0)
    log["loss"].append(None)
    log["dev_mute_pct"].append(dev0)
    prev_loss = None
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(signals))
        losses = []
        for start in range(0, len(signals), cfg.batch_size):
            batch = [signals[i] for i in order[start : start + cfg.batch_size]]
            loss = attack_loss(models, seg, batch)
            val = loss.item()
            if not np.isfinite(val):
                raise AttackDivergedError(
                    f"non-finite loss {val} at epoch {epoch}", log
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            seg.data = project_linf(seg.data, cfg.epsilon)
            log["max_abs_per_step"].append(float(np.abs(seg.data).max()))
            losses.append(val)
        mean_loss = float(np.mean(losses))
        if prev_loss is not None and mean_loss > prev_loss * 1.05:
            log["monotonicity_violations"].append(epoch)
        prev_loss = mean_loss
        log["epoch"].append(epoch)
        log["loss"].append(mean_loss)
        log["dev_mute_pct"].append(
            _mute_probe(models, seg.data, dev_signals) if dev_signals else None
        )
    after = [hashlib.sha256(m.param_blob()).hexdigest() for m in models]
    if before != after:
        raise RuntimeError("model parameters changed during attack training")
    segment = AdversarialSegment(
        samples=project_linf(seg.data, cfg.epsilon),
        epsilon=cfg.epsilon,
        sample_rate=models[0].cfg.feature.sample_rate,
        seed=cfg.seed,
        model_ids=[m.model_id for m in models],
        config_digest=cfg.digest(),
    )
    return segment, log


def train_universal(
    models,
    manifest: CorpusManifest,
    cfg: AttackConfig,
) -> tuple[AdversarialSegment, dict]:
    """Learn one segment against every signal in the selected train split."""
    entries = manifest.select(split="train", domain=cfg.train_domain)
    signals = [manifest.load_audio(e).samples for e in entries]
    dev_entries = manifest.select(split="dev", domain=cfg.train_domain)
    dev_entries = dev_entries[: cfg.dev_probe_entries]
    dev_signals = [manifest.load_audio(e).samples for e in dev_entries]
    return _train_segment(models, signals, dev_signals, cfg)


def train_universal_best_of(
    models,
    manifest: CorpusManifest,
    cfg: AttackConfig,
    seeds: list[int],
) -> tuple[AdversarialSegment, dict]:
    """Run several seeds and keep the segment with the best final dev mute
    rate (first seed wins ties)."""
    from dataclasses import replace

    if not seeds:
        raise ValueError("at least one seed required")
    best = None
    all_logs = {}
    for s in seeds:
        segment, log = train_universal(models, manifest, replace(cfg, seed=s))
        final = log["dev_mute_pct"][-1]
        all_logs[s] = log
        if best is None or (final is not None and final > best[0]):
            best = (final if final is not None else -1.0, segment, log)
    _, segment, log = best
    return segment, {"selected_seed": segment.seed, "runs": all_logs, "selected_log": log}


def train_per_sample(model, signal, cfg: AttackConfig) -> tuple[AdversarialSegment, dict]:
    """Single-signal variant of universal training (training set size one)."""
    samples = signal.samples if isinstance(signal, AudioSignal) else np.asarray(signal)
    return _train_segment([model], [samples], [samples], cfg)
