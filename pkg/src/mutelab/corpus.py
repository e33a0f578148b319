"""Synthetic spoken-token corpus generation.

Each vocabulary word maps to a fixed two-tone chirp signature, 0.2 s long, so
a small encoder-decoder model can learn to transcribe utterances in minutes
on a CPU while the corpus keeps the structure of a real ASR dataset:
variable-length utterances, leading/trailing background, reference
transcripts, train/dev/test splits, and two acoustic domains ("clean" and a
noisy gain-shifted variant) for domain-transfer experiments.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioSignal, read_wav, write_wav

# Signature grid: word k is the pair (F1[k % 8], F2[k // 8]), giving 48
# distinct well-separated mel patterns, the cap on vocabulary size.
_F1 = (350.0, 700.0, 1050.0, 1400.0, 1750.0, 2100.0, 2450.0, 2800.0)
_F2 = (3300.0, 3900.0, 4700.0, 5600.0, 6500.0, 7500.0)
_TONE_AMP = 0.12
_WORD_RMS = 0.12  # rms of the two-tone signature, reference level for SNR

_CONSONANTS = "bdfghjklmnprstvw"
_VOWELS = "aeo"

MAX_VOCAB = len(_F1) * len(_F2)


@dataclass(frozen=True)
class DomainSpec:
    """Acoustic condition tag: background SNR and an overall gain shift."""

    snr_db: float
    gain: float


@dataclass
class CorpusConfig:
    vocab_size: int = 32
    words_min: int = 3
    words_max: int = 6
    word_seconds: float = 0.2
    word_gap_seconds: float = 0.04
    sample_rate: int = 16000
    lead_min: float = 0.14
    lead_max: float = 0.18
    trail_min: float = 0.1
    trail_max: float = 0.3
    # headroom reserved so a 0.64 s prepend never pushes content past the
    # model's fixed audio context
    context_seconds: float = 2.56
    reserve_seconds: float = 0.64
    train_per_domain: int = 192
    dev_per_domain: int = 32
    test_per_domain: int = 96
    domains: dict = field(
        default_factory=lambda: {
            "clean": DomainSpec(snr_db=24.0, gain=1.0),
            "noisy": DomainSpec(snr_db=11.0, gain=0.62),
        }
    )

    def validate(self) -> None:
        if not 1 <= self.vocab_size <= MAX_VOCAB:
            raise ValueError(
                f"vocabulary size {self.vocab_size} exceeds the "
                f"{MAX_VOCAB} available distinct signatures"
            )
        if self.words_min < 1 or self.words_max < self.words_min:
            raise ValueError("invalid utterance word-count range")
        longest = (
            self.words_max * self.word_seconds
            + (self.words_max - 1) * self.word_gap_seconds
            + self.trail_max
            + self.lead_min
        )
        budget = self.context_seconds - self.reserve_seconds
        if longest > budget:
            raise ValueError(
                f"longest utterance ({longest:.2f}s) cannot fit the "
                f"{budget:.2f}s context budget"
            )


def vocab_words(vocab_size: int) -> list[str]:
    words = [c + v for v in _VOWELS for c in _CONSONANTS]
    return words[:vocab_size]


def vocab_digest(words: list[str]) -> str:
    return hashlib.sha256(",".join(words).encode()).hexdigest()[:12]


def word_waveform(word_id: int, n_samples: int, sample_rate: int) -> np.ndarray:
    """Fixed acoustic signature of one word: two tones, one mildly chirped."""
    t = np.arange(n_samples, dtype=np.float64) / sample_rate
    f1 = _F1[word_id % len(_F1)]
    f2 = _F2[word_id // len(_F1)]
    sweep = ((word_id * 37) % 5 - 2) * 120.0  # Hz per second
    wave = _TONE_AMP * np.sin(2 * np.pi * (f1 * t + 0.5 * sweep * t * t))
    wave += _TONE_AMP * np.sin(2 * np.pi * f2 * t)
    fade = min(int(0.01 * sample_rate), n_samples // 2)
    if fade > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        wave[:fade] *= ramp
        wave[-fade:] *= ramp[::-1]
    return wave.astype(np.float32)


def render_utterance(
    word_ids: list[int],
    cfg: CorpusConfig,
    domain: DomainSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """Words plus background noise, with randomized lead/trail padding."""
    sr = cfg.sample_rate
    wlen = int(round(cfg.word_seconds * sr))
    gap = int(round(cfg.word_gap_seconds * sr))
    n = len(word_ids)
    dur = (n * wlen + (n - 1) * gap) / sr
    trail = rng.uniform(cfg.trail_min, cfg.trail_max)
    budget = cfg.context_seconds - cfg.reserve_seconds
    lead_cap = min(cfg.lead_max, budget - dur - trail)
    lead = rng.uniform(cfg.lead_min, max(cfg.lead_min, lead_cap))
    total = int(round((lead + dur + trail) * sr))
    sig = np.zeros(total, dtype=np.float64)
    start = int(round(lead * sr))
    for k, wid in enumerate(word_ids):
        s = start + k * (wlen + gap)
        sig[s : s + wlen] = word_waveform(wid, wlen, sr)
    noise_std = _WORD_RMS / 10 ** (domain.snr_db / 20.0)
    sig += rng.normal(0.0, noise_std, total)
    sig *= domain.gain
    return np.clip(sig, -1.0, 1.0).astype(np.float32)


@dataclass
class ManifestEntry:
    id: str
    path: str
    words: list[str]
    split: str
    domain: str


@dataclass
class CorpusManifest:
    root: Path
    entries: list[ManifestEntry]
    words: list[str]
    vocab_id: str
    seed: int

    def select(self, split: str | None = None, domain: str | None = None) -> list[ManifestEntry]:
        out = [
            e
            for e in self.entries
            if (split is None or e.split == split)
            and (domain is None or e.domain == domain)
        ]
        return out

    def wav_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def load_audio(self, entry: ManifestEntry) -> AudioSignal:
        return read_wav(self.wav_path(entry))


def synth_corpus(out_dir, cfg: CorpusConfig, seed: int) -> CorpusManifest:
    """Generate the corpus deterministically from (config, seed) and write it
    to ``out_dir`` (wav files, manifest.jsonl, corpus.json)."""
    cfg.validate()
    root = Path(out_dir)
    (root / "wav").mkdir(parents=True, exist_ok=True)
    words = vocab_words(cfg.vocab_size)
    vid = vocab_digest(words)
    rng = np.random.default_rng(seed)
    counts = {"train": cfg.train_per_domain, "dev": cfg.dev_per_domain, "test": cfg.test_per_domain}
    entries: list[ManifestEntry] = []
    for split in ("train", "dev", "test"):
        for domain_name in sorted(cfg.domains):
            domain = cfg.domains[domain_name]
            for i in range(counts[split]):
                n_words = int(rng.integers(cfg.words_min, cfg.words_max + 1))
                word_ids = [int(w) for w in rng.integers(0, cfg.vocab_size, n_words)]
                samples = render_utterance(word_ids, cfg, domain, rng)
                entry_id = f"{split}-{domain_name}-{i:04d}"
                rel = f"wav/{entry_id}.wav"
                write_wav(root / rel, AudioSignal(samples, cfg.sample_rate))
                entries.append(
                    ManifestEntry(
                        id=entry_id,
                        path=rel,
                        words=[words[w] for w in word_ids],
                        split=split,
                        domain=domain_name,
                    )
                )
    with open(root / "manifest.jsonl", "w") as f:
        for e in entries:
            f.write(
                json.dumps(
                    {"path": e.path, "words": e.words, "split": e.split, "domain": e.domain},
                    sort_keys=True,
                )
                + "\n"
            )
    meta = {
        "schema": 1,
        "seed": seed,
        "vocab": words,
        "vocab_id": vid,
        "sample_rate": cfg.sample_rate,
        "context_seconds": cfg.context_seconds,
        "counts": {s: counts[s] * len(cfg.domains) for s in counts},
        "domains": {k: {"snr_db": d.snr_db, "gain": d.gain} for k, d in sorted(cfg.domains.items())},
        "config": {
            "vocab_size": cfg.vocab_size,
            "words_min": cfg.words_min,
            "words_max": cfg.words_max,
            "word_seconds": cfg.word_seconds,
        },
    }
    with open(root / "corpus.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    return CorpusManifest(root=root, entries=entries, words=words, vocab_id=vid, seed=seed)


def load_manifest(root, validate: bool = False) -> CorpusManifest:
    """Load a corpus directory written by ``synth_corpus``.

    With ``validate=True`` every referenced wav is parsed, not just checked
    for existence.
    """
    root = Path(root)
    meta = json.loads((root / "corpus.json").read_text())
    entries = []
    with open(root / "manifest.jsonl") as f:
        for line in f:
            rec = json.loads(line)
            if rec["split"] not in ("train", "dev", "test"):
                raise ValueError(f"unknown split tag {rec['split']!r}")
            wav = root / rec["path"]
            if not wav.exists():
                raise FileNotFoundError(f"manifest references missing file {wav}")
            entries.append(
                ManifestEntry(
                    id=Path(rec["path"]).stem,
                    path=rec["path"],
                    words=list(rec["words"]),
                    split=rec["split"],
                    domain=rec["domain"],
                )
            )
    manifest = CorpusManifest(
        root=root,
        entries=entries,
        words=list(meta["vocab"]),
        vocab_id=meta["vocab_id"],
        seed=meta["seed"],
    )
    if validate:
        for e in entries:
            manifest.load_audio(e)
        unknown = {w for e in entries for w in e.words} - set(manifest.words)
        if unknown:
            raise ValueError(f"manifest transcriptions use unknown words: {sorted(unknown)}")
    return manifest
