"""Embedding-geometry model-transferability analytics.

Tokens with a real acoustic sound anchor a coordinate system: every token
gets a fingerprint of cosine similarities between its output-projection row
and the rows of the real-sound set. Comparing a token's fingerprints under
two models measures how consistently that token is placed relative to real
sounds; a large divergence for the end-of-text token (versus the typical
divergence of real-sound tokens plus two standard deviations) indicates that
no shared acoustic realization exists, i.e. a muting segment is unlikely to
transfer between the models.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RealSoundSet:
    token_ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass
class AcousticFingerprint:
    token_id: int
    model_id: str
    d_set: RealSoundSet
    values: np.ndarray  # cosine to each real-sound token, indexed like d_set


@dataclass
class TransferReport:
    model_m: str
    model_n: str
    s_eot: float
    s_values: dict[int, float]  # divergence per real-sound token
    s_mean: float
    s_std: float  # population standard deviation
    tau: float
    transferable: bool

    def table_row(self) -> dict:
        return {
            "model_m": self.model_m,
            "model_n": self.model_n,
            "s_eot": self.s_eot,
            "s_real_mean": self.s_mean,
            "s_real_std": self.s_std,
            "tau": self.tau,
            "transferable": self.transferable,
        }


def real_sound_set(vocab, mode: str = "words") -> RealSoundSet:
    """Tokens assumed to have a model-invariant acoustic realization.

    ``words`` takes every word token (the synthetic vocabulary maps each
    word to a fixed sound). ``letters`` applies the textual heuristic of
    keeping tokens whose string starts with a letter or digit, for
    vocabularies carrying real text.
    """
    if mode == "words":
        ids = tuple(range(vocab.n_words))
    elif mode == "letters":
        ids = tuple(
            i
            for i in range(len(vocab))
            if vocab.token_string(i)[:1].isalnum()
        )
    else:
        raise ValueError(f"unknown real-sound mode {mode!r}")
    if not ids:
        raise ValueError("real-sound token set is empty")
    return RealSoundSet(ids)


def _unit_rows(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(w.astype(np.float64), axis=1)
    ok = norms > 0
    unit = np.zeros_like(w, dtype=np.float64)
    unit[ok] = w[ok] / norms[ok, None]
    return unit, ok


def _valid_d(model, d: RealSoundSet) -> RealSoundSet:
    _, ok = _unit_rows(model.projection_matrix)
    kept = tuple(i for i in d.token_ids if ok[i])
    if len(kept) != len(d.token_ids):
        dropped = sorted(set(d.token_ids) - set(kept))
        warnings.warn(f"excluding zero-norm real-sound tokens {dropped}")
    return RealSoundSet(kept)


def fingerprint(model, token_id: int, d: RealSoundSet) -> AcousticFingerprint:
    """Cosine of the token's projection row against every real-sound row
    (all rows unit-normalized first)."""
    w = model.projection_matrix
    if not 0 <= token_id < w.shape[0]:
        raise ValueError(f"token {token_id} outside the vocabulary")
    unit, ok = _unit_rows(w)
    if not ok[token_id]:
        raise ValueError(f"token {token_id} has a zero-norm projection row")
    d = _valid_d(model, d)
    ids = np.asarray(d.token_ids)
    values = unit[ids] @ unit[token_id]
    return AcousticFingerprint(
        token_id=token_id, model_id=model.model_id, d_set=d, values=values
    )


def divergence(token_id: int, model_m, model_n, d: RealSoundSet) -> float:
    """L2 distance between the token's fingerprints under two models,
    computed over the real-sound entries only; symmetric in the models."""
    if model_m.vocab.words != model_n.vocab.words:
        raise ValueError("models must share a vocabulary")
    fa = fingerprint(model_m, token_id, d)
    fb = fingerprint(model_n, token_id, d)
    if fa.d_set.token_ids != fb.d_set.token_ids:
        shared = tuple(sorted(set(fa.d_set.token_ids) & set(fb.d_set.token_ids)))
        d = RealSoundSet(shared)
        fa = fingerprint(model_m, token_id, d)
        fb = fingerprint(model_n, token_id, d)
    return float(np.linalg.norm(fa.values - fb.values))


def transfer_threshold(model_m, model_n, d: RealSoundSet | None = None) -> TransferReport:
    """Divergence distribution over real-sound tokens, the resulting
    threshold (mean plus two population standard deviations), and the
    verdict for the end-of-text token."""
    if d is None:
        d = real_sound_set(model_m.vocab)
    if len(d) < 2:
        raise ValueError("need at least two real-sound tokens for a threshold")
    s_values = {r: divergence(r, model_m, model_n, d) for r in d.token_ids}
    arr = np.array(list(s_values.values()), dtype=np.float64)
    s_mean = float(arr.mean())
    s_std = float(arr.std())  # population
    tau = s_mean + 2.0 * s_std
    s_eot = divergence(model_m.vocab.eot_id, model_m, model_n, d)
    return TransferReport(
        model_m=model_m.model_id,
        model_n=model_n.model_id,
        s_eot=s_eot,
        s_values=s_values,
        s_mean=s_mean,
        s_std=s_std,
        tau=tau,
        transferable=bool(s_eot <= tau),
    )


def nearest_tokens(model, token_id: int, k: int = 5, d: RealSoundSet | None = None):
    """Top-k real-sound tokens by cosine similarity to the query row,
    excluding the query itself; cosine ties prefer the lower token id."""
    if d is None:
        d = real_sound_set(model.vocab)
    if k > len(d):
        raise ValueError(f"k={k} exceeds the {len(d)} real-sound tokens")
    fp = fingerprint(model, token_id, d)
    pairs = [
        (tid, float(v))
        for tid, v in zip(fp.d_set.token_ids, fp.values)
        if tid != token_id
    ]
    pairs.sort(key=lambda p: (-p[1], p[0]))
    return [(model.vocab.token_string(tid), tid, cos) for tid, cos in pairs[:k]]


def cross_model_eval(segment, target_model, manifest, **eval_kwargs):
    """Evaluate a segment (trained on some source model) against a target
    model; a plain evaluation report, tagged with the segment's origins."""
    from .evaluation import evaluate

    return evaluate(target_model, segment, manifest, **eval_kwargs)
