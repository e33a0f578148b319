"""Greedy and beam decoding over a next-token log-probability interface.

Decoders are written against a step function rather than a concrete model:
``step_fn(hypotheses)`` receives a list of equal-length generated-token
tuples and returns one log-probability row per hypothesis. Argmax ties break
toward the lowest token id, and beam search runs without length
normalization, so decodes are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .vocab import Vocab, decoder_prefix


@dataclass
class Transcript:
    token_ids: list[int]  # generated tokens, including the terminating eot
    words: list[str]
    log_probs: list[float]
    truncated: bool = False

    @property
    def n_words(self) -> int:
        return len(self.words)

    def ends_in_eot(self, vocab: Vocab) -> bool:
        return bool(self.token_ids) and self.token_ids[-1] == vocab.eot_id


def greedy_decode(step_fn, vocab: Vocab, max_len: int) -> Transcript:
    """Repeatedly append the argmax token until eot or the length budget."""
    if max_len <= 0:
        raise ValueError("max_len must be positive")
    ids: list[int] = []
    lps: list[float] = []
    while len(ids) < max_len:
        row = np.asarray(step_fn([tuple(ids)])[0], dtype=np.float64)
        tok = int(row.argmax())
        ids.append(tok)
        lps.append(float(row[tok]))
        if tok == vocab.eot_id:
            break
    truncated = not (ids and ids[-1] == vocab.eot_id)
    return Transcript(ids, vocab.words_of(ids), lps, truncated=truncated)


def beam_decode(step_fn, vocab: Vocab, beam: int, max_len: int) -> Transcript:
    """Highest total-log-probability eot-terminated hypothesis.

    Finished hypotheses stay in the beam as candidates; since scores only
    decrease with length, the search stops as soon as the best-ranked
    hypothesis is finished. Score ties prefer the lexicographically
    smaller token sequence.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if max_len <= 0:
        raise ValueError("max_len must be positive")
    # (score, ids, log_probs, done, truncated)
    beams = [(0.0, (), (), False, False)]
    for _ in range(max_len):
        if beams[0][3]:
            break
        live = [b for b in beams if not b[3]]
        done = [b for b in beams if b[3]]
        rows = np.asarray(step_fn([b[1] for b in live]), dtype=np.float64)
        candidates = list(done)
        for (score, ids, lps, _, _), row in zip(live, rows):
            order = np.argsort(-row, kind="stable")[: beam + 1]
            for tok in order:
                tok = int(tok)
                nids = ids + (tok,)
                nlps = lps + (float(row[tok]),)
                nscore = score + float(row[tok])
                finished = tok == vocab.eot_id
                hit_cap = len(nids) >= max_len
                candidates.append(
                    (nscore, nids, nlps, finished or hit_cap, hit_cap and not finished)
                )
        candidates.sort(key=lambda b: (-b[0], b[1]))
        beams = candidates[:beam]
    best = next((b for b in beams if b[3]), beams[0])
    score, ids, lps, _, truncated = best
    ids = list(ids)
    return Transcript(ids, vocab.words_of(ids), list(lps), truncated=truncated)


class ModelStepper:
    """Binds a model, one encoded utterance, and a decoder prefix."""

    def __init__(self, model, enc_state: np.ndarray, prefix: list[int]):
        self.model = model
        self.enc = np.asarray(enc_state, dtype=np.float32)
        self.prefix = tuple(prefix)

    def __call__(self, hyps: list[tuple[int, ...]]) -> np.ndarray:
        n = len(hyps)
        length = len(self.prefix) + len(hyps[0])
        tokens = np.empty((n, length), dtype=np.int64)
        for i, h in enumerate(hyps):
            if len(h) != len(hyps[0]):
                raise ValueError("hypotheses in one step must share a length")
            tokens[i] = self.prefix + h
        enc = T.Tensor(np.broadcast_to(self.enc, (n,) + self.enc.shape).copy())
        with T.no_grad():
            logits = self.model.decode_logits(enc, tokens)
            return T.log_softmax(logits[:, -1, :]).data.astype(np.float64)


def next_token_dist(model, audio, tokens: list[int]) -> np.ndarray:
    """Probability vector over the vocabulary for the next token given raw
    audio and the decoder context so far (prefix plus generated tokens)."""
    enc = model.encode_signals([audio])
    with T.no_grad():
        logits = model.decode_logits(enc, np.asarray([tokens], dtype=np.int64))
        probs = T.softmax(logits[:, -1, :]).data[0]
    return probs.astype(np.float64)


def transcribe(
    model,
    audio,
    task: str = "transcribe",
    timestamps: bool = True,
    beam: int = 5,
    max_len: int | None = None,
) -> Transcript:
    """Encode one utterance and decode it with the given protocol."""
    prefix = decoder_prefix(model.vocab, task=task, timestamps=timestamps)
    budget = model.cfg.max_dec_len - len(prefix)
    max_len = budget if max_len is None else min(max_len, budget)
    enc = model.encode_signals([audio]).data[0]
    stepper = ModelStepper(model, enc, prefix)
    if beam == 1:
        return greedy_decode(stepper, model.vocab, max_len)
    return beam_decode(stepper, model.vocab, beam, max_len)
