"""Decoder tests against scripted step functions."""

import itertools

import numpy as np
import pytest

from mutelab.decode import beam_decode, greedy_decode
from mutelab.vocab import Vocab

VOCAB = Vocab(["aa", "bb", "cc", "dd"])  # 4 words + 7 specials
EOT = VOCAB.eot_id


def scripted(rows: dict):
    """step_fn from a map of generated-prefix tuple -> log-prob row."""

    def step(hyps):
        return np.stack([rows[h] for h in hyps])

    return step


def uniform_except(pairs, size=None, base=-20.0):
    row = np.full(size or len(VOCAB), base)
    for tok, lp in pairs:
        row[tok] = lp
    return row


class TestGreedy:
    def test_immediate_eot_gives_zero_words(self):
        rows = {(): uniform_except([(EOT, -0.1)])}
        t = greedy_decode(scripted(rows), VOCAB, max_len=5)
        assert t.token_ids == [EOT]
        assert t.n_words == 0
        assert not t.truncated

    def test_scripted_cycle_a_b_eot(self):
        rows = {
            (): uniform_except([(0, -0.1)]),
            (0,): uniform_except([(1, -0.2)]),
            (0, 1): uniform_except([(EOT, -0.3)]),
        }
        t = greedy_decode(scripted(rows), VOCAB, max_len=10)
        assert t.words == ["aa", "bb"]
        assert t.token_ids == [0, 1, EOT]
        np.testing.assert_allclose(t.log_probs, [-0.1, -0.2, -0.3])

    def test_tie_breaks_to_lowest_token_id(self):
        row = np.full(len(VOCAB), -5.0)
        row[[1, 2]] = -0.5  # exact tie
        t = greedy_decode(lambda hyps: np.stack([row for _ in hyps]), VOCAB, max_len=1)
        assert t.token_ids == [1]
        assert t.truncated

    def test_max_len_flags_truncation(self):
        rows = {h: uniform_except([(0, -0.1)]) for h in [(), (0,), (0, 0)]}
        t = greedy_decode(scripted(rows), VOCAB, max_len=3)
        assert t.truncated and len(t.token_ids) == 3


def exhaustive_best(step, max_len, beam_tiebreak=True):
    """Brute-force oracle: enumerate every sequence up to max_len, keep the
    highest-scoring finished (eot or length-capped) hypothesis with the same
    tie rule as the beam (score, then lexicographic ids)."""
    best = None
    vocab_size = len(VOCAB)

    def expand(ids, score):
        nonlocal best
        if ids and (ids[-1] == EOT or len(ids) == max_len):
            cand = (score, ids)
            if best is None or (-cand[0], cand[1]) < (-best[0], best[1]):
                best = cand
            return
        row = step([tuple(ids)])[0]
        for tok in range(vocab_size):
            expand(ids + (tok,), score + row[tok])

    expand((), 0.0)
    return best


class TestBeam:
    def test_beam_one_equals_greedy_on_random_models(self):
        rng = np.random.default_rng(0)
        for trial in range(50):
            table = {}

            def step(hyps):
                out = []
                for h in hyps:
                    if h not in table:
                        seed_rng = np.random.default_rng([trial, len(h), *h])
                        logits = seed_rng.normal(0, 2.0, len(VOCAB))
                        row = logits - np.log(np.exp(logits).sum())
                        table[h] = row
                    out.append(table[h])
                return np.stack(out)

            g = greedy_decode(step, VOCAB, max_len=4)
            b = beam_decode(step, VOCAB, beam=1, max_len=4)
            assert g.token_ids == b.token_ids, f"trial {trial}"

    def test_beam_two_recovers_greedy_trap(self):
        # step 1 argmax leads to a poor continuation; total log-prob favors
        # starting with token 1
        rows = {
            (): uniform_except([(0, -0.5), (1, -0.7)]),
            (0,): uniform_except([(EOT, -3.0)]),
            (1,): uniform_except([(EOT, -0.1)]),
        }
        g = greedy_decode(scripted(rows), VOCAB, max_len=3)
        b = beam_decode(scripted(rows), VOCAB, beam=2, max_len=3)
        assert g.token_ids == [0, EOT]
        assert b.token_ids == [1, EOT]
        assert sum(b.log_probs) > sum(g.log_probs)

    def test_beam_five_matches_exhaustive_on_small_stub(self):
        # |V|=11 here; sequences up to length 4, scripted by seeded hashing
        def step(hyps):
            out = []
            for h in hyps:
                rng = np.random.default_rng([97, len(h), *h])
                logits = rng.normal(0, 1.5, len(VOCAB))
                out.append(logits - np.log(np.exp(logits).sum()))
            return np.stack(out)

        oracle_score, oracle_ids = exhaustive_best(step, max_len=4)
        b = beam_decode(step, VOCAB, beam=5, max_len=4)
        assert tuple(b.token_ids) == oracle_ids
        assert abs(sum(b.log_probs) - oracle_score) < 1e-9

    def test_finished_hypotheses_keep_competing(self):
        # an early eot should win over longer continuations whose total
        # score is necessarily lower
        rows = {
            (): uniform_except([(EOT, -0.2), (0, -0.3)]),
            (0,): uniform_except([(EOT, -0.2)]),
        }
        b = beam_decode(scripted(rows), VOCAB, beam=3, max_len=3)
        assert b.token_ids == [EOT]

    def test_invalid_parameters(self):
        rows = {(): uniform_except([(EOT, -0.1)])}
        with pytest.raises(ValueError):
            beam_decode(scripted(rows), VOCAB, beam=0, max_len=3)
        with pytest.raises(ValueError):
            greedy_decode(scripted(rows), VOCAB, max_len=0)
