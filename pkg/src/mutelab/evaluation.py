"""Attack evaluation: mute rate, average sequence length, word-error-rate
breakdown, and success/failure cohort statistics.

A sample counts as muted when the attacked decode produces no text. Under a
no-timestamps prefix that is literally "the first generated token is
end-of-text"; under the default timestamp prefix the first generated token
is normally the timestamp marker, so success there means the decode contains
no word tokens at all. Both the mode-dependent success flag and the literal
first-token flag are recorded.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioSignal, prepend
from .corpus import CorpusManifest
from .decode import Transcript, transcribe
from .vocab import Vocab


# -- word error rate -----------------------------------------------------------


def wer_counts(ref: list[str], hyp: list[str]) -> tuple[int, int, int]:
    """(insertions, deletions, substitutions) of a minimum-cost word
    alignment with uniform edit costs.

    Backtrace ties prefer substitution over insertion over deletion.
    """
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int32)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i, j] = min(sub, d[i, j - 1] + 1, d[i - 1, j] + 1)
    ins = dele = subs = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            subs += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and d[i, j] == d[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dele += 1
            i -= 1
    return ins, dele, subs


def wer_breakdown(ref: list[str], hyp: list[str]) -> dict:
    """WER and its insertion/deletion/substitution components as percentages
    of the reference length. The components sum exactly to the total."""
    if not ref:
        raise ValueError("word error rate is undefined for an empty reference")
    ins, dele, subs = wer_counts(ref, hyp)
    scale = 100.0 / len(ref)
    return {
        "wer": (ins + dele + subs) * scale,
        "ins": ins * scale,
        "del": dele * scale,
        "sub": subs * scale,
    }


# -- per-sample records ----------------------------------------------------------


@dataclass
class EvalRecord:
    id: str
    domain: str
    task: str
    prefix_mode: str
    reference: list[str]
    noattack: Transcript
    attacked: Transcript | None = None

    def _flags(self, t: Transcript, vocab: Vocab) -> tuple[bool, bool]:
        first_eot = bool(t.token_ids) and t.token_ids[0] == vocab.eot_id
        if self.prefix_mode == "notimestamps":
            success = first_eot
        else:
            success = t.n_words == 0
        return first_eot, success

    def attacked_flags(self, vocab: Vocab) -> tuple[bool, bool]:
        target = self.attacked if self.attacked is not None else self.noattack
        return self._flags(target, vocab)


def mute_rate(flags: list[bool]) -> float:
    """Percentage of muted samples."""
    if not flags:
        raise ValueError("mute rate over an empty record set")
    return 100.0 * sum(flags) / len(flags)


def avg_seq_len(word_counts: list[int]) -> float:
    """Mean number of words per decoded transcript."""
    if not word_counts:
        raise ValueError("average sequence length over an empty set")
    return float(sum(word_counts)) / len(word_counts)


def pooled_wer(pairs: list[tuple[list[str], list[str]]]) -> dict:
    """Corpus-level WER over (reference, hypothesis) pairs: error counts are
    summed before normalizing, and empty references are excluded and counted."""
    tot = {"ins": 0, "del": 0, "sub": 0}
    ref_words = 0
    excluded = 0
    for ref, hyp in pairs:
        if not ref:
            excluded += 1
            continue
        ins, dele, subs = wer_counts(ref, hyp)
        tot["ins"] += ins
        tot["del"] += dele
        tot["sub"] += subs
        ref_words += len(ref)
    if ref_words == 0:
        return {"wer": None, "ins": None, "del": None, "sub": None,
                "pairs": 0, "excluded_empty_refs": excluded}
    scale = 100.0 / ref_words
    return {
        "wer": (tot["ins"] + tot["del"] + tot["sub"]) * scale,
        "ins": tot["ins"] * scale,
        "del": tot["del"] * scale,
        "sub": tot["sub"] * scale,
        "pairs": len(pairs) - excluded,
        "excluded_empty_refs": excluded,
    }


# -- full evaluation --------------------------------------------------------------


@dataclass
class EvalReport:
    meta: dict
    baseline: dict
    attack: dict | None
    cohorts: dict | None
    records: list[EvalRecord] = field(repr=False, default_factory=list)

    def aggregate_dict(self) -> dict:
        return {
            "meta": self.meta,
            "baseline": self.baseline,
            "attack": self.attack,
            "cohorts": self.cohorts,
        }


def _transcript_dict(t: Transcript | None) -> dict | None:
    if t is None:
        return None
    return {
        "tokens": list(t.token_ids),
        "words": list(t.words),
        "n_words": t.n_words,
        "truncated": t.truncated,
    }


def cohort_report(records: list[EvalRecord], vocab: Vocab) -> dict:
    """Success/failure cohort statistics of the attacked decodes.

    The failed cohort also gets a pooled WER breakdown of attacked
    hypotheses against the no-attack transcripts. Empty cohorts are
    reported as absent (None), not errors.
    """
    split: dict[str, list[EvalRecord]] = {"success": [], "failed": []}
    for r in records:
        _, success = r.attacked_flags(vocab)
        split["success" if success else "failed"].append(r)
    out: dict = {}
    for name, cohort in split.items():
        if not cohort:
            out[name] = None
            continue
        entry = {
            "count": len(cohort),
            "asl_noattack": avg_seq_len([r.noattack.n_words for r in cohort]),
            "asl_attacked": avg_seq_len(
                [(r.attacked or r.noattack).n_words for r in cohort]
            ),
        }
        if name == "failed":
            entry["wer_vs_noattack"] = pooled_wer(
                [(r.noattack.words, (r.attacked or r.noattack).words) for r in cohort]
            )
        out[name] = entry
    return out


def evaluate(
    model,
    segment,
    manifest: CorpusManifest,
    split: str = "test",
    domain: str | None = None,
    task: str = "transcribe",
    prefix_mode: str = "timestamps",
    beam: int = 5,
    jobs: int = 1,
    max_entries: int | None = None,
) -> EvalReport:
    """Decode a manifest selection with and (if a segment is given) without
    the adversarial prepend, and aggregate the attack metrics.

    Aggregates are folded in sample-id order, so permuting the manifest
    permutes the records but leaves every aggregate identical.
    """
    if model.vocab.words != manifest.words:
        raise ValueError("manifest vocabulary does not match the model checkpoint")
    if prefix_mode not in ("timestamps", "notimestamps"):
        raise ValueError(f"unknown prefix mode {prefix_mode!r}")
    timestamps = prefix_mode == "timestamps"
    entries = manifest.select(split=split, domain=domain)
    if max_entries is not None:
        entries = entries[:max_entries]
    if not entries:
        raise ValueError(f"no manifest entries for split={split!r} domain={domain!r}")
    if segment is not None and segment.sample_rate != manifest.load_audio(entries[0]).sample_rate:
        raise ValueError("segment sample rate does not match corpus audio")

    vocab = model.vocab

    def run(entry) -> EvalRecord:
        sig = manifest.load_audio(entry)
        clean = transcribe(model, sig, task=task, timestamps=timestamps, beam=beam)
        attacked = None
        if segment is not None:
            attacked = transcribe(
                model, prepend(segment, sig), task=task, timestamps=timestamps, beam=beam
            )
        return EvalRecord(
            id=entry.id,
            domain=entry.domain,
            task=task,
            prefix_mode=prefix_mode,
            reference=list(entry.words),
            noattack=clean,
            attacked=attacked,
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(run, entries))
    else:
        records = [run(e) for e in entries]
    records.sort(key=lambda r: r.id)

    def side_stats(transcripts: list[Transcript]) -> dict:
        firsts = [bool(t.token_ids) and t.token_ids[0] == vocab.eot_id for t in transcripts]
        if prefix_mode == "notimestamps":
            successes = firsts
        else:
            successes = [t.n_words == 0 for t in transcripts]
        return {
            "mute_pct": mute_rate(successes),
            "first_token_eot_pct": mute_rate(firsts),
            "asl": avg_seq_len([t.n_words for t in transcripts]),
        }

    baseline = side_stats([r.noattack for r in records])
    attack_stats = None
    cohorts = None
    if segment is not None:
        attack_stats = side_stats([r.attacked for r in records])
        cohorts = cohort_report(records, vocab)
    meta = {
        "model_id": model.model_id,
        "segment": None if segment is None else {
            "n_frames": int(np.asarray(segment.samples).size),
            "epsilon": getattr(segment, "epsilon", None),
            "seed": getattr(segment, "seed", None),
            "model_ids": list(getattr(segment, "model_ids", []) or []),
        },
        "split": split,
        "domain": domain,
        "task": task,
        "prefix_mode": prefix_mode,
        "beam": beam,
        "samples": len(records),
    }
    return EvalReport(meta=meta, baseline=baseline, attack=attack_stats,
                      cohorts=cohorts, records=records)


def write_report(report: EvalReport, out_dir, stem: str = "eval") -> dict[str, Path]:
    """Emit aggregate JSON, per-record JSONL, and a summary CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    agg = out_dir / f"{stem}.json"
    agg.write_text(json.dumps(report.aggregate_dict(), indent=2, sort_keys=True) + "\n")
    paths["json"] = agg
    jsonl = out_dir / f"{stem}.records.jsonl"
    with open(jsonl, "w") as f:
        for r in report.records:
            row = {
                "id": r.id,
                "domain": r.domain,
                "task": r.task,
                "prefix_mode": r.prefix_mode,
                "reference": r.reference,
                "noattack": _transcript_dict(r.noattack),
                "attacked": _transcript_dict(r.attacked),
            }
            f.write(json.dumps(row, sort_keys=True) + "\n")
    paths["jsonl"] = jsonl
    csv = out_dir / f"{stem}.summary.csv"
    with open(csv, "w") as f:
        f.write("model,split,domain,task,prefix_mode,metric,no_attack,attack\n")
        m = report.meta
        dom = m["domain"] or "all"
        base = report.baseline
        att = report.attack or {}
        for metric, key in (("mute_pct", "mute_pct"), ("asl", "asl"),
                            ("first_token_eot_pct", "first_token_eot_pct")):
            f.write(
                f"{m['model_id']},{m['split']},{dom},{m['task']},{m['prefix_mode']},"
                f"{metric},{base[key]:.4f},"
                + (f"{att[key]:.4f}" if att else "") + "\n"
            )
    paths["csv"] = csv
    return paths
