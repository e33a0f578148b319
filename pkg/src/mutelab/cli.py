"""Command-line surface tying the pipeline together.

Every subcommand writes its artifacts into a named run directory along with
the resolved configuration and a version stamp, so any artifact can be
regenerated from what the directory records. Usage problems (unknown flags,
missing files, config schema violations) exit with status 2; runtime
failures exit with status 1 and a machine-readable error object on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attack import (
    AdversarialSegment,
    AttackConfig,
    AttackDivergedError,
    init_segment,
    load_segment,
    save_segment,
    train_universal,
    train_universal_best_of,
)
from .audio import WavParseError, prepend, read_wav, write_wav
from .config import ConfigError, load_config
from .corpus import load_manifest, synth_corpus
from .evaluation import evaluate, write_report
from .features import FeatureConfig, log_mel, emit_spectrogram_image
from .model import MODEL_PRESETS, load_checkpoint, save_checkpoint
from .saliency import frame_saliency_series, saliency_report
from .training import ModelQualityError, preset_model_config, train_toy_model
from .transfer import (
    cross_model_eval,
    nearest_tokens,
    real_sound_set,
    transfer_threshold,
)

_USAGE_ERRORS = (ConfigError, FileNotFoundError, WavParseError)


def _out_dir(arg: str) -> Path:
    root = os.environ.get("MUTELAB_OUT_ROOT")
    path = Path(arg)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _git_describe() -> str | None:
    try:
        res = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        return res.stdout.strip() or None
    except Exception:
        return None


def _stamp(out: Path, cfg, args: argparse.Namespace) -> None:
    resolved = {
        "command": args.command,
        "args": {
            k: v for k, v in sorted(vars(args).items())
            if k not in ("command", "func") and not callable(v)
        },
        "config": cfg.to_dict() if cfg is not None else None,
    }
    (out / "resolved_config.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True, default=str) + "\n"
    )
    (out / "version.json").write_text(
        json.dumps(
            {"package": "mutelab", "version": __version__, "git": _git_describe()},
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )


def _load_models(paths: list[str]):
    return [load_checkpoint(p) for p in paths]


# -- subcommands ---------------------------------------------------------------


def cmd_synth_corpus(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg.seed = args.seed
    out = _out_dir(args.out)
    manifest = synth_corpus(out, cfg.corpus, seed=cfg.seed)
    _stamp(out, cfg, args)
    from .plots import save_asl_histogram

    counts = [len(e.words) for e in manifest.entries]
    save_asl_histogram(counts, None, out / "corpus_word_counts.png")
    print(json.dumps({"entries": len(manifest.entries), "out": str(out)}))
    return 0


def cmd_train_model(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.size:
        cfg.model.size = args.size
    if args.epochs:
        cfg.model.epochs = args.epochs
    manifest = load_manifest(args.corpus)
    out = _out_dir(args.out)
    _stamp(out, cfg, args)
    sizes = ["tiny", "base"] if cfg.model.size == "both" else [cfg.model.size]
    from .plots import save_model_training_curve

    summary = {}
    for offset, size in enumerate(sizes):
        model_cfg = preset_model_config(size)
        train_cfg = cfg.model.train_config(seed=cfg.seed + offset)
        model, history = train_toy_model(manifest, model_cfg, train_cfg)
        ckpt = out / f"model_{size}.ckpt"
        save_checkpoint(ckpt, model)
        with open(out / f"train_{size}.csv", "w") as f:
            f.write("epoch,loss\n")
            for i, loss in enumerate(history["epoch_loss"], 1):
                f.write(f"{i},{loss:.6f}\n")
        save_model_training_curve(history, out / f"train_{size}.png")
        summary[size] = {
            "checkpoint": str(ckpt),
            "model_id": model.model_id,
            "dev_wer": history["dev_wer"],
            "train_seconds": round(history["train_seconds"], 1),
        }
    (out / "training_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    print(json.dumps(summary))
    return 0


def cmd_train_attack(args) -> int:
    cfg = load_config(args.config, args.set)
    atk: AttackConfig = cfg.attack
    if args.seed is not None:
        atk.seed = args.seed
    if args.epochs:
        atk.epochs = args.epochs
    if args.epsilon is not None:
        atk.epsilon = args.epsilon
    if args.frames is not None:
        atk.n_frames = args.frames
    if args.batch_size is not None:
        atk.batch_size = args.batch_size
    if args.init:
        atk.init = args.init
    if args.warm_start:
        atk.warm_start_path = args.warm_start
    if args.domain is not None:
        atk.train_domain = None if args.domain == "all" else args.domain
    manifest = load_manifest(args.corpus)
    models = _load_models(args.model)
    out = _out_dir(args.out)
    _stamp(out, cfg, args)
    if args.seeds:
        segment, seed_log = train_universal_best_of(models, manifest, atk, args.seeds)
        log = seed_log["selected_log"]
        (out / "seed_selection.json").write_text(
            json.dumps(
                {
                    "selected_seed": seed_log["selected_seed"],
                    "final_dev_mute_pct": {
                        str(s): run["dev_mute_pct"][-1]
                        for s, run in seed_log["runs"].items()
                    },
                },
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
    else:
        segment, log = train_universal(models, manifest, atk)
    save_segment(out / "segment", segment)
    with open(out / "attack_log.csv", "w") as f:
        f.write("epoch,loss,dev_mute_pct\n")
        for e, loss, mute in zip(log["epoch"], log["loss"], log["dev_mute_pct"]):
            f.write(
                f"{e},{'' if loss is None else f'{loss:.6f}'},"
                f"{'' if mute is None else f'{mute:.2f}'}\n"
            )
    (out / "attack_log.json").write_text(json.dumps(log, indent=2, sort_keys=True) + "\n")
    from .plots import save_attack_training_curves

    save_attack_training_curves(log, out / "attack_log.png")
    result = {
        "segment": str(out / "segment.wav"),
        "models": segment.model_ids,
        "final_loss": log["loss"][-1],
        "final_dev_mute_pct": log["dev_mute_pct"][-1],
        "max_abs_ever": max(log["max_abs_per_step"]),
    }
    print(json.dumps(result))
    return 0


def cmd_apply(args) -> int:
    segment = load_segment(args.segment)
    signal = read_wav(args.input)
    out = prepend(segment, signal)
    write_wav(args.output, out)
    print(json.dumps({"samples": len(out), "out": args.output}))
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.set)
    ev = cfg.eval
    for name in ("split", "domain", "task", "prefix_mode", "beam", "jobs", "max_entries"):
        val = getattr(args, name.replace("-", "_"), None)
        if val is not None:
            setattr(ev, name, val)
    if args.greedy:
        ev.beam = 1
    manifest = load_manifest(args.corpus)
    model = load_checkpoint(args.model)
    segment = None
    if args.segment:
        segment = load_segment(args.segment)
    elif args.random_segment:
        segment = init_segment(
            "random",
            epsilon=cfg.attack.epsilon,
            n_frames=cfg.attack.n_frames,
            seed=cfg.seed,
            sample_rate=model.cfg.feature.sample_rate,
        )
    out = _out_dir(args.out)
    _stamp(out, cfg, args)
    domain = None if ev.domain in (None, "all") else ev.domain
    report = evaluate(
        model,
        segment,
        manifest,
        split=ev.split,
        domain=domain,
        task=ev.task,
        prefix_mode=ev.prefix_mode,
        beam=ev.beam,
        jobs=ev.jobs,
        max_entries=ev.max_entries,
    )
    paths = write_report(report, out, stem="eval")
    from .plots import save_asl_histogram

    save_asl_histogram(
        [r.noattack.n_words for r in report.records],
        [r.attacked.n_words for r in report.records] if segment is not None else None,
        out / "eval_asl_hist.png",
    )
    print(json.dumps(report.aggregate_dict()["baseline"] | {
        "attack": report.attack, "out": str(paths["json"])
    }, default=str))
    return 0


def cmd_saliency(args) -> int:
    cfg = load_config(args.config, args.set)
    manifest = load_manifest(args.corpus)
    model = load_checkpoint(args.model)
    segment = load_segment(args.segment)
    out = _out_dir(args.out)
    _stamp(out, cfg, args)
    timestamps = args.prefix_mode == "timestamps"
    table = saliency_report(
        model,
        segment,
        manifest,
        split=args.split,
        domain=None if args.domain in (None, "all") else args.domain,
        timestamps=timestamps,
        max_entries=args.max_entries,
    )
    (out / "saliency.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    with open(out / "saliency.csv", "w") as f:
        f.write("cohort,count,segment_mean,segment_std,speech_mean,speech_std\n")
        for name in ("success", "failed"):
            row = table[name]
            if row is None:
                continue
            f.write(
                f"{name},{row['count']},{row['segment_mean']:.6f},{row['segment_std']:.6f},"
                f"{row['speech_mean']:.6f},{row['speech_std']:.6f}\n"
            )
    from .plots import save_saliency_figure

    entries = manifest.select(
        split=args.split, domain=None if args.domain in (None, "all") else args.domain
    )
    for e in entries[: args.series]:
        sig = manifest.load_audio(e)
        series = frame_saliency_series(
            model, segment, sig, out_csv=out / f"saliency_{e.id}.csv",
            timestamps=timestamps, sample_id=e.id,
        )
        save_saliency_figure(
            series["series"],
            series["boundary_sample"],
            model.cfg.feature.sample_rate,
            out / f"saliency_{e.id}.png",
            title=f"{e.id} ({series['record'].cohort or 'n/a'})",
        )
    print(json.dumps({k: v for k, v in table.items() if k != "records"}, default=str))
    return 0


def cmd_transfer(args) -> int:
    cfg = load_config(args.config, args.set)
    models = _load_models(args.models)
    out = _out_dir(args.out)
    _stamp(out, cfg, args)
    mode = "letters" if args.letters_heuristic else "words"
    d = real_sound_set(models[0].vocab, mode=mode)
    rows = []
    for i in range(len(models)):
        for j in range(i + 1, len(models)):
            rows.append(transfer_threshold(models[i], models[j], d).table_row())
    with open(out / "transfer_pairs.csv", "w") as f:
        f.write("model_m,model_n,s_eot,s_real_mean,s_real_std,tau,transferable\n")
        for r in rows:
            f.write(
                f"{r['model_m']},{r['model_n']},{r['s_eot']:.6f},{r['s_real_mean']:.6f},"
                f"{r['s_real_std']:.6f},{r['tau']:.6f},{r['transferable']}\n"
            )
    (out / "transfer_pairs.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")

    tokens = args.tokens.split(",") if args.tokens else (models[0].vocab.words[:3] + ["<|endoftext|>"])
    with open(out / "nearest_tokens.csv", "w") as f:
        f.write("query,model,rank,token,cosine\n")
        for tok in tokens:
            for model in models:
                tid = model.vocab.id_of(tok)
                for rank, (s, _, cos) in enumerate(
                    nearest_tokens(model, tid, k=args.k, d=d), 1
                ):
                    f.write(f"{tok},{model.model_id},{rank},{s},{cos:.6f}\n")

    if args.segment and args.corpus:
        manifest = load_manifest(args.corpus)
        segment = load_segment(args.segment)
        with open(out / "cross_model_eval.csv", "w") as f:
            f.write("segment_models,target_model,mute_pct,asl\n")
            for model in models:
                rep = cross_model_eval(
                    segment, model, manifest, split=args.split,
                    max_entries=args.max_entries,
                )
                f.write(
                    f"{'+'.join(segment.model_ids)},{model.model_id},"
                    f"{rep.attack['mute_pct']:.2f},{rep.attack['asl']:.4f}\n"
                )
                write_report(rep, out, stem=f"cross_eval_{model.cfg.name}")

    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.6))
    labels = [f"{r['model_m'].split(':')[0]}-{r['model_n'].split(':')[0]}" for r in rows]
    ax.bar(np.arange(len(rows)) - 0.2, [r["s_eot"] for r in rows], 0.4, label="s(eot)")
    ax.bar(np.arange(len(rows)) + 0.2, [r["tau"] for r in rows], 0.4, label="threshold")
    ax.set_xticks(range(len(rows)), labels, rotation=30, ha="right")
    ax.set_ylabel("fingerprint divergence")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "transfer_pairs.png", dpi=120)
    plt.close(fig)
    print(json.dumps(rows))
    return 0


def cmd_spectrogram(args) -> int:
    signal = read_wav(args.input)
    boundary_frame = None
    if args.segment:
        segment = load_segment(args.segment)
        signal = prepend(segment, signal)
        boundary_frame = segment.n_frames // FeatureConfig().hop
    out = _out_dir(args.out)
    _stamp(out, None, args)
    spec = log_mel(signal)
    stem = args.stem or Path(args.input).stem
    emit_spectrogram_image(spec, out / f"{stem}.pgm")
    from .plots import save_spectrogram_figure

    save_spectrogram_figure(
        spec, out / f"{stem}.png", boundary_frame=boundary_frame, title=stem
    )
    meta = {
        "frames": spec.n_frames,
        "mels": spec.n_mels,
        "boundary_frame": boundary_frame,
    }
    if boundary_frame:
        seg_mean = float(spec.frames[:boundary_frame].mean())
        rest_mean = float(spec.frames[boundary_frame:].mean())
        meta["segment_mean_logpower"] = seg_mean
        meta["speech_mean_logpower"] = rest_mean
    (out / f"{stem}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(json.dumps(meta))
    return 0


# -- argument parsing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mutelab",
        description="Universal acoustic muting-attack laboratory for toy "
        "encoder-decoder speech recognizers.",
    )
    p.add_argument("--version", action="version", version=f"mutelab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="config override, repeatable")
        sp.add_argument("--seed", type=int, help="global seed override")

    sp = sub.add_parser("synth-corpus", help="generate the synthetic spoken-token corpus")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth_corpus)

    sp = sub.add_parser("train-model", help="train toy recognizers on a corpus")
    common(sp)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--size", choices=[*MODEL_PRESETS, "both"])
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_train_model)

    sp = sub.add_parser("train-attack", help="learn a universal adversarial prepend segment")
    common(sp)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--model", action="append", required=True,
                    help="model checkpoint; repeat for joint multi-model training")
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--frames", type=int, help="segment length in samples")
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--init", choices=["random", "warm"])
    sp.add_argument("--warm-start", help="segment base path for warm init")
    sp.add_argument("--seeds", type=int, nargs="+",
                    help="train once per seed, keep the best by dev mute rate")
    sp.add_argument("--domain", help="training domain tag, or 'all'")
    sp.set_defaults(func=cmd_train_attack)

    sp = sub.add_parser("apply", help="prepend a stored segment to a WAV file")
    sp.add_argument("--segment", required=True)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", dest="output", required=True)
    sp.set_defaults(func=cmd_apply)

    sp = sub.add_parser("evaluate", help="mute rate / sequence length / error report")
    common(sp)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--segment", help="segment base path")
    sp.add_argument("--random-segment", action="store_true",
                    help="use a random segment baseline instead of a trained one")
    sp.add_argument("--split")
    sp.add_argument("--domain")
    sp.add_argument("--task", choices=["transcribe", "translate"])
    sp.add_argument("--prefix-mode", choices=["timestamps", "notimestamps"])
    sp.add_argument("--beam", type=int)
    sp.add_argument("--greedy", action="store_true")
    sp.add_argument("--jobs", type=int)
    sp.add_argument("--max-entries", type=int)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("saliency", help="input-gradient sensitivity analysis")
    common(sp)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--segment", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--split", default="test")
    sp.add_argument("--domain")
    sp.add_argument("--prefix-mode", choices=["timestamps", "notimestamps"],
                    default="notimestamps")
    sp.add_argument("--max-entries", type=int)
    sp.add_argument("--series", type=int, default=2,
                    help="emit per-sample gradient series for the first N entries")
    sp.set_defaults(func=cmd_saliency)

    sp = sub.add_parser("transfer", help="embedding-geometry transferability analytics")
    common(sp)
    sp.add_argument("--models", nargs="+", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--tokens", help="comma-separated query tokens")
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--letters-heuristic", action="store_true",
                    help="build the real-sound set from token strings instead of all words")
    sp.add_argument("--segment", help="segment base path for cross-model evaluation")
    sp.add_argument("--corpus", help="corpus for cross-model evaluation")
    sp.add_argument("--split", default="test")
    sp.add_argument("--max-entries", type=int)
    sp.set_defaults(func=cmd_transfer)

    sp = sub.add_parser("spectrogram", help="emit spectrogram images for a WAV")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--segment", help="optional segment to prepend first")
    sp.add_argument("--out", required=True)
    sp.add_argument("--stem", help="output file stem")
    sp.set_defaults(func=cmd_spectrogram)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2
    except (ModelQualityError, AttackDivergedError, ValueError, RuntimeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
