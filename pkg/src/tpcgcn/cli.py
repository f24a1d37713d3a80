"""Command-line entry point for reproducible runs.

Subcommands: split, train, eval, ablate, attention. Files and the seed are
flags; model hyperparameters come from a JSON config so experiment
definitions stay versionable. Every command writes a run manifest (command,
config snapshot, seed, input digests, output paths, tool version) atomically
before producing results, and reruns of the same invocation are
byte-identical.

Exit codes: 0 success, 1 validation error, 2 runtime/numeric error. The
environment variable TPCGCN_THREADS is accepted as an upper bound on
internal parallelism and recorded in the manifest; current kernels are
single-threaded, so any bound is honored trivially.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from tpcgcn import __version__
from tpcgcn.data import (
    SplitMode,
    load_embeddings,
    load_split,
    load_threads,
    make_split,
    save_split,
)
from tpcgcn.evaluate import (
    ABLATION_NAMES,
    evaluate_store,
    render_metrics_table,
    run_ablation,
    save_attention,
)
from tpcgcn.graph import ValidationError
from tpcgcn.model import DtpcModel, load_model_for_eval, model_kind_of_store
from tpcgcn.params import load_checkpoint, save_checkpoint
from tpcgcn.pipeline import fallback_table, prepare_dataset, prepare_threads
from tpcgcn.train import TrainConfig, train_dtpcgcn, train_tpcgcn
from tpcgcn.evaluate import export_attention


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_manifest(
    path: Path,
    command: str,
    config: dict,
    seed: int | None,
    inputs: list[Path],
    outputs: list[Path],
) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "tool_version": __version__,
        "max_threads": os.environ.get("TPCGCN_THREADS"),
    }
    _write_atomic(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _parse_ratios(text: str) -> tuple[int, int, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ValidationError(f"ratios must look like A:B:C, got {text!r}")
    try:
        a, b, c = (int(p) for p in parts)
    except ValueError:
        raise ValidationError(f"ratios must be integers, got {text!r}") from None
    return (a, b, c)


def _load_config(path: str | None, seed: int | None) -> TrainConfig:
    config = TrainConfig.from_json(path) if path else TrainConfig()
    if seed is not None:
        config = replace(config, seed=seed)
    return config


def _prepared_inputs(args, config: TrainConfig):
    """Shared ingestion: threads, embeddings (or fallback), prepared graphs."""
    threads = prepare_threads(
        load_threads(args.threads),
        rebuild_tree=config.rebuild_comment_tree,
        time_window_secs=config.time_window_secs,
        max_comments=config.max_comments,
    )
    inputs = [Path(args.threads)]
    if getattr(args, "embeddings", None):
        table = load_embeddings(args.embeddings)
        inputs.append(Path(args.embeddings))
    else:
        print(
            "warning: no --embeddings given; falling back to hashed bag-of-words "
            f"features (dim {config.bow_dim})",
            file=sys.stderr,
        )
        table = fallback_table(threads, config.bow_dim, config.seed)
    return threads, table, inputs


def cmd_split(args) -> int:
    threads = load_threads(args.threads)
    split = make_split(
        threads, SplitMode(args.mode), _parse_ratios(args.ratios), args.seed
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(
        out.with_name(out.name + ".manifest.json"),
        "split",
        {"mode": args.mode, "ratios": args.ratios},
        args.seed,
        [Path(args.threads)],
        [out],
    )
    save_split(split, out)
    print(
        f"split written: train={len(split.train)} val={len(split.val)} "
        f"test={len(split.test)} -> {out}"
    )
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config, args.seed)
    threads, table, inputs = _prepared_inputs(args, config)
    split = load_split(args.split)
    inputs.append(Path(args.split))
    if args.config:
        inputs.append(Path(args.config))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "checkpoint.tpck"
    history_path = out_dir / "history.jsonl"
    config_path = out_dir / "config.json"
    write_manifest(
        out_dir / "manifest.json",
        f"train:{args.model}",
        {"model": args.model, "config": args.config},
        config.seed,
        inputs,
        [ckpt_path, history_path, config_path],
    )
    prepared = prepare_dataset(threads, table, feature_seed=config.seed)
    if args.model == "tpcgcn":
        model, history = train_tpcgcn(prepared, split, config)
    else:
        model, history = train_dtpcgcn(prepared, split, config)
    config.to_json(config_path)
    history.save(history_path)
    save_checkpoint(model.store, ckpt_path)
    print(f"checkpoint: {ckpt_path}")
    print(f"history:    {history_path}")
    best = history.best.get("stage3") or history.best.get("stage1") or {}
    if best.get("val_metric") is not None:
        print(f"best val {config.selection_metric}: {best['val_metric']:.4f}")
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args.config, None)
    threads, table, inputs = _prepared_inputs(args, config)
    split = load_split(args.split)
    store = load_checkpoint(args.checkpoint)
    inputs += [Path(args.split), Path(args.checkpoint)]
    prepared = prepare_dataset(threads, table, feature_seed=config.seed)
    metrics = evaluate_store(store, prepared, split.fold(args.fold))
    out_paths = [Path(args.out)] if args.out else []
    if args.out:
        write_manifest(
            Path(args.out).with_name(Path(args.out).name + ".manifest.json"),
            "eval",
            {"fold": args.fold},
            None,
            inputs,
            out_paths,
        )
        _write_atomic(
            Path(args.out), json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n"
        )
    kind = model_kind_of_store(store)
    print(render_metrics_table([(kind, metrics)]), end="")
    print(f"acc {metrics.accuracy:.3f} macro_f1 {metrics.macro_f1:.3f} (n={metrics.n})")
    return 0


def cmd_ablate(args) -> int:
    config = _load_config(args.config, args.seed)
    threads, table, inputs = _prepared_inputs(args, config)
    split = load_split(args.split)
    inputs.append(Path(args.split))
    variants = [v.strip() for v in args.variant.split(",") if v.strip()]
    for v in variants:
        if v not in ABLATION_NAMES:
            raise ValidationError(
                f"unknown ablation variant {v!r}; choose from {ABLATION_NAMES}"
            )
    out_paths = [Path(args.out)] if args.out else []
    if args.out:
        write_manifest(
            Path(args.out).with_name(Path(args.out).name + ".manifest.json"),
            "ablate",
            {"variants": variants, "fold": args.fold},
            config.seed,
            inputs,
            out_paths,
        )
    rows = []
    for v in variants:
        metrics, _ = run_ablation(v, threads, table, split, config, fold=args.fold)
        rows.append((v, metrics))
    print(render_metrics_table(rows), end="")
    if args.out:
        _write_atomic(
            Path(args.out),
            json.dumps(
                {name: m.to_dict() for name, m in rows}, indent=2, sort_keys=True
            )
            + "\n",
        )
    return 0


def cmd_attention(args) -> int:
    config = _load_config(args.config, None)
    threads, table, inputs = _prepared_inputs(args, config)
    split = load_split(args.split)
    store = load_checkpoint(args.checkpoint)
    inputs += [Path(args.split), Path(args.checkpoint)]
    model = load_model_for_eval(store)
    if not isinstance(model, DtpcModel):
        raise ValidationError("attention export needs a two-branch checkpoint")
    prepared = prepare_dataset(threads, table, feature_seed=config.seed)
    records = export_attention(model, prepared, split.fold(args.fold))
    out = Path(args.out)
    write_manifest(
        out.with_name(out.name + ".manifest.json"),
        "attention",
        {"fold": args.fold},
        None,
        inputs,
        [out],
    )
    save_attention(records, out)
    print(f"{len(records)} attention records -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tpcgcn",
        description="Controversy detection on topic-post-comment graphs",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="write a train/val/test split")
    p.add_argument("--threads", required=True)
    p.add_argument("--mode", choices=["intra", "inter"], required=True)
    p.add_argument("--ratios", default="4:1:1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--model", choices=["tpcgcn", "dtpcgcn"], required=True)
    p.add_argument("--threads", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--split", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a fold")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threads", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--split", required=True)
    p.add_argument("--fold", choices=["train", "val", "test"], default="test")
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score ablation variants")
    p.add_argument("--variant", required=True, help="comma-separated variant names")
    p.add_argument("--threads", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--split", required=True)
    p.add_argument("--fold", choices=["train", "val", "test"], default="test")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("attention", help="export per-post branch weights")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threads", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--split", required=True)
    p.add_argument("--fold", choices=["train", "val", "test"], default="test")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attention)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime / numeric
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
