"""Command-line entry point: train, eval, predict, gradcheck, fmcheck,
export-features, synth-data."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import checks
from .config import ModelConfig, apply_overrides, load_config
from .data import (generate_synthetic, load_pretrained_embeddings,
                   parse_nli_jsonl, write_jsonl, Vocab)
from .training import (TrainingDiverged, category_breakdown, evaluate,
                       load_checkpoint, train)
from .viz import export_features, render_heatmap


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cafe",
                                     description="Alignment-factorized sentence "
                                                 "pair model: train, evaluate, "
                                                 "inspect propagated features.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *names):
        if "config" in names:
            p.add_argument("--config", help="flat key = value config file")
        if "data" in names:
            p.add_argument("--data", help="JSONL sentence-pair file")
        if "dev" in names:
            p.add_argument("--dev", help="JSONL development file")
        if "checkpoint" in names:
            p.add_argument("--checkpoint", help="checkpoint path")
        if "out" in names:
            p.add_argument("--out", help="output path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed (default 42)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field")
        return p

    p = common(sub.add_parser("train", help="train a model"),
               "config", "data", "dev", "checkpoint", "out")
    p.add_argument("--embeddings", help="pretrained vector text file")
    p.add_argument("--state", help="full-state checkpoint written every epoch")
    p.add_argument("--resume", help="resume from a full-state checkpoint")
    p.add_argument("--quiet", action="store_true")

    p = common(sub.add_parser("eval", help="evaluate a checkpoint"),
               "data", "checkpoint", "out")
    p.add_argument("--annotations", help="JSONL of {pair_id, categories} for a "
                                          "per-category accuracy table")

    common(sub.add_parser("predict", help="write predictions for a file"),
           "data", "checkpoint", "out")

    common(sub.add_parser("gradcheck", help="finite-difference gradient suite"),
           "out")

    p = common(sub.add_parser("fmcheck", help="linear-time vs brute-force "
                                              "factorization equivalence"), "out")
    p.add_argument("--trials", type=int, default=1000)

    p = common(sub.add_parser("export-features",
                              help="export propagated features as CSV and "
                                   "render the heatmap alongside"),
               "data", "checkpoint", "out")
    p.add_argument("--limit", type=int, default=0, help="only the first N pairs")
    p.add_argument("--no-render", action="store_true")

    p = common(sub.add_parser("synth-data", help="write a synthetic corpus"), "out")
    p.add_argument("--count", type=int, default=300)
    return parser


def _load_config(args) -> ModelConfig:
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise FileNotFoundError(f"config file not found: {args.config}")
        config = load_config(args.config)
    else:
        config = ModelConfig()
    if args.seed is not None:
        config = apply_overrides(config, [f"seed={args.seed}"])
    return apply_overrides(config, args.set)


def _require(args, *names):
    for name in names:
        if not getattr(args, name, None):
            raise ValueError(f"--{name.replace('_', '-')} is required for this command")


def _load_examples(path: str, config: ModelConfig):
    if not os.path.exists(path):
        raise FileNotFoundError(f"data file not found: {path}")
    label_map = {name: i for i, name in enumerate(config.label_names())}
    report = parse_nli_jsonl(path, label_map)
    if report.errors:
        print(f"note: {len(report.errors)} malformed lines in {path} "
              f"(first: line {report.errors[0][0]}: {report.errors[0][1]})",
              file=sys.stderr)
    if report.skipped:
        print(f"note: skipped {report.skipped} unlabeled pairs in {path}",
              file=sys.stderr)
    return report.examples


def cmd_train(args) -> int:
    _require(args, "data", "dev")
    config = _load_config(args)
    train_examples = _load_examples(args.data, config)
    dev_examples = _load_examples(args.dev, config)
    vocab = Vocab.build(train_examples + dev_examples, config.label_names())
    embeddings = None
    if args.embeddings:
        embeddings, coverage = load_pretrained_embeddings(args.embeddings, vocab,
                                                          seed=config.seed)
        print(f"embedding coverage: {coverage:.1%} of {len(vocab.words)} tokens")
    try:
        result = train(config, train_examples, dev_examples, vocab=vocab,
                       embeddings=embeddings, checkpoint_path=args.checkpoint,
                       log_path=args.out, state_path=args.state,
                       resume_from=args.resume, verbose=not args.quiet)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"best dev accuracy {result.best_dev:.4f} at epoch {result.best_epoch}")
    if result.checkpoint_path:
        print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _load_model(args):
    _require(args, "checkpoint")
    if not os.path.exists(args.checkpoint):
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    model, _ = load_checkpoint(args.checkpoint)
    if args.set:  # non-architectural overrides, e.g. batch_size
        model.config = apply_overrides(model.config, args.set)
    return model


def cmd_eval(args) -> int:
    _require(args, "data")
    model = _load_model(args)
    examples = _load_examples(args.data, model.config)
    metrics, predictions = evaluate(model, examples)
    print(f"accuracy {metrics.accuracy:.4f}  loss {metrics.loss:.4f}  "
          f"n {metrics.count}")
    for i, name in enumerate(model.vocab.label_names):
        print(f"  {name:<14} precision {metrics.precision[i]:.3f}  "
              f"recall {metrics.recall[i]:.3f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for record in predictions:
                fh.write(json.dumps(record) + "\n")
        print(f"predictions: {args.out}")
    if args.annotations:
        table, unmatched, empty = category_breakdown(predictions, args.annotations)
        for cat in sorted(table):
            row = table[cat]
            print(f"  {cat:<20} {row['accuracy']:.3f}  ({row['count']} pairs)")
        if unmatched:
            print(f"  note: {len(unmatched)} annotated ids had no prediction")
        for cat in empty:
            print(f"  note: category {cat!r} matched no pairs, omitted")
    return 0


def cmd_predict(args) -> int:
    _require(args, "data", "out")
    model = _load_model(args)
    examples = _load_examples(args.data, model.config)
    _, predictions = evaluate(model, examples)
    with open(args.out, "w", encoding="utf-8") as fh:
        for record in predictions:
            fh.write(json.dumps(record) + "\n")
    print(f"wrote {len(predictions)} predictions to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    results = checks.gradient_suite(seed=args.seed or 0)
    worst = max(results.values())
    for name, err in results.items():
        print(f"{name:<18} max relative error {err:.3e}")
    print(f"worst {worst:.3e} (threshold 1e-4)")
    return 0 if worst < 1e-4 else 1


def cmd_fmcheck(args) -> int:
    deviation = checks.fm_equivalence(trials=args.trials, seed=args.seed or 0)
    print(f"max |linear-time - brute-force| over {args.trials} trials: "
          f"{deviation:.3e} (threshold 1e-10)")
    return 0 if deviation < 1e-10 else 1


def cmd_export_features(args) -> int:
    _require(args, "data", "out")
    model = _load_model(args)
    examples = _load_examples(args.data, model.config)
    if args.limit:
        examples = examples[:args.limit]
    rows = export_features(model, examples, args.out)
    print(f"wrote {rows} feature rows to {args.out}")
    if not args.no_render:
        figure_path = os.path.splitext(args.out)[0] + ".svg"
        render_heatmap(args.out, figure_path)
        print(f"heatmap: {figure_path}")
    return 0


def cmd_synth_data(args) -> int:
    _require(args, "out")
    examples = generate_synthetic(args.count, seed=42 if args.seed is None else args.seed)
    write_jsonl(examples, args.out)
    print(f"wrote {len(examples)} pairs to {args.out}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "fmcheck": cmd_fmcheck,
    "export-features": cmd_export_features,
    "synth-data": cmd_synth_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
