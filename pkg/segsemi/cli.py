#!/usr/bin/env python3
"""
Command line interface for segsemi

Commands:
    gen-data    - Generate a synthetic dataset directory
    train       - Train a model (semi-supervised by default)
    eval        - Score a checkpoint in both prediction modes
    predict     - Write per-video frame labels as SEGL files
    score       - Score a directory of SEGL predictions
    ablate      - Run experiment conditions over several seeds

Examples:
    segsemi gen-data --output data/kitchen --seed 0
    segsemi train --dataset data/kitchen --output runs/semi --total-steps 3000 --warmup-steps 500
    segsemi train --dataset data/kitchen --output runs/base --baseline
    segsemi eval --dataset data/kitchen --checkpoint runs/semi/checkpoints/final.npz --output runs/semi/eval
    segsemi ablate --dataset data/kitchen --conditions baseline semi full --seeds 0 1 2 3 4 --output runs/ablation

Hyperparameter flags (--alpha, --streams, --beam-width, --pool-k, ...) override
the values of the --config file. Exit codes: 0 success, 1 runtime failure,
2 invalid input or configuration.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, get_args

from pydantic import ValidationError

from .checkpoint import load_checkpoint
from .config import Hyperparams, get_settings
from .data import Dataset, default_grammar, generate_synthetic, split
from .errors import ConfigError, DatasetError, SegSemiError
from .harness import AblationRow, get_condition, ground_truth_oracle, run_ablation, write_ablation_csv
from .io import load_dataset, load_predictions, save_dataset, save_predictions
from .logging_config import get_logger, set_run_context, setup_logging
from .metrics import format_report, score_videos, write_reports_csv
from .schemas import GrammarConfig
from .trainer import MODES, TrainState, Trainer, predict_many

logger = get_logger("segsemi.cli")

SPLITS = ("test", "annotated", "unannotated", "train")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def add_hyperparam_flags(parser: argparse.ArgumentParser) -> None:
    """One flag per Hyperparams field, named after it"""
    group = parser.add_argument_group("hyperparameters")
    for name, info in Hyperparams.model_fields.items():
        annotation = info.annotation
        if annotation is bool:
            group.add_argument(_flag(name), dest=name, action=argparse.BooleanOptionalAction, default=None)
        else:
            kind = annotation if annotation in (int, float) else next(iter(get_args(annotation)), str)
            group.add_argument(_flag(name), dest=name, type=kind, default=None,
                               help=f"default {info.default}")


def hyperparams_from_args(args: argparse.Namespace) -> Hyperparams:
    overrides = {name: getattr(args, name, None) for name in Hyperparams.model_fields}
    if getattr(args, "config", None):
        return Hyperparams.from_file(args.config, overrides)
    return Hyperparams.build(overrides=overrides)


def select_records(dataset: Dataset, split_name: str) -> list:
    records = dataset.train if split_name == "train" else getattr(dataset, split_name)
    if not records:
        raise DatasetError(f"Split {split_name!r} is empty")
    return records


def cmd_gen_data(args: argparse.Namespace) -> int:
    """Generate a synthetic dataset"""
    if args.grammar:
        try:
            grammar = GrammarConfig.model_validate(json.loads(Path(args.grammar).read_text()))
        except (OSError, json.JSONDecodeError, ValidationError) as e:
            raise ConfigError(f"Bad grammar config: {e}", path=str(args.grammar)) from e
    else:
        grammar = default_grammar(args.seed)
    if args.noise is not None:
        grammar = grammar.model_copy(update={"noise_scale": args.noise})

    dataset = generate_synthetic(grammar, counts=(args.train, args.test), seed=args.seed)
    dataset = split(dataset, args.annotated_fraction, args.seed)
    index = save_dataset(dataset, Path(args.output))
    print(f"✅ Dataset written to {index}")
    print(f"   classes={dataset.n_classes} dim={dataset.feature_dim} annotated={len(dataset.annotated)} "
          f"unannotated={len(dataset.unannotated)} test={len(dataset.test)}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    """Train and write metrics.csv plus checkpoints"""
    hyper = hyperparams_from_args(args)
    dataset = load_dataset(args.dataset, reveal_heldout=args.mixed_supervision)
    if not dataset.annotated:
        raise DatasetError("Dataset has no annotated videos", path=str(args.dataset))
    oracle = ground_truth_oracle(dataset) if args.mixed_supervision else None
    if args.baseline:
        dataset = dataset.baseline()

    state = None
    if args.resume:
        checkpoint = load_checkpoint(Path(args.resume))
        checkpoint.check_vocabulary(dataset.class_names, dataset.feature_dim)
        state = TrainState.from_checkpoint(checkpoint, hyper)

    output = Path(args.output)
    output.mkdir(parents=True, exist_ok=True)
    set_run_context(run_id=output.name)
    (output / "hyperparams.json").write_text(hyper.model_dump_json(indent=2) + "\n")
    trainer = Trainer(dataset, hyper, output, transcript_oracle=oracle, state=state)
    trainer.run()
    print(f"✅ Training finished at step {trainer.state.step}; metrics in {trainer.metrics_path}")
    return 0


def _load_for_checkpoint(args: argparse.Namespace):
    dataset = load_dataset(args.dataset)
    checkpoint = load_checkpoint(Path(args.checkpoint))
    checkpoint.check_vocabulary(dataset.class_names, dataset.feature_dim)
    return dataset, TrainState.from_checkpoint(checkpoint)


def cmd_eval(args: argparse.Namespace) -> int:
    """Collected and final-stream reports from one forward pass per video"""
    dataset, state = _load_for_checkpoint(args)
    records = select_records(dataset, args.split)
    if any(r.labels is None for r in records):
        raise DatasetError("Evaluation needs labelled videos", split=args.split)

    predictions = predict_many(state.model, records)
    reports = {}
    for mode in MODES:
        reports[mode] = score_videos([p[mode] for p in predictions], [r.labels for r in records],
                                     mode=mode, background_id=dataset.background_id)
        print(format_report(reports[mode]))

    output = Path(args.output)
    write_reports_csv(reports.values(), output / "report.csv")
    (output / "report.txt").write_text("\n\n".join(format_report(r) for r in reports.values()) + "\n")
    if args.dump_predictions:
        for mode in MODES:
            save_predictions({r.id: p[mode] for r, p in zip(records, predictions)}, output / "predictions" / mode)
    if args.ablation_csv:
        write_ablation_csv([AblationRow(args.condition, "eval", r) for r in reports.values()], Path(args.ablation_csv))
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    """Frame labels for every video of a split"""
    dataset, state = _load_for_checkpoint(args)
    records = select_records(dataset, args.split)
    predictions = predict_many(state.model, records, modes=(args.mode,))
    save_predictions({r.id: p[args.mode] for r, p in zip(records, predictions)}, Path(args.output))
    print(f"✅ {len(records)} predictions written to {args.output}")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    """Re-score a prediction directory"""
    dataset = load_dataset(args.dataset)
    records = select_records(dataset, args.split)
    predictions = load_predictions(Path(args.predictions), [r.id for r in records])
    report = score_videos([predictions[r.id] for r in records], [r.labels for r in records],
                          mode=args.mode, background_id=dataset.background_id)
    print(format_report(report))
    if args.output:
        write_reports_csv([report], Path(args.output))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    """Conditions × seeds, with per-condition medians"""
    hyper = hyperparams_from_args(args)
    for name in args.conditions:
        get_condition(name)
    dataset = load_dataset(args.dataset, reveal_heldout=True)
    output = Path(args.output)
    rows = run_ablation(dataset, args.conditions, hyper, args.seeds, output)
    write_ablation_csv(rows, output / "ablation.csv")
    print(f"✅ Ablation table written to {output / 'ablation.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segsemi",
        description="Semi-supervised temporal action segmentation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # gen-data
    gen = subparsers.add_parser("gen-data", help="Generate a synthetic dataset")
    gen.add_argument("--output", required=True, help="Dataset directory")
    gen.add_argument("--grammar", help="Grammar JSON file (default: built-in kitchen grammar)")
    gen.add_argument("--train", type=int, default=90, help="Training videos")
    gen.add_argument("--test", type=int, default=30, help="Test videos")
    gen.add_argument("--annotated-fraction", type=float, default=1 / 3, help="Share of training videos annotated")
    gen.add_argument("--noise", type=float, default=None, help="Feature noise scale override")
    gen.add_argument("--seed", type=int, default=0)

    # train
    train = subparsers.add_parser("train", help="Train a model")
    train.add_argument("--dataset", required=True, help="Dataset directory or index.json")
    train.add_argument("--config", help="JSON or TOML hyperparameter file")
    train.add_argument("--output", required=True, help="Run directory")
    train.add_argument("--baseline", action="store_true", help="Ignore unannotated videos")
    train.add_argument("--mixed-supervision", action="store_true",
                       help="Use ground-truth transcripts of unannotated videos as the only candidate")
    train.add_argument("--resume", help="Checkpoint to continue from")
    add_hyperparam_flags(train)

    # eval
    ev = subparsers.add_parser("eval", help="Evaluate a checkpoint")
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--output", required=True, help="Report directory")
    ev.add_argument("--split", choices=SPLITS, default="test")
    ev.add_argument("--dump-predictions", action="store_true", help="Write SEGL predictions per mode")
    ev.add_argument("--ablation-csv", help="Also write the reports as ablation rows")
    ev.add_argument("--condition", default="eval", help="Condition name for the ablation rows")

    # predict
    pred = subparsers.add_parser("predict", help="Write frame-label predictions")
    pred.add_argument("--dataset", required=True)
    pred.add_argument("--checkpoint", required=True)
    pred.add_argument("--output", required=True, help="Prediction directory")
    pred.add_argument("--split", choices=SPLITS, default="test")
    pred.add_argument("--mode", choices=MODES, default="collected")

    # score
    score = subparsers.add_parser("score", help="Score SEGL predictions")
    score.add_argument("--dataset", required=True)
    score.add_argument("--predictions", required=True, help="Directory of <video id>.segl files")
    score.add_argument("--split", choices=SPLITS, default="test")
    score.add_argument("--mode", default="collected", help="Label for the report")
    score.add_argument("--output", help="CSV report path")

    # ablate
    ablate = subparsers.add_parser("ablate", help="Run experiment conditions")
    ablate.add_argument("--dataset", required=True)
    ablate.add_argument("--config", help="JSON or TOML hyperparameter file")
    ablate.add_argument("--output", required=True)
    ablate.add_argument("--conditions", nargs="+", default=["baseline", "semi", "full"])
    ablate.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2, 3, 4])
    add_hyperparam_flags(ablate)

    return parser


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "score": cmd_score,
    "ablate": cmd_ablate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 2

    try:
        setup_logging(get_settings())
        return COMMANDS[args.command](args)
    except SegSemiError as e:
        logger.error(e.message, extra={"extra_fields": {"command": args.command, "error_type": type(e).__name__,
                                                        **{k: str(v) for k, v in e.detail.items()}}})
        print(f"❌ {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception(f"Command {args.command} failed")
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
