"""
Command Line Interface
synth, prepare, train, evaluate, analyze and sweep commands over one run directory each
"""

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from category_analysis import categorize_pairs, write_histograms
from config import (
    MODEL_PRESETS,
    Config,
    ExperimentConfig,
    apply_model_preset,
    load_experiment_config,
    setup_logging,
)
from errors import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, ConfigError, SineError, TrainingDivergedError, UsageError
from evaluator import EvalReport, EvaluationReport, evaluate_model, save_report
from interactions import (
    InteractionLog,
    apply_n_core,
    dataset_statistics,
    drop_discarded,
    feedback_distribution,
    label_feedback,
    load_interactions,
)
from objective import train
from run_manager import RunManager
from sequences import SequenceDataset, build_sequences, load_dataset, save_dataset
from sine_model import SineModel, load_checkpoint, save_checkpoint
from synthworld import write_synthetic
from training_log import TrainingLog

logger = structlog.get_logger(__name__)

PARAM_ALIASES = {
    "k": "model.n_interests",
    "beta1": "model.beta1",
    "lambda1": "train.lambda1",
    "lambda2": "train.lambda2",
    "lambda3": "train.lambda3",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sine", description="Sub-interest sequential recommendation with passive negatives")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="experiment config file (SECTION__KEY=value lines)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override, e.g. model.n_interests=3")
    common.add_argument("--run-dir", help="write artifacts here instead of a fresh directory under RUNS_DIR")
    common.add_argument("--seed", type=int, help="seed for generation, initialization and training")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")

    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("synth", parents=[common], help="generate a synthetic watch log")

    prepare = sub.add_parser("prepare", parents=[common], help="label, filter and split a watch log")
    prepare.add_argument("--input", required=True)

    def model_flags(p):
        p.add_argument("--model", choices=MODEL_PRESETS, default="sine")
        p.add_argument("--neg-mix", type=float, help="passive-negative share of O1 negatives")
        p.add_argument("--ablate", action="append", choices=["af", "nf"], default=[], help="af: adaptive fusion, nf: negative feedback")
        p.add_argument("--epochs", type=int)

    train_p = sub.add_parser("train", parents=[common], help="train a model on a prepared dataset")
    train_p.add_argument("--dataset", required=True)
    model_flags(train_p)

    evaluate = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint")
    evaluate.add_argument("--dataset", required=True)
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--split", choices=["val", "test"], default="test")
    evaluate.add_argument("--per-user", action="store_true")

    analyze = sub.add_parser("analyze", parents=[common], help="category cases of positive/skip pairs")
    analyze.add_argument("--input", required=True)
    analyze.add_argument("--window", type=int, default=1)
    analyze.add_argument("--multiplicity", choices=["all", "nearest"], default="all")

    sweep = sub.add_parser("sweep", parents=[common], help="train and evaluate over a parameter grid")
    sweep.add_argument("--dataset", required=True)
    sweep.add_argument("--param", required=True, help="K, beta1, lambda1..3 or a dotted key")
    sweep.add_argument("--values", required=True, help="range 1..10 or comma list")
    sweep.add_argument("--workers", type=int, default=None)
    model_flags(sweep)
    return parser


def parse_overrides(pairs: Sequence[str]) -> Dict[str, str]:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def parse_values(text: str) -> List[str]:
    """``1..10`` (inclusive integer range) or ``a,b,c``"""
    if ".." in text:
        lo, hi = text.split("..", 1)
        try:
            start, stop = int(lo), int(hi)
        except ValueError:
            raise UsageError(f"bad range {text!r}") from None
        if stop < start:
            raise UsageError(f"empty range {text!r}")
        return [str(v) for v in range(start, stop + 1)]
    values = [v.strip() for v in text.split(",") if v.strip()]
    if not values:
        raise UsageError("--values is empty")
    return values


def resolve_experiment(args) -> ExperimentConfig:
    overrides: Dict[str, object] = {}
    if args.seed is not None:
        overrides.update({"synth.seed": args.seed, "model.init_seed": args.seed, "train.seed": args.seed})
    if getattr(args, "epochs", None) is not None:
        overrides["train.epochs"] = args.epochs
    for flag in getattr(args, "ablate", []):
        overrides["model.ablate_adaptive_fusion" if flag == "af" else "model.ablate_negative_feedback"] = True
    overrides.update(parse_overrides(args.set))
    experiment = load_experiment_config(args.config, overrides)
    if hasattr(args, "model"):
        experiment = apply_model_preset(experiment, args.model, args.neg_mix)
    return experiment


def seeds_of(experiment: ExperimentConfig) -> Dict[str, int]:
    return {
        "synth": experiment.synth.seed,
        "init": experiment.model.init_seed,
        "train": experiment.train.seed,
        "eval": experiment.eval.seed,
    }


def prepare_dataset(log: InteractionLog, experiment: ExperimentConfig) -> Tuple[InteractionLog, SequenceDataset]:
    """
    Label, n-core filter and split a raw log

    The n-core is computed on positive and passive-negative rows; gray-zone
    rows of surviving users and items are kept so they still count as
    observed.
    """
    data = experiment.data
    labeled = label_feedback(log, data.pos_ratio, data.neg_seconds)
    core = apply_n_core(drop_discarded(labeled), data.n_core)
    frame = labeled.frame
    keep = frame["user_id"].isin(core.frame["user_id"].unique()) & frame["item_id"].isin(core.frame["item_id"].unique())
    filtered = InteractionLog(frame[keep].reset_index(drop=True))
    return filtered, build_sequences(filtered, data.max_len)


def cmd_synth(args, experiment: ExperimentConfig, run: RunManager) -> int:
    csv_path, truth_path = write_synthetic(experiment.synth, run.run_dir)
    run.outputs["interactions"] = str(csv_path)
    run.outputs["ground_truth"] = str(truth_path)
    print(f"Synthetic log: {csv_path}")
    return EXIT_OK


def cmd_prepare(args, experiment: ExperimentConfig, run: RunManager) -> int:
    run.add_input(args.input)
    log = load_interactions(args.input, experiment.data.columns)
    filtered, dataset = prepare_dataset(log, experiment)
    save_dataset(dataset, run.path("dataset.jsonl"))

    stats = dataset_statistics(filtered)
    report = {"statistics": stats.model_dump(), "users_in_dataset": len(dataset.sequences), "dropped": dataset.drop_report}
    run.path("statistics.json").write_text(json.dumps(report, indent=2) + "\n")
    per_user, per_item = feedback_distribution(filtered)
    per_user.to_csv(run.path("feedback_per_user.tsv"), sep="\t", lineterminator="\n")
    per_item.to_csv(run.path("feedback_per_item.tsv"), sep="\t", lineterminator="\n")
    print(f"Dataset: {run.outputs['dataset.jsonl']} ({len(dataset.sequences)} users, {dataset.n_items} items)")
    return EXIT_OK


def run_training(dataset: SequenceDataset, experiment: ExperimentConfig, run: RunManager) -> Tuple[EvalReport, EvalReport]:
    """Train, checkpoint and evaluate on both splits inside ``run``"""
    log = TrainingLog(run.path("training_log.tsv"))
    try:
        result = train(dataset, experiment.model, experiment.train, experiment.eval, log)
    except TrainingDivergedError as e:
        run.path("diagnostics.json").write_text(json.dumps(e.diagnostics, indent=2) + "\n")
        raise
    save_checkpoint(run.path("checkpoint.npz"), result.params, experiment.model)
    log.export_to_json(run.path("training_log.json"))
    val = evaluate_model(result.model, dataset, "val", experiment.eval)
    test = evaluate_model(result.model, dataset, "test", experiment.eval)
    save_report(val, run.path("val_report.tsv"))
    save_report(test, run.path("test_report.tsv"))
    return val, test


def cmd_train(args, experiment: ExperimentConfig, run: RunManager) -> int:
    run.add_input(args.dataset)
    dataset = load_dataset(args.dataset)
    _, test = run_training(dataset, experiment, run)
    print(f"Test AUC={test.auc:.4f} GAUC={test.gauc:.4f} NDCG@{test.k}={test.ndcg:.4f}")
    return EXIT_OK


def cmd_evaluate(args, experiment: ExperimentConfig, run: RunManager) -> int:
    run.add_input(args.dataset)
    run.add_input(args.checkpoint)
    dataset = load_dataset(args.dataset)
    model_config, params = load_checkpoint(args.checkpoint)
    eval_config = experiment.eval.model_copy(update={"per_user": args.per_user or experiment.eval.per_user})
    report = evaluate_model(SineModel(model_config, params), dataset, args.split, eval_config)
    save_report(report, run.path(f"{args.split}_report.tsv"))
    print(f"{args.split} AUC={report.auc:.4f} GAUC={report.gauc:.4f} NDCG@{report.k}={report.ndcg:.4f}")
    return EXIT_OK


def cmd_analyze(args, experiment: ExperimentConfig, run: RunManager) -> int:
    run.add_input(args.input)
    data = experiment.data
    log = label_feedback(load_interactions(args.input, data.columns), data.pos_ratio, data.neg_seconds)
    seed = args.seed if args.seed is not None else Config.default_seed()
    observed, random = categorize_pairs(log, args.window, np.random.Generator(np.random.Philox(seed)), args.multiplicity)
    write_histograms(observed, random, run.path("category_cases.tsv"))
    print(f"case-4 fraction: observed {observed.fraction(4):.4f}, random {random.fraction(4):.4f}")
    return EXIT_OK


def sweep_setting(experiment: ExperimentConfig, param: str, value: str) -> ExperimentConfig:
    """
    Experiment with one swept value applied

    Sweeping one lambda rescales the other two so the three still sum to 1.
    """
    key = PARAM_ALIASES.get(param.lower(), param.lower())
    if key.startswith("train.lambda"):
        try:
            target = float(value)
        except ValueError:
            raise ConfigError(key, f"expected a number, got {value!r}") from None
        names = ["lambda1", "lambda2", "lambda3"]
        swept = key.split(".", 1)[1]
        others = [n for n in names if n != swept]
        rest = sum(getattr(experiment.train, n) for n in others)
        update = {swept: target}
        for n in others:
            share = getattr(experiment.train, n) / rest if rest > 0 else 0.5
            update[n] = (1.0 - target) * share
        # absorb rounding in the last weight
        update[others[-1]] = 1.0 - target - update[others[0]]
        overrides = {f"train.{k}": v for k, v in update.items()}
    else:
        overrides = {key: value}
    tree = experiment.model_dump()
    flat = {}
    for section, values in tree.items():
        for name, v in values.items():
            if isinstance(v, dict):
                for inner, w in v.items():
                    flat[f"{section}.{name}.{inner}"] = w
            else:
                flat[f"{section}.{name}"] = v
    flat.update(overrides)
    return load_experiment_config(None, flat)


def _sweep_one(job: Tuple[str, Dict, str, str]) -> Tuple[str, Dict]:
    dataset_path, experiment_tree, run_dir, label = job
    experiment = ExperimentConfig.model_validate(experiment_tree)
    run = RunManager(Path(run_dir).parent, run_dir, command="train")
    run.add_input(dataset_path)
    _, test = run_training(load_dataset(dataset_path), experiment, run)
    run.write_manifest(["sweep", label], experiment.model_dump(), seeds_of(experiment))
    return label, test.model_dump()


def cmd_sweep(args, experiment: ExperimentConfig, run: RunManager) -> int:
    values = parse_values(args.values)
    workers = args.workers or Config.sweep_workers()
    if workers < 1:
        raise UsageError("--workers must be >= 1")
    run.add_input(args.dataset)

    jobs = []
    for value in values:
        label = f"{args.param}={value}"
        setting = sweep_setting(experiment, args.param, value)
        jobs.append((str(Path(args.dataset).absolute()), setting.model_dump(), str(run.run_dir / label), label))

    if workers == 1:
        results = [_sweep_one(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, jobs))

    reports = {label: EvalReport.model_validate(report) for label, report in results}
    lines = ["run\tauc\tgauc\tndcg\thit_rate"]
    for label, r in reports.items():
        lines.append(f"{label}\t{r.auc!r}\t{r.gauc!r}\t{r.ndcg!r}\t{r.hit_rate!r}")
    run.path("summary.tsv").write_text("\n".join(lines) + "\n")
    EvaluationReport.save_markdown_report(reports, run.path("summary.md"), title=f"Sweep over {args.param}")
    for label in reports:
        run.outputs[label] = str(run.run_dir / label)
    print(f"Sweep summary: {run.outputs['summary.tsv']}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
    "sweep": cmd_sweep,
}


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one command

    Returns:
        exit status: 0 success, 2 usage, 3 config, 4 runtime
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    setup_logging(args.log_level)
    try:
        Config.validate()
        experiment = resolve_experiment(args)
        run = RunManager(Config.RUNS_DIR, args.run_dir, command=args.command)
        status = COMMANDS[args.command](args, experiment, run)
        run.write_manifest(argv, experiment.model_dump(), seeds_of(experiment))
        return status
    except SineError as e:
        logger.error("command failed", command=args.command, error=str(e), error_type=type(e).__name__)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logger.error("command failed", command=args.command, error=str(e), error_type=type(e).__name__)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
