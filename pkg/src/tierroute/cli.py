"""Operator CLI: ingest -> collect -> label -> export-finetune / eval-classifier / route.

Every command writes its artifacts atomically (temp file + rename) into
--out-dir, so an interrupted run never leaves a truncated file behind, and is
bit-reproducible given the same inputs, --seed, and replay stores.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import corpus as corpus_mod
from .classifier import Prediction, evaluate, export_finetune
from .config import build_backends, build_classifier, build_verifier, load_config
from .corpus import SplitSpec, split_indices
from .costs import EmptyPartitionError, compute_report, distribution_from_routes
from .errors import ConfigError, TierRouteError
from .jsonio import read_jsonl, write_json_atomic, write_jsonl_atomic
from .labeling import (
    DEFAULT_FIVE_LEVEL_TABLE,
    FIVE_LEVEL_SCHEME,
    LabeledTask,
    SCHEME_LEVELS,
    SINGLE_TRIAL_SCHEME,
    SuccessProfile,
    collect_profiles,
    label_profiles,
    label_profiles_single_trial,
)
from .router import route_batch


def _add_common(parser: argparse.ArgumentParser, *, config_required: bool = False) -> None:
    parser.add_argument("--config", required=config_required, help="run config file (JSON or TOML)")
    parser.add_argument("--out-dir", default=".", help="directory for output artifacts")
    parser.add_argument("--seed", type=int, default=0, help="seed for anything shuffled")
    parser.add_argument("--concurrency", type=int, default=None, help="override parallelism")
    parser.add_argument("--replay", default=None, help="replay store overriding every backend")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tierroute",
        description="Label task complexity from multi-trial success profiles and "
        "route tasks to the cheapest capable model tier.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a raw task file into a validated corpus")
    p.add_argument("input", help="line-delimited task records (task_id, text, code, test_list)")
    p.add_argument("--source-name", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("collect", help="run M trials per task per tier and record profiles")
    p.add_argument("--corpus", required=True, help="corpus file to collect over")
    p.add_argument("--trials", type=int, default=None, help="override trials per tier")
    _add_common(p, config_required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("label", help="clean the corpus and map profiles to complexity levels")
    p.add_argument("--corpus", required=True)
    p.add_argument("--profiles", required=True, help="profiles file from collect")
    _add_common(p)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("export-finetune", help="split a labeled set and export fine-tune JSONL")
    p.add_argument("--labeled", required=True)
    p.add_argument("--train-fraction", type=float, default=0.8)
    _add_common(p)
    p.set_defaults(func=cmd_export_finetune)

    p = sub.add_parser("eval-classifier", help="score predictions against a labeled test set")
    p.add_argument("--test", required=True, help="labeled test set")
    p.add_argument("--predictions", required=True, help="JSONL of {task_id, level}")
    _add_common(p)
    p.set_defaults(func=cmd_eval_classifier)

    p = sub.add_parser("route", help="classify, dispatch, verify, and price a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--predictions", default=None, help="replay predictions instead of the configured classifier")
    p.add_argument("--include-classifier-overhead", action="store_true")
    _add_common(p, config_required=True)
    p.set_defaults(func=cmd_route)

    return parser


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _close_quietly(verifier) -> None:
    close = getattr(verifier, "close", None)
    if close is not None:
        close()


def cmd_ingest(args) -> int:
    out = _out_dir(args)
    result = corpus_mod.ingest_file(args.input, source_name=args.source_name)
    corpus_mod.save(result.corpus, out / "corpus.jsonl")
    write_json_atomic(out / "ingest_report.json", result.report())
    for issue in result.issues:
        print(f"rejected line {issue.line_number}: {issue.reason}", file=sys.stderr)
    print(f"ingested {len(result.corpus)} task(s), rejected {len(result.issues)}")
    return 0


def cmd_collect(args) -> int:
    config = load_config(args.config)
    out = _out_dir(args)
    corpus = corpus_mod.load(args.corpus)
    backends = build_backends(config, replay_store=args.replay)
    verifier = build_verifier(config)
    try:
        result = collect_profiles(
            corpus,
            config.tiers,
            backends,
            verifier,
            trials=args.trials if args.trials is not None else config.trials,
            temperature=config.temperature,
            max_tokens=config.max_tokens,
            concurrency=args.concurrency if args.concurrency is not None else config.concurrency,
            verify_timeout_ms=config.verify_timeout_ms,
        )
    finally:
        _close_quietly(verifier)
    write_jsonl_atomic(out / "outcomes.jsonl", (o.to_record() for o in result.outcomes))
    ordered = [result.profiles[t.task_id] for t in corpus if t.task_id in result.profiles]
    write_jsonl_atomic(out / "profiles.jsonl", (p.to_record() for p in ordered))
    write_json_atomic(out / "collect_report.json", result.report())
    print(
        f"profiled {len(result.profiles)}/{len(corpus)} task(s), "
        f"{len(result.outcomes)} trial(s) recorded"
    )
    return 0


def cmd_label(args) -> int:
    out = _out_dir(args)
    scheme_id = FIVE_LEVEL_SCHEME
    table = DEFAULT_FIVE_LEVEL_TABLE
    if args.config:
        config = load_config(args.config)
        scheme_id = config.scheme_id
        table = config.mapping
    corpus = corpus_mod.load(args.corpus)
    profiles = {
        record["task_id"]: SuccessProfile.from_record(record)
        for record in read_jsonl(args.profiles)
    }
    cleaned, report = corpus_mod.clean(corpus, profiles)
    ordered = (profiles[t.task_id] for t in cleaned)
    if scheme_id == SINGLE_TRIAL_SCHEME:
        labeled, _ = label_profiles_single_trial(ordered, cleaned)
    else:
        labeled = label_profiles(ordered, cleaned, table)
    write_jsonl_atomic(out / "labeled.jsonl", (item.to_record() for item in labeled))
    corpus_mod.save(cleaned, out / "cleaned_corpus.jsonl")
    write_json_atomic(out / "cleaning_report.json", report.to_dict())
    print(f"labeled {len(labeled)} task(s); removed {len(report.removed)} all-zero task(s)")
    return 0


def cmd_export_finetune(args) -> int:
    out = _out_dir(args)
    records = [LabeledTask.from_record(r) for r in read_jsonl(args.labeled)]
    spec = SplitSpec(train_fraction=args.train_fraction, seed=args.seed)
    train_idx, test_idx = split_indices(len(records), spec)
    train = [records[i] for i in train_idx]
    test = [records[i] for i in test_idx]
    write_jsonl_atomic(out / "train.jsonl", (e.to_record() for e in export_finetune(train)))
    write_jsonl_atomic(out / "test.jsonl", (e.to_record() for e in export_finetune(test)))
    write_jsonl_atomic(out / "test_labeled.jsonl", (r.to_record() for r in test))
    print(f"exported {len(train)} train / {len(test)} test example(s)")
    return 0


def cmd_eval_classifier(args) -> int:
    out = _out_dir(args)
    truth = [LabeledTask.from_record(r) for r in read_jsonl(args.test)]
    predicted_levels = {
        str(record["task_id"]): int(record["level"]) for record in read_jsonl(args.predictions)
    }
    predictions = [
        Prediction(t.task_id, predicted_levels[t.task_id], source="file")
        for t in truth
        if t.task_id in predicted_levels
    ]
    schemes = {t.scheme_id for t in truth}
    levels = SCHEME_LEVELS.get(schemes.pop()) if len(schemes) == 1 else None
    matrix = evaluate(truth, predictions, levels=levels)
    write_json_atomic(out / "eval_report.json", matrix.to_report())
    print(
        f"n={matrix.n} accuracy={matrix.accuracy:.4f} type_ii_rate={matrix.type_ii_rate:.4f}"
    )
    return 0


def cmd_route(args) -> int:
    config = load_config(args.config)
    out = _out_dir(args)
    corpus = corpus_mod.load(args.corpus)
    backends = build_backends(config, replay_store=args.replay)
    verifier = build_verifier(config)
    classifier = build_classifier(config, backends, predictions_path=args.predictions)
    try:
        records, summary = route_batch(
            corpus,
            config.policy,
            classifier,
            backends,
            config.tiers,
            verifier=verifier,
            temperature=config.temperature,
            max_tokens=config.max_tokens,
            verify_timeout_ms=config.verify_timeout_ms,
            concurrency=args.concurrency if args.concurrency is not None else config.concurrency,
        )
    finally:
        _close_quietly(verifier)
    write_jsonl_atomic(out / "route_log.jsonl", (r.to_record() for r in records))
    write_json_atomic(out / "route_summary.json", summary.to_dict())
    for task_id, reason in summary.errors:
        print(f"task {task_id} failed: {reason}", file=sys.stderr)
    try:
        distribution = distribution_from_routes(records, config.tiers)
    except EmptyPartitionError as exc:
        # One verdict partition is empty, so per-answer averages are undefined;
        # the route log and summary above still stand.
        print(f"cost report skipped: {exc}", file=sys.stderr)
        return 0
    report = compute_report(
        distribution, include_classifier_overhead=args.include_classifier_overhead
    )
    write_json_atomic(out / "cost_report.json", report.to_dict())
    print(report.format_table())
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 2
    except TierRouteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: file operation failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
