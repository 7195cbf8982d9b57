"""Command-line front end: preprocess, train, evaluate, sweeps, report.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 config
error. All run outputs live under --out with fixed file names
(config.snapshot, epochs.jsonl, metrics.json, metrics.csv, groups.csv,
model.ckpt, state.ckpt; sweeps add sweep.csv).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from . import config as cfgmod
from . import data as datamod
from .config import RunConfig, TrainConfig, load_run_config
from .errors import ConfigError, InputError, NumericalError
from .evaluate import evaluate, group_report, group_report_csv
from .train import fit, load_model, prepare_training_data, save_checkpoint, save_model

METRIC_COLUMNS = ("recall@1", "recall@5", "ndcg@5", "recall@10", "ndcg@10", "mrr")


def _add_config_flags(parser):
    parser.add_argument("--config", help="key=value config file with sections")
    parser.add_argument("--corpus", help="preprocessed corpus file")
    parser.add_argument("--out", help="output directory")
    for f in fields(TrainConfig):
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, help=argparse.SUPPRESS)
    for name in ("noise-ratios", "portions", "batch-sizes"):
        parser.add_argument(f"--{name}", dest=name.replace("-", "_"), help="comma-separated sweep values")


def _run_config(args) -> RunConfig:
    overrides = {}
    for f in fields(TrainConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    for name in ("corpus", "out", "noise_ratios", "portions", "batch_sizes"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return load_run_config(args.config, overrides)


def _require(run: RunConfig, *names):
    for name in names:
        if not getattr(run, name):
            raise ConfigError(f"--{name} is required for this command")


def _write_metrics(out: Path, results: dict):
    (out / "metrics.json").write_text(json.dumps(results, sort_keys=True, indent=2) + "\n")
    header = "split," + ",".join(METRIC_COLUMNS) + ",n_users"
    rows = [header]
    for split in ("valid", "test"):
        m = results[split]
        rows.append(split + "," + ",".join(repr(m[c]) for c in METRIC_COLUMNS) + f",{m['n_users']}")
    (out / "metrics.csv").write_text("\n".join(rows) + "\n")


def run_training(run: RunConfig) -> dict:
    """Shared by cmd_train and each sweep point; returns the metrics dict."""
    corpus = datamod.read_corpus(run.corpus)
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.snapshot").write_text(cfgmod.snapshot(run))
    cfg = run.train
    with open(out / "epochs.jsonl", "w", encoding="utf-8") as log:
        best_params, _history, state = fit(cfg, corpus, log_file=log)
    from .autodiff import Tensor

    best = {k: Tensor(v) for k, v in best_params.items()}
    save_model(best, cfg, corpus.item_count, out / "model.ckpt")
    save_checkpoint(state, out / "state.ckpt")
    data = prepare_training_data(corpus, cfg)
    valid_m = evaluate(best, cfg, corpus, "valid", data=data)
    test_m = evaluate(best, cfg, corpus, "test", data=data)
    results = {"valid": valid_m.as_dict("valid"), "test": test_m.as_dict("test")}
    _write_metrics(out, results)
    seq_rep = group_report(test_m, "seq_length", edges=cfg.bucket_edges())
    pop_rep = group_report(test_m, "item_popularity", data=data)
    lines = ["key,bucket,count,ndcg5"]
    for rep in (seq_rep, pop_rep):
        for label, count, value in rep.buckets:
            lines.append(f"{rep.key},{label},{count},{'' if value is None else repr(value)}")
    (out / "groups.csv").write_text("\n".join(lines) + "\n")
    return results


def cmd_preprocess(args) -> int:
    interactions = datamod.load_interactions(args.input, args.format)
    interactions = datamod.apply_k_core(interactions, args.k_core)
    vocab, sequences = datamod.build_sequences(interactions)
    corpus = datamod.SequenceCorpus(vocab.user_count, vocab.item_count, sequences)
    datamod.write_corpus(args.output, corpus)
    stats = datamod.corpus_stats(corpus)
    print(
        f"{stats['users']} {stats['items']} {stats['interactions']} "
        f"density={stats['density']:.4%} avg_per_user={stats['avg_per_user']:.2f}"
    )
    return 0


def cmd_train(args) -> int:
    run = _run_config(args)
    _require(run, "corpus", "out")
    run_training(run)
    return 0


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run)
    snapshot_path = run_dir / "config.snapshot"
    if not snapshot_path.exists():
        raise InputError(f"no config.snapshot under {run_dir}")
    run = load_run_config(snapshot_path, {"out": str(run_dir)})
    if args.corpus:
        run.corpus = args.corpus
    corpus = datamod.read_corpus(run.corpus)
    params = load_model(run_dir / "model.ckpt", run.train, corpus.item_count)
    data = prepare_training_data(corpus, run.train)
    metrics = evaluate(params, run.train, corpus, args.split, data=data)
    print(json.dumps(metrics.as_dict(args.split), sort_keys=True))
    return 0


_SWEEP_FIELD = {"noise": "noise_ratio", "portion": "portion", "batch": "batch_size"}


def cmd_sweep(args, axis: str) -> int:
    run = _run_config(args)
    _require(run, "corpus", "out")
    values = run.sweep_values(axis)
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    points = []
    for value in values:
        point = run_point_config(run, axis, value)
        label = format(value, "g")
        point.out = str(out / f"{axis}_{label}")
        points.append((label, point))

    results = {}
    jobs = max(1, args.jobs)
    if jobs == 1:
        for label, point in points:
            results[label] = _sweep_point(axis, label, point)
    else:
        # points share nothing and write to disjoint directories
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {label: pool.submit(_sweep_point, axis, label, point) for label, point in points}
            for label, fut in futures.items():
                results[label] = fut.result()

    rows = ["axis_value,mrr,recall@5,ndcg@5"]
    for label, _ in points:
        rows.append(results[label])
    (out / "sweep.csv").write_text("\n".join(rows) + "\n")
    print("\n".join(rows))
    return 0


def _sweep_point(axis, label, point) -> str:
    try:
        results = run_training(point)
        m = results["test"]
        return f"{label},{m['mrr']!r},{m['recall@5']!r},{m['ndcg@5']!r}"
    except Exception as exc:  # record the failure, keep sweeping
        print(f"sweep point {axis}={label} failed: {exc}", file=sys.stderr)
        return f"{label},nan,nan,nan"


def run_point_config(run: RunConfig, axis: str, value) -> RunConfig:
    """Standalone-equivalent config for one sweep point."""
    import copy

    point = copy.deepcopy(run)
    field_name = _SWEEP_FIELD[axis]
    if axis == "batch":
        setattr(point.train, field_name, int(value))
    else:
        setattr(point.train, field_name, float(value))
    point.train.validate()
    return point


def cmd_report(args) -> int:
    rows = []
    for run_dir in args.runs:
        metrics_path = Path(run_dir) / "metrics.json"
        if not metrics_path.exists():
            print(f"warning: {metrics_path} missing, skipping", file=sys.stderr)
            continue
        results = json.loads(metrics_path.read_text())
        label = Path(run_dir).name
        rows.append((label, results["test"]))
    if not rows:
        raise InputError("no readable metrics.json in the given run directories")
    base_mrr = rows[0][1]["mrr"]
    header = ["run"] + list(METRIC_COLUMNS) + ["mrr_rel_improvement"]
    csv_lines = [",".join(header)]
    md_lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for label, m in rows:
        rel = (m["mrr"] - base_mrr) / base_mrr if base_mrr else float("nan")
        values = [f"{m[c]:.6f}" for c in METRIC_COLUMNS] + [f"{rel:+.4%}"]
        csv_lines.append(",".join([label] + values))
        md_lines.append("| " + " | ".join([label] + values) + " |")
    report_md = "\n".join(md_lines) + "\n"
    report_csv = "\n".join(csv_lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.md").write_text(report_md)
        (out / "report.csv").write_text(report_csv)
    print(report_md, end="")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="mstein", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="raw interactions -> corpus file")
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="tsv", choices=["tsv", "amazon-jsonl"])
    p.add_argument("--output", required=True)
    p.add_argument("--k-core", type=int, default=5, dest="k_core")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model and evaluate it")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="re-evaluate a finished run")
    p.add_argument("--run", required=True, help="run directory with model.ckpt")
    p.add_argument("--corpus", help="override the corpus path")
    p.add_argument("--split", default="test", choices=["valid", "test"])
    p.set_defaults(func=cmd_evaluate)

    for axis in ("noise", "portion", "batch"):
        p = sub.add_parser(f"sweep-{axis}", help=f"train/evaluate across {axis} values")
        _add_config_flags(p)
        p.add_argument("--jobs", type=int, default=1, help="concurrent sweep points")
        p.set_defaults(func=lambda a, axis=axis: cmd_sweep(a, axis))

    p = sub.add_parser("report", help="merge run metrics into one table")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--out", help="directory for report.md/report.csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
