"""Command-line surface: train-score, select, and the eval battery.

Exit codes: 0 success, 2 configuration/validation, 3 numeric failure,
4 I/O or format. Every command is idempotent for a fixed config + seed;
wall-clock metadata goes to a separate run_meta.txt so the data artifacts
stay byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import baselines, evaluation, scoring, training
from .config import RunConfig, build_datasets, normalization_stats, normalized_pair
from .errors import (
    BoundsError,
    ConfigurationError,
    DataError,
    FormatError,
    NumericError,
    ProtocolError,
    StateError,
)

CONFIG_ECHO_FILE = "config_echo.txt"
RUN_META_FILE = "run_meta.txt"
REPORT_FILE = "report.csv"
SUMMARY_FILE = "summary.json"


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    if getattr(args, "out", None) is not None:
        cfg = replace(cfg, output_dir=str(args.out))
    return cfg


def _write_echo(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / CONFIG_ECHO_FILE).write_text(cfg.canonical_text())


def _write_meta(out_dir: Path, started: float, extra: dict | None = None) -> None:
    lines = [
        f"started_unix = {started}",
        f"runtime_seconds = {time.time() - started}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    (out_dir / RUN_META_FILE).write_text("\n".join(lines) + "\n")


def _write_summary(out_dir: Path, payload: dict) -> None:
    (out_dir / SUMMARY_FILE).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _report_rows(reports: list[evaluation.EvalReport]) -> list[list]:
    rows = []
    for report in reports:
        for run, (seed, acc, sec) in enumerate(
            zip(report.seeds, report.accuracies, report.run_seconds)
        ):
            stride = "" if report.stride is None else report.stride
            rows.append([report.method, report.subset_size, stride, run, seed,
                         repr(acc), repr(sec)])
    return rows


def _write_report(out_dir: Path, reports: list[evaluation.EvalReport]) -> None:
    with open(out_dir / REPORT_FILE, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(evaluation.REPORT_HEADER)
        writer.writerows(_report_rows(reports))


def _aggregate(report: evaluation.EvalReport) -> dict:
    return {
        "method": report.method,
        "subset_size": report.subset_size,
        "stride": report.stride,
        "accuracy_mean": report.test_accuracy_mean,
        "accuracy_std": report.test_accuracy_std,
        "runtime_seconds": report.runtime_seconds,
    }


def cmd_train_score(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(cfg.output_dir)
    started = time.time()
    train_set, _, _ = build_datasets(cfg.dataset)
    stats = normalization_stats(cfg.dataset, train_set)
    _write_echo(cfg, out_dir)
    table, ranking = training.train_and_score(
        train_set, cfg.train, cfg.augment, out_dir,
        config_hash=cfg.config_hash(), resume=args.resume, progress=print,
        normalize_stats=stats,
    )
    _write_meta(out_dir, started, {"epochs": table.epochs_seen, "n": table.n})
    print(f"trained {table.epochs_seen} epochs over {table.n} examples; "
          f"ranking written to {out_dir / training.RANKING_FILE}")
    return 0


def cmd_select(args) -> int:
    ranking = scoring.read_ranking_csv(args.ranking)
    n = ranking.n
    if args.fraction is not None:
        if not 0.0 < args.fraction <= 1.0:
            raise ConfigurationError(f"--fraction must lie in (0, 1], got {args.fraction}")
        subset_size = max(1, int(round(args.fraction * n)))
    elif args.count is not None:
        subset_size = args.count
    else:
        raise ConfigurationError("provide --fraction or --count")
    indices = scoring.select(ranking, subset_size, args.stride)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("".join(f"{k}\n" for k in indices))
    print(f"wrote {len(indices)} indices to {out_path}")
    return 0


def _resolved_ranking(cfg: RunConfig) -> scoring.CoresetRanking:
    path = cfg.evaluation.ranking or str(Path(cfg.output_dir) / training.RANKING_FILE)
    if not Path(path).exists():
        raise ConfigurationError(f"ranking artifact missing: {path}")
    return scoring.read_ranking_csv(path)


def _eval_dir(cfg: RunConfig, name: str, override) -> Path:
    out = Path(override) if override else Path(cfg.output_dir) / f"eval_{name}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_eval_stride(args) -> int:
    cfg = _load_config(argparse.Namespace(config=args.config, seed=args.seed, out=None))
    out_dir = _eval_dir(cfg, "stride", args.out)
    started = time.time()
    train_set, test_set, _ = build_datasets(cfg.dataset)
    if test_set is None:
        raise ConfigurationError("stride evaluation needs a test split")
    train_set, test_set = normalized_pair(cfg.dataset, train_set, test_set)
    ranking = _resolved_ranking(cfg)
    n = ranking.n
    subset_size = max(1, int(round(cfg.evaluation.fraction * n)))
    strides = [int(round(f * n)) for f in cfg.evaluation.strides]
    reports = evaluation.stride_experiment(
        ranking, train_set, test_set, subset_size, strides,
        cfg.evaluation.runs, cfg.evaluation.classifier, seed=cfg.train.seed)
    _write_echo(cfg, out_dir)
    _write_report(out_dir, reports)
    _write_summary(out_dir, {
        "experiment": "stride",
        "config": cfg.canonical_text(),
        "reports": [_aggregate(r) for r in reports],
    })
    _write_meta(out_dir, started)
    headline = ", ".join(
        f"{r.method}@{r.stride if r.stride is not None else 'rand'}:"
        f"{r.test_accuracy_mean:.4f}" for r in reports)
    print(headline)
    return 0


def cmd_eval_cross(args) -> int:
    cfg = _load_config(argparse.Namespace(config=args.config, seed=args.seed, out=None))
    out_dir = _eval_dir(cfg, "cross", args.out)
    started = time.time()
    train_set, _, _ = build_datasets(cfg.dataset)
    train_set, _ = normalized_pair(cfg.dataset, train_set, None)
    ranking = _resolved_ranking(cfg)
    c_to_n, n_to_c = evaluation.cross_test(
        ranking, train_set, cfg.evaluation.train_frac, cfg.evaluation.test_frac,
        cfg.evaluation.runs, cfg.evaluation.classifier, seed=cfg.train.seed)
    _write_echo(cfg, out_dir)
    _write_report(out_dir, [c_to_n, n_to_c])
    _write_summary(out_dir, {
        "experiment": "cross",
        "config": cfg.canonical_text(),
        "reports": [_aggregate(c_to_n), _aggregate(n_to_c)],
        "gap": c_to_n.test_accuracy_mean - n_to_c.test_accuracy_mean,
    })
    _write_meta(out_dir, started)
    print(f"C->N {c_to_n.test_accuracy_mean:.4f} (+/-{c_to_n.test_accuracy_std:.4f})  "
          f"N->C {n_to_c.test_accuracy_mean:.4f} (+/-{n_to_c.test_accuracy_std:.4f})")
    return 0


def cmd_eval_consistency(args) -> int:
    cfg = _load_config(argparse.Namespace(config=args.config, seed=args.seed, out=None))
    out_dir = _eval_dir(cfg, "consistency", args.out)
    started = time.time()
    paths = cfg.evaluation.rankings
    if len(paths) < 2:
        raise ConfigurationError("artifacts.rankings must list at least two ranking files")
    for path in paths:
        if not Path(path).exists():
            raise ConfigurationError(f"ranking artifact missing: {path}")
    rankings = [scoring.read_ranking_csv(p) for p in paths]
    subset_size = max(1, int(round(cfg.evaluation.fraction * rankings[0].n)))
    ratio = evaluation.consistency(rankings, subset_size)
    _write_echo(cfg, out_dir)
    _write_summary(out_dir, {
        "experiment": "consistency",
        "config": cfg.canonical_text(),
        "subset_size": subset_size,
        "num_rankings": len(rankings),
        "intersection_ratio": ratio,
        "random_baseline": cfg.evaluation.fraction ** (len(rankings) - 1),
    })
    _write_meta(out_dir, started)
    print(f"intersection ratio {ratio:.4f} over {len(rankings)} runs at L={subset_size}")
    return 0


def cmd_eval_imbalance(args) -> int:
    cfg = _load_config(argparse.Namespace(config=args.config, seed=args.seed, out=None))
    out_dir = _eval_dir(cfg, "imbalance", args.out)
    started = time.time()
    train_set, _, _ = build_datasets(cfg.dataset)
    if train_set.labels is None:
        raise ConfigurationError("imbalance evaluation needs labels")
    if cfg.evaluation.subset:
        subset_path = Path(cfg.evaluation.subset)
        if not subset_path.exists():
            raise ConfigurationError(f"subset artifact missing: {subset_path}")
        subset = np.array([int(line) for line in subset_path.read_text().split()],
                          dtype=np.int64)
    else:
        ranking = _resolved_ranking(cfg)
        subset_size = max(1, int(round(cfg.evaluation.fraction * ranking.n)))
        subset = scoring.select(ranking, subset_size, 0)
    hist = evaluation.imbalance(subset, train_set.labels, train_set.num_classes)
    _write_echo(cfg, out_dir)
    _write_summary(out_dir, {
        "experiment": "imbalance",
        "config": cfg.canonical_text(),
        "counts": hist.counts.tolist(),
        "fractions": hist.fractions.tolist(),
        "subset_size": hist.total,
    })
    _write_meta(out_dir, started)
    print("class fractions: " + " ".join(f"{f:.4f}" for f in hist.fractions))
    return 0


def cmd_eval_cossim_stats(args) -> int:
    cfg = _load_config(argparse.Namespace(config=args.config, seed=args.seed, out=None))
    out_dir = _eval_dir(cfg, "cossim_stats", args.out)
    started = time.time()
    scores_path = cfg.evaluation.scores or str(Path(cfg.output_dir) / training.SCORES_FILE)
    if not Path(scores_path).exists():
        raise ConfigurationError(f"score artifact missing: {scores_path}")
    table = scoring.load_scores(scores_path)
    values = scoring.mean_cossim(table)
    mean, median, counts, edges = evaluation.cossim_stats(values)
    _write_echo(cfg, out_dir)
    _write_summary(out_dir, {
        "experiment": "cossim_stats",
        "config": cfg.canonical_text(),
        "mean": mean,
        "median": median,
        "histogram_counts": counts.tolist(),
        "histogram_edges": edges.tolist(),
    })
    _write_meta(out_dir, started)
    print(f"mean {mean:.4f} median {median:.4f}")
    return 0


def cmd_eval_baseline(args) -> int:
    cfg = _load_config(argparse.Namespace(config=args.config, seed=args.seed, out=None))
    method = args.method or cfg.evaluation.method
    out_dir = _eval_dir(cfg, f"baseline_{method}", args.out)
    started = time.time()
    train_set, _, _ = build_datasets(cfg.dataset)
    seed = cfg.train.seed
    n = len(train_set)

    if method == "random":
        order = baselines.random_subset(n, n, seed)
        score = np.zeros(n)
        score[order] = np.arange(n, 0, -1, dtype=np.float64)
    elif method == "forgetting":
        _, forget_counts = evaluation.supervised_signals(
            train_set, cfg.evaluation.classifier, seed)
        score = forget_counts.astype(np.float64)
        order = np.argsort(-score, kind="stable")
    elif method == "kcenters":
        features, _ = evaluation.supervised_signals(
            train_set, cfg.evaluation.classifier, seed)
        centers = baselines.kcenters_greedy(features, n, seed)
        order = centers.chosen
        score = np.zeros(n)
        score[order] = np.arange(n, 0, -1, dtype=np.float64)
    else:
        raise ConfigurationError(f"unknown baseline method {method!r}")

    ranking = scoring.CoresetRanking(a=order, score_snapshot=score, epochs_seen=0)
    _write_echo(cfg, out_dir)
    scoring.write_ranking_csv(ranking, out_dir / training.RANKING_FILE, method=method)
    _write_meta(out_dir, started)
    print(f"{method} ranking over {n} examples written to {out_dir / training.RANKING_FILE}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coreselect",
        description="Unsupervised coreset selection via contrastive cosine scores.")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train-score", help="contrastive training + score accumulation")
    train.add_argument("--config", required=True)
    train.add_argument("--seed", type=int, default=None, help="override the config seed")
    train.add_argument("--out", default=None, help="override the output directory")
    train.add_argument("--resume", action="store_true")
    train.set_defaults(func=cmd_train_score)

    sel = sub.add_parser("select", help="slice a ranking into a subset index file")
    sel.add_argument("ranking")
    group = sel.add_mutually_exclusive_group()
    group.add_argument("--fraction", type=float, default=None)
    group.add_argument("--count", type=int, default=None)
    sel.add_argument("--stride", type=int, default=0)
    sel.add_argument("--out", default="subset_indices.txt")
    sel.set_defaults(func=cmd_select)

    ev = sub.add_parser("eval", help="evaluation protocols")
    ev_sub = ev.add_subparsers(dest="eval_command", required=True)
    handlers = {
        "stride": cmd_eval_stride,
        "cross": cmd_eval_cross,
        "consistency": cmd_eval_consistency,
        "imbalance": cmd_eval_imbalance,
        "cossim-stats": cmd_eval_cossim_stats,
        "baseline": cmd_eval_baseline,
    }
    for name, handler in handlers.items():
        p = ev_sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        if name == "baseline":
            p.add_argument("--method", choices=["random", "forgetting", "kcenters"],
                           default=None)
        p.set_defaults(func=handler)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, BoundsError, ProtocolError, StateError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (FormatError, OSError) as exc:
        print(f"i/o or format failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
