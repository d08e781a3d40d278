"""Command-line front end.

Subcommands: resplit (length-cutoff dataset split), convert (native
navigation format to TSV), train, eval, analyze. Exit codes are a
stable contract: 0 success, 2 usage/config/data problems, 3 runtime
numerical failure (divergence).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as D
from .analyze import MetricsError, analyze_runs
from .config import ConfigError, load_experiment_config
from .model import DECODE_MODES, build_model, load_checkpoint
from .embedding import build_vocab
from .train import (GoodBadLedger, TrainConfig, TrainingDiverged, evaluate,
                    good_bad_decomposition, train_loop, _append_csv_row)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def cmd_resplit(args) -> int:
    pairs = D.load_pairs(args.data)
    spec = D.ResplitSpec(cutoff=args.cutoff,
                         iid_valid_fraction=args.valid_fraction)
    result = D.scan_length_resplit(pairs, spec, np.random.default_rng(args.seed))
    manifest = D.write_resplit(result, args.out, spec, args.seed)
    for name, split_pairs in result.splits().items():
        print(f"{name}: {len(split_pairs)} pairs")
    print(f"manifest: {manifest}")
    return EXIT_OK


def cmd_convert(args) -> int:
    pairs = D.load_pairs(args.data)
    D.write_tsv_pairs(pairs, args.out)
    print(f"wrote {len(pairs)} pairs to {args.out}")
    return EXIT_OK


def _load_eval_sets(config) -> dict:
    sets = {}
    for name, path in (("iid_valid", config.iid_valid_data),
                       ("gen_valid", config.gen_valid_data),
                       ("gen_test", config.gen_test_data)):
        if path is not None:
            sets[name] = D.load_pairs(path)
    return sets


def cmd_train(args) -> int:
    config = load_experiment_config(args.config)
    if args.seed is not None:
        config.seeds = tuple(int(s) for s in args.seed.split(","))
    train_pairs = D.load_pairs(config.train_data)
    eval_sets = _load_eval_sets(config)
    vocab = build_vocab([p.src + p.tgt for p in train_pairs])
    out_root = config.resolved_out_dir()

    finals = {}
    for seed in config.seeds:
        run_dir = out_root / f"seed{seed}" if len(config.seeds) > 1 else out_root
        tconfig = TrainConfig(**{**config.train.to_dict(), "seed": seed})
        model = build_model(config.model, vocab, rng=np.random.default_rng(seed))
        print(f"seed {seed}: {model.n_parameters()} parameters -> {run_dir}")
        result = train_loop(model, train_pairs, eval_sets, tconfig,
                            out_dir=run_dir)
        finals[seed] = {split: result.split_history(split)[-1]
                        for split in eval_sets}
        print(f"seed {seed} final:")
        for split, report in finals[seed].items():
            print(f"  {split:12s} exact_match={report.exact_match:.4f} "
                  f"loss={report.loss:.4f}")

    if eval_sets:
        summary = {}
        for split in eval_sets:
            values = [finals[s][split].exact_match for s in config.seeds]
            summary[split] = {"median": float(np.median(values)),
                              "mean": float(np.mean(values)),
                              "std": float(np.std(values)),
                              "values": values}
            print(f"{split}: median={summary[split]['median']:.4f} "
                  f"mean={summary[split]['mean']:.4f}"
                  f"+-{summary[split]['std']:.4f} over seeds {config.seeds}")
        out_root.mkdir(parents=True, exist_ok=True)
        (out_root / "multi_seed_summary.json").write_text(
            json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    pairs = D.load_pairs(args.data)
    report = evaluate(model, pairs, args.mode, split=args.split,
                      eval_batch_size=args.batch_size)
    stats = good_bad_decomposition(GoodBadLedger(len(pairs)), report)
    print(f"split={report.split} mode={args.mode} n={len(pairs)}")
    print(f"exact_match={report.exact_match:.4f}")
    print(f"loss={report.loss:.4f} (token-weighted {report.loss_token_weighted:.4f})")
    if args.csv:
        _append_csv_row(Path(args.csv), report, stats, lr=0.0, wall_clock_s=0.0)
        print(f"appended row to {args.csv}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    summary = analyze_runs(args.metrics_csv, args.plot_out,
                           selection_metric=args.metric,
                           patience=args.patience)
    sel = summary["selection"]
    print(f"early stopping ({sel['metric']} on {sel['split']}, "
          f"patience {sel['patience']}): steps {sel['early_stop_steps']} "
          f"median {sel['early_stop_median']:.0f}")
    for split, stats in summary.get("final_exact_match", {}).items():
        print(f"{split}: final exact_match median={stats['median']:.4f} "
              f"mean={stats['mean']:.4f}+-{stats['std']:.4f}")
    print(f"plots in {args.plot_out}: {', '.join(summary['plots'])}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqlab",
        description="Encoder-decoder transformer lab for length "
                    "generalization experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("resplit", help="length-cutoff resplit of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--cutoff", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--valid-fraction", type=float, default=0.1)
    p.set_defaults(func=cmd_resplit)

    p = sub.add_parser("convert", help="normalize a dataset file to TSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", default=None,
                   help="comma list; overrides the config's seeds")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=DECODE_MODES, default="plus_eos")
    p.add_argument("--split", default="eval")
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--csv", default=None, help="append the report to this CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="plots and summary from metrics CSVs")
    p.add_argument("--metrics-csv", nargs="+", required=True)
    p.add_argument("--plot-out", required=True)
    p.add_argument("--metric", choices=("accuracy", "loss"), default="accuracy")
    p.add_argument("--patience", type=int, default=5)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, MetricsError, D.DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
