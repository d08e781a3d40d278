"""Run the full navigation-corpus reproduction matrix.

Trains every (cutoff, variant, positional, seed) combination the
acceptance suite asserts on, with the reference hyperparameters
(3 layers, d_model 128, d_ff 256, 8 heads, Adam lr 1e-4, batch 128,
up to 50k steps). Runs stop early once their success condition holds
(threshold passed with margin, or IID saturated for the absolute
models, whose generalization score is the quantity under test);
otherwise they run the full budget.

Each run writes runs/acceptance/<name>/{metrics.csv, summary.json,
final.ckpt}; the script is resumable and skips runs whose summary
already exists. Expect single-digit hours per few runs on one core;
see README for the priority order.
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from seqlab.data import ResplitSpec, scan_length_resplit  # noqa: E402
from seqlab.embedding import ScalingScheme, build_vocab  # noqa: E402
from seqlab.model import ModelConfig, build_model  # noqa: E402
from seqlab.scan import scan_pairs  # noqa: E402
from seqlab.train import TrainConfig, evaluate, train_loop  # noqa: E402

SPLIT_SEED = 12345
REL_GEN_STOP = {26: 0.95, 40: 0.97}


def run_matrix(seeds):
    matrix = []
    for cutoff, variants in ((26, [("relative", "universal"),
                                   ("absolute", "standard")]),
                             (40, [("relative", "universal"),
                                   ("relative", "standard"),
                                   ("absolute", "standard"),
                                   ("absolute", "universal")])):
        for positional, variant in variants:
            for seed in seeds:
                matrix.append(dict(cutoff=cutoff, positional=positional,
                                   variant=variant, seed=seed))
    return matrix


def run_name(spec):
    pos = "rel" if spec["positional"] == "relative" else "abs"
    var = "uni" if spec["variant"] == "universal" else "std"
    return f"l{spec['cutoff']}-{pos}-{var}-s{spec['seed']}"


def make_success_condition(spec):
    if spec["positional"] == "relative":
        gen_floor = REL_GEN_STOP[spec["cutoff"]]

        def done(reports):
            return (reports["iid_valid"].exact_match >= 0.99
                    and reports["gen_test"].exact_match >= gen_floor)
        return done

    streak = {"n": 0}

    def done(reports):
        if reports["iid_valid"].exact_match >= 0.99:
            streak["n"] += 1
        else:
            streak["n"] = 0
        return streak["n"] >= 3 and reports["iid_valid"].step >= 3000
    return done


def execute_run(spec, split, vocab, out_root, total_steps):
    name = run_name(spec)
    out_dir = out_root / name
    summary_path = out_dir / "summary.json"
    if summary_path.exists():
        logging.info("skipping %s (summary exists)", name)
        return json.loads(summary_path.read_text())

    logging.info("starting %s", name)
    scaling = (ScalingScheme.NO_SCALING if spec["positional"] == "relative"
               else ScalingScheme.POSITION_DOWNSCALE)
    config = ModelConfig(d_model=128, d_ff=256, n_head=8, n_layers=3,
                         variant=spec["variant"], positional=spec["positional"],
                         scaling=scaling)
    model = build_model(config, vocab, rng=np.random.default_rng(spec["seed"]))
    tconfig = TrainConfig(learning_rate=1e-4, batch_size=128,
                          total_steps=total_steps, eval_every=500,
                          seed=spec["seed"], eval_batch_size=256)
    started = time.time()
    result = train_loop(model, split.train,
                        {"iid_valid": split.iid_valid, "gen_test": split.gen_test},
                        tconfig, out_dir=out_dir,
                        success_condition=make_success_condition(spec))
    wall = time.time() - started

    final = {}
    for split_name in ("iid_valid", "gen_test"):
        last = result.split_history(split_name)[-1]
        final[f"{split_name}_em"] = last.exact_match
        final[f"{split_name}_loss"] = last.loss
    if spec["positional"] == "absolute":
        oracle = evaluate(model, split.gen_test, "plus_eos_oracle",
                          split="gen_test_oracle", eval_batch_size=256)
        final["gen_test_oracle_em"] = oracle.exact_match
        final["gen_test_oracle_loss"] = oracle.loss

    summary = dict(name=name, **spec, scaling=scaling.value,
                   n_params=model.n_parameters(),
                   stopped_early_at=result.stopped_early_at,
                   last_eval_step=result.history[-1].step,
                   wall_clock_s=round(wall, 1), final=final,
                   split_seed=SPLIT_SEED,
                   hyperparams=dict(d_model=128, d_ff=256, n_head=8, n_layers=3,
                                    lr=1e-4, batch_size=128,
                                    total_steps=total_steps))
    summary_path.write_text(json.dumps(summary, indent=2) + "\n")
    logging.info("finished %s: %s", name, final)
    return summary


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/acceptance")
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--total-steps", type=int, default=50_000)
    parser.add_argument("--only", default=None,
                        help="comma list of run names to restrict to")
    args = parser.parse_args()

    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s",
        handlers=[logging.StreamHandler(),
                  logging.FileHandler(out_root / "runner.log")])

    seeds = [int(s) for s in args.seeds.split(",")]
    matrix = run_matrix(seeds)
    if args.only:
        keep = set(args.only.split(","))
        matrix = [spec for spec in matrix if run_name(spec) in keep]

    pairs = scan_pairs()
    vocab = build_vocab([p.src + p.tgt for p in pairs])
    splits = {}
    for spec in matrix:
        cutoff = spec["cutoff"]
        if cutoff not in splits:
            splits[cutoff] = scan_length_resplit(
                pairs, ResplitSpec(cutoff), np.random.default_rng(SPLIT_SEED))
        execute_run(spec, splits[cutoff], vocab, out_root, args.total_steps)
    logging.info("queue complete")


if __name__ == "__main__":
    main()
