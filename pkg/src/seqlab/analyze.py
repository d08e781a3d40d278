"""Post-hoc analysis of metrics CSVs: curves, early-stop markers, the
good/bad loss decomposition, and a machine-readable summary.

Plots are emitted as standalone SVG files with the plotted numbers
embedded in a trailing XML comment, so a plot can always be audited
without re-running anything.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .train import CSV_COLUMNS, EvalReport, early_stopping_select  # noqa: E402


class MetricsError(ValueError):
    """Metrics CSV missing, empty, or malformed."""


def load_metrics_csv(path) -> list[dict]:
    """Rows of one metrics CSV with numeric fields parsed."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or \
                set(CSV_COLUMNS) - set(reader.fieldnames):
            raise MetricsError(f"{path}: expected columns {CSV_COLUMNS}")
        for raw in reader:
            rows.append({
                "step": int(raw["step"]), "split": raw["split"],
                "exact_match": float(raw["exact_match"]),
                "loss": float(raw["loss"]),
                "good_loss": float(raw["good_loss"]),
                "bad_loss": float(raw["bad_loss"]),
                "n_good": int(raw["n_good"]), "n_bad": int(raw["n_bad"]),
                "lr": float(raw["lr"]),
                "loss_token_weighted": float(raw["loss_token_weighted"]),
            })
    if not rows:
        raise MetricsError(f"{path}: no data rows")
    return rows


def _series(rows: Sequence[dict], split: str, column: str):
    pts = [(r["step"], r[column]) for r in rows if r["split"] == split]
    return [p[0] for p in pts], [p[1] for p in pts]


def _reports_for(rows: Sequence[dict], split: str) -> list[EvalReport]:
    return [EvalReport(split=split, step=r["step"],
                       exact_match=r["exact_match"], loss=r["loss"],
                       loss_token_weighted=r["loss_token_weighted"],
                       per_sample_losses=np.zeros(0),
                       per_sample_correct=np.zeros(0, dtype=bool))
            for r in rows if r["split"] == split]


def _write_svg(fig, path: Path, table_rows: list[str]) -> None:
    """Save the figure and append the plotted data as an XML comment."""
    fig.savefig(path, format="svg")
    plt.close(fig)
    text = path.read_text()
    body = "\n".join(r.replace("--", "-") for r in table_rows)
    comment = f"<!-- data-table\n{body}\n-->"
    path.write_text(text.replace("</svg>", comment + "\n</svg>"))


def analyze_runs(csv_paths: Sequence, out_dir, selection_metric: str = "accuracy",
                 patience: int = 5, selection_split: str = "iid_valid") -> dict:
    """Produce curve plots (with per-run early-stop markers and their
    median), the good/bad decomposition plot, and summary.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = [(str(p), load_metrics_csv(p)) for p in csv_paths]

    splits = sorted({r["split"] for _, rows in runs for r in rows})
    select_on = selection_split if any(
        r["split"] == selection_split for _, rows in runs for r in rows) \
        else splits[0]

    early_steps = []
    per_run = {}
    for path, rows in runs:
        reports = _reports_for(rows, select_on)
        chosen = early_stopping_select(reports, selection_metric, patience)
        finals = {split: {"exact_match": _series(rows, split, "exact_match")[1][-1],
                          "loss": _series(rows, split, "loss")[1][-1],
                          "last_step": _series(rows, split, "loss")[0][-1]}
                  for split in splits if _series(rows, split, "loss")[0]}
        early_steps.append(chosen)
        per_run[path] = {"early_stop_step": chosen, "final": finals}
    median_early = float(np.median(early_steps))

    for column, fname, ylabel in (("exact_match", "accuracy_vs_step.svg",
                                   "sequence exact match"),
                                  ("loss", "loss_vs_step.svg",
                                   "token cross-entropy")):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        table = [f"run,split,step,{column}"]
        for color_i, split in enumerate(splits):
            color = f"C{color_i}"
            for run_i, (path, rows) in enumerate(runs):
                steps, values = _series(rows, split, column)
                if not steps:
                    continue
                ax.plot(steps, values, color=color, alpha=0.85,
                        label=split if run_i == 0 else None)
                table.extend(f"{run_i},{split},{s},{v:.6f}"
                             for s, v in zip(steps, values))
        ax.axvline(median_early, color="k", linestyle="--", linewidth=1,
                   label=f"early-stop median ({median_early:.0f})")
        ax.set_xlabel("training step")
        ax.set_ylabel(ylabel)
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        _write_svg(fig, out_dir / fname, table)

    # good/bad decomposition on the split with the largest bad group
    bad_totals = defaultdict(int)
    for _, rows in runs:
        for r in rows:
            bad_totals[r["split"]] += r["n_bad"]
    decomposed = max(bad_totals, key=bad_totals.get)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    table = ["run,step,total_loss,good_loss,bad_loss,n_good,n_bad"]
    for run_i, (path, rows) in enumerate(runs):
        sel = [r for r in rows if r["split"] == decomposed]
        steps = [r["step"] for r in sel]
        ax.plot(steps, [r["loss"] for r in sel], "C0",
                label="total" if run_i == 0 else None)
        ax.plot(steps, [r["good_loss"] for r in sel], "C2",
                label="ever-matched samples" if run_i == 0 else None)
        ax.plot(steps, [r["bad_loss"] for r in sel], "C3",
                label="never-matched samples" if run_i == 0 else None)
        table.extend(
            f"{run_i},{r['step']},{r['loss']:.6f},{r['good_loss']:.6f},"
            f"{r['bad_loss']:.6f},{r['n_good']},{r['n_bad']}" for r in sel)
    ax.set_xlabel("training step")
    ax.set_ylabel(f"token cross-entropy ({decomposed})")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _write_svg(fig, out_dir / "good_bad_decomposition.svg", table)

    summary = {
        "runs": per_run,
        "selection": {"metric": selection_metric, "split": select_on,
                      "patience": patience,
                      "early_stop_steps": early_steps,
                      "early_stop_median": median_early},
        "splits": splits,
        "plots": ["accuracy_vs_step.svg", "loss_vs_step.svg",
                  "good_bad_decomposition.svg"],
    }
    for split in splits:
        finals = [info["final"][split]["exact_match"]
                  for info in per_run.values() if split in info["final"]]
        if finals:
            summary.setdefault("final_exact_match", {})[split] = {
                "median": float(np.median(finals)),
                "mean": float(np.mean(finals)),
                "std": float(np.std(finals)),
                "values": finals,
            }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary
