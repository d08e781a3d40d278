"""Optimization and the evaluation protocol.

Training is step-driven: a fixed number of optimizer steps with an
evaluation of every eval set each ``eval_every`` steps (plus step 0).
Early stopping is never used to halt training; ``early_stopping_select``
replays the usual patience rule over a recorded history afterwards so
the checkpoint it *would* have picked can be compared against the final
one.

Each evaluation records sequence-level exact match (greedy decode) and
teacher-forced token cross-entropy, kept separate on purpose: their
divergence on generalization splits is one of the phenomena this lab
exists to measure. Per-sample losses feed the good/bad decomposition
(samples that ever decoded exactly right during training vs. the rest).
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .data import Batch, SeqPair, make_batches
from .embedding import PAD_ID
from .model import Seq2SeqModel, forward_batch, greedy_decode_batch, save_checkpoint
from .tensor import Tensor

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("step", "split", "exact_match", "loss", "good_loss", "bad_loss",
               "n_good", "n_bad", "lr", "wall_clock_s", "loss_token_weighted")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; training aborted with diagnostics."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    schedule: str = "constant"      # "constant" | "noam"
    noam_factor: float = 1.0
    noam_warmup: int = 4000
    batch_size: int = 128
    total_steps: int = 50_000
    eval_every: int = 500
    patience: int = 5
    label_smoothing: float = 0.0
    seed: int = 0
    eos_mode: str = "with_eos"
    eval_batch_size: int = 256

    def validate(self) -> None:
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.schedule not in ("constant", "noam"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.eos_mode not in ("with_eos", "without_eos"):
            raise ValueError(f"unknown eos_mode {self.eos_mode!r}")
        if self.total_steps < 0 or self.batch_size < 1:
            raise ValueError("total_steps must be >= 0 and batch_size >= 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moment estimates plus the shared step counter."""

    def __init__(self, params: Sequence[Tensor]):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.step_count = 0


def adam_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update with bias correction."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise T.ShapeError(f"gradient shape {g.shape} does not match "
                               f"parameter shape {p.data.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def noam_lr(step: int, d_model: int, factor: float, warmup: int) -> float:
    """Warmup-then-decay rate: factor * d_model^-0.5 * min(step^-0.5,
    step * warmup^-1.5)."""
    if step < 1:
        raise ValueError(f"noam_lr is defined for steps >= 1, got {step}")
    return factor * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def current_lr(config: TrainConfig, d_model: int, step: int) -> float:
    if config.schedule == "noam":
        return noam_lr(step, d_model, config.noam_factor, config.noam_warmup)
    return config.learning_rate


# ---------------------------------------------------------------------------
# evaluation


def exact_match(pred: Sequence[int], gold: Sequence[int]) -> bool:
    """True iff the sequences have equal length and agree everywhere."""
    pred = list(pred)
    gold = list(gold)
    return len(pred) == len(gold) and pred == gold


@dataclass
class EvalReport:
    split: str
    step: int
    exact_match: float
    loss: float                      # mean over samples of per-sample token CE
    loss_token_weighted: float       # total token CE over total tokens
    per_sample_losses: np.ndarray
    per_sample_correct: np.ndarray


def _per_sample_token_nll(model: Seq2SeqModel, batch: Batch) -> np.ndarray:
    """Mean token negative log-likelihood per sample (teacher-forced)."""
    with T.no_grad():
        logits = forward_batch(model, batch, training=False)
    logp = T.log_softmax_rows(logits.data.astype(np.float64))
    b, t = batch.tgt.shape
    gold_logp = np.take_along_axis(logp, batch.tgt[:, :, None], axis=2)[:, :, 0]
    valid = batch.tgt != PAD_ID
    return -(gold_logp * valid).sum(axis=1) / valid.sum(axis=1)


def evaluate(model: Seq2SeqModel, pairs: Sequence[SeqPair], decode_mode: str,
             split: str = "eval", step: int = 0,
             eval_batch_size: int = 256,
             max_steps: Optional[int] = None) -> EvalReport:
    """Greedy-decode every pair for exact match and separately compute the
    teacher-forced cross-entropy; both land in one report.

    In plus_eos mode a sample only counts as correct when the model also
    emitted the end marker at the right position (stopping late or never
    is a miss even if the prefix was right).
    """
    eos_mode = "with_eos" if model.eos_trained else "without_eos"
    batches = make_batches(pairs, model.vocab, eval_batch_size,
                           eos_mode=eos_mode, rng=None,
                           max_len=model.config.max_len)
    losses, correct = [], []
    for batch in batches:
        content_lens = batch.tgt_lengths - (1 if batch.with_eos else 0)
        sequences, eos_flags = greedy_decode_batch(
            model, batch.src, batch.src_lengths, decode_mode,
            gold_lens=content_lens, max_steps=max_steps)
        for i, seq in enumerate(sequences):
            gold = batch.tgt[i, :content_lens[i]].tolist()
            ok = exact_match(seq, gold)
            if decode_mode == "plus_eos":
                ok = ok and bool(eos_flags[i])
            correct.append(ok)
        losses.append(_per_sample_token_nll(model, batch))

    per_sample_losses = np.concatenate(losses) if losses else np.zeros(0)
    per_sample_correct = np.asarray(correct, dtype=bool)
    token_counts = np.array([len(p.tgt) + (1 if eos_mode == "with_eos" else 0)
                             for p in pairs], dtype=np.float64)
    token_weighted = float((per_sample_losses * token_counts).sum()
                           / token_counts.sum()) if len(pairs) else 0.0
    return EvalReport(
        split=split, step=step,
        exact_match=float(per_sample_correct.mean()) if len(pairs) else 0.0,
        loss=float(per_sample_losses.mean()) if len(pairs) else 0.0,
        loss_token_weighted=token_weighted,
        per_sample_losses=per_sample_losses,
        per_sample_correct=per_sample_correct)


# ---------------------------------------------------------------------------
# good/bad loss decomposition


class GoodBadLedger:
    """Tracks which samples have ever decoded exactly right so far."""

    def __init__(self, n_samples: int):
        self.ever_matched = np.zeros(n_samples, dtype=bool)


@dataclass
class GoodBadStats:
    good_loss: float
    bad_loss: float
    n_good: int
    n_bad: int


def good_bad_decomposition(ledger: GoodBadLedger,
                           report: EvalReport) -> GoodBadStats:
    """Update the ledger from this eval, then split its per-sample losses.

    The sample-weighted recombination
    (n_good*good + n_bad*bad) / (n_good + n_bad) equals the report's
    ``loss`` exactly (up to float error).
    """
    n = len(ledger.ever_matched)
    if len(report.per_sample_losses) != n or len(report.per_sample_correct) != n:
        raise ValueError(f"ledger tracks {n} samples but the report has "
                         f"{len(report.per_sample_losses)}")
    ledger.ever_matched |= report.per_sample_correct
    good = report.per_sample_losses[ledger.ever_matched]
    bad = report.per_sample_losses[~ledger.ever_matched]
    return GoodBadStats(
        good_loss=float(good.mean()) if good.size else 0.0,
        bad_loss=float(bad.mean()) if bad.size else 0.0,
        n_good=int(good.size), n_bad=int(bad.size))


# ---------------------------------------------------------------------------
# post-hoc early-stopping analysis


def early_stopping_select(history: Sequence[EvalReport],
                          metric: str = "accuracy", patience: int = 5) -> int:
    """Step that patience-based early stopping would have selected.

    ``metric`` is "accuracy" (higher is better) or "loss" (lower is
    better). Only strict improvement resets the patience counter, so
    ties burn patience and the selection is unique; evals after the
    stopping point can never change the answer.
    """
    if not history:
        raise ValueError("empty history")
    if metric in ("accuracy", "iid_accuracy"):
        values = [r.exact_match for r in history]
        better = lambda a, b: a > b
    elif metric in ("loss", "iid_loss"):
        values = [r.loss for r in history]
        better = lambda a, b: a < b
    else:
        raise ValueError(f"unknown selection metric {metric!r}")

    best_value = values[0]
    best_step = history[0].step
    bad_streak = 0
    for report, value in zip(history[1:], values[1:]):
        if better(value, best_value):
            best_value = value
            best_step = report.step
            bad_streak = 0
        else:
            bad_streak += 1
            if bad_streak >= patience:
                break
    return best_step


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    history: list[EvalReport] = field(default_factory=list)
    csv_path: Optional[Path] = None
    checkpoint_paths: dict = field(default_factory=dict)
    stopped_early_at: Optional[int] = None

    def split_history(self, split: str) -> list[EvalReport]:
        return [r for r in self.history if r.split == split]


def _append_csv_row(path: Path, report: EvalReport, stats: GoodBadStats,
                    lr: float, wall_clock_s: float) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(CSV_COLUMNS)
        writer.writerow([report.step, report.split,
                         f"{report.exact_match:.6f}", f"{report.loss:.6f}",
                         f"{stats.good_loss:.6f}", f"{stats.bad_loss:.6f}",
                         stats.n_good, stats.n_bad, f"{lr:.8g}",
                         f"{wall_clock_s:.3f}",
                         f"{report.loss_token_weighted:.6f}"])


def train_loop(model: Seq2SeqModel, train_pairs: Sequence[SeqPair],
               eval_sets: dict[str, Sequence[SeqPair]], config: TrainConfig,
               out_dir=None,
               success_condition: Optional[Callable[[dict[str, EvalReport]], bool]]
               = None) -> TrainResult:
    """Step-driven training with periodic multi-split evaluation.

    Saves, under ``out_dir``: an incrementally written metrics CSV, the
    best checkpoint by exact match on the "iid_valid" split, the best by
    "gen_valid" (when such a split is supplied), and the final model.
    ``success_condition`` (optional, for budgeted reproduction runs)
    receives each fresh {split: report} dict and may end the run early;
    the paper-faithful protocol leaves it None and always runs to
    total_steps.
    """
    config.validate()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "metrics.csv" if out_dir is not None else None

    model.eos_trained = config.eos_mode == "with_eos"
    model.max_train_target_len = max(len(p.tgt) for p in train_pairs)

    rng_order = np.random.default_rng([config.seed, 1])
    rng_dropout = np.random.default_rng([config.seed, 2])

    params = model.parameters()
    state = AdamState(params)
    ledgers = {name: GoodBadLedger(len(pairs)) for name, pairs in eval_sets.items()}
    result = TrainResult(csv_path=csv_path)
    best = {"iid_valid": -1.0, "gen_valid": -1.0}
    started = time.monotonic()

    def run_evals(step: int, lr: float) -> dict[str, EvalReport]:
        reports = {}
        for name, pairs in eval_sets.items():
            report = evaluate(model, pairs, "plus_eos" if model.eos_trained
                              else "minus_eos_oracle", split=name, step=step,
                              eval_batch_size=config.eval_batch_size)
            stats = good_bad_decomposition(ledgers[name], report)
            if csv_path is not None:
                _append_csv_row(csv_path, report, stats, lr,
                                time.monotonic() - started)
            result.history.append(report)
            reports[name] = report
        for tag, split in (("best_iid", "iid_valid"), ("best_gen", "gen_valid")):
            if split in reports and out_dir is not None and \
                    reports[split].exact_match > best[split]:
                best[split] = reports[split].exact_match
                path = out_dir / f"{tag}.ckpt"
                save_checkpoint(model, path)
                result.checkpoint_paths[tag] = path
        return reports

    run_evals(0, current_lr(config, model.config.d_model, 1))

    step = 0
    batches: list[Batch] = []
    cursor = 0
    while step < config.total_steps:
        if cursor >= len(batches):
            batches = make_batches(train_pairs, model.vocab, config.batch_size,
                                   eos_mode=config.eos_mode, rng=rng_order,
                                   max_len=model.config.max_len)
            cursor = 0
        batch = batches[cursor]
        cursor += 1
        step += 1
        lr = current_lr(config, model.config.d_model, step)

        for p in params:
            p.grad = None
        with T.Tape():
            logits = forward_batch(model, batch, training=True, rng=rng_dropout)
            loss = T.cross_entropy(logits, batch.tgt,
                                   smoothing=config.label_smoothing,
                                   pad_id=PAD_ID)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise TrainingDiverged(
                    f"non-finite loss {loss_value} at step {step}")
            T.backward_pass(loss)
        adam_step(params, [p.grad for p in params], state, lr)

        if step % config.eval_every == 0:
            reports = run_evals(step, lr)
            logger.info("step %d: %s", step,
                        " ".join(f"{k}={v.exact_match:.3f}/{v.loss:.3f}"
                                 for k, v in reports.items()))
            if success_condition is not None and success_condition(reports):
                result.stopped_early_at = step
                logger.info("success condition met at step %d; stopping", step)
                break

    if out_dir is not None:
        final_path = out_dir / "final.ckpt"
        save_checkpoint(model, final_path)
        result.checkpoint_paths["final"] = final_path
    return result
