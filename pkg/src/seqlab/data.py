"""Sequence-pair datasets: loading, the length-cutoff resplit, batching.

Two on-disk formats are accepted: plain TSV ("source<TAB>target", both
sides whitespace-tokenized) and the single-line navigation format
("IN: <source> OUT: <target>"). ``load_pairs`` sniffs the format;
``seqlab convert`` normalizes to TSV.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .embedding import BOS_ID, EOS_ID, PAD_ID, Vocabulary

logger = logging.getLogger(__name__)

# cutoffs with a published reference row for the navigation corpus
SCAN_CUTOFFS = (22, 24, 25, 26, 27, 28, 30, 32, 33, 36, 40)


class DataError(ValueError):
    """Malformed dataset file; carries the offending line number."""

    def __init__(self, message: str, path=None, line: Optional[int] = None):
        loc = f"{path}:{line}: " if path is not None else ""
        super().__init__(f"{loc}{message}")
        self.path = path
        self.line = line


@dataclass(frozen=True)
class SeqPair:
    """One training example: source tokens -> target tokens, both nonempty."""

    src: tuple[str, ...]
    tgt: tuple[str, ...]


def load_tsv_pairs(path) -> list[SeqPair]:
    """Order-preserving load of "source<TAB>target" lines."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise DataError("expected a single TAB separator", path, lineno)
            src_text, tgt_text = line.split("\t", 1)
            src, tgt = tuple(src_text.split()), tuple(tgt_text.split())
            if not src or not tgt:
                raise DataError("empty source or target side", path, lineno)
            pairs.append(SeqPair(src, tgt))
    return pairs


def load_scan_pairs(path) -> list[SeqPair]:
    """Load the canonical "IN: ... OUT: ..." single-line format."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if not line.startswith("IN:") or " OUT:" not in line:
                raise DataError("expected 'IN: <src> OUT: <tgt>'", path, lineno)
            src_text, tgt_text = line[3:].split(" OUT:", 1)
            src, tgt = tuple(src_text.split()), tuple(tgt_text.split())
            if not src or not tgt:
                raise DataError("empty source or target side", path, lineno)
            pairs.append(SeqPair(src, tgt))
    return pairs


def load_pairs(path) -> list[SeqPair]:
    """Auto-detect the file format from its first nonempty line."""
    with open(path, encoding="utf-8") as fh:
        first = ""
        for line in fh:
            if line.strip():
                first = line
                break
    if first.startswith("IN:"):
        return load_scan_pairs(path)
    return load_tsv_pairs(path)


def write_tsv_pairs(pairs: Iterable[SeqPair], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(" ".join(pair.src) + "\t" + " ".join(pair.tgt) + "\n")


@dataclass(frozen=True)
class ResplitSpec:
    """Target-length threshold (tokens, excluding any end marker) and the
    fraction of the short-side pool held out as IID validation."""

    cutoff: int
    iid_valid_fraction: float = 0.1


@dataclass
class Resplit:
    train: list[SeqPair]
    iid_valid: list[SeqPair]
    gen_test: list[SeqPair]

    def splits(self) -> dict[str, list[SeqPair]]:
        return {"train": self.train, "iid_valid": self.iid_valid,
                "gen_test": self.gen_test}


def scan_length_resplit(all_pairs: Sequence[SeqPair], spec: ResplitSpec,
                        rng: np.random.Generator) -> Resplit:
    """Partition by target length: <= cutoff feeds train plus a seeded IID
    validation holdout, > cutoff becomes the generalization test set."""
    pool = [p for p in all_pairs if len(p.tgt) <= spec.cutoff]
    gen_test = [p for p in all_pairs if len(p.tgt) > spec.cutoff]
    if not pool:
        raise ValueError(f"no pairs with target length <= {spec.cutoff}")
    if not gen_test:
        raise ValueError(f"no pairs with target length > {spec.cutoff}; "
                         "nothing left to test generalization on")
    n_valid = int(spec.iid_valid_fraction * len(pool))
    order = rng.permutation(len(pool))
    valid_idx = set(order[:n_valid].tolist())
    train = [p for i, p in enumerate(pool) if i not in valid_idx]
    iid_valid = [pool[i] for i in sorted(valid_idx)]
    return Resplit(train=train, iid_valid=iid_valid, gen_test=gen_test)


def split_stats(pairs: Sequence[SeqPair]) -> dict:
    return {
        "count": len(pairs),
        "max_src_len": max((len(p.src) for p in pairs), default=0),
        "max_tgt_len": max((len(p.tgt) for p in pairs), default=0),
    }


def write_resplit(result: Resplit, out_dir, spec: ResplitSpec, seed: int) -> Path:
    """Write the three TSV files plus a JSON-lines manifest; returns the
    manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"cutoff": spec.cutoff, "seed": seed,
                             "iid_valid_fraction": spec.iid_valid_fraction}) + "\n")
        for name, pairs in result.splits().items():
            write_tsv_pairs(pairs, out_dir / f"{name}.tsv")
            fh.write(json.dumps({"split": name, **split_stats(pairs)}) + "\n")
    return manifest_path


@dataclass
class Batch:
    """Padded id matrices for one optimizer step.

    ``dec_in`` starts with the sequence-start id and is the target shifted
    right by one; the padding id never appears as a real token, so the
    loss and the attention key masks can both key off lengths/pad ids.
    """

    src: np.ndarray          # [B, T_src] ids, padded
    src_lengths: np.ndarray  # [B]
    dec_in: np.ndarray       # [B, T_tgt] ids, padded
    tgt: np.ndarray          # [B, T_tgt] ids, padded
    tgt_lengths: np.ndarray  # [B]
    with_eos: bool

    @property
    def size(self) -> int:
        return self.src.shape[0]


def _pad_rows(rows: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(r) for r in rows], dtype=np.int64)
    out = np.full((len(rows), int(lengths.max())), PAD_ID, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out, lengths


def encode_pair(pair: SeqPair, vocab: Vocabulary,
                with_eos: bool) -> tuple[list[int], list[int], list[int]]:
    """(src ids, decoder-input ids, target ids) for one pair."""
    src = vocab.encode(pair.src)
    tgt = vocab.encode(pair.tgt)
    if with_eos:
        full = tgt + [EOS_ID]
        dec_in = [BOS_ID] + tgt
    else:
        full = tgt
        dec_in = [BOS_ID] + tgt[:-1]
    return src, dec_in, full


def make_batches(pairs: Sequence[SeqPair], vocab: Vocabulary, batch_size: int,
                 eos_mode: str = "with_eos",
                 rng: Optional[np.random.Generator] = None,
                 max_len: int = 512) -> list[Batch]:
    """Seeded-shuffle the pairs and pack them into padded batches.

    ``eos_mode`` is "with_eos" (an end marker is appended to every
    target) or "without_eos" (targets kept verbatim; such models can only
    be evaluated with oracle lengths). Pairs longer than ``max_len`` on
    either side are dropped with a logged count.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if eos_mode not in ("with_eos", "without_eos"):
        raise ValueError(f"unknown eos_mode {eos_mode!r}")
    with_eos = eos_mode == "with_eos"

    kept = [p for p in pairs
            if len(p.src) <= max_len and len(p.tgt) + int(with_eos) <= max_len]
    dropped = len(pairs) - len(kept)
    if dropped:
        logger.warning("make_batches dropped %d pairs exceeding max_len=%d",
                       dropped, max_len)
    order = rng.permutation(len(kept)) if rng is not None else np.arange(len(kept))

    batches = []
    for start in range(0, len(kept), batch_size):
        chunk = [kept[i] for i in order[start:start + batch_size]]
        encoded = [encode_pair(p, vocab, with_eos) for p in chunk]
        src, src_lengths = _pad_rows([e[0] for e in encoded])
        dec_in, _ = _pad_rows([e[1] for e in encoded])
        tgt, tgt_lengths = _pad_rows([e[2] for e in encoded])
        batches.append(Batch(src=src, src_lengths=src_lengths, dec_in=dec_in,
                             tgt=tgt, tgt_lengths=tgt_lengths, with_eos=with_eos))
    return batches
