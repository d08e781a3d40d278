"""Vocabulary, learned word embeddings, and sinusoidal position tables.

Three embedding scaling schemes are supported. They differ in how the
word-embedding matrix is initialized and how word and position vectors
are combined into the first-layer input H_i:

  token_upscale       E ~ U(-b, b), b = sqrt(6 / (d_model + n_words));
                      H_i = sqrt(d_model) * E_{w_i} + P_i
  no_scaling          E ~ N(0, 1);  H_i = E_{w_i} + P_i
  position_downscale  E ~ N(0, 1/sqrt(d_model));
                      H_i = E_{w_i} + P_i / sqrt(d_model)

Models using relative-position attention never add P_i at all; the E
term (including token_upscale's factor) is unchanged.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .tensor import DEFAULT_DTYPE, Tensor, add, embedding_lookup, mul, parameter

PAD_TOKEN = "<pad>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"
RESERVED_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3


class Vocabulary:
    """Bijective token <-> id map with four fixed reserved ids.

    Ids 0..3 are always pad, sequence-start, sequence-end and unknown, in
    that order; content tokens follow in first-occurrence order. ``size``
    counts reserved ids too, ``content_size`` does not.
    """

    def __init__(self, content_tokens: Sequence[str]):
        seen = set(RESERVED_TOKENS)
        ordered = []
        for tok in content_tokens:
            if tok in seen:
                if tok in RESERVED_TOKENS:
                    raise ValueError(f"token collides with reserved token: {tok!r}")
                continue
            seen.add(tok)
            ordered.append(tok)
        self.id_to_token: tuple[str, ...] = RESERVED_TOKENS + tuple(ordered)
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    @property
    def content_size(self) -> int:
        return self.size - len(RESERVED_TOKENS)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        """Map tokens to ids; unseen tokens fall back to the unknown id."""
        get = self.token_to_id.get
        return [get(tok, UNK_ID) for tok in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def save(self, path) -> None:
        """One token per line; the line number is the id. Lines 0-3 are
        the reserved tokens and are verified on load."""
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            lines = [line.rstrip("\n") for line in fh]
        if tuple(lines[:4]) != RESERVED_TOKENS:
            raise ValueError(f"vocabulary file {path} lacks the reserved-token header")
        return cls(lines[4:])


def build_vocab(corpus: Iterable[Sequence[str]]) -> Vocabulary:
    """Vocabulary over every token in the corpus, first-occurrence order."""
    tokens = []
    empty = True
    for seq in corpus:
        empty = False
        tokens.extend(seq)
    if empty:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    return Vocabulary(tokens)


class ScalingScheme(enum.Enum):
    TOKEN_UPSCALE = "token_upscale"
    NO_SCALING = "no_scaling"
    POSITION_DOWNSCALE = "position_downscale"

    @classmethod
    def parse(cls, name: str) -> "ScalingScheme":
        try:
            return cls(name.strip().lower())
        except ValueError:
            options = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown scaling scheme {name!r}; expected one of {options}")


@dataclass
class PositionalTable:
    """Sinusoidal position embeddings, optionally for signed distances.

    ``rows(i)`` accepts positions in [0, max_len) for an unsigned table
    and [-max_len, max_len] for a signed one (used for relative attention
    distances i - j).
    """

    d_model: int
    max_len: int
    signed: bool
    values: np.ndarray  # [n_rows, d_model], row 0 is position -max_len if signed

    @property
    def offset(self) -> int:
        return self.max_len if self.signed else 0

    def rows(self, positions) -> np.ndarray:
        positions = np.asarray(positions)
        lo = -self.max_len if self.signed else 0
        hi = self.max_len if self.signed else self.max_len - 1
        if positions.size and (positions.min() < lo or positions.max() > hi):
            raise IndexError(
                f"position outside table range [{lo}, {hi}]: "
                f"[{positions.min()}, {positions.max()}]")
        return self.values[positions + self.offset]


def sinusoidal_pe(max_len: int, d_model: int, signed: bool = False) -> PositionalTable:
    """Interleaved sin/cos table: column 2k holds sin(i / 10000^(2k/d)),
    column 2k+1 the matching cos. Every entry lies in [-1, 1]."""
    if d_model % 2 != 0:
        raise ValueError(f"sinusoidal embeddings need an even d_model, got {d_model}")
    if signed:
        positions = np.arange(-max_len, max_len + 1, dtype=np.float64)
    else:
        positions = np.arange(max_len, dtype=np.float64)
    pair_exponent = np.arange(0, d_model, 2, dtype=np.float64) / d_model
    inv_freq = 1.0 / np.power(10000.0, pair_exponent)
    angles = positions[:, None] * inv_freq[None, :]
    values = np.empty((positions.size, d_model), dtype=DEFAULT_DTYPE)
    values[:, 0::2] = np.sin(angles)
    values[:, 1::2] = np.cos(angles)
    return PositionalTable(d_model=d_model, max_len=max_len, signed=signed,
                           values=values)


@dataclass
class EmbeddingTable:
    """Learned word-embedding matrix plus the scheme it was built for."""

    weights: Tensor  # [n_words, d_model]
    scheme: ScalingScheme

    @property
    def d_model(self) -> int:
        return self.weights.shape[1]


def init_embedding(vocab: Vocabulary, d_model: int, scheme: ScalingScheme,
                   rng: np.random.Generator) -> EmbeddingTable:
    """Draw the embedding matrix from the scheme's initialization."""
    if d_model <= 0:
        raise ValueError(f"d_model must be positive, got {d_model}")
    n = vocab.size
    if scheme is ScalingScheme.TOKEN_UPSCALE:
        bound = np.sqrt(6.0 / (d_model + n))
        weights = rng.uniform(-bound, bound, size=(n, d_model))
    elif scheme is ScalingScheme.NO_SCALING:
        weights = rng.normal(0.0, 1.0, size=(n, d_model))
    elif scheme is ScalingScheme.POSITION_DOWNSCALE:
        weights = rng.normal(0.0, 1.0 / np.sqrt(d_model), size=(n, d_model))
    else:  # pragma: no cover
        raise ValueError(f"unhandled scheme {scheme}")
    return EmbeddingTable(weights=parameter(weights.astype(DEFAULT_DTYPE)),
                          scheme=scheme)


def embed_scaled(table: EmbeddingTable, pe: PositionalTable | None, ids,
                 use_absolute_pe: bool) -> Tensor:
    """First-layer input for token ids of shape [..., T].

    Applies the table's scheme: the word vector (upscaled for
    token_upscale) plus, when ``use_absolute_pe``, the appropriately
    scaled position vector for positions 0..T-1. With
    ``use_absolute_pe=False`` the position term is omitted entirely.
    """
    ids = np.asarray(ids)
    seq_len = ids.shape[-1]
    d_model = table.d_model
    out = embedding_lookup(table.weights, ids)
    if table.scheme is ScalingScheme.TOKEN_UPSCALE:
        out = mul(out, float(np.sqrt(d_model)))
    if not use_absolute_pe:
        return out
    if pe is None:
        raise ValueError("use_absolute_pe=True requires a positional table")
    if seq_len > pe.max_len:
        raise ValueError(f"sequence length {seq_len} exceeds positional table "
                         f"max_len {pe.max_len}")
    pos = pe.rows(np.arange(seq_len))
    if table.scheme is ScalingScheme.POSITION_DOWNSCALE:
        pos = pos / np.sqrt(d_model)
    return add(out, Tensor(pos.astype(out.dtype)))
