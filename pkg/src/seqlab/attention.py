"""Multi-head attention: standard scaled dot-product and the relative-
position variant.

Relative scores decompose into four terms per head (queries q_i = W_q H_i,
content keys k_j = W_kE H_j, position keys p_ij = W_kP P_{i-j}):

    score[i, j] = q_i.k_j + q_i.p_ij + u.k_j + v.p_ij

where u is a learned global content bias and v a learned global position
bias, and the whole sum is scaled by 1/sqrt(d_model) before the softmax.
Query/key projections carry no additive bias (u and v play that role);
value and output projections do.

The encoder uses the symmetric (bidirectional, signed-distance) form, the
decoder the causal form, and the encoder-decoder interface plain
dot-product attention with no positional term at all.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .embedding import PositionalTable
from .tensor import Tensor

MODES = ("absolute", "relative_symmetric", "relative_causal", "interface")


@dataclass
class AttentionMask:
    """Which keys each query may attend to.

    ``causal`` restricts query i to keys j <= i; ``key_lengths`` (one int
    per batch row) masks padded keys. Either may be combined.
    """

    causal: bool = False
    key_lengths: Optional[np.ndarray] = None

    @property
    def kind(self) -> str:
        if self.causal and self.key_lengths is not None:
            return "causal+padding"
        if self.causal:
            return "causal"
        if self.key_lengths is not None:
            return "padding"
        return "none"

    def build(self, t_q: int, t_k: int, ndim: int = 4) -> Optional[np.ndarray]:
        """Boolean array broadcastable to ndim-ranked scores ending in
        [t_q, t_k]; True = attend."""
        parts = []
        if self.causal:
            parts.append(np.tril(np.ones((t_q, t_k), dtype=bool)))
        if self.key_lengths is not None:
            lengths = np.asarray(self.key_lengths)
            valid = np.arange(t_k)[None, :] < lengths[:, None]  # [B, t_k]
            shape = (len(lengths),) + (1,) * (ndim - 2) + (t_k,)
            parts.append(valid.reshape(shape))
        if not parts:
            return None
        out = parts[0]
        for p in parts[1:]:
            out = out & p
        return out


@dataclass
class AttentionParams:
    """Projections for one multi-head attention block.

    Weights are [d_model, d_model] with heads laid out as consecutive
    row blocks of size d_head; q/k have no bias, v/o do.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor
    n_head: int

    @property
    def d_model(self) -> int:
        return self.w_q.shape[1]

    @property
    def d_head(self) -> int:
        return self.w_q.shape[0] // self.n_head

    def tensors(self) -> dict[str, Tensor]:
        return {"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v,
                "b_v": self.b_v, "w_o": self.w_o, "b_o": self.b_o}


@dataclass
class RelativeAttentionParams(AttentionParams):
    """Adds the position-key projection and the two learned bias vectors."""

    w_kp: Tensor = None          # [d_model, d_model], applied to P rows only
    content_bias: Tensor = None  # u, [n_head, d_head]
    position_bias: Tensor = None  # v, [n_head, d_head]

    def tensors(self) -> dict[str, Tensor]:
        out = super().tensors()
        out.update({"w_kp": self.w_kp, "content_bias": self.content_bias,
                    "position_bias": self.position_bias})
        return out


def init_attention_params(d_model: int, n_head: int, rng: np.random.Generator,
                          relative: bool = False) -> AttentionParams:
    """PyTorch-linear-style uniform init, U(+-1/sqrt(fan_in))."""
    if d_model % n_head != 0:
        raise ValueError(f"n_head={n_head} must divide d_model={d_model}")
    bound = 1.0 / np.sqrt(d_model)

    def w():
        return T.parameter(rng.uniform(-bound, bound,
                                       size=(d_model, d_model)).astype(T.DEFAULT_DTYPE))

    def b():
        return T.parameter(np.zeros(d_model, dtype=T.DEFAULT_DTYPE))

    common = dict(w_q=w(), w_k=w(), w_v=w(), b_v=b(), w_o=w(), b_o=b(),
                  n_head=n_head)
    if not relative:
        return AttentionParams(**common)
    d_head = d_model // n_head
    return RelativeAttentionParams(
        **common, w_kp=w(),
        content_bias=T.parameter(np.zeros((n_head, d_head), dtype=T.DEFAULT_DTYPE)),
        position_bias=T.parameter(np.zeros((n_head, d_head), dtype=T.DEFAULT_DTYPE)))


def split_heads(x: Tensor, n_head: int) -> Tensor:
    """[B, T, d] -> [B, n_head, T, d_head]."""
    b, t, d = x.shape
    return T.transpose(T.reshape(x, (b, t, n_head, d // n_head)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """[B, n_head, T, d_head] -> [B, T, d]."""
    b, h, t, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def scaled_dot_attention(q: Tensor, k: Tensor, vvals: Tensor,
                         mask: Optional[AttentionMask] = None,
                         scale_dim: Optional[int] = None,
                         return_weights: bool = False):
    """softmax(q k^T / sqrt(scale_dim)) vvals over the last two axes.

    ``q``/``k``/``vvals`` are [..., T, d_head]-shaped (leading batch/head
    axes broadcast); ``scale_dim`` defaults to the key feature size.
    """
    if q.shape[-1] != k.shape[-1]:
        raise T.ShapeError(f"query/key feature sizes disagree: {q.shape} vs {k.shape}")
    if scale_dim is None:
        scale_dim = k.shape[-1]
    scores = T.mul(T.matmul(q, T.transpose(k, _swap_last(k.ndim))),
                   1.0 / float(np.sqrt(scale_dim)))
    bool_mask = (mask.build(q.shape[-2], k.shape[-2], scores.ndim)
                 if mask is not None else None)
    weights = T.softmax_rows(scores, bool_mask)
    out = T.matmul(weights, vvals)
    if return_weights:
        return out, weights
    return out


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def relative_scores(h_q: Tensor, h_k: Tensor, pos: PositionalTable,
                    params: RelativeAttentionParams,
                    scale_dim: Optional[int] = None) -> Tensor:
    """Four-term relative attention scores, [B, n_head, T_q, T_k], already
    scaled by 1/sqrt(d_model).

    Needs a signed positional table covering distances -(T_k-1)..(T_q-1).
    Internally the position term is computed per distance and then laid
    out on the (i, j) grid, which is algebraically identical to the direct
    per-pair evaluation.
    """
    h = params.n_head
    d_model = params.d_model if scale_dim is None else scale_dim
    t_q, t_k = h_q.shape[-2], h_k.shape[-2]

    q = split_heads(T.linear(h_q, params.w_q), h)          # [B,h,Tq,dh]
    k = split_heads(T.linear(h_k, params.w_k), h)          # [B,h,Tk,dh]

    # distances laid out hi..lo so each row of the gather index is contiguous
    hi, lo = t_q - 1, -(t_k - 1)
    dists = np.arange(hi, lo - 1, -1)
    p_rows = Tensor(pos.rows(dists).astype(h_q.dtype))     # [D, d_model]
    r = T.linear(p_rows, params.w_kp)                      # [D, d_model]
    r = T.transpose(T.reshape(r, (len(dists), h, params.d_head)), (1, 2, 0))  # [h,dh,D]

    u = T.reshape(params.content_bias, (1, h, 1, params.d_head))
    v = T.reshape(params.position_bias, (1, h, 1, params.d_head))

    content = T.matmul(T.add(q, u), T.transpose(k, (0, 1, 3, 2)))     # [B,h,Tq,Tk]
    by_dist = T.matmul(T.add(q, v), r)                                # [B,h,Tq,D]
    # column c of by_dist holds distance hi - c; entry (i, j) needs i - j
    idx = hi - (np.arange(t_q)[:, None] - np.arange(t_k)[None, :])
    by_pair = T.take_last(by_dist, idx)

    return T.mul(T.add(content, by_pair), 1.0 / float(np.sqrt(d_model)))


def multi_head_attention(query_states: Tensor, key_states: Tensor,
                         params: AttentionParams, mode: str,
                         mask: Optional[AttentionMask] = None,
                         pos: Optional[PositionalTable] = None,
                         scale_dim: Optional[int] = None) -> Tensor:
    """Full attention block: project, attend per head, concatenate, project.

    ``mode`` is one of absolute / relative_symmetric / relative_causal /
    interface. The relative modes need signed-position ``pos`` and
    :class:`RelativeAttentionParams`; interface mode never sees one.
    All modes share the 1/sqrt(d_model) score scale.
    """
    if mode not in MODES:
        raise ValueError(f"unknown attention mode {mode!r}")
    mask = mask or AttentionMask()
    if mode == "relative_causal" and not mask.causal:
        raise ValueError("relative_causal attention requires a causal mask")
    if mode in ("relative_symmetric", "interface") and mask.causal:
        raise ValueError(f"{mode} attention must not use a causal mask")
    if mode.startswith("relative"):
        if not isinstance(params, RelativeAttentionParams):
            raise ValueError(f"{mode} attention needs RelativeAttentionParams")
        if pos is None or not pos.signed:
            raise ValueError(f"{mode} attention needs a signed positional table")

    h = params.n_head
    if scale_dim is None:
        scale_dim = params.d_model
    values = split_heads(T.linear(key_states, params.w_v, params.b_v), h)

    if mode.startswith("relative"):
        scores = relative_scores(query_states, key_states, pos, params, scale_dim)
        bool_mask = mask.build(query_states.shape[-2], key_states.shape[-2])
        weights = T.softmax_rows(scores, bool_mask)
        heads = T.matmul(weights, values)
    else:
        q = split_heads(T.linear(query_states, params.w_q), h)
        k = split_heads(T.linear(key_states, params.w_k), h)
        heads = scaled_dot_attention(q, k, values, mask, scale_dim)

    return T.linear(merge_heads(heads), params.w_o, params.b_o)
