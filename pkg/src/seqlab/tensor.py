"""Dense tensors with tape-based reverse-mode automatic differentiation.

Small on purpose: exactly the operations an encoder-decoder transformer
needs, each with a hand-written backward rule. Arrays are numpy, float32
by default; gradient-check tests run the same ops in float64.

Recording model: operations executed while a :class:`Tape` is active (and
at least one input has ``requires_grad``) append a backward rule to that
tape. ``backward_pass(loss)`` replays the rules in reverse and leaves
gradients in ``Tensor.grad``. A tape is single-use; concurrent threads
must use disjoint tapes (the active-tape stack is thread-local).
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class TapeError(RuntimeError):
    """Tape misuse: backward on a consumed tape, or loss not recorded."""


class DegenerateMaskError(ValueError):
    """A softmax row had every entry masked out."""


class Tensor:
    """A dense array plus an optional gradient slot.

    ``data`` is row-major; ``grad``, once populated, always has the same
    shape. Tensors are treated as immutable once created, except that the
    optimizer updates parameter ``data`` in place between tapes.
    """

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw arrays, not Tensors")
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate_grad(self, g: np.ndarray, own: bool = False) -> None:
        """Add ``g`` into the grad slot.

        ``own=True`` promises ``g`` is a freshly allocated temporary that
        the caller will not reuse, letting the first accumulation adopt
        it instead of copying. Never pass ``own=True`` for an array that
        aliases another tensor's grad.
        """
        if self.grad is None:
            if own and g.dtype == self.data.dtype and g.shape == self.data.shape:
                self.grad = g
            else:
                self.grad = np.array(g, dtype=self.data.dtype)
                if self.grad.shape != self.data.shape:
                    self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # operator sugar used by model code
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, dtype=None) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(data, requires_grad=True, dtype=dtype)


class _TapeState(threading.local):
    def __init__(self):
        self.stack: list["Tape"] = []
        self.grad_enabled = True


_STATE = _TapeState()


class Tape:
    """Ordered record of operations for one backward pass.

    Each entry holds the output tensor and a closure that maps the
    output's gradient onto the inputs' gradients. Entries are replayed
    last-to-first by :func:`backward_pass`, after which the tape is
    consumed and cleared.
    """

    def __init__(self):
        self.entries: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        if self.consumed:
            raise TapeError("cannot re-enter a consumed tape")
        _STATE.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _STATE.stack.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.entries)


class no_grad:
    """Context manager that disables recording (evaluation mode)."""

    def __enter__(self):
        self._prev = _STATE.grad_enabled
        _STATE.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _STATE.grad_enabled = self._prev


def _active_tape() -> Optional["Tape"]:
    if _STATE.grad_enabled and _STATE.stack:
        return _STATE.stack[-1]
    return None


def _record(inputs: Sequence[Tensor], out_data: np.ndarray,
            backward: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap op output; register the backward rule if recording applies."""
    tape = _active_tape()
    out = Tensor(out_data, dtype=out_data.dtype)
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.tape = tape
        tape.entries.append((out, backward))
    return out


def backward_pass(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor the loss depends on.

    The loss must be a scalar produced under an active tape. The tape is
    consumed: running backward a second time raises :class:`TapeError`.
    """
    if loss.size != 1:
        raise ShapeError(f"backward_pass needs a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    if tape is None:
        raise TapeError("loss was not recorded on any tape")
    if tape.consumed:
        raise TapeError("tape already consumed by a previous backward_pass")
    tape.consumed = True
    loss.grad = np.ones_like(loss.data)
    for out, backward in reversed(tape.entries):
        if out.grad is not None:
            backward(out.grad)
    tape.entries.clear()


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DEFAULT_DTYPE))


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.shape)
            a._accumulate_grad(ga, own=ga is not g)
        if b.requires_grad:
            gb = _unbroadcast(g, b.shape)
            b._accumulate_grad(gb, own=gb is not g)

    return _record((a, b), out, backward)


def sub(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def backward(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.shape)
            a._accumulate_grad(ga, own=ga is not g)
        if b.requires_grad:
            b._accumulate_grad(_unbroadcast(-g, b.shape), own=True)

    return _record((a, b), out, backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate_grad(-g, own=True)

    return _record((a,), -a.data, backward)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise (broadcasting) product; ``b`` may be a python scalar."""
    if isinstance(b, (int, float)):
        s = float(b)

        def backward_scalar(g):
            if a.requires_grad:
                a._accumulate_grad(g * s, own=True)

        return _record((a,), a.data * s, backward_scalar)

    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate_grad(_unbroadcast(g * b.data, a.shape), own=True)
        if b.requires_grad:
            b._accumulate_grad(_unbroadcast(g * a.data, b.shape), own=True)

    return _record((a, b), out, backward)


def _batch_major(arr: np.ndarray) -> np.ndarray:
    """Copy a batched matrix whose batch axes are not the outermost in
    memory; such layouts knock numpy's matmul off the BLAS fast path."""
    if arr.ndim <= 2:
        return arr
    batch = arr.strides[:-2]
    if batch and min(batch) < max(arr.strides[-2:]):
        return np.ascontiguousarray(arr)
    return arr


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product, batched over leading dimensions like numpy."""
    if a.data.shape[-1] != b.data.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    out = np.matmul(_batch_major(a.data), _batch_major(b.data))

    def backward(g):
        g = _batch_major(g)
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(_batch_major(b.data), -1, -2))
            a._accumulate_grad(_unbroadcast(ga, a.shape), own=True)
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(_batch_major(a.data), -1, -2), g)
            b._accumulate_grad(_unbroadcast(gb, b.shape), own=True)

    return _record((a, b), out, backward)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def backward(g):
        # the incoming buffer is exclusively the output's and is dead after
        # this entry, so adopting a view of it is safe
        if a.requires_grad:
            a._accumulate_grad(g.reshape(a.shape), own=True)

    return _record((a,), out, backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))

    def backward(g):
        if a.requires_grad:
            a._accumulate_grad(np.ascontiguousarray(g.transpose(inverse)),
                               own=True)

    return _record((a,), out, backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = np.where(mask, a.data, 0.0).astype(a.data.dtype)

    def backward(g):
        if a.requires_grad:
            a._accumulate_grad(g * mask, own=True)

    return _record((a,), out, backward)


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def backward(g):
        if a.requires_grad:
            a._accumulate_grad(np.broadcast_to(g, a.shape).astype(a.data.dtype),
                               own=True)

    return _record((a,), out.reshape(()), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    out = np.asarray(a.data.mean(), dtype=a.data.dtype)

    def backward(g):
        if a.requires_grad:
            a._accumulate_grad(np.broadcast_to(g / n, a.shape).astype(a.data.dtype),
                               own=True)

    return _record((a,), out.reshape(()), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` with weight stored as [out_dim, in_dim]."""
    lead = x.shape[:-1]
    x2 = reshape(x, (-1, x.shape[-1])) if x.ndim != 2 else x
    wt = transpose(weight, (1, 0))
    y = matmul(x2, wt)
    if bias is not None:
        y = add(y, bias)
    if x.ndim != 2:
        y = reshape(y, lead + (weight.shape[0],))
    return y


# ---------------------------------------------------------------------------
# normalization, attention helpers, losses


def softmax_rows(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row-wise (last axis) softmax, stabilized by row-max subtraction.

    ``mask`` is a boolean array broadcastable to ``x`` with True marking
    entries allowed to receive weight; excluded entries come out exactly
    zero. A row with no allowed entry raises :class:`DegenerateMaskError`.
    """
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not mask.any(axis=-1).all():
            raise DegenerateMaskError("softmax row with all entries masked")
        z = np.where(mask, z, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    y = e / e.sum(axis=-1, keepdims=True)
    y = y.astype(x.data.dtype)

    def backward(g):
        if x.requires_grad:
            inner = (g * y).sum(axis=-1, keepdims=True)
            x._accumulate_grad(y * (g - inner), own=True)

    return _record((x,), y, backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gain.shape}/{bias.shape} "
                         f"do not match feature dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = (xhat * gain.data + bias.data).astype(x.data.dtype)

    def backward(g):
        gg = g * gain.data
        if x.requires_grad:
            m1 = gg.mean(axis=-1, keepdims=True)
            m2 = (gg * xhat).mean(axis=-1, keepdims=True)
            x._accumulate_grad(((gg - m1 - xhat * m2) * inv).astype(x.data.dtype),
                               own=True)
        if gain.requires_grad:
            gain._accumulate_grad((g * xhat).reshape(-1, d).sum(axis=0), own=True)
        if bias.requires_grad:
            bias._accumulate_grad(g.reshape(-1, d).sum(axis=0), own=True)

    return _record((x, gain, bias), out, backward)


def dropout(x: Tensor, p: float, training: bool,
            rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: zero with probability ``p``, scale keepers by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    noise_dtype = np.float32 if x.data.dtype == np.float32 else np.float64
    keep = rng.random(x.shape, dtype=noise_dtype) >= p
    scaled = np.multiply(keep, 1.0 / (1.0 - p), dtype=x.data.dtype)
    out = x.data * scaled

    def backward(g):
        if x.requires_grad:
            x._accumulate_grad(g * scaled, own=True)

    return _record((x,), out, backward)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` (shape [N, d]) by integer ids of any shape."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"ids outside embedding range [0, {table.shape[0]})")
    out = table.data[ids]

    def backward(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, table.shape[-1]))

    return _record((table,), out, backward)


def take_last(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select along the last axis: ``out[..., i, j] = x[..., i, idx[i, j]]``.

    ``idx`` must be injective within each row i (no column picked twice),
    which lets the backward pass run as a pure gather through the inverse
    map instead of a scatter-add. Used to lay out distance-indexed scores
    into a [query, key] grid.
    """
    idx = np.asarray(idx)
    rows, cols = idx.shape
    depth = x.shape[-1]
    if x.shape[-2] != rows:
        raise ShapeError(f"take_last row count {rows} does not match x {x.shape}")
    if idx.min() < 0 or idx.max() >= depth:
        raise IndexError(f"take_last indices outside [0, {depth})")
    # inverse[i, c] = j such that idx[i, j] == c (or -1)
    flat_fwd = (np.arange(rows)[:, None] * depth + idx).reshape(-1)
    if (np.bincount(flat_fwd, minlength=rows * depth) > 1).any():
        raise ValueError("take_last requires per-row injective indices")
    inverse = np.full(rows * depth, -1, dtype=np.int64)
    inverse[flat_fwd] = np.arange(rows * cols)
    valid = (inverse >= 0).reshape(rows, depth)
    inverse_safe = np.where(inverse >= 0, inverse, 0)

    lead = x.shape[:-2]
    out = x.data.reshape(lead + (rows * depth,))[..., flat_fwd] \
        .reshape(lead + (rows, cols))

    def backward(g):
        if x.requires_grad:
            gflat = g.reshape(lead + (rows * cols,))[..., inverse_safe]
            gx = np.where(valid.reshape(-1), gflat, 0.0).astype(g.dtype) \
                .reshape(lead + (rows, depth))
            x._accumulate_grad(gx, own=True)

    return _record((x,), out, backward)


def log_softmax_rows(x_data: np.ndarray) -> np.ndarray:
    """Numerically stable log-softmax over the last axis (plain numpy)."""
    zmax = x_data.max(axis=-1, keepdims=True)
    z = x_data - zmax
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, targets: np.ndarray, smoothing: float = 0.0,
                  pad_id: Optional[int] = None) -> Tensor:
    """Mean token cross-entropy of ``targets`` under ``logits``.

    ``logits`` has shape [..., V]; ``targets`` matches the leading shape.
    Positions equal to ``pad_id`` are excluded from the average. With
    label smoothing ``s`` the target distribution puts 1-s on the gold
    token and s/(V-1) on every other token.
    """
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"label smoothing must be in [0, 1), got {smoothing}")
    v = logits.shape[-1]
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"target shape {targets.shape} does not match "
                         f"logit positions {logits.shape[:-1]}")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise IndexError(f"target id outside vocabulary of size {v}")

    flat_logits = logits.data.reshape(-1, v)
    flat_targets = targets.reshape(-1)
    keep = np.ones_like(flat_targets, dtype=bool) if pad_id is None \
        else flat_targets != pad_id
    n_valid = int(keep.sum())
    if n_valid == 0:
        raise ValueError("cross_entropy: every position is padding")

    logp = log_softmax_rows(flat_logits)
    nll = -logp[np.arange(flat_targets.size), flat_targets]
    if smoothing > 0.0:
        off = smoothing / (v - 1)
        # (1-s)*nll_gold + off * sum_{w != gold} -logp_w
        loss_terms = (1.0 - smoothing) * nll + off * (-logp.sum(axis=-1) - nll)
    else:
        loss_terms = nll
    out = np.asarray((loss_terms * keep).sum() / n_valid, dtype=logits.data.dtype)

    def backward(g):
        if logits.requires_grad:
            probs = np.exp(logp)
            tdist = np.zeros_like(probs)
            if smoothing > 0.0:
                tdist += smoothing / (v - 1)
                tdist[np.arange(flat_targets.size), flat_targets] = 1.0 - smoothing
            else:
                tdist[np.arange(flat_targets.size), flat_targets] = 1.0
            gflat = (probs - tdist) * (keep[:, None] * (float(g) / n_valid))
            logits._accumulate_grad(
                gflat.reshape(logits.shape).astype(logits.data.dtype), own=True)

    return _record((logits,), out.reshape(()), backward)


def parameters_size(params: Iterable[Tensor]) -> int:
    return sum(p.size for p in params)
