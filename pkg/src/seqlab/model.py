"""Encoder-decoder transformer assembly and greedy decoding.

Four variants: {standard, universal} x {absolute, relative}. "universal"
means one physical layer parameter set applied n_layers times (no
per-step embedding, no adaptive halting). Relative variants use signed
distance attention in encoder (bidirectional) and decoder (causal) and
plain positionless attention at the encoder-decoder interface; they add
no absolute position embedding anywhere. Post-norm residual layout,
ReLU feed-forward, decoder target embedding tied to the output softmax
matrix.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .attention import (AttentionMask, AttentionParams, RelativeAttentionParams,
                        init_attention_params, multi_head_attention)
from .data import Batch
from .embedding import (BOS_ID, EOS_ID, EmbeddingTable, PositionalTable,
                        ScalingScheme, Vocabulary, embed_scaled, init_embedding,
                        sinusoidal_pe)
from .tensor import Tensor

VARIANTS = ("standard", "universal")
POSITIONAL = ("absolute", "relative")
DECODE_MODES = ("plus_eos", "plus_eos_oracle", "minus_eos_oracle")

CHECKPOINT_MAGIC = b"SEQLABCK"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    d_model: int = 128
    d_ff: int = 256
    n_head: int = 8
    n_layers: int = 3
    variant: str = "standard"
    positional: str = "absolute"
    scaling: ScalingScheme = ScalingScheme.NO_SCALING
    dropout: float = 0.1
    max_len: int = 512
    norm_style: str = "post"  # only post-norm is implemented; flag recorded

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.positional not in POSITIONAL:
            raise ValueError(f"positional must be one of {POSITIONAL}, "
                             f"got {self.positional!r}")
        if self.norm_style != "post":
            raise ValueError("only post-norm is implemented")
        if self.d_model % self.n_head:
            raise ValueError(f"n_head={self.n_head} must divide d_model={self.d_model}")
        if self.d_model % 2:
            raise ValueError("d_model must be even for sinusoidal tables")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.n_layers < 1 or self.d_ff < 1 or self.max_len < 1:
            raise ValueError("n_layers, d_ff and max_len must be positive")

    @property
    def relative(self) -> bool:
        return self.positional == "relative"

    def to_dict(self) -> dict:
        out = self.__dict__.copy()
        out["scaling"] = self.scaling.value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["scaling"] = ScalingScheme.parse(d["scaling"])
        config = cls(**d)
        config.validate()
        return config


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {"gain": self.gain, "bias": self.bias}


@dataclass
class EncoderLayer:
    attn: AttentionParams
    ff: FeedForwardParams
    ln_attn: LayerNormParams
    ln_ff: LayerNormParams

    def named_tensors(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = []
        for group, params in (("attn", self.attn), ("ff", self.ff),
                              ("ln_attn", self.ln_attn), ("ln_ff", self.ln_ff)):
            out.extend((f"{prefix}.{group}.{k}", v) for k, v in params.tensors().items())
        return out


@dataclass
class DecoderLayer:
    self_attn: AttentionParams
    cross_attn: AttentionParams
    ff: FeedForwardParams
    ln_self: LayerNormParams
    ln_cross: LayerNormParams
    ln_ff: LayerNormParams

    def named_tensors(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = []
        for group, params in (("self_attn", self.self_attn),
                              ("cross_attn", self.cross_attn), ("ff", self.ff),
                              ("ln_self", self.ln_self), ("ln_cross", self.ln_cross),
                              ("ln_ff", self.ln_ff)):
            out.extend((f"{prefix}.{group}.{k}", v) for k, v in params.tensors().items())
        return out


def _init_ff(d_model: int, d_ff: int, rng: np.random.Generator) -> FeedForwardParams:
    b1 = 1.0 / np.sqrt(d_model)
    b2 = 1.0 / np.sqrt(d_ff)
    return FeedForwardParams(
        w1=T.parameter(rng.uniform(-b1, b1, size=(d_ff, d_model)).astype(T.DEFAULT_DTYPE)),
        b1=T.parameter(rng.uniform(-b1, b1, size=d_ff).astype(T.DEFAULT_DTYPE)),
        w2=T.parameter(rng.uniform(-b2, b2, size=(d_model, d_ff)).astype(T.DEFAULT_DTYPE)),
        b2=T.parameter(rng.uniform(-b2, b2, size=d_model).astype(T.DEFAULT_DTYPE)))


def _init_ln(d_model: int) -> LayerNormParams:
    return LayerNormParams(gain=T.parameter(np.ones(d_model, dtype=T.DEFAULT_DTYPE)),
                           bias=T.parameter(np.zeros(d_model, dtype=T.DEFAULT_DTYPE)))


@dataclass
class Seq2SeqModel:
    """Built transformer: embeddings, layer parameters, position tables.

    ``tgt_embed.weights`` doubles as the output projection (tied); the
    encoder/decoder lists hold the *physical* layers — one entry under
    weight sharing — while the stacks below expand them to n_layers
    applications.
    """

    config: ModelConfig
    vocab: Vocabulary
    src_embed: EmbeddingTable
    tgt_embed: EmbeddingTable
    pe_abs: PositionalTable
    pe_rel: Optional[PositionalTable]
    enc_layers: list[EncoderLayer]
    dec_layers: list[DecoderLayer]
    eos_trained: bool = True
    max_train_target_len: Optional[int] = None

    def encoder_stack(self) -> list[EncoderLayer]:
        if self.config.variant == "universal":
            return [self.enc_layers[0]] * self.config.n_layers
        return self.enc_layers

    def decoder_stack(self) -> list[DecoderLayer]:
        if self.config.variant == "universal":
            return [self.dec_layers[0]] * self.config.n_layers
        return self.dec_layers

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("src_embed", self.src_embed.weights),
               ("tgt_embed", self.tgt_embed.weights)]
        for i, layer in enumerate(self.enc_layers):
            out.extend(layer.named_tensors(f"enc.{i}"))
        for i, layer in enumerate(self.dec_layers):
            out.extend(layer.named_tensors(f"dec.{i}"))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def n_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    @property
    def output_weights(self) -> Tensor:
        """Output softmax matrix; same storage as the target embedding."""
        return self.tgt_embed.weights

    def decode_step_cap(self) -> int:
        """Default decode budget: twice the longest training output plus
        ten, or the position-table limit when training lengths are unknown."""
        if self.max_train_target_len is not None:
            return 2 * self.max_train_target_len + 10
        return self.config.max_len


def build_model(config: ModelConfig, src_vocab: Vocabulary,
                tgt_vocab: Optional[Vocabulary] = None,
                rng: Optional[np.random.Generator] = None) -> Seq2SeqModel:
    """Initialize all parameters. ``tgt_vocab=None`` (the default setup)
    shares one joint vocabulary between the two sides."""
    config.validate()
    if rng is None:
        raise ValueError("build_model needs an explicit rng for reproducibility")
    tgt_vocab = tgt_vocab or src_vocab
    relative = config.relative

    n_physical = 1 if config.variant == "universal" else config.n_layers
    enc_layers, dec_layers = [], []
    for _ in range(n_physical):
        enc_layers.append(EncoderLayer(
            attn=init_attention_params(config.d_model, config.n_head, rng,
                                       relative=relative),
            ff=_init_ff(config.d_model, config.d_ff, rng),
            ln_attn=_init_ln(config.d_model), ln_ff=_init_ln(config.d_model)))
    for _ in range(n_physical):
        dec_layers.append(DecoderLayer(
            self_attn=init_attention_params(config.d_model, config.n_head, rng,
                                            relative=relative),
            cross_attn=init_attention_params(config.d_model, config.n_head, rng,
                                             relative=False),
            ff=_init_ff(config.d_model, config.d_ff, rng),
            ln_self=_init_ln(config.d_model), ln_cross=_init_ln(config.d_model),
            ln_ff=_init_ln(config.d_model)))

    return Seq2SeqModel(
        config=config,
        vocab=src_vocab,
        src_embed=init_embedding(src_vocab, config.d_model, config.scaling, rng),
        tgt_embed=init_embedding(tgt_vocab, config.d_model, config.scaling, rng),
        pe_abs=sinusoidal_pe(config.max_len, config.d_model, signed=False),
        pe_rel=sinusoidal_pe(config.max_len, config.d_model, signed=True),
        enc_layers=enc_layers, dec_layers=dec_layers)


# ---------------------------------------------------------------------------
# forward passes


def _feed_forward(h: Tensor, ff: FeedForwardParams, p: float, training: bool,
                  rng) -> Tensor:
    inner = T.relu(T.linear(h, ff.w1, ff.b1))
    inner = T.dropout(inner, p, training, rng)
    return T.linear(inner, ff.w2, ff.b2)


def _sublayer(h: Tensor, out: Tensor, ln: LayerNormParams, p: float,
              training: bool, rng) -> Tensor:
    return T.layer_norm(T.add(h, T.dropout(out, p, training, rng)),
                        ln.gain, ln.bias)


def encode(model: Seq2SeqModel, src_ids: np.ndarray,
           src_lengths: Optional[np.ndarray] = None, training: bool = False,
           rng=None) -> Tensor:
    """Run the encoder over padded source ids [B, T_src]."""
    cfg = model.config
    use_abs = not cfg.relative
    h = embed_scaled(model.src_embed, model.pe_abs if use_abs else None,
                     src_ids, use_absolute_pe=use_abs)
    mask = AttentionMask(key_lengths=src_lengths)
    mode = "relative_symmetric" if cfg.relative else "absolute"
    for layer in model.encoder_stack():
        a = multi_head_attention(h, h, layer.attn, mode, mask,
                                 pos=model.pe_rel, scale_dim=cfg.d_model)
        h = _sublayer(h, a, layer.ln_attn, cfg.dropout, training, rng)
        f = _feed_forward(h, layer.ff, cfg.dropout, training, rng)
        h = _sublayer(h, f, layer.ln_ff, cfg.dropout, training, rng)
    return h


def decode_states(model: Seq2SeqModel, enc_out: Tensor, dec_in: np.ndarray,
                  src_lengths: Optional[np.ndarray] = None,
                  tgt_lengths: Optional[np.ndarray] = None,
                  training: bool = False, rng=None) -> Tensor:
    """Teacher-forced decoder states for padded decoder inputs [B, T_tgt]."""
    cfg = model.config
    use_abs = not cfg.relative
    h = embed_scaled(model.tgt_embed, model.pe_abs if use_abs else None,
                     dec_in, use_absolute_pe=use_abs)
    self_mask = AttentionMask(causal=True, key_lengths=tgt_lengths)
    cross_mask = AttentionMask(key_lengths=src_lengths)
    mode = "relative_causal" if cfg.relative else "absolute"
    for layer in model.decoder_stack():
        a = multi_head_attention(h, h, layer.self_attn, mode, self_mask,
                                 pos=model.pe_rel, scale_dim=cfg.d_model)
        h = _sublayer(h, a, layer.ln_self, cfg.dropout, training, rng)
        c = multi_head_attention(h, enc_out, layer.cross_attn, "interface",
                                 cross_mask, scale_dim=cfg.d_model)
        h = _sublayer(h, c, layer.ln_cross, cfg.dropout, training, rng)
        f = _feed_forward(h, layer.ff, cfg.dropout, training, rng)
        h = _sublayer(h, f, layer.ln_ff, cfg.dropout, training, rng)
    return h


def output_logits(model: Seq2SeqModel, dec_states: Tensor) -> Tensor:
    """Tied projection onto the vocabulary: states @ tgt_embed^T."""
    return T.linear(dec_states, model.output_weights)


def forward_batch(model: Seq2SeqModel, batch: Batch, training: bool = False,
                  rng=None) -> Tensor:
    """Logits [B, T_tgt, V] for a padded batch (teacher forcing)."""
    if batch.src.shape[1] > model.config.max_len or \
            batch.tgt.shape[1] > model.config.max_len:
        raise ValueError(f"batch exceeds max_len={model.config.max_len}")
    enc_out = encode(model, batch.src, batch.src_lengths, training, rng)
    states = decode_states(model, enc_out, batch.dec_in, batch.src_lengths,
                           batch.tgt_lengths, training, rng)
    return output_logits(model, states)


def forward_train(model: Seq2SeqModel, src_ids: Sequence[int],
                  tgt_ids: Sequence[int], training: bool = False,
                  rng=None) -> Tensor:
    """Teacher-forced logits [T_tgt, V] for one pair of id sequences.

    ``tgt_ids`` is the full target (including the end marker when the
    model was trained with one); the decoder input is the start marker
    followed by the first T_tgt-1 target ids.
    """
    src = np.asarray(src_ids, dtype=np.int64)[None]
    tgt = np.asarray(tgt_ids, dtype=np.int64)
    if src.shape[1] > model.config.max_len or tgt.size > model.config.max_len:
        raise ValueError(f"sequence exceeds max_len={model.config.max_len}")
    dec_in = np.concatenate([[BOS_ID], tgt[:-1]])[None]
    batch = Batch(src=src, src_lengths=np.array([src.shape[1]]),
                  dec_in=dec_in, tgt=tgt[None],
                  tgt_lengths=np.array([tgt.size]), with_eos=model.eos_trained)
    vocab_size = model.tgt_embed.weights.shape[0]
    return T.reshape(forward_batch(model, batch, training, rng),
                     (tgt.size, vocab_size))


# ---------------------------------------------------------------------------
# incremental greedy decoding (no tape; plain numpy with per-layer caches)


class _LayerCache:
    __slots__ = ("k_self", "v_self", "k_cross", "v_cross", "pos_keys")

    def __init__(self):
        self.k_self = None   # [B, h, t, dh], grows
        self.v_self = None
        self.k_cross = None  # [B, h, T_src, dh], fixed
        self.v_cross = None
        self.pos_keys = None  # [max_steps, h, dh]: W_kP P_d rows by distance


def _split_heads_np(x: np.ndarray, n_head: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, n_head, d // n_head).transpose(0, 2, 1, 3)


def _attend_np(scores: np.ndarray, values: np.ndarray,
               key_mask: Optional[np.ndarray]) -> np.ndarray:
    if key_mask is not None:
        scores = np.where(key_mask[:, None, None, :], scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    return np.matmul(w, values)


def _decode_step(model: Seq2SeqModel, caches: list[_LayerCache],
                 token_ids: np.ndarray, step: int, enc_out: np.ndarray,
                 src_mask: Optional[np.ndarray]) -> np.ndarray:
    """Advance one position; returns logits [B, V]."""
    cfg = model.config
    h_heads = cfg.n_head
    dh = cfg.d_model // h_heads
    scale = 1.0 / np.sqrt(cfg.d_model)

    x = model.tgt_embed.weights.data[token_ids][:, None, :]  # [B, 1, d]
    if model.tgt_embed.scheme is ScalingScheme.TOKEN_UPSCALE:
        x = x * np.sqrt(cfg.d_model)
    if not cfg.relative:
        pos_row = model.pe_abs.rows(np.array([step]))
        if model.tgt_embed.scheme is ScalingScheme.POSITION_DOWNSCALE:
            pos_row = pos_row / np.sqrt(cfg.d_model)
        x = x + pos_row[None]

    def layer_norm_np(arr, ln):
        mu = arr.mean(axis=-1, keepdims=True)
        var = arr.var(axis=-1, keepdims=True)
        return (arr - mu) / np.sqrt(var + 1e-5) * ln.gain.data + ln.bias.data

    for layer, cache in zip(model.decoder_stack(), caches):
        attn = layer.self_attn
        q = _split_heads_np(x @ attn.w_q.data.T, h_heads)        # [B,h,1,dh]
        k_new = _split_heads_np(x @ attn.w_k.data.T, h_heads)
        v_new = _split_heads_np(x @ attn.w_v.data.T + attn.b_v.data, h_heads)
        cache.k_self = k_new if cache.k_self is None else \
            np.concatenate([cache.k_self, k_new], axis=2)
        cache.v_self = v_new if cache.v_self is None else \
            np.concatenate([cache.v_self, v_new], axis=2)

        if cfg.relative:
            u = attn.content_bias.data[None, :, None, :]
            v_bias = attn.position_bias.data[None, :, None, :]
            content = np.matmul(q + u, cache.k_self.transpose(0, 1, 3, 2))
            # distances step..0 for keys 0..step
            rel = cache.pos_keys[step::-1]                        # [t+1, h, dh]
            pos = np.einsum("bhod,thd->bhot", q + v_bias, rel)
            scores = (content + pos) * scale
        else:
            scores = np.matmul(q, cache.k_self.transpose(0, 1, 3, 2)) * scale
        a = _attend_np(scores, cache.v_self, None)                # [B,h,1,dh]
        a = a.transpose(0, 2, 1, 3).reshape(x.shape[0], 1, cfg.d_model)
        x = layer_norm_np(x + (a @ layer.self_attn.w_o.data.T
                               + layer.self_attn.b_o.data), layer.ln_self)

        cross = layer.cross_attn
        if cache.k_cross is None:
            cache.k_cross = _split_heads_np(enc_out @ cross.w_k.data.T, h_heads)
            cache.v_cross = _split_heads_np(
                enc_out @ cross.w_v.data.T + cross.b_v.data, h_heads)
        qc = _split_heads_np(x @ cross.w_q.data.T, h_heads)
        scores = np.matmul(qc, cache.k_cross.transpose(0, 1, 3, 2)) * scale
        c = _attend_np(scores, cache.v_cross, src_mask)
        c = c.transpose(0, 2, 1, 3).reshape(x.shape[0], 1, cfg.d_model)
        x = layer_norm_np(x + (c @ cross.w_o.data.T + cross.b_o.data),
                          layer.ln_cross)

        ff = layer.ff
        inner = np.maximum(x @ ff.w1.data.T + ff.b1.data, 0.0)
        x = layer_norm_np(x + (inner @ ff.w2.data.T + ff.b2.data), layer.ln_ff)

    return (x[:, 0, :] @ model.output_weights.data.T)


def greedy_decode_batch(model: Seq2SeqModel, src: np.ndarray,
                        src_lengths: np.ndarray, mode: str,
                        gold_lens: Optional[np.ndarray] = None,
                        max_steps: Optional[int] = None
                        ) -> tuple[list[list[int]], np.ndarray]:
    """Greedy decode a whole padded batch.

    Returns (sequences, eos_emitted flags). Sequences never include the
    end marker itself. Modes:

      plus_eos          stop per sample at the first end marker (or at
                        max_steps without one)
      plus_eos_oracle   end marker removed from the candidate set; emit
                        exactly gold_lens[i] tokens
      minus_eos_oracle  same, but only valid for models trained without
                        end markers in the target
    """
    if mode not in DECODE_MODES:
        raise ValueError(f"unknown decode mode {mode!r}")
    oracle = mode in ("plus_eos_oracle", "minus_eos_oracle")
    if oracle and gold_lens is None:
        raise ValueError(f"{mode} requires gold target lengths")
    if mode == "minus_eos_oracle" and model.eos_trained:
        raise ValueError("minus_eos_oracle needs a model trained without "
                         "end markers in the target vocabulary")
    if mode in ("plus_eos", "plus_eos_oracle") and not model.eos_trained:
        raise ValueError(f"{mode} needs a model trained to emit end markers")
    if max_steps is None:
        max_steps = model.decode_step_cap()
    total_steps = int(max(gold_lens)) if oracle else max_steps
    total_steps = min(total_steps, model.config.max_len - 1)

    batch_size = src.shape[0]
    with T.no_grad():
        enc_out = encode(model, src, src_lengths).data
    src_mask = np.arange(src.shape[1])[None, :] < src_lengths[:, None]

    caches = [_LayerCache() for _ in model.decoder_stack()]
    if model.config.relative:
        dists = np.arange(total_steps + 1)
        for layer, cache in zip(model.decoder_stack(), caches):
            rows = model.pe_rel.rows(dists) @ layer.self_attn.w_kp.data.T
            cache.pos_keys = rows.reshape(len(dists), model.config.n_head, -1)

    sequences: list[list[int]] = [[] for _ in range(batch_size)]
    eos_emitted = np.zeros(batch_size, dtype=bool)
    finished = np.zeros(batch_size, dtype=bool)
    tokens = np.full(batch_size, BOS_ID, dtype=np.int64)

    for step in range(total_steps):
        logits = _decode_step(model, caches, tokens, step, enc_out, src_mask)
        if oracle:
            logits[:, EOS_ID] = -np.inf
        chosen = logits.argmax(axis=-1)
        for i in range(batch_size):
            if finished[i]:
                continue
            tok = int(chosen[i])
            if oracle:
                if len(sequences[i]) < int(gold_lens[i]):
                    sequences[i].append(tok)
                if len(sequences[i]) >= int(gold_lens[i]):
                    finished[i] = True
            else:
                if tok == EOS_ID:
                    eos_emitted[i] = True
                    finished[i] = True
                else:
                    sequences[i].append(tok)
        if finished.all():
            break
        tokens = chosen
    return sequences, eos_emitted


def greedy_decode(model: Seq2SeqModel, src_ids: Sequence[int], mode: str,
                  gold_len: Optional[int] = None,
                  max_steps: Optional[int] = None) -> list[int]:
    """Greedy decode one source sequence; see :func:`greedy_decode_batch`."""
    src = np.asarray(src_ids, dtype=np.int64)[None]
    lens = np.array([len(src_ids)])
    gold = None if gold_len is None else np.array([gold_len])
    sequences, _ = greedy_decode_batch(model, src, lens, mode, gold, max_steps)
    return sequences[0]


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: Seq2SeqModel, path) -> None:
    """Versioned container: magic, JSON header (config, vocab, tensor
    index), then raw little-endian tensor bytes."""
    tensors = model.named_parameters()
    index = []
    offset = 0
    blobs = []
    for name, t in tensors:
        blob = np.ascontiguousarray(t.data.astype("<f4")).tobytes()
        index.append({"name": name, "shape": list(t.shape),
                      "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "config": model.config.to_dict(),
        "vocab": list(model.vocab.id_to_token),
        "eos_trained": model.eos_trained,
        "max_train_target_len": model.max_train_target_len,
        "tensors": index,
    }
    payload = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Seq2SeqModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a model checkpoint (bad magic)")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        data = fh.read()

    config = ModelConfig.from_dict(header["config"])
    vocab = Vocabulary(header["vocab"][4:])
    model = build_model(config, vocab, rng=np.random.default_rng(0))
    model.eos_trained = header["eos_trained"]
    model.max_train_target_len = header["max_train_target_len"]
    by_name = dict(model.named_parameters())
    seen = set()
    for entry in header["tensors"]:
        name = entry["name"]
        if name not in by_name:
            raise ValueError(f"checkpoint tensor {name!r} not in model")
        arr = np.frombuffer(data, dtype="<f4", count=entry["nbytes"] // 4,
                            offset=entry["offset"])
        by_name[name].data = arr.reshape(entry["shape"]).astype(T.DEFAULT_DTYPE)
        seen.add(name)
    missing = set(by_name) - seen
    if missing:
        raise ValueError(f"checkpoint is missing tensors: {sorted(missing)}")
    return model
