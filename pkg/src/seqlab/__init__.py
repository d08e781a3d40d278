"""Desk-scale encoder-decoder transformer laboratory.

Implements and compares relative-position attention, cross-layer weight
sharing, embedding scaling schemes, end-marker decoding modes, and
accuracy-based model selection on length-generalization splits.
"""

from .data import Batch, ResplitSpec, SeqPair, load_pairs, scan_length_resplit
from .embedding import (EmbeddingTable, PositionalTable, ScalingScheme,
                        Vocabulary, build_vocab, embed_scaled, init_embedding,
                        sinusoidal_pe)
from .model import (ModelConfig, Seq2SeqModel, build_model, forward_train,
                    greedy_decode, load_checkpoint, save_checkpoint)
from .tensor import Tape, Tensor, backward_pass, no_grad
from .train import (EvalReport, TrainConfig, adam_step, early_stopping_select,
                    evaluate, exact_match, good_bad_decomposition, noam_lr,
                    train_loop)

__version__ = "0.1.0"

__all__ = [
    "Batch", "ResplitSpec", "SeqPair", "load_pairs", "scan_length_resplit",
    "EmbeddingTable", "PositionalTable", "ScalingScheme", "Vocabulary",
    "build_vocab", "embed_scaled", "init_embedding", "sinusoidal_pe",
    "ModelConfig", "Seq2SeqModel", "build_model", "forward_train",
    "greedy_decode", "load_checkpoint", "save_checkpoint",
    "Tape", "Tensor", "backward_pass", "no_grad",
    "EvalReport", "TrainConfig", "adam_step", "early_stopping_select",
    "evaluate", "exact_match", "good_bad_decomposition", "noam_lr",
    "train_loop",
]
