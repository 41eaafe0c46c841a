"""
Lexical transfer: embedding swap, freeze plans, fine-tuning and prediction
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .data import LabeledExample, label_counts
from .embeddings import EmbeddingError, EmbeddingTable
from .metrics import f1_score
from .model import INIT_STD, ModelParameters, classify, pad_batch
from .seeding import derive_rng
from .tokenizer import N_SPECIALS, Vocabulary, encode

logger = logging.getLogger(__name__)

PRESETS = ("none", "token_embeddings", "encoder_all", "embeddings_random")
TRAINABLE_UNDER_ENCODER_ALL = ("token_embeddings", "cls_head")


@dataclass(frozen=True)
class FreezePlan:
    """Parameter groups excluded from optimizer updates"""
    frozen_groups: FrozenSet[str] = frozenset()
    randomize_embeddings: bool = False
    name: str = "custom"

    def __post_init__(self):
        if "cls_head" in self.frozen_groups:
            raise ValueError("cls_head can never be frozen")

    @classmethod
    def preset(cls, name: str, params: ModelParameters) -> "FreezePlan":
        """
        Resolve a named preset against the groups of a model.

        none: nothing frozen. token_embeddings: the swapped-in table stays fixed.
        encoder_all: everything except token_embeddings and cls_head.
        embeddings_random: nothing frozen, token embeddings re-drawn before training.
        """
        if name == "none":
            return cls(frozenset(), name=name)
        if name == "token_embeddings":
            return cls(frozenset({"token_embeddings"}), name=name)
        if name == "encoder_all":
            groups = {g for g in params.group_names() if g not in TRAINABLE_UNDER_ENCODER_ALL}
            return cls(frozenset(groups), name=name)
        if name == "embeddings_random":
            return cls(frozenset(), randomize_embeddings=True, name=name)
        raise ValueError(f"Unknown freeze plan {name!r}, expected one of {PRESETS}")


@dataclass
class FineTuneConfig:
    lr: float = 2e-5
    batch_size: int = 32
    max_len: int = 180
    epochs: int = 3
    seed: int = 0

    def validate(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_len < 2:
            raise ValueError(f"max_len must be >= 2, got {self.max_len}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


def swap_embeddings(params: ModelParameters, new_vocab: Vocabulary, table: EmbeddingTable,
                    seed: int = 0) -> ModelParameters:
    """
    Replace the token embeddings with a table trained for another vocabulary.

    Special-token rows are re-drawn from normal(0, 0.02). The MLM decoder is
    untied and starts as a copy of the new table. Every other group is kept as is.

    Args:
        params: Source model
        new_vocab: Target vocabulary
        table: Embeddings bound to new_vocab
        seed: Seed for the special-token rows

    Returns:
        New ModelParameters
    """
    d = params.config.d_model
    if table.d != d:
        raise EmbeddingError(f"Embedding width {table.d} does not match model width d_model={d}")
    table.check_bound(new_vocab)

    embeddings = table.matrix.copy()
    embeddings[:N_SPECIALS] = derive_rng(seed, "swap", "specials").normal(0.0, INIT_STD, size=(N_SPECIALS, d))
    tensors = dict(params.tensors)
    tensors["token_embeddings.weight"] = embeddings
    tensors["mlm_head.decoder"] = embeddings.T.copy()
    tensors["mlm_head.bias"] = np.zeros(len(new_vocab))
    config = replace(params.config, vocab_size=len(new_vocab), tie_mlm_head=False)
    logger.info(f"Swapped token embeddings: {params.config.vocab_size} -> {len(new_vocab)} tokens")
    return ModelParameters(config=config, tensors=tensors, vocab_hash=new_vocab.hash)


def encode_examples(vocab: Vocabulary, examples: Sequence[LabeledExample], max_len: int) -> List[List[int]]:
    return [encode(vocab, ex.text, max_len=max_len).ids for ex in examples]


def _logits(params: ModelParameters, sequences: Sequence[Sequence[int]]) -> np.ndarray:
    ids, mask = pad_batch(sequences)
    return classify(params, ids, mask).data


def predict(params: ModelParameters, vocab: Vocabulary, examples: Sequence[LabeledExample],
            max_len: int = 180, batch_size: int = 32) -> np.ndarray:
    """Predicted labels (argmax of the class logits, ties to 0)"""
    max_len = min(max_len, params.config.max_seq_len)
    sequences = encode_examples(vocab, examples, max_len)
    preds = []
    for start in range(0, len(sequences), batch_size):
        preds.append(np.argmax(_logits(params, sequences[start:start + batch_size]), axis=-1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(params: ModelParameters, vocab: Vocabulary, examples: Sequence[LabeledExample],
             max_len: int = 180, batch_size: int = 32) -> float:
    preds = predict(params, vocab, examples, max_len, batch_size)
    return f1_score(preds, [ex.label for ex in examples])


def fine_tune(params: ModelParameters, plan: FreezePlan, train: Sequence[LabeledExample],
              dev: Sequence[LabeledExample], cfg: FineTuneConfig,
              vocab: Vocabulary) -> Tuple[ModelParameters, List[Dict]]:
    """
    Train the classifier with cross-entropy on the CLS logits.

    Args:
        params: Starting weights (not modified)
        plan: Groups to keep fixed
        train: Training examples, both labels present
        dev: Development examples scored after every epoch
        cfg: Optimizer and loop settings
        vocab: Vocabulary used to encode the texts

    Returns:
        (fine-tuned parameters, one {"epoch", "train_loss", "dev_f1"} record per epoch)
    """
    cfg.validate()
    if not train:
        raise ValueError("Training set is empty")
    if min(label_counts(train)) == 0:
        raise ValueError(f"Training set has a single class (counts {label_counts(train)})")

    tensors = dict(params.tensors)
    if plan.randomize_embeddings:
        shape = tensors["token_embeddings.weight"].shape
        tensors["token_embeddings.weight"] = derive_rng(cfg.seed, "finetune", "random_embeddings").normal(
            0.0, INIT_STD, size=shape)
    frozen = params.names_in(plan.frozen_groups)
    max_len = min(cfg.max_len, params.config.max_seq_len)
    sequences = encode_examples(vocab, train, max_len)
    labels = np.array([ex.label for ex in train], dtype=np.int64)
    dropout_rng = derive_rng(cfg.seed, "finetune", "dropout")
    state = ad.AdamState()
    history: List[Dict] = []

    for epoch in range(cfg.epochs):
        order = derive_rng(cfg.seed, "finetune", "shuffle", epoch).permutation(len(sequences))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            picks = order[start:start + cfg.batch_size]
            ids, mask = pad_batch([sequences[i] for i in picks])
            current = params.replace(tensors)
            loss = ad.cross_entropy(classify(current, ids, mask, training=True, rng=dropout_rng), labels[picks])
            grads = ad.backward(loss, params=tensors)
            tensors, state = ad.adam_step(tensors, grads, state, cfg.lr, frozen=frozen)
            losses.append(loss.item())
        current = params.replace(tensors)
        dev_f1 = evaluate(current, vocab, dev, max_len, cfg.batch_size) if dev else None
        record = {"epoch": epoch + 1, "train_loss": float(np.mean(losses)), "dev_f1": dev_f1}
        history.append(record)
        logger.info(f"Epoch {epoch + 1}/{cfg.epochs}: train loss {record['train_loss']:.4f}, dev F1 {dev_f1}")

    return params.replace(tensors), history
