"""
Source-language pre-training loop for the MLM, TLM and PLM objectives
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .model import (ModelParameters, apply_mlm_masking, build_permutation_batch, mlm_loss, plm_loss,
                    tlm_loss)
from .seeding import derive_rng
from .tokenizer import CLS, SEP

logger = logging.getLogger(__name__)

OBJECTIVES = ("mlm", "tlm", "plm")


@dataclass
class PretrainConfig:
    steps: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    mask_prob: float = 0.15
    predict_frac: float = 1 / 6
    log_every: int = 50

    def validate(self):
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")


def _clip(seq: Sequence[int], max_len: int) -> List[int]:
    """Truncate a CLS ... SEP sequence, keeping SEP last"""
    seq = list(seq)
    if len(seq) <= max_len:
        return seq
    return seq[:max_len - 1] + [SEP] if seq[-1] == SEP else seq[:max_len]


def objective_loss(params: ModelParameters, objective: str, sequences: Sequence[Sequence[int]],
                   cfg: PretrainConfig, rng: np.random.Generator, training: bool = True,
                   dropout_rng: Optional[np.random.Generator] = None,
                   parallel: Optional[Sequence[Tuple[Sequence[int], Sequence[int]]]] = None) -> ad.Tensor:
    """Loss of one batch under the given objective"""
    if objective == "mlm":
        batch = apply_mlm_masking(sequences, cfg.mask_prob, rng)
        return mlm_loss(params, batch, training, dropout_rng)
    if objective == "plm":
        batch = build_permutation_batch(sequences, cfg.predict_frac, rng)
        return plm_loss(params, batch, training, dropout_rng)
    if objective == "tlm":
        src = [pair[0] for pair in parallel]
        tgt = [pair[1] for pair in parallel]
        return tlm_loss(params, src, tgt, cfg.mask_prob, rng, training, dropout_rng)
    raise ValueError(f"Unknown objective {objective!r}, expected one of {OBJECTIVES}")


def _fit_pair(src: Sequence[int], tgt: Sequence[int], max_seq_len: int) -> Tuple[List[int], List[int]]:
    budget = max_seq_len - 3
    src, tgt = list(src), list(tgt)
    while len(src) + len(tgt) > budget:
        if len(src) >= len(tgt):
            src.pop()
        else:
            tgt.pop()
    return src, tgt


def pretrain(params: ModelParameters, corpus: Sequence[Sequence[int]], objective: str,
             cfg: Optional[PretrainConfig] = None, seed: int = 0,
             parallel: Optional[Sequence[Tuple[Sequence[int], Sequence[int]]]] = None
             ) -> Tuple[ModelParameters, List[float]]:
    """
    Train all parameters on an unlabeled corpus with Adam.

    Args:
        params: Starting weights (not modified)
        corpus: CLS ... SEP id sequences (mlm / plm)
        objective: "mlm", "tlm" or "plm"
        cfg: Loop hyperparameters
        seed: Run seed
        parallel: (src ids, tgt ids) pairs without specials, required for tlm

    Returns:
        (trained parameters, loss per step)
    """
    cfg = cfg or PretrainConfig()
    cfg.validate()
    if objective not in OBJECTIVES:
        raise ValueError(f"Unknown objective {objective!r}, expected one of {OBJECTIVES}")
    max_len = params.config.max_seq_len
    if objective == "tlm":
        if not parallel:
            raise ValueError("tlm pre-training needs parallel pairs")
        pool = [_fit_pair(src, tgt, max_len) for src, tgt in parallel]
    else:
        pool = [_clip(seq, max_len) for seq in corpus if len(seq) > 0]
        if not pool:
            raise ValueError("Cannot pre-train on an empty corpus")
        if objective == "plm" and all(all(t == CLS or t == SEP for t in seq) for seq in pool):
            raise ValueError("Corpus has no content tokens to predict")

    batch_rng = derive_rng(seed, "pretrain", objective, "batches")
    mask_rng = derive_rng(seed, "pretrain", objective, "masking")
    dropout_rng = derive_rng(seed, "pretrain", objective, "dropout")
    tensors = dict(params.tensors)
    state = ad.AdamState()
    history: List[float] = []

    for step in range(cfg.steps):
        picks = batch_rng.integers(0, len(pool), size=min(cfg.batch_size, len(pool)))
        current = params.replace(tensors)
        if objective == "tlm":
            loss = objective_loss(current, objective, [], cfg, mask_rng, True, dropout_rng,
                                  parallel=[pool[i] for i in picks])
        else:
            loss = objective_loss(current, objective, [pool[i] for i in picks], cfg, mask_rng, True, dropout_rng)
        grads = ad.backward(loss, params=tensors)
        tensors, state = ad.adam_step(tensors, grads, state, cfg.lr)
        history.append(loss.item())
        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            logger.info(f"{objective} step {step + 1}/{cfg.steps}: loss {history[-1]:.4f}")

    if history:
        logger.info(f"Pre-training ({objective}) finished: loss {history[0]:.4f} -> {history[-1]:.4f}")
    return params.replace(tensors), history
