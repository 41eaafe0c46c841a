"""
Embedding-neighbor synonym replacement and the other easy-data-augmentation operations
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .data import LabeledExample
from .embeddings import EmbeddingTable, nearest_neighbors
from .tokenizer import N_SPECIALS, WORD_BOUNDARY, Vocabulary, decode, encode

logger = logging.getLogger(__name__)

OPERATIONS = ("synonym_replacement", "random_insertion", "random_swap", "random_deletion")


@dataclass
class AugmentConfig:
    replace_prob: float = 0.1
    min_cosine: float = 0.5
    k_candidates: int = 5
    copies_per_example: int = 0
    ops_enabled: Tuple[str, ...] = ("synonym_replacement",)

    def validate(self):
        if not 0.0 <= self.replace_prob <= 1.0:
            raise ValueError(f"replace_prob must be in [0, 1], got {self.replace_prob}")
        if not -1.0 <= self.min_cosine <= 1.0:
            raise ValueError(f"min_cosine must be in [-1, 1], got {self.min_cosine}")
        if self.k_candidates < 0 or self.copies_per_example < 0:
            raise ValueError("k_candidates and copies_per_example must be >= 0")
        unknown = set(self.ops_enabled) - set(OPERATIONS)
        if unknown:
            raise ValueError(f"Unknown augmentation ops {sorted(unknown)}, expected a subset of {OPERATIONS}")


def _starts_word(vocab: Vocabulary, token_id: int) -> bool:
    return vocab.tokens[token_id].startswith(WORD_BOUNDARY)


def synonym_candidates(table: EmbeddingTable, vocab: Vocabulary, token_id: int,
                       cfg: AugmentConfig) -> List[int]:
    """
    Qualifying replacements for a token: among its k nearest neighbors, those with
    cosine >= min_cosine whose word-boundary marking matches the token's.
    """
    if token_id < N_SPECIALS or cfg.k_candidates == 0:
        return []
    k = min(cfg.k_candidates, len(vocab) - 1)
    boundary = _starts_word(vocab, token_id)
    return [other for other, cos in nearest_neighbors(table, token_id, k)
            if cos >= cfg.min_cosine and _starts_word(vocab, other) == boundary]


class Augmenter:
    """Token-level augmentation operations over one vocabulary and embedding table"""

    def __init__(self, table: EmbeddingTable, vocab: Vocabulary, cfg: AugmentConfig, rng: np.random.Generator):
        self.table = table
        self.vocab = vocab
        self.cfg = cfg
        self.rng = rng
        self._candidates: Dict[int, List[int]] = {}

    def candidates(self, token_id: int) -> List[int]:
        if token_id not in self._candidates:
            self._candidates[token_id] = synonym_candidates(self.table, self.vocab, token_id, self.cfg)
        return self._candidates[token_id]

    def synonym_replacement(self, ids: List[int]) -> List[int]:
        out = list(ids)
        for i, token_id in enumerate(ids):
            if token_id < N_SPECIALS or self.rng.random() >= self.cfg.replace_prob:
                continue
            options = self.candidates(token_id)
            if options:
                out[i] = options[int(self.rng.integers(len(options)))]
        return out

    def random_insertion(self, ids: List[int]) -> List[int]:
        out = list(ids)
        n = int(self.rng.binomial(len(ids), self.cfg.replace_prob)) if ids else 0
        for _ in range(n):
            eligible = [t for t in out if t >= N_SPECIALS and self.candidates(t)]
            if not eligible:
                break
            source = eligible[int(self.rng.integers(len(eligible)))]
            options = self.candidates(source)
            out.insert(int(self.rng.integers(len(out) + 1)), options[int(self.rng.integers(len(options)))])
        return out

    def random_swap(self, ids: List[int]) -> List[int]:
        out = list(ids)
        positions = [i for i, t in enumerate(out) if t >= N_SPECIALS]
        if len(positions) < 2:
            return out
        n = int(self.rng.binomial(len(positions), self.cfg.replace_prob))
        for _ in range(n):
            a, b = self.rng.choice(positions, size=2, replace=False)
            out[a], out[b] = out[b], out[a]
        return out

    def random_deletion(self, ids: List[int]) -> List[int]:
        if len(ids) <= 1:
            return list(ids)
        keep = [t < N_SPECIALS or self.rng.random() >= self.cfg.replace_prob for t in ids]
        if not any(keep):
            keep[int(self.rng.integers(len(ids)))] = True
        return [t for t, k in zip(ids, keep) if k]

    def variant(self, text: str) -> str:
        original = encode(self.vocab, text, add_cls_sep=False).ids
        ids = original
        for op in OPERATIONS:
            if op in self.cfg.ops_enabled:
                ids = getattr(self, op)(ids)
        # untouched copies keep the exact source text
        if ids == original:
            return text
        return decode(self.vocab, ids)


def augment_dataset(data: Sequence[LabeledExample], table: EmbeddingTable, vocab: Vocabulary,
                    cfg: AugmentConfig, rng: np.random.Generator) -> List[LabeledExample]:
    """
    Append copies_per_example augmented variants of every example.

    Args:
        data: Original examples (always retained, first, in order)
        table: Embeddings bound to vocab, the source of replacement candidates
        vocab: Vocabulary the texts are segmented with
        cfg: Operation settings
        rng: Random stream

    Returns:
        Originals followed by augmented examples carrying their source's label
    """
    cfg.validate()
    table.check_bound(vocab)
    augmenter = Augmenter(table, vocab, cfg, rng)
    out = list(data)
    for example in data:
        for _ in range(cfg.copies_per_example):
            out.append(LabeledExample(text=augmenter.variant(example.text), label=example.label, origin="augmented"))
    logger.info(f"Augmented {len(data)} examples into {len(out)} ({cfg.copies_per_example} copies each)")
    return out
