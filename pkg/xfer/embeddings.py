"""
Skip-gram with negative sampling over subword ids, plus the binary embedding file
"""
import struct
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .seeding import DIGEST_SIZE, derive_rng
from .tokenizer import N_SPECIALS, Vocabulary

logger = logging.getLogger(__name__)

EMBEDDING_MAGIC = b"XFEMB1"
_HEADER = struct.Struct("<6sII")


class EmbeddingError(ValueError):
    """Raised for invalid embedding tables, files or training inputs"""


@dataclass
class SgnsConfig:
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    subsample_threshold: float = 1e-3
    batch_pairs: int = 64
    seed: int = 0

    def validate(self):
        if self.window < 1:
            raise EmbeddingError(f"window must be >= 1, got {self.window}")
        if self.negatives < 1:
            raise EmbeddingError(f"negatives must be >= 1, got {self.negatives}")
        if self.epochs < 0:
            raise EmbeddingError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0:
            raise EmbeddingError(f"lr must be positive, got {self.lr}")
        if self.batch_pairs < 1:
            raise EmbeddingError(f"batch_pairs must be >= 1, got {self.batch_pairs}")


@dataclass
class EmbeddingTable:
    """Context-independent token vectors bound to one vocabulary"""
    matrix: np.ndarray
    vocab_hash: bytes
    loss_history: List[float] = field(default_factory=list, compare=False)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise EmbeddingError(f"Embedding matrix must be 2-d, got shape {self.matrix.shape}")
        if len(self.vocab_hash) != DIGEST_SIZE:
            raise EmbeddingError(f"vocab_hash must be {DIGEST_SIZE} bytes")
        if not np.all(np.isfinite(self.matrix)):
            raise EmbeddingError("Embedding matrix contains NaN or Inf")

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def check_bound(self, vocab: Vocabulary):
        if self.vocab_hash != vocab.hash:
            raise EmbeddingError("Embedding table is bound to a different vocabulary (hash mismatch)")
        if self.size != len(vocab):
            raise EmbeddingError(f"Embedding table has {self.size} rows, vocabulary has {len(vocab)} tokens")


def random_table(vocab: Vocabulary, d: int, seed: int, std: float = 0.02) -> EmbeddingTable:
    """Seeded normal table bound to vocab (the 'random embeddings' baseline)"""
    rng = derive_rng(seed, "embeddings", "random")
    return EmbeddingTable(matrix=rng.normal(0.0, std, size=(len(vocab), d)), vocab_hash=vocab.hash)


def build_pairs(corpus: Sequence[Sequence[int]], window: int,
                rng: np.random.Generator) -> Iterator[Tuple[int, int]]:
    """
    Yield (center, context) pairs with a shrunk window per center.

    Specials are removed first. One window draw w_i in 1..window is taken for
    every remaining position, in order, whether or not it yields pairs.

    Args:
        corpus: Token id sequences
        window: Maximum window radius
        rng: Stream for the window draws

    Yields:
        (center id, context id)
    """
    if window < 1:
        raise EmbeddingError(f"window must be >= 1, got {window}")
    for seq in corpus:
        ids = [int(t) for t in seq if int(t) >= N_SPECIALS]
        n = len(ids)
        for i in range(n):
            w = int(rng.integers(1, window + 1))
            for j in range(max(0, i - w), min(n, i + w + 1)):
                if j != i:
                    yield ids[i], ids[j]


def sgns_loss_and_grads(center: np.ndarray, context: np.ndarray,
                        negatives: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """
    Logistic loss for one training triple and its gradients.

    loss = -log sigma(u.v) - sum_k log sigma(-u.v_k)

    Args:
        center: u, shape (d,)
        context: v, shape (d,)
        negatives: v_k rows, shape (k, d)

    Returns:
        (loss, dL/du, dL/dv, dL/dv_k)
    """
    pos_score = float(center @ context)
    neg_scores = negatives @ center
    loss = float(np.logaddexp(0.0, -pos_score) + np.logaddexp(0.0, neg_scores).sum())
    pos_coef = _sigmoid(pos_score) - 1.0
    neg_coef = _sigmoid(neg_scores)
    grad_center = pos_coef * context + neg_coef @ negatives
    grad_context = pos_coef * center
    grad_negatives = neg_coef[:, None] * center[None, :]
    return loss, grad_center, grad_context, grad_negatives


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


def _unigram_table(counts: np.ndarray) -> np.ndarray:
    weights = counts.astype(np.float64) ** 0.75
    weights[:N_SPECIALS] = 0.0
    total = weights.sum()
    if total <= 0:
        raise EmbeddingError("corpus too small: no non-special tokens")
    return weights / total


def _subsample(corpus: Sequence[Sequence[int]], counts: np.ndarray, threshold: float,
               rng: np.random.Generator) -> List[List[int]]:
    if threshold <= 0:
        return [list(seq) for seq in corpus]
    freqs = counts / max(counts[N_SPECIALS:].sum(), 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(freqs > 0, threshold / freqs, 1.0)
    keep_prob = np.minimum(1.0, np.sqrt(ratio) + ratio)
    out = []
    for seq in corpus:
        draws = rng.random(len(seq))
        out.append([t for t, r in zip(seq, draws) if t < N_SPECIALS or r < keep_prob[t]])
    return out


def train_sgns(corpus: Sequence[Sequence[int]], vocab: Vocabulary, d: int,
               cfg: Optional[SgnsConfig] = None) -> EmbeddingTable:
    """
    Train input-side token vectors with skip-gram negative sampling.

    Updates are SGD over mini-batches of pairs with a linearly decaying learning rate.
    The output-side matrix starts at zero and is discarded after training.

    Args:
        corpus: Token id sequences encoded with vocab
        vocab: Vocabulary the table will be bound to
        d: Embedding width
        cfg: Hyperparameters

    Returns:
        EmbeddingTable with per-epoch mean loss in loss_history
    """
    cfg = cfg or SgnsConfig()
    cfg.validate()
    n_vocab = len(vocab)
    rng = derive_rng(cfg.seed, "sgns")
    init_rng = derive_rng(cfg.seed, "sgns", "init")
    w_in = init_rng.uniform(-0.5 / d, 0.5 / d, size=(n_vocab, d))
    w_out = np.zeros((n_vocab, d))

    counts = np.zeros(n_vocab, dtype=np.int64)
    for seq in corpus:
        for t in seq:
            if not 0 <= int(t) < n_vocab:
                raise EmbeddingError(f"Token id {t} is outside the vocabulary (size {n_vocab})")
            counts[int(t)] += 1

    first_pair = next(build_pairs(corpus, cfg.window, derive_rng(cfg.seed, "sgns", "first_pair")), None)
    if first_pair is None:
        raise EmbeddingError("corpus too small: it yields no (center, context) pairs")
    noise = _unigram_table(counts)

    if cfg.epochs == 0:
        return EmbeddingTable(matrix=w_in, vocab_hash=vocab.hash)

    epoch_pairs = []
    for epoch in range(cfg.epochs):
        kept = _subsample(corpus, counts, cfg.subsample_threshold, rng)
        pairs = np.array(list(build_pairs(kept, cfg.window, rng)), dtype=np.int64).reshape(-1, 2)
        epoch_pairs.append(pairs)
    total = max(sum(len(p) for p in epoch_pairs), 1)

    history = []
    seen = 0
    min_lr = cfg.lr * 1e-4
    for epoch, pairs in enumerate(epoch_pairs):
        order = rng.permutation(len(pairs))
        losses = []
        for start in range(0, len(pairs), cfg.batch_pairs):
            batch = pairs[order[start:start + cfg.batch_pairs]]
            lr = max(min_lr, cfg.lr * (1.0 - seen / total))
            seen += len(batch)
            centers, contexts = batch[:, 0], batch[:, 1]
            negs = rng.choice(n_vocab, size=(len(batch), cfg.negatives), p=noise)

            u = w_in[centers]
            v = w_out[contexts]
            vn = w_out[negs]
            pos = np.einsum("bd,bd->b", u, v)
            neg = np.einsum("bkd,bd->bk", vn, u)
            losses.append(float((np.logaddexp(0.0, -pos) + np.logaddexp(0.0, neg).sum(axis=1)).mean()))

            pos_coef = _sigmoid(pos) - 1.0
            neg_coef = _sigmoid(neg)
            grad_u = pos_coef[:, None] * v + np.einsum("bk,bkd->bd", neg_coef, vn)
            grad_v = pos_coef[:, None] * u
            grad_vn = neg_coef[:, :, None] * u[:, None, :]

            np.add.at(w_in, centers, -lr * grad_u)
            np.add.at(w_out, contexts, -lr * grad_v)
            np.add.at(w_out, negs.reshape(-1), -lr * grad_vn.reshape(-1, d))
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        history.append(mean_loss)
        logger.info(f"SGNS epoch {epoch + 1}/{cfg.epochs}: {len(pairs)} pairs, loss {mean_loss:.4f}")

    return EmbeddingTable(matrix=w_in, vocab_hash=vocab.hash, loss_history=history)


def nearest_neighbors(table: EmbeddingTable, token_id: int, k: int) -> List[Tuple[int, float]]:
    """
    Cosine nearest neighbors of one token.

    Args:
        table: Embedding table
        token_id: Query id
        k: Number of neighbors, must be < |V|

    Returns:
        k (id, cosine) pairs, descending; self and specials excluded, ties by smaller id
    """
    n = table.size
    if not 0 <= token_id < n:
        raise EmbeddingError(f"Token id {token_id} is outside the table (size {n})")
    if k < 0 or k >= n:
        raise EmbeddingError(f"k must be in [0, {n}), got {k}")
    if k == 0:
        return []
    norms = np.linalg.norm(table.matrix, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    cosines = (table.matrix @ table.matrix[token_id]) / (safe * safe[token_id])
    cosines = np.where(norms > 0, cosines, 0.0)
    if norms[token_id] == 0:
        cosines = np.zeros_like(cosines)
    candidates = np.array([i for i in range(N_SPECIALS, n) if i != token_id], dtype=np.int64)
    if candidates.size == 0:
        return []
    scores = cosines[candidates]
    order = np.lexsort((candidates, -scores))
    return [(int(candidates[i]), float(scores[i])) for i in order[:k]]


def save_embeddings(table: EmbeddingTable, path: str):
    """Write the little-endian binary table: magic, |V|, d, vocab hash, f32 rows"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(EMBEDDING_MAGIC, table.size, table.d))
        f.write(table.vocab_hash)
        f.write(table.matrix.astype("<f4").tobytes())
    logger.info(f"Saved embeddings {table.size}x{table.d} to {path}")


def load_embeddings(path: str) -> EmbeddingTable:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER.size + DIGEST_SIZE:
        raise EmbeddingError(f"Embedding file {path} is truncated")
    magic, n_rows, d = _HEADER.unpack_from(blob, 0)
    if magic != EMBEDDING_MAGIC:
        raise EmbeddingError(f"Bad embedding magic {magic!r}")
    offset = _HEADER.size
    vocab_hash = blob[offset:offset + DIGEST_SIZE]
    offset += DIGEST_SIZE
    expected = n_rows * d * 4
    if len(blob) - offset != expected:
        raise EmbeddingError(f"Embedding payload is {len(blob) - offset} bytes, expected {expected}")
    matrix = np.frombuffer(blob, dtype="<f4", count=n_rows * d, offset=offset).reshape(n_rows, d)
    return EmbeddingTable(matrix=matrix.astype(np.float64), vocab_hash=vocab_hash)
