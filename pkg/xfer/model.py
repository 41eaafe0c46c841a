"""
Small transformer encoder with MLM, TLM and PLM objectives and a 2-class head.

Parameters live in a flat name -> array map; the group of a name (its first
component, or "blocks.<i>") is the unit of freezing, swapping and checkpoint diffs.
"""
import json
import math
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .seeding import DIGEST_SIZE, derive_rng
from .tokenizer import CLS, MASK, N_SPECIALS, PAD, SEP

logger = logging.getLogger(__name__)

IGNORE_INDEX = -100
INIT_STD = 0.02
N_CLASSES = 2
MODES = ("random", "pretrained-surrogate")


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_seq_len: int = 180
    dropout: float = 0.1
    tie_mlm_head: bool = True

    def validate(self):
        if self.vocab_size <= N_SPECIALS:
            raise ValueError(f"vocab_size must exceed the {N_SPECIALS} specials, got {self.vocab_size}")
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}")
        if self.max_seq_len < 2:
            raise ValueError(f"max_seq_len must be >= 2, got {self.max_seq_len}")
        if self.n_layers < 1 or self.d_ff < 1:
            raise ValueError("n_layers and d_ff must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


def group_of(name: str) -> str:
    parts = name.split(".")
    if parts[0] == "blocks":
        return f"blocks.{parts[1]}"
    return parts[0]


@dataclass
class ModelParameters:
    config: ModelConfig
    tensors: Dict[str, np.ndarray]
    vocab_hash: bytes = field(default=bytes(DIGEST_SIZE))

    def groups(self) -> Dict[str, List[str]]:
        out: Dict[str, List[str]] = {}
        for name in self.tensors:
            out.setdefault(group_of(name), []).append(name)
        return out

    def group_names(self) -> List[str]:
        return list(self.groups())

    def names_in(self, groups) -> List[str]:
        groups = set(groups)
        return [name for name in self.tensors if group_of(name) in groups]

    def replace(self, tensors: Dict[str, np.ndarray], **changes) -> "ModelParameters":
        return ModelParameters(config=changes.get("config", self.config), tensors=tensors,
                               vocab_hash=changes.get("vocab_hash", self.vocab_hash))

    def copy(self) -> "ModelParameters":
        return self.replace({name: arr.copy() for name, arr in self.tensors.items()})


def parameter_specs(cfg: ModelConfig) -> List[Tuple[str, Tuple[int, ...], str]]:
    """(name, shape, init kind) for every tensor, in checkpoint order"""
    d, v = cfg.d_model, cfg.vocab_size
    specs = [
        ("token_embeddings.weight", (v, d), "normal"),
        ("positional.weight", (cfg.max_seq_len, d), "normal"),
        ("positional.norm.gamma", (d,), "ones"),
        ("positional.norm.beta", (d,), "zeros"),
        ("segment.weight", (2, d), "normal"),
        ("plm_query.weight", (d,), "normal"),
    ]
    for i in range(cfg.n_layers):
        prefix = f"blocks.{i}"
        for proj in ("q", "k", "v", "o"):
            specs.append((f"{prefix}.attn.{proj}.weight", (d, d), "normal"))
            specs.append((f"{prefix}.attn.{proj}.bias", (d,), "zeros"))
        specs += [
            (f"{prefix}.attn_norm.gamma", (d,), "ones"),
            (f"{prefix}.attn_norm.beta", (d,), "zeros"),
            (f"{prefix}.ffn.in.weight", (d, cfg.d_ff), "normal"),
            (f"{prefix}.ffn.in.bias", (cfg.d_ff,), "zeros"),
            (f"{prefix}.ffn.out.weight", (cfg.d_ff, d), "normal"),
            (f"{prefix}.ffn.out.bias", (d,), "zeros"),
            (f"{prefix}.ffn_norm.gamma", (d,), "ones"),
            (f"{prefix}.ffn_norm.beta", (d,), "zeros"),
        ]
    specs += [
        ("mlm_head.transform.weight", (d, d), "normal"),
        ("mlm_head.transform.bias", (d,), "zeros"),
        ("mlm_head.norm.gamma", (d,), "ones"),
        ("mlm_head.norm.beta", (d,), "zeros"),
        ("mlm_head.bias", (v,), "zeros"),
    ]
    if not cfg.tie_mlm_head:
        specs.append(("mlm_head.decoder", (d, v), "normal"))
    specs += [
        ("cls_head.weight", (d, N_CLASSES), "normal"),
        ("cls_head.bias", (N_CLASSES,), "zeros"),
    ]
    return specs


def init_model(cfg: ModelConfig, seed: int, mode: str = "random",
               pretrained: Optional[ModelParameters] = None) -> ModelParameters:
    """
    Build model parameters.

    Args:
        cfg: Model configuration
        seed: Run seed; each tensor draws from its own labelled stream
        mode: "random" (normal(0, 0.02) weights) or "pretrained-surrogate"
        pretrained: Weights from a pre-training run, required for the surrogate mode

    Returns:
        ModelParameters
    """
    cfg.validate()
    if mode not in MODES:
        raise ValueError(f"Unknown init mode {mode!r}, expected one of {MODES}")
    if mode == "pretrained-surrogate":
        if pretrained is None:
            raise ValueError("pretrained-surrogate mode needs weights from a pre-training run")
        if pretrained.config != cfg:
            raise ValueError(f"Pretrained config {pretrained.config} differs from {cfg}")
        return pretrained.copy()

    tensors = {}
    for name, shape, kind in parameter_specs(cfg):
        if kind == "normal":
            tensors[name] = derive_rng(seed, "init", name).normal(0.0, INIT_STD, size=shape)
        elif kind == "ones":
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    logger.debug(f"Initialized {len(tensors)} tensors (seed={seed})")
    return ModelParameters(config=cfg, tensors=tensors)


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------

@dataclass
class MaskedBatch:
    input_ids: np.ndarray
    target_ids: np.ndarray
    attn_mask: np.ndarray
    n_masked: np.ndarray
    segment_ids: Optional[np.ndarray] = None


@dataclass
class PermutationBatch:
    input_ids: np.ndarray
    factorization_order: np.ndarray
    predict_flags: np.ndarray
    content_mask: np.ndarray
    query_mask: np.ndarray
    attn_mask: np.ndarray


def pad_batch(sequences: Sequence[Sequence[int]], pad_value: int = PAD) -> Tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences; returns (ids B x T, attention mask B x T)"""
    if isinstance(sequences, np.ndarray) and sequences.ndim == 2:
        ids = sequences.astype(np.int64)
        return ids, ids != PAD
    width = max((len(s) for s in sequences), default=0)
    ids = np.full((len(sequences), width), pad_value, dtype=np.int64)
    mask = np.zeros((len(sequences), width), dtype=bool)
    for row, seq in enumerate(sequences):
        ids[row, :len(seq)] = seq
        mask[row, :len(seq)] = True
    return ids, mask


def apply_mlm_masking(ids, mask_prob: float, rng: np.random.Generator,
                      segment_ids: Optional[np.ndarray] = None) -> MaskedBatch:
    """
    Replace a random subset of non-special tokens with MASK.

    Each maskable position is drawn independently with mask_prob. When that draw
    selects nothing, one maskable position is forced; when it would select every
    position of the row, one is released so that N < T.

    Args:
        ids: Padded id array (B x T) or list of sequences
        mask_prob: Per-position probability
        rng: Random stream
        segment_ids: Optional segment ids carried into the batch

    Returns:
        MaskedBatch
    """
    if not 0.0 <= mask_prob <= 1.0:
        raise ValueError(f"mask_prob must be in [0, 1], got {mask_prob}")
    input_ids, attn_mask = pad_batch(ids)
    input_ids = input_ids.copy()
    targets = np.full(input_ids.shape, IGNORE_INDEX, dtype=np.int64)
    n_masked = np.zeros(input_ids.shape[0], dtype=np.int64)
    for row in range(input_ids.shape[0]):
        tokens = input_ids[row]
        maskable = tokens >= N_SPECIALS
        draws = rng.random(tokens.shape[0])
        selected = maskable & (draws < mask_prob)
        if mask_prob > 0 and maskable.any() and not selected.any():
            selected[rng.choice(np.flatnonzero(maskable))] = True
        length = int(attn_mask[row].sum())
        if selected.sum() >= length and selected.any():
            selected[rng.choice(np.flatnonzero(selected))] = False
        targets[row, selected] = tokens[selected]
        input_ids[row, selected] = MASK
        n_masked[row] = int(selected.sum())
    if segment_ids is not None:
        segment_ids = np.asarray(segment_ids, dtype=np.int64)
    return MaskedBatch(input_ids=input_ids, target_ids=targets, attn_mask=attn_mask,
                       n_masked=n_masked, segment_ids=segment_ids)


def build_tlm_batch(src_batch: Sequence[Sequence[int]], tgt_batch: Sequence[Sequence[int]],
                    mask_prob: float, rng: np.random.Generator, max_seq_len: int) -> MaskedBatch:
    """
    Concatenate parallel pairs as [CLS] src [SEP] tgt [SEP] with segment ids 0/1, then mask.

    An empty target leaves [CLS] src [SEP] in segment 0.
    """
    if len(src_batch) != len(tgt_batch):
        raise ValueError(f"Parallel batch sizes differ: {len(src_batch)} vs {len(tgt_batch)}")
    sequences, segments = [], []
    for src, tgt in zip(src_batch, tgt_batch):
        if len(src) + len(tgt) + 3 > max_seq_len:
            raise ValueError(f"Parallel pair of length {len(src)}+{len(tgt)}+3 exceeds max_seq_len {max_seq_len}")
        first = [CLS] + list(src) + [SEP]
        second = list(tgt) + [SEP] if len(tgt) else []
        sequences.append(first + second)
        segments.append([0] * len(first) + [1] * len(second))
    seg_ids, _ = pad_batch(segments, pad_value=0)
    return apply_mlm_masking(sequences, mask_prob, rng, segment_ids=seg_ids)


def permutation_masks(order: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Attention masks for one factorization order.

    Returns:
        (content_mask, query_mask): content[i][j] iff j precedes-or-equals i in the
        order, query[i][j] iff j strictly precedes i
    """
    rank = np.empty(len(order), dtype=np.int64)
    rank[np.asarray(order)] = np.arange(len(order))
    content = rank[None, :] <= rank[:, None]
    query = rank[None, :] < rank[:, None]
    return content, query


def build_permutation_batch(ids, predict_frac: float, rng: np.random.Generator) -> PermutationBatch:
    """
    Sample factorization orders and prediction targets for PLM.

    Specials come first in the order (in position order), content positions follow
    in a uniform random permutation, pads come last. The last ceil(c * n) content
    positions of the order are predicted, n being the non-pad, non-special count.
    """
    if not 0.0 < predict_frac <= 0.5:
        raise ValueError(f"predict_frac must be in (0, 0.5], got {predict_frac}")
    input_ids, attn_mask = pad_batch(ids)
    batch, width = input_ids.shape
    orders = np.zeros((batch, width), dtype=np.int64)
    flags = np.zeros((batch, width), dtype=bool)
    content = np.zeros((batch, width, width), dtype=bool)
    query = np.zeros((batch, width, width), dtype=bool)
    for row in range(batch):
        tokens = input_ids[row]
        pads = np.flatnonzero(tokens == PAD)
        specials = np.flatnonzero((tokens != PAD) & (tokens < N_SPECIALS))
        body = np.flatnonzero(tokens >= N_SPECIALS)
        body = body[rng.permutation(len(body))]
        orders[row] = np.concatenate([specials, body, pads])
        n_predict = math.ceil(predict_frac * len(body)) if len(body) else 0
        if n_predict:
            flags[row, body[len(body) - n_predict:]] = True
        content[row], query[row] = permutation_masks(orders[row])
    return PermutationBatch(input_ids=input_ids, factorization_order=orders, predict_flags=flags,
                            content_mask=content, query_mask=query, attn_mask=attn_mask)


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

class _Forward:
    """One tape-building pass over a parameter snapshot"""

    def __init__(self, params: ModelParameters, training: bool = False,
                 rng: Optional[np.random.Generator] = None):
        self.cfg = params.config
        self.p = {name: Tensor.parameter(arr, name) for name, arr in params.tensors.items()}
        self.training = training
        self.rng = rng

    def drop(self, x: Tensor) -> Tensor:
        return ad.dropout(x, self.cfg.dropout, self.rng, self.training)

    def linear(self, x: Tensor, prefix: str) -> Tensor:
        return ad.add(ad.matmul(x, self.p[f"{prefix}.weight"]), self.p[f"{prefix}.bias"])

    def norm(self, x: Tensor, prefix: str) -> Tensor:
        return ad.layer_norm(x, self.p[f"{prefix}.gamma"], self.p[f"{prefix}.beta"])

    def positions(self, length: int) -> Tensor:
        if length > self.cfg.max_seq_len:
            raise ShapeError("embed", "sequence longer than max_seq_len", [length, self.cfg.max_seq_len])
        return ad.slice_(self.p["positional.weight"], (slice(0, length),))

    def embed(self, ids: np.ndarray, segment_ids: Optional[np.ndarray] = None) -> Tensor:
        x = ad.embedding_lookup(self.p["token_embeddings.weight"], ids)
        x = ad.add(x, self.positions(ids.shape[1]))
        if segment_ids is not None:
            x = ad.add(x, ad.embedding_lookup(self.p["segment.weight"], segment_ids))
        return self.drop(self.norm(x, "positional.norm"))

    def query_stream(self, batch: int, length: int) -> Tensor:
        g = ad.add(self.positions(length), self.p["plm_query.weight"])
        g = self.norm(g, "positional.norm")
        g = ad.add(g, Tensor(np.zeros((batch, length, self.cfg.d_model))))
        return self.drop(g)

    def _split_heads(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        h = self.cfg.n_heads
        return ad.transpose(ad.reshape(x, (b, t, h, d // h)), (0, 2, 1, 3))

    def attention(self, layer: int, x_q: Tensor, x_kv: Tensor, mask: np.ndarray) -> Tensor:
        prefix = f"blocks.{layer}.attn"
        b, t, d = x_q.shape
        q = self._split_heads(self.linear(x_q, f"{prefix}.q"))
        k = self._split_heads(self.linear(x_kv, f"{prefix}.k"))
        v = self._split_heads(self.linear(x_kv, f"{prefix}.v"))
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d // self.cfg.n_heads))
        probs = self.drop(ad.softmax(scores, mask[:, None, :, :]))
        ctx = ad.reshape(ad.transpose(ad.matmul(probs, v), (0, 2, 1, 3)), (b, t, d))
        return self.linear(ctx, f"{prefix}.o")

    def feed_forward(self, layer: int, x: Tensor) -> Tensor:
        hidden = ad.gelu(self.linear(x, f"blocks.{layer}.ffn.in"))
        return self.linear(hidden, f"blocks.{layer}.ffn.out")

    def block(self, layer: int, x: Tensor, context: Tensor, mask: np.ndarray) -> Tensor:
        x = self.norm(ad.add(x, self.drop(self.attention(layer, x, context, mask))), f"blocks.{layer}.attn_norm")
        return self.norm(ad.add(x, self.drop(self.feed_forward(layer, x))), f"blocks.{layer}.ffn_norm")

    def encode(self, ids: np.ndarray, attn_mask: np.ndarray, segment_ids: Optional[np.ndarray] = None) -> Tensor:
        b, t = ids.shape
        mask = np.broadcast_to(attn_mask[:, None, :], (b, t, t))
        h = self.embed(ids, segment_ids)
        for layer in range(self.cfg.n_layers):
            h = self.block(layer, h, h, mask)
        return h

    def two_stream(self, batch: PermutationBatch) -> Tuple[Tensor, Tensor]:
        ids = batch.input_ids
        keys = batch.attn_mask[:, None, :]
        content_mask = batch.content_mask & keys
        query_mask = batch.query_mask & keys
        h = self.embed(ids)
        g = self.query_stream(*ids.shape)
        for layer in range(self.cfg.n_layers):
            # the query stream reads the content stream of the previous layer
            h, g = self.block(layer, h, h, content_mask), self.block(layer, g, h, query_mask)
        return h, g

    def mlm_logits(self, x: Tensor) -> Tensor:
        t = self.norm(ad.gelu(self.linear(x, "mlm_head.transform")), "mlm_head.norm")
        if "mlm_head.decoder" in self.p:
            weight = self.p["mlm_head.decoder"]
        else:
            weight = ad.transpose(self.p["token_embeddings.weight"], (1, 0))
        return ad.add(ad.matmul(t, weight), self.p["mlm_head.bias"])


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------

def mlm_loss(params: ModelParameters, batch: MaskedBatch, training: bool = False,
             rng: Optional[np.random.Generator] = None) -> Tensor:
    """Mean -log p(y_t | x) over masked positions"""
    if int(np.sum(batch.n_masked)) == 0:
        raise ValueError("mlm_loss: the batch has no masked positions")
    f = _Forward(params, training, rng)
    logits = f.mlm_logits(f.encode(batch.input_ids, batch.attn_mask, batch.segment_ids))
    ignore = batch.target_ids == IGNORE_INDEX
    return ad.cross_entropy(logits, np.where(ignore, 0, batch.target_ids), ignore)


def tlm_loss(params: ModelParameters, src_batch: Sequence[Sequence[int]], tgt_batch: Sequence[Sequence[int]],
             mask_prob: float = 0.15, rng: Optional[np.random.Generator] = None, training: bool = False,
             dropout_rng: Optional[np.random.Generator] = None) -> Tensor:
    """MLM over concatenated parallel pairs with segment embeddings"""
    rng = rng if rng is not None else derive_rng(0, "tlm")
    batch = build_tlm_batch(src_batch, tgt_batch, mask_prob, rng, params.config.max_seq_len)
    return mlm_loss(params, batch, training, dropout_rng)


def plm_loss(params: ModelParameters, batch: PermutationBatch, training: bool = False,
             rng: Optional[np.random.Generator] = None) -> Tensor:
    """Mean -log p over predicted positions, read from the query stream"""
    if not batch.predict_flags.any():
        raise ValueError("plm_loss: the batch has no predicted positions")
    f = _Forward(params, training, rng)
    _, g = f.two_stream(batch)
    logits = f.mlm_logits(g)
    ignore = ~batch.predict_flags
    return ad.cross_entropy(logits, np.where(ignore, 0, batch.input_ids), ignore)


def plm_logits(params: ModelParameters, batch: PermutationBatch) -> np.ndarray:
    """Query-stream vocabulary logits for every position (inference only)"""
    f = _Forward(params)
    _, g = f.two_stream(batch)
    return f.mlm_logits(g).data


def classify(params: ModelParameters, ids, attn_mask: Optional[np.ndarray] = None,
             training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    """
    Two-class logits from the final-layer CLS representation.

    Args:
        params: Model parameters
        ids: B x T ids (or list of sequences), each starting with CLS
        attn_mask: Padding mask; derived from PAD positions when omitted

    Returns:
        B x 2 logits
    """
    if attn_mask is None:
        ids, attn_mask = pad_batch(ids)
    else:
        ids = np.asarray(ids, dtype=np.int64)
        attn_mask = np.asarray(attn_mask, dtype=bool)
    if ids.ndim != 2 or ids.shape[1] == 0 or np.any(ids[:, 0] != CLS):
        raise ValueError("classify: every sequence must begin with CLS")
    f = _Forward(params, training, rng)
    h = f.encode(ids, attn_mask)
    cls_repr = ad.slice_(h, (slice(None), 0, slice(None)))
    return f.linear(cls_repr, "cls_head")
