"""
Dense float64 tensors with a reverse-mode gradient tape and an Adam optimizer.

Every op builds a new Tensor that records its parents and a local backward rule.
The tape is rebuilt on each training step; nothing is cached between steps.
"""
import os
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

DEBUG_ENV = "XFER_DEBUG_CHECKS"

GradFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class ShapeError(ValueError):
    """Raised when op inputs do not conform"""

    def __init__(self, op: str, message: str, dims):
        self.op = op
        self.dims = dims
        super().__init__(f"{op}: {message} (dims: {dims})")


def debug_checks_enabled() -> bool:
    return os.environ.get(DEBUG_ENV, "") == "1"


class Tensor:
    """Immutable value in the tape; parameters are leaves carrying a param_id"""

    __slots__ = ("data", "parents", "backward_fn", "op", "param_id")

    def __init__(self, data, parents: Tuple["Tensor", ...] = (), backward_fn: Optional[GradFn] = None,
                 op: str = "const", param_id: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.param_id = param_id

    @classmethod
    def parameter(cls, data, name: str) -> "Tensor":
        return cls(data, op="param", param_id=name)

    @property
    def requires_grad(self) -> bool:
        return self.param_id is not None or self.backward_fn is not None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, op: str, parents: Tuple[Tensor, ...], backward_fn: GradFn) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, parents, backward_fn, op)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, "operands cannot be broadcast together", [a.shape, b.shape]) from None


# ---------------------------------------------------------------------------
# Ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes, leading axes broadcast"""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", "operands need at least 2 dims", [a.shape, b.shape])
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", "inner dimensions differ", [a.shape, b.shape])
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", "batch dimensions cannot be broadcast", [a.shape, b.shape]) from None
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, "matmul", (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(out, "add", (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with broadcasting"""
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, "mul", (a, b), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    out = x.data * factor
    return _result(out, "scale", (x,), lambda g: (g * factor,))


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())
    return _result(out, "sum", (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def softmax(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Softmax over the last axis.

    Args:
        x: Scores
        mask: Optional boolean array broadcastable to x; False entries get
              probability zero. Rows with no True entry produce all zeros.

    Returns:
        Probabilities
    """
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError("softmax", "last axis must have length >= 1", x.shape)
    data = x.data
    if mask is None:
        shifted = data - data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=-1, keepdims=True)
        live_rows = None
    else:
        try:
            mask = np.broadcast_to(np.asarray(mask, dtype=bool), data.shape)
        except ValueError:
            raise ShapeError("softmax", "mask cannot be broadcast to scores", [np.shape(mask), x.shape]) from None
        masked = np.where(mask, data, -np.inf)
        row_max = masked.max(axis=-1, keepdims=True)
        row_max = np.where(np.isfinite(row_max), row_max, 0.0)
        e = np.where(mask, np.exp(np.where(mask, data, row_max) - row_max), 0.0)
        total = e.sum(axis=-1, keepdims=True)
        out = e / np.where(total == 0.0, 1.0, total)
        live_rows = mask.any(axis=-1)

    if debug_checks_enabled():
        sums = out.sum(axis=-1)
        if live_rows is not None:
            sums = sums[live_rows]
        if sums.size and np.max(np.abs(sums - 1.0)) > 1e-12:
            raise AssertionError(f"softmax rows do not sum to 1 (max error {np.max(np.abs(sums - 1.0)):.3e})")

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, "softmax", (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then scale and shift"""
    d = x.shape[-1]
    if d < 1:
        raise ShapeError("layer_norm", "last axis must have length >= 1", x.shape)
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError("layer_norm", "scale/shift must match the last axis", [x.shape, gamma.shape, beta.shape])
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    if debug_checks_enabled():
        live = var[..., 0] > 1e-6
        if live.any():
            rows = xhat[live]
            if np.max(np.abs(rows.mean(axis=-1))) >= 1e-9:
                raise AssertionError("layer_norm output mean is not zero")
            if np.max(np.abs(rows.var(axis=-1) - 1.0)) > 1e-6:
                raise AssertionError("layer_norm output variance is not one")

    out = xhat * gamma.data + beta.data

    def backward(g):
        gxhat = g * gamma.data
        gx = inv_std / d * (d * gxhat - gxhat.sum(axis=-1, keepdims=True)
                            - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, "layer_norm", (x, gamma, beta), backward)


_GELU_K = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of GELU"""
    v = x.data
    inner = _GELU_K * (v + 0.044715 * v ** 3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def backward(g):
        d_inner = _GELU_K * (1.0 + 3 * 0.044715 * v ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t ** 2) * d_inner),)

    return _result(out, "gelu", (x,), backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-d table; output shape is ids.shape + (d,)"""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError("embedding_lookup", "table must be 2-d", table.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError("embedding_lookup", "id out of range",
                         [table.shape, int(ids.min()), int(ids.max())])
    out = table.data[ids]

    def backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return _result(out, "embedding_lookup", (table,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat", "needs at least one input", [])
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors:
        if t.ndim != ndim or t.shape[:ax] + t.shape[ax + 1:] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1:]:
            raise ShapeError("concat", "inputs differ outside the concat axis", [t.shape for t in tensors])
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(out, "concat", tuple(tensors), backward)


def slice_(x: Tensor, index) -> Tensor:
    """Basic indexing (ints and slices)"""
    try:
        out = x.data[index]
    except IndexError as e:
        raise ShapeError("slice", str(e), x.shape) from None

    def backward(g):
        grad = np.zeros_like(x.data)
        grad[index] += g
        return (grad,)

    return _result(np.array(out), "slice", (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", "element count differs", [x.shape, tuple(shape)]) from None
    return _result(out, "reshape", (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError("transpose", "axes are not a permutation", [x.shape, tuple(axes)])
    inverse = np.argsort(axes)
    out = np.transpose(x.data, axes)
    return _result(out, "transpose", (x,), lambda g: (np.transpose(g, inverse),))


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


def cross_entropy(logits: Tensor, targets, ignore_mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Mean negative log-likelihood of target ids under softmax(logits).

    Args:
        logits: (..., C) scores
        targets: integer ids with shape logits.shape[:-1]
        ignore_mask: boolean, True marks positions excluded from the loss entirely

    Returns:
        Scalar loss
    """
    n_classes = logits.shape[-1]
    flat = logits.data.reshape(-1, n_classes)
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.shape[0] != flat.shape[0]:
        raise ShapeError("cross_entropy", "targets do not match logits", [logits.shape, np.shape(targets)])
    if ignore_mask is None:
        valid = np.ones(t.shape[0], dtype=bool)
    else:
        valid = ~np.asarray(ignore_mask, dtype=bool).reshape(-1)
        if valid.shape[0] != t.shape[0]:
            raise ShapeError("cross_entropy", "ignore mask does not match targets",
                             [np.shape(ignore_mask), np.shape(targets)])
    rows = np.flatnonzero(valid)
    if rows.size == 0:
        raise ValueError("cross_entropy: every position is ignored")
    picked = t[rows]
    if picked.min() < 0 or picked.max() >= n_classes:
        raise ShapeError("cross_entropy", "target id out of range", [n_classes, int(picked.min()), int(picked.max())])

    shifted = flat - flat.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    count = rows.size
    out = np.asarray(-log_probs[rows, picked].sum() / count)

    def backward(g):
        grad = np.zeros_like(flat)
        grad[rows] = np.exp(log_probs[rows])
        grad[rows, picked] -= 1.0
        return ((grad * (g / count)).reshape(logits.shape),)

    return _result(out, "cross_entropy", (logits,), backward)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

class Graph:
    """Topologically ordered nodes reachable from an output (inputs first)"""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> "Graph":
        order: List[Tensor] = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)


def backward(loss: Tensor, graph: Optional[Graph] = None,
             params: Optional[Mapping[str, np.ndarray]] = None) -> Dict[str, np.ndarray]:
    """
    Reverse-mode pass from a scalar loss.

    Args:
        loss: Scalar tensor
        graph: Precomputed graph (built from loss when omitted)
        params: Optional name -> array map; unreachable parameters get zero gradients

    Returns:
        Gradients keyed by parameter id, summed across fan-out
    """
    if loss.data.ndim != 0:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads_out: Dict[str, np.ndarray] = {}
    if loss.requires_grad:
        graph = graph or Graph.from_output(loss)
        pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(graph.nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.param_id is not None:
                prev = grads_out.get(node.param_id)
                grads_out[node.param_id] = g if prev is None else prev + g
            if node.backward_fn is None:
                continue
            for parent, parent_grad in zip(node.parents, node.backward_fn(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad
    if params is not None:
        for name, value in params.items():
            if name not in grads_out:
                grads_out[name] = np.zeros_like(np.asarray(value, dtype=np.float64))
    return grads_out


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def numerical_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5,
                       indices: Optional[Iterable[Tuple[int, ...]]] = None) -> np.ndarray:
    """
    Central finite differences of a scalar function.

    Args:
        fn: Maps an array shaped like x to a float
        x: Point of evaluation (not modified)
        eps: Step size
        indices: Restrict to these element indices (others stay zero)

    Returns:
        Array shaped like x
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    positions = indices if indices is not None else np.ndindex(x.shape)
    for idx in positions:
        orig = x[idx]
        x[idx] = orig + eps
        plus = fn(x)
        x[idx] = orig - eps
        minus = fn(x)
        x[idx] = orig
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute difference scaled by the larger of the two magnitudes"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), 1e-8)
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / denom)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              frozen: Iterable[str] = ()) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    One bias-corrected Adam update.

    Arrays are replaced, never written in place, so earlier snapshots stay valid.
    Frozen names keep their values and their optimizer state untouched.

    Args:
        params: name -> array
        grads: name -> gradient (missing names count as zero)
        state: Optimizer state from the previous step
        lr: Learning rate, must be positive
        frozen: Parameter names to skip

    Returns:
        (updated params, updated state)
    """
    if lr <= 0:
        raise ValueError(f"Learning rate must be positive, got {lr}")
    frozen = set(frozen)
    step = state.step + 1
    new_params = dict(params)
    new_m = dict(state.m)
    new_v = dict(state.v)
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step
    for name, value in params.items():
        if name in frozen:
            continue
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(value)
        if g.shape != value.shape:
            raise ShapeError("adam_step", f"gradient shape differs for {name}", [value.shape, g.shape])
        m = beta1 * new_m.get(name, np.zeros_like(value)) + (1.0 - beta1) * g
        v = beta2 * new_v.get(name, np.zeros_like(value)) + (1.0 - beta2) * g * g
        new_m[name] = m
        new_v[name] = v
        new_params[name] = value - lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return new_params, AdamState(step=step, m=new_m, v=new_v)
