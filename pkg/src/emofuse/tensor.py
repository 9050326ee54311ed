"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps one numpy array in double precision. Applying an operation
attaches an OpRecord describing how to replay gradients; backward() walks
the records in reverse topological order and accumulates gradients into the
leaf tensors that requested them. Randomness (dropout) always comes from an
explicitly passed numpy Generator, never from global state.

The GELU here is the exact-erf form, x * Phi(x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import InputError, NumericError, ShapeError, UsageError

Array = np.ndarray

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Products at or below this size sum rank-1 updates in ascending-k order,
# which is bitwise identical to the textbook triple loop; larger products use
# BLAS, which may fuse or reorder the accumulation.
EXACT_MATMUL_MAX_DIM = 8


@dataclass
class OpRecord:
    """One recorded primitive: its inputs and a vector-Jacobian product.

    The backward pass materializes the topologically ordered list of these
    records reachable from the loss and replays them in reverse.
    """

    name: str
    inputs: tuple["Tensor", ...]
    vjp: Callable[[Array], tuple[Array | None, ...]]


class Tensor:
    """A dense float64 array, optionally tracked for gradients.

    Tensors are immutable once created, except that leaf tensors accumulate
    into ``grad`` during backward passes and optimizers update parameter
    ``data`` in place between steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "op")

    def __init__(self, data, requires_grad: bool = False, op: OpRecord | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other) -> "Tensor":
        return add(self, as_tensor(other))

    def __sub__(self, other) -> "Tensor":
        return sub(self, as_tensor(other))

    def __mul__(self, other) -> "Tensor":
        return mul(self, as_tensor(other))

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(name: str, out: Array, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    if any(t.requires_grad for t in inputs):
        return Tensor(out, requires_grad=True, op=OpRecord(name, inputs, vjp))
    return Tensor(out)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient over the axes the forward op broadcast along."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _mm(a: Array, b: Array) -> Array:
    if max(a.shape[0], a.shape[1], b.shape[1]) <= EXACT_MATMUL_MAX_DIM:
        out = np.zeros((a.shape[0], b.shape[1]))
        for k in range(a.shape[1]):
            out = out + a[:, k : k + 1] * b[k : k + 1, :]
        return out
    return a @ b


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None

    def vjp(g: Array):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result("add", out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from None

    def vjp(g: Array):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _result("sub", out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def vjp(g: Array):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _result("mul", out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _result("neg", -a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = _mm(a.data, b.data)

    def vjp(g: Array):
        return _mm(g, b.data.T), _mm(a.data.T, g)

    return _result("matmul", out, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got shape {a.shape}")
    return _result("transpose", a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {a.shape} as {shape}") from None
    return _result("reshape", out, (a,), lambda g: (g.reshape(a.data.shape),))


def concat_cols(ts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along the column axis."""
    ts = list(ts)
    if not ts:
        raise UsageError("concat_cols needs at least one tensor")
    rows = ts[0].data.shape[0]
    for t in ts:
        if t.data.ndim != 2 or t.data.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts differ ({[t.shape for t in ts]})")
    out = np.concatenate([t.data for t in ts], axis=1)
    widths = [t.data.shape[1] for t in ts]
    offsets = np.cumsum([0] + widths)

    def vjp(g: Array):
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(ts)))

    return _result("concat_cols", out, tuple(ts), vjp)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2 or not (0 <= start < stop <= a.data.shape[1]):
        raise ShapeError(f"slice_cols: [{start}:{stop}] invalid for shape {a.shape}")
    out = a.data[:, start:stop]

    def vjp(g: Array):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _result("slice_cols", out, (a,), vjp)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows of a 2-D tensor by integer index (with repetition)."""
    idx = np.asarray(indices, dtype=np.int64)
    if a.data.ndim != 2 or idx.ndim != 1:
        raise ShapeError(f"gather_rows: need 2-D data and 1-D indices, got {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise InputError(f"gather_rows: index out of range for {a.data.shape[0]} rows")
    out = a.data[idx]

    def vjp(g: Array):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _result("gather_rows", out, (a,), vjp)


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())
    return _result("sum_all", out, (a,), lambda g: (np.broadcast_to(g, a.data.shape).copy(),))


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, stabilized by max subtraction."""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows needs a 2-D tensor, got shape {x.shape}")
    if np.isnan(x.data).any():
        raise NumericError("softmax_rows: NaN in input")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g: Array):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result("softmax_rows", y, (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then apply gain and bias."""
    if eps <= 0.0:
        raise InputError(f"layer_norm: eps must be positive, got {eps}")
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm needs a 2-D tensor, got shape {x.shape}")
    d = x.data.shape[1]
    if gain.data.shape[-1] != d or bias.data.shape[-1] != d:
        raise ShapeError(
            f"layer_norm: gain/bias last dim must be {d}, got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def vjp(g: Array):
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        return (
            dx,
            _unbroadcast(g * xhat, gain.data.shape),
            _unbroadcast(g, bias.data.shape),
        )

    return _result("layer_norm", out, (x, gain, bias), vjp)


def gelu(x: Tensor) -> Tensor:
    """Exact-erf GELU: x * Phi(x) with Phi the standard normal CDF."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = x.data * cdf

    def vjp(g: Array):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)

    return _result("gelu", out, (x,), vjp)


def dropout(
    x: Tensor,
    rate: float,
    rng: np.random.Generator | None = None,
    train_mode: bool = True,
) -> Tensor:
    """Inverted dropout: kept entries scale by 1/(1-rate) so eval needs no rescale.

    Rate 0 (or eval mode) is the identity and returns the input unchanged.
    """
    if not (0.0 <= rate < 1.0):
        raise InputError(f"dropout rate must be in [0, 1), got {rate}")
    if not train_mode or rate == 0.0:
        return x
    if rng is None:
        raise UsageError("dropout in train mode needs an explicit rng")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return _result("dropout", x.data * mask, (x,), lambda g: (g * mask,))


def cross_entropy_rows(logits: Tensor, targets) -> Tensor:
    """Mean cross-entropy of each row against its integer target class."""
    t = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or t.ndim != 1 or t.shape[0] != logits.data.shape[0]:
        raise ShapeError(
            f"cross_entropy_rows: logits {logits.shape} vs {t.shape[0] if t.ndim == 1 else '?'} targets"
        )
    if t.size == 0:
        raise InputError("cross_entropy_rows: no target rows")
    n, v = logits.data.shape
    if t.min() < 0 or t.max() >= v:
        raise InputError(f"cross_entropy_rows: target id out of range [0, {v})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = np.asarray(-logp[np.arange(n), t].mean())

    def vjp(g: Array):
        p = np.exp(logp)
        p[np.arange(n), t] -= 1.0
        return (p * (float(g) / n),)

    return _result("cross_entropy_rows", out, (logits,), vjp)


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error against a fixed target array."""
    tgt = np.asarray(target, dtype=np.float64)
    if tgt.shape != pred.data.shape:
        raise ShapeError(f"l1_loss: target shape {tgt.shape} != prediction shape {pred.shape}")
    diff = pred.data - tgt
    out = np.asarray(np.abs(diff).mean())

    def vjp(g: Array):
        return (np.sign(diff) * (float(g) / diff.size),)

    return _result("l1_loss", out, (pred,), vjp)


def backward(loss: Tensor) -> None:
    """Populate grads of every requires_grad leaf reachable from a scalar loss.

    Gradients accumulate across calls; clear them between steps with
    zero_grads(). The traversal is iterative, so graph depth is not limited
    by the interpreter recursion limit.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")

    ordered: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            ordered.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node.op is not None:
            for parent in node.op.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(ordered):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.op is None:
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad = node.grad + g
            continue
        for parent, pg in zip(node.op.inputs, node.op.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            grads[pid] = grads[pid] + pg if pid in grads else pg


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
