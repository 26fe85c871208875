"""
Dense tensors with a reverse-mode gradient tape.

Every differentiable op computes its value with numpy, checks that the value
is finite, and, when a `Tape` is active on the current thread and at least
one input requires a gradient, records a backward closure on that tape.
Outside a tape nothing is recorded, so plain forwards cost no bookkeeping.

Usage:

    with Tape() as tape:
        loss = ops.sum_(x * x)
    backward(loss, tape)        # x.grad == 2 * x.data
"""

import itertools
import threading
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from attnlab.core.errors import NonFiniteError, ShapeError, TapeError, VocabularyError

DTYPES = {"f32": np.float32, "f64": np.float64}

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_node_ids = itertools.count(1)
_local = threading.local()


def resolve_dtype(dtype) -> np.dtype:
    """Map "f32"/"f64" or a numpy dtype to one of the two supported dtypes"""

    if isinstance(dtype, str):
        if dtype not in DTYPES:
            raise ShapeError(f"unsupported dtype {dtype!r}; expected one of {sorted(DTYPES)}")
        return np.dtype(DTYPES[dtype])
    resolved = np.dtype(dtype)
    if resolved not in (np.float32, np.float64):
        raise ShapeError(f"unsupported dtype {resolved}")
    return resolved


class Tensor:
    """Row-major float array with optional gradient participation"""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "name")

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 dtype=None, name: Optional[str] = None):
        if dtype is not None:
            array = np.array(data, dtype=resolve_dtype(dtype))
        else:
            array = np.asarray(data)
            if array.dtype not in (np.float32, np.float64):
                array = array.astype(np.float64)
        self.data = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node_id = next(_node_ids)
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # Operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, axis1: int, axis2: int) -> "Tensor":
        return swapaxes(self, axis1, axis2)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)


def tensor(data: ArrayLike, dtype="f32", requires_grad: bool = False,
           name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype, name=name)


@dataclass
class TapeEntry:
    """One executed differentiable op"""

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of executed differentiable ops on the current thread"""

    def __init__(self):
        self.entries: List[TapeEntry] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _local.tapes.pop()

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor,
               backward_fn: BackwardFn) -> None:
        self.entries.append(TapeEntry(op, inputs, output, backward_fn))


def current_tape() -> Optional[Tape]:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


def _as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype) if dtype is not None else value)


def _check_finite(op: str, value: np.ndarray) -> None:
    if not np.isfinite(value).all():
        raise NonFiniteError(f"{op} produced non-finite values")


def _result(op: str, value: np.ndarray, inputs: Tuple[Tensor, ...],
            backward_fn: BackwardFn) -> Tensor:
    _check_finite(op, value)
    out = Tensor(value)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, inputs, out, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` after numpy broadcasting"""

    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# Elementwise arithmetic

def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    return _result("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    return _result("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    return _result("mul", a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    value = a.data / b.data
    return _result("div", value, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * value / b.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _result("neg", -a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    value = np.exp(a.data)
    return _result("exp", value, (a,), lambda g: (g * value,))


def log(a: Tensor) -> Tensor:
    return _result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def square(a: Tensor) -> Tensor:
    return _result("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu_array(x: np.ndarray) -> np.ndarray:
    return x * _sigmoid(x)


def sigmoid(a: Tensor) -> Tensor:
    value = _sigmoid(a.data)
    return _result("sigmoid", value, (a,), lambda g: (g * value * (1.0 - value),))


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x), element-wise"""

    sig = _sigmoid(a.data)
    value = a.data * sig
    return _result("silu", value, (a,),
                   lambda g: (g * sig * (1.0 + a.data * (1.0 - sig)),))


# Linear algebra and shape ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, batch axes broadcast"""

    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result("matmul", np.matmul(a.data, b.data), (a, b), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return _result("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    return _result("swapaxes", np.swapaxes(a.data, axis1, axis2), (a,),
                   lambda g: (np.swapaxes(g, axis1, axis2),))


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    value = np.broadcast_to(a.data, tuple(shape)).copy()
    return _result("broadcast_to", value, (a,), lambda g: (_unbroadcast(g, a.shape),))


def slice_axis(a: Tensor, start: int, stop: int, axis: int) -> Tensor:
    """a[..., start:stop, ...] along `axis`"""

    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _result("slice", a.data[index].copy(), (a,), backward)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    value = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result("sum", np.asarray(value), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


# Attention building blocks

def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


def softmax_causal_rows(logits: Tensor) -> Tensor:
    """Row softmax restricted to columns <= row; strict upper triangle is exactly 0"""

    if logits.ndim < 2 or logits.shape[-1] != logits.shape[-2]:
        raise ShapeError(f"softmax_causal_rows needs square trailing axes, got {logits.shape}")
    mask = causal_mask(logits.shape[-1])
    masked = np.where(mask, logits.data, -np.inf)
    shifted = masked - masked.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    probs = weights / weights.sum(axis=-1, keepdims=True)

    def backward(g):
        return (probs * (g - np.sum(g * probs, axis=-1, keepdims=True)),)

    return _result("softmax_causal_rows", probs, (logits,), backward)


def rms_norm(x: Tensor, gain: Tensor, eps: float) -> Tensor:
    """x / sqrt(mean(x^2) + eps) * gain over the last axis"""

    if gain.ndim != 1 or x.shape[-1] != gain.shape[0]:
        raise ShapeError(f"rms_norm gain {gain.shape} does not match features of {x.shape}")
    ms = np.mean(x.data * x.data, axis=-1, keepdims=True)
    root = np.sqrt(ms + eps)
    inv = np.divide(1.0, root, out=np.zeros_like(root), where=root > 0)
    normed = x.data * inv
    value = normed * gain.data

    def backward(g):
        g_normed = g * gain.data
        gx = inv * g_normed - x.data * inv ** 3 * np.mean(g_normed * x.data, axis=-1, keepdims=True)
        g_gain = (g * normed).reshape(-1, gain.shape[0]).sum(axis=0)
        return gx, g_gain

    return _result("rms_norm", value, (x, gain), backward)


def rope_tables(positions: Sequence[int], d_head: int, base: float, dtype) -> Tuple[np.ndarray, np.ndarray]:
    if d_head % 2:
        raise ShapeError(f"rotary embedding needs an even head size, got {d_head}")
    inv_freq = base ** (-np.arange(0, d_head, 2, dtype=np.float64) / d_head)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
    return np.cos(angles).astype(dtype), np.sin(angles).astype(dtype)


def rope_apply(x: Tensor, positions: Sequence[int], base: float = 10000.0) -> Tensor:
    """Rotate feature pairs (2i, 2i+1) of each row by position * base^(-2i/d)"""

    d_head = x.shape[-1]
    if len(positions) != x.shape[-2]:
        raise ShapeError(f"{len(positions)} positions for {x.shape[-2]} rows")
    cos, sin = rope_tables(positions, d_head, base, x.dtype)
    even, odd = x.data[..., 0::2], x.data[..., 1::2]
    value = np.empty_like(x.data)
    value[..., 0::2] = even * cos - odd * sin
    value[..., 1::2] = even * sin + odd * cos

    def backward(g):
        g_even, g_odd = g[..., 0::2], g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = g_even * cos + g_odd * sin
        gx[..., 1::2] = -g_even * sin + g_odd * cos
        return (gx,)

    return _result("rope_apply", value, (x,), backward)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup weight[ids]; gradient scatters back into the table"""

    ids = np.asarray(ids, dtype=np.int64)
    vocab = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise VocabularyError(f"token id outside [0, {vocab})")

    def backward(g):
        table = np.zeros_like(weight.data)
        np.add.at(table, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (table,)

    return _result("embedding", weight.data[ids], (weight,), backward)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood (nats) of integer targets under row softmax"""

    targets = np.asarray(targets, dtype=np.int64)
    vocab = logits.shape[-1]
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"logits {logits.shape} and targets {targets.shape} are not aligned")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise VocabularyError(f"target id outside [0, {vocab})")

    flat = logits.data.reshape(-1, vocab)
    flat_targets = targets.reshape(-1)
    shifted = flat - flat.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(flat.shape[0])
    loss = -log_probs[rows, flat_targets].mean()

    def backward(g):
        probs = np.exp(log_probs)
        probs[rows, flat_targets] -= 1.0
        return ((g * probs / flat.shape[0]).reshape(logits.shape),)

    return _result("cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), backward)


# Differentiation

def backward(loss: Tensor, tape: Tape) -> None:
    """Populate .grad on every leaf tensor reached from `loss` through `tape`"""

    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    produced = set()
    last_id = 0
    for entry in tape.entries:
        out_id = entry.output.node_id
        if out_id <= last_id or any(t.node_id >= out_id for t in entry.inputs):
            raise TapeError(f"tape is not in topological order at op {entry.op!r}")
        last_id = out_id
        produced.add(out_id)

    grads: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    leaves: Dict[int, Tensor] = {}

    for entry in reversed(tape.entries):
        g = grads.pop(entry.output.node_id, None)
        if g is None:
            continue
        for inp, g_in in zip(entry.inputs, entry.backward(g)):
            if g_in is None or not inp.requires_grad:
                continue
            if inp.node_id not in produced:
                leaves[inp.node_id] = inp
            if inp.node_id in grads:
                grads[inp.node_id] = grads[inp.node_id] + g_in
            else:
                grads[inp.node_id] = np.array(g_in, dtype=inp.dtype)

    if loss.node_id not in produced and loss.requires_grad:
        leaves[loss.node_id] = loss
    for node_id, leaf in leaves.items():
        leaf.grad = grads[node_id].reshape(leaf.shape)


def finite_difference_grad(f: Callable[[Tensor], Union[float, Tensor]], x: Tensor,
                           h: float = 1e-5, indices: Optional[Sequence[int]] = None,
                           on_perturb: Optional[Callable[[], None]] = None) -> Tensor:
    """Central-difference gradient estimate of scalar f at x.

    Only the flat coordinates in `indices` are estimated when given (others
    are left at 0). `on_perturb` runs after every change to x, for callers
    that cache values derived from x.
    """

    def evaluate() -> float:
        if on_perturb is not None:
            on_perturb()
        value = f(x)
        return value.item() if isinstance(value, Tensor) else float(value)

    x.data = np.ascontiguousarray(x.data)
    flat = x.data.reshape(-1)
    estimate = np.zeros(flat.shape, dtype=np.float64)
    coords = range(flat.size) if indices is None else indices
    for i in coords:
        original = flat[i]
        flat[i] = original + h
        f_plus = evaluate()
        flat[i] = original - h
        f_minus = evaluate()
        flat[i] = original
        estimate[i] = (f_plus - f_minus) / (2.0 * h)
    if on_perturb is not None:
        on_perturb()
    return Tensor(estimate.reshape(x.shape).astype(x.dtype))
