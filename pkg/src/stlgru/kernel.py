"""Dense array arithmetic with a reverse-mode gradient tape.

Every value is a ``Tensor`` wrapping a numpy floating array. The trailing two
axes carry (row, column) semantics; any leading axes are broadcast batch axes.
Operations record their inputs and a backward rule, so a scalar result can be
differentiated with a single reverse sweep over the recorded graph. A
central-difference oracle (``finite_difference_gradient``) provides the
independent check used throughout the test suite.

Gradient checks are only meaningful in 64-bit arithmetic; 32-bit is accepted
for training speed.
"""

from __future__ import annotations

import math
from typing import Callable, Mapping

import numpy as np

from .errors import OracleError, ShapeError

Array = np.ndarray


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    squeezed = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if squeezed:
        grad = grad.sum(axis=squeezed, keepdims=True)
    return grad


class Tensor:
    """A value on the gradient tape.

    The recorded graph is acyclic by construction and ``backward`` visits each
    node exactly once. A tape belongs to a single training step; do not share
    one across concurrently running steps.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: Array = arr
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[Array], None] | None = None

    # -- shape helpers -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def rows(self) -> int:
        return self.data.shape[-2]

    @property
    def cols(self) -> int:
        return self.data.shape[-1]

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------
    # Python-number operands stay python scalars so float32 data is not
    # promoted; numpy treats them as weakly typed.
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, float(other))
        return add(self, _ensure(other))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, -float(other))
        return sub(self, _ensure(other))

    def __rsub__(self, other):
        if isinstance(other, (int, float)):
            return shift(scale(self, -1.0), float(other))
        return sub(_ensure(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _ensure(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not a tape operation")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _ensure(other))


def _ensure(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value))


def _make(data: Array, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _accumulate(t: Tensor, grad: Array) -> None:
    if not t.requires_grad:
        return
    t.grad = grad if t.grad is None else t.grad + grad


# -- core operations -------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the trailing two axes, broadcasting leading axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g: Array) -> None:
        _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    """Swap the trailing two axes."""
    if a.ndim < 2:
        raise ShapeError(f"transpose needs a 2-d operand, got {a.shape}")
    data = np.swapaxes(a.data, -1, -2)

    def backward(g: Array) -> None:
        _accumulate(a, np.swapaxes(g, -1, -2))

    return _make(data, (a,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g: Array) -> None:
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g: Array) -> None:
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product with broadcasting."""
    data = a.data * b.data

    def backward(g: Array) -> None:
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    data = a.data * s

    def backward(g: Array) -> None:
        _accumulate(a, g * s)

    return _make(data, (a,), backward)


def shift(a: Tensor, s: float) -> Tensor:
    data = a.data + s

    def backward(g: Array) -> None:
        _accumulate(a, g)

    return _make(data, (a,), backward)


def _sigmoid_stable(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    data = _sigmoid_stable(a.data)

    def backward(g: Array) -> None:
        _accumulate(a, g * data * (1.0 - data))

    return _make(data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g: Array) -> None:
        _accumulate(a, g * (1.0 - data * data))

    return _make(data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def backward(g: Array) -> None:
        _accumulate(a, g * (a.data > 0))

    return _make(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    """Natural log; caller guarantees strictly positive input."""
    data = np.log(a.data)

    def backward(g: Array) -> None:
        _accumulate(a, g / a.data)

    return _make(data, (a,), backward)


def rsqrt_or_zero(a: Tensor) -> Tensor:
    """x ** -0.5 where x > 0, exactly 0 where x == 0.

    The zero branch is the degree-normalization convention for isolated nodes.
    """
    positive = a.data > 0
    data = np.zeros_like(a.data)
    np.power(a.data, -0.5, out=data, where=positive)

    def backward(g: Array) -> None:
        inner = np.zeros_like(a.data)
        np.power(a.data, -1.5, out=inner, where=positive)
        _accumulate(a, g * (-0.5) * inner)

    return _make(data, (a,), backward)


def clip_open_unit(a: Tensor) -> Tensor:
    """Clamp into the open interval (0, 1) by one ulp.

    Backward is pass-through: the clamp only binds where the producing
    sigmoid is saturated and its true slope is below float resolution.
    """
    info = np.finfo(a.data.dtype)
    data = np.clip(a.data, info.tiny, 1.0 - info.epsneg)

    def backward(g: Array) -> None:
        _accumulate(a, g)

    return _make(data, (a,), backward)


def row_softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis with max-subtraction for overflow safety."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(g: Array) -> None:
        inner = (g * data).sum(axis=-1, keepdims=True)
        _accumulate(a, data * (g - inner))

    return _make(data, (a,), backward)


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Stack the rows of ``a`` above the rows of ``b``."""
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"concat_rows shape mismatch: {a.shape} over {b.shape}")
    data = np.concatenate([a.data, b.data], axis=-2)
    split = a.shape[-2]

    def backward(g: Array) -> None:
        _accumulate(a, g[..., :split, :])
        _accumulate(b, g[..., split:, :])

    return _make(data, (a, b), backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    data = a.data[..., start:stop, :]

    def backward(g: Array) -> None:
        full = np.zeros_like(a.data)
        full[..., start:stop, :] = g
        _accumulate(a, full)

    return _make(data, (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g: Array) -> None:
        _accumulate(a, g.reshape(a.shape))

    return _make(data, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum())

    def backward(g: Array) -> None:
        _accumulate(a, np.broadcast_to(g, a.shape).astype(a.data.dtype))

    return _make(data, (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    data = np.asarray(a.data.mean())

    def backward(g: Array) -> None:
        _accumulate(a, np.broadcast_to(g / n, a.shape).astype(a.data.dtype))

    return _make(data, (a,), backward)


# -- reverse sweep and oracle ------------------------------------------------

def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Reverse sweep seeding d(root)/d(root) = 1. Root must be scalar."""
    if root.data.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.data.shape}")
    order = _topological_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def gradient_of_scalar(root: Tensor, params: Mapping[str, Tensor]) -> dict[str, Array]:
    """Gradient of a recorded scalar with respect to every named parameter.

    Parameters not on the path to the root receive exact zeros.
    """
    backward(root)
    return {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }


def finite_difference_gradient(
    f: Callable[[Mapping[str, Array]], float],
    params: Mapping[str, Array],
    eps: float = 1e-5,
) -> dict[str, Array]:
    """Central-difference gradient of ``f`` per parameter coordinate.

    ``f`` must be deterministic (freeze any noise) and treat its argument as
    read-only. Independent of the tape by construction.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    work = {name: np.array(arr, dtype=np.float64) for name, arr in params.items()}
    grads: dict[str, Array] = {}
    for name in params:
        flat = work[name].reshape(-1)
        grad = np.zeros_like(flat)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            f_plus = float(f(work))
            flat[i] = saved - eps
            f_minus = float(f(work))
            flat[i] = saved
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise OracleError(
                    f"non-finite evaluation while perturbing {name}[{i}]"
                )
            grad[i] = (f_plus - f_minus) / (2.0 * eps)
        grads[name] = grad.reshape(work[name].shape)
    return grads


def gradient_relative_error(analytic: Mapping[str, Array], numeric: Mapping[str, Array]) -> dict[str, float]:
    """Per-tensor max-norm relative error, ||g_a - g_n||_inf / max(1, ||g_n||_inf)."""
    errors = {}
    for name in numeric:
        g_n = numeric[name]
        g_a = analytic[name]
        diff = np.abs(g_a - g_n).max() if g_n.size else 0.0
        scale = max(1.0, np.abs(g_n).max() if g_n.size else 0.0)
        errors[name] = float(diff / scale)
    return errors
