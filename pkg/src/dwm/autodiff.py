"""Reverse-mode automatic differentiation over dense float64 arrays.

A small define-by-run tape: every operation returns a new :class:`Tensor`
holding references to its inputs and a function that maps the output
gradient to input gradients. ``Tensor.backward`` walks the recorded graph
once in reverse topological order, summing contributions wherever a value
feeds several consumers, and deposits gradients on leaves created with
``requires_grad=True``.

The op set is deliberately small: affine maps, pointwise nonlinearities,
softmax, outer products and a handful of structural ops (concat, slicing,
circular roll, reductions). That is enough to express gated-attention
memory cells and recurrent baselines, fully unrolled, with exact
gradients. Everything is float64; there is no fusion, no higher-order
differentiation and no GPU path.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "no_grad",
    "add",
    "sub",
    "mul",
    "div",
    "power",
    "sigmoid",
    "softplus",
    "log",
    "exp",
    "tanh",
    "clip",
    "softmax",
    "matvec",
    "outer",
    "concat",
    "narrow",
    "roll",
    "tsum",
    "tmean",
    "numeric_gradient",
    "gradient_error",
]


class ShapeError(ValueError):
    """Operand shapes do not conform."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (evaluation mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense float64 array with an optional gradient slot.

    Leaves created with ``requires_grad=True`` accumulate ``dLoss/dLeaf``
    in ``.grad`` after ``backward`` on a downstream scalar; repeated
    backward calls without ``zero_grad`` keep accumulating.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._grad_fn is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> np.ndarray:
        """A copy of the value, outside the graph."""
        return np.array(self.data)

    def backward(self) -> None:
        """Backpropagate from this scalar to every requires_grad leaf."""
        if self.data.size != 1:
            raise ValueError("backward requires a scalar tensor")
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(_toposort(self)):
            grad_out = pending.pop(id(node), None)
            if grad_out is None:
                continue
            if node._grad_fn is None:
                if node.requires_grad:
                    # copy: grad_out buffers may be shared between consumers
                    node.grad = (
                        np.array(grad_out)
                        if node.grad is None
                        else node.grad + grad_out
                    )
                continue
            for parent, grad_in in zip(node._parents, node._grad_fn(grad_out)):
                if grad_in is None or not parent.requires_grad:
                    continue
                held = pending.get(id(parent))
                pending[id(parent)] = grad_in if held is None else held + grad_in

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __pow__(self, other):
        return power(self, other)

    def __neg__(self):
        return mul(self, _lift(-1.0))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _toposort(root: Tensor) -> list[Tensor]:
    """Parents-before-consumers ordering of the graph below ``root``.

    Iterative so that long unrolled sequences cannot overflow the Python
    recursion limit.
    """
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _result(data: np.ndarray, parents: Sequence[Tensor], grad_fn) -> Tensor:
    needs_grad = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad:
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the axes numpy broadcast to produce it."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- pointwise ops -------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result(data, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _result(data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data * b.data

    def grad_fn(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _result(data, (a, b), grad_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data / b.data

    def grad_fn(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _result(data, (a, b), grad_fn)


def power(base: Tensor, exponent) -> Tensor:
    """Elementwise power. The exponent may be a Python number or a Tensor;
    a Tensor exponent requires a strictly positive base (its gradient
    involves log(base))."""
    base = _lift(base)
    if not isinstance(exponent, Tensor):
        k = float(exponent)
        data = base.data**k

        def grad_fn(g):
            return (g * k * base.data ** (k - 1.0),)

        return _result(data, (base,), grad_fn)

    exp_t = exponent
    data = base.data**exp_t.data

    def grad_fn2(g):
        grad_base = _unbroadcast(
            g * exp_t.data * base.data ** (exp_t.data - 1.0), base.data.shape
        )
        grad_exp = None
        if exp_t.requires_grad:
            grad_exp = _unbroadcast(g * data * np.log(base.data), exp_t.data.shape)
        return grad_base, grad_exp

    return _result(data, (base, exp_t), grad_fn2)


def _stable_sigmoid(d: np.ndarray) -> np.ndarray:
    # exp only ever sees non-positive arguments, so it cannot overflow
    e = np.exp(-np.abs(d))
    return np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    x = _lift(x)
    out = _stable_sigmoid(x.data)

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _result(out, (x,), grad_fn)


def softplus(x: Tensor) -> Tensor:
    x = _lift(x)
    data = np.logaddexp(0.0, x.data)

    def grad_fn(g):
        return (g * _stable_sigmoid(x.data),)

    return _result(data, (x,), grad_fn)


def log(x: Tensor) -> Tensor:
    x = _lift(x)
    if np.any(x.data <= 0.0):
        raise ValueError("log requires strictly positive inputs")
    data = np.log(x.data)

    def grad_fn(g):
        return (g / x.data,)

    return _result(data, (x,), grad_fn)


def exp(x: Tensor) -> Tensor:
    x = _lift(x)
    data = np.exp(x.data)

    def grad_fn(g):
        return (g * data,)

    return _result(data, (x,), grad_fn)


def tanh(x: Tensor) -> Tensor:
    x = _lift(x)
    data = np.tanh(x.data)

    def grad_fn(g):
        return (g * (1.0 - data * data),)

    return _result(data, (x,), grad_fn)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient passes through the interior."""
    x = _lift(x)
    data = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)

    def grad_fn(g):
        return (g * inside,)

    return _result(data, (x,), grad_fn)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    x = _lift(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _result(out, (x,), grad_fn)


# -- linear-algebra ops ---------------------------------------------------


def matvec(w: Tensor, v: Tensor) -> Tensor:
    """Matrix-vector product, in three layouts:

    - ``(m, n) @ (n,) -> (m,)``
    - ``(m, n) @ (B, n) -> (B, m)`` (one matrix, a batch of vectors)
    - ``(B, m, n) @ (B, n) -> (B, m)`` (a batch of matrices)
    """
    w, v = _lift(w), _lift(v)
    wd, vd = w.data, v.data
    if wd.ndim == 2 and vd.ndim == 1:
        if wd.shape[1] != vd.shape[0]:
            raise ShapeError(f"matvec: {wd.shape} does not conform with {vd.shape}")
        data = wd @ vd

        def grad_fn(g):
            return np.outer(g, vd), wd.T @ g

    elif wd.ndim == 2 and vd.ndim == 2:
        if wd.shape[1] != vd.shape[1]:
            raise ShapeError(f"matvec: {wd.shape} does not conform with {vd.shape}")
        data = vd @ wd.T

        def grad_fn(g):
            return g.T @ vd, g @ wd

    elif wd.ndim == 3 and vd.ndim == 2:
        if wd.shape[0] != vd.shape[0] or wd.shape[2] != vd.shape[1]:
            raise ShapeError(f"matvec: {wd.shape} does not conform with {vd.shape}")
        data = np.einsum("bmn,bn->bm", wd, vd)

        def grad_fn(g):
            return (
                np.einsum("bm,bn->bmn", g, vd),
                np.einsum("bm,bmn->bn", g, wd),
            )

    else:
        raise ShapeError(f"matvec: unsupported ranks {wd.shape} x {vd.shape}")
    return _result(data, (w, v), grad_fn)


def outer(u: Tensor, v: Tensor) -> Tensor:
    """Outer product ``out[i, j] = u[i] * v[j]``, optionally batched over a
    shared leading axis."""
    u, v = _lift(u), _lift(v)
    ud, vd = u.data, v.data
    if ud.ndim == 1 and vd.ndim == 1:
        data = np.outer(ud, vd)

        def grad_fn(g):
            return g @ vd, ud @ g

    elif ud.ndim == 2 and vd.ndim == 2 and ud.shape[0] == vd.shape[0]:
        data = np.einsum("bi,bj->bij", ud, vd)

        def grad_fn(g):
            return (
                np.einsum("bij,bj->bi", g, vd),
                np.einsum("bij,bi->bj", g, ud),
            )

    else:
        raise ShapeError(f"outer: unsupported shapes {ud.shape} x {vd.shape}")
    return _result(data, (u, v), grad_fn)


# -- structural ops -------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty sequence")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(data, tensors, grad_fn)


def narrow(x: Tensor, start: int, length: int) -> Tensor:
    """Slice ``length`` entries from ``start`` along the last axis."""
    x = _lift(x)
    if start < 0 or start + length > x.data.shape[-1]:
        raise ShapeError(
            f"narrow: [{start}:{start + length}] out of range for {x.data.shape}"
        )
    data = x.data[..., start : start + length]

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[..., start : start + length] = g
        return (full,)

    return _result(data, (x,), grad_fn)


def roll(x: Tensor, shift: int) -> Tensor:
    """Circular roll along the last axis."""
    x = _lift(x)
    data = np.roll(x.data, shift, axis=-1)

    def grad_fn(g):
        return (np.roll(g, -shift, axis=-1),)

    return _result(data, (x,), grad_fn)


def tsum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = _lift(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        expanded = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(expanded, x.data.shape).copy(),)

    return _result(data, (x,), grad_fn)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    return mul(tsum(x), _lift(1.0 / n))


# -- gradient checking ----------------------------------------------------


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, elementwise in x.

    Independent oracle for verifying reverse-mode gradients; O(2 * x.size)
    evaluations of ``f``.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def gradient_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Worst-case relative error between two gradients.

    The denominator is floored so that near-zero entries are compared
    absolutely instead of amplifying finite-difference noise.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ShapeError(f"gradient shapes differ: {a.shape} vs {n.shape}")
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
