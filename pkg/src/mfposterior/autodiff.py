"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Every operation applied to a :class:`Var` appends a node to the tape that owns
it.  Nodes are appended in creation order, which is a valid topological order,
so :meth:`Tape.backward` only has to walk the node list once in reverse.

Only a closed set of primitives is differentiable.  Feeding a ``Var`` to an
arbitrary numpy ufunc raises :class:`UnsupportedPrimitiveError` instead of
silently dropping the gradient.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .errors import UnsupportedPrimitiveError

__all__ = [
    "Tape",
    "Var",
    "affine",
    "matmul",
    "tanh",
    "square",
    "exp",
    "log",
    "softplus",
    "sqrt",
    "sum",
    "mean",
    "where",
]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    __slots__ = ("value", "grad", "tape", "_backward", "_parents", "requires_grad")

    # keep numpy from hijacking binary operators with an ndarray on the left
    __array_priority__ = 1000

    def __init__(self, value, tape: "Tape", parents=(), backward=None, requires_grad=True):
        self.value = value
        self.grad = None
        self.tape = tape
        self._parents = parents
        self._backward = backward
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var(shape={self.shape})"

    # operator sugar ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        raise UnsupportedPrimitiveError(
            f"numpy ufunc {ufunc.__name__!r} is not a differentiable primitive"
        )

    def __array_function__(self, func, types, args, kwargs):
        raise UnsupportedPrimitiveError(
            f"numpy function {func.__name__!r} is not a differentiable primitive"
        )


class Tape:
    """Records one forward pass; ``backward`` runs the adjoint sweep."""

    def __init__(self):
        self.nodes: list[Var] = []

    def var(self, value) -> Var:
        v = Var(np.asarray(value, dtype=float), self)
        return v

    def constant(self, value) -> Var:
        return Var(np.asarray(value, dtype=float), self, requires_grad=False)

    def _record(self, value, parents, backward) -> Var:
        needs = any(p.requires_grad for p in parents)
        node = Var(value, self, parents if needs else (), backward if needs else None, needs)
        if needs:
            self.nodes.append(node)
        return node

    def backward(self, out: Var) -> None:
        if np.ndim(out.value) != 0:
            raise ValueError("backward() needs a scalar output")
        out.grad = np.ones_like(out.value)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None:
                continue
            node._backward(g)
        for node in self.nodes:
            # free intermediate graph references, keep leaf grads
            node._parents = ()
            node._backward = None


def _lift(x, tape: Tape) -> Var:
    if isinstance(x, Var):
        return x
    return tape.constant(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _accum(v: Var, g) -> None:
    if not v.requires_grad:
        return
    if v.grad is None:
        v.grad = g
    else:
        v.grad = v.grad + g


# elementwise binary -----------------------------------------------------------

def add(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)

    def backward(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))

    return tape._record(a.value + b.value, (a, b), backward)


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)

    def backward(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(-g, b.value.shape))

    return tape._record(a.value - b.value, (a, b), backward)


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.value, a.value.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.value, b.value.shape))

    return tape._record(a.value * b.value, (a, b), backward)


def div(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    out = a.value / b.value

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.value, a.value.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * out / b.value, b.value.shape))

    return tape._record(out, (a, b), backward)


# linear algebra ---------------------------------------------------------------

def matmul(a, b) -> Var:
    """Matrix product for 2-D @ 2-D and 2-D @ 1-D operands."""
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    A, B = a.value, b.value

    def backward(g):
        if a.requires_grad:
            _accum(a, np.outer(g, B) if B.ndim == 1 else g @ B.T)
        if b.requires_grad:
            _accum(b, A.T @ g)

    return tape._record(A @ B, (a, b), backward)


def affine(x, W, b) -> Var:
    """``x @ W + b`` with ``x`` of shape (n, fan_in)."""
    tape = _tape_of(x, W, b)
    x, W, b = _lift(x, tape), _lift(W, tape), _lift(b, tape)
    X, Wv = x.value, W.value

    def backward(g):
        if x.requires_grad:
            _accum(x, g @ Wv.T)
        if W.requires_grad:
            _accum(W, X.T @ g)
        if b.requires_grad:
            _accum(b, g.sum(axis=0))

    return tape._record(X @ Wv + b.value, (x, W, b), backward)


# elementwise unary ------------------------------------------------------------

def tanh(x: Var) -> Var:
    out = np.tanh(x.value)

    def backward(g):
        _accum(x, g * (1.0 - out * out))

    return x.tape._record(out, (x,), backward)


def square(x: Var) -> Var:
    X = x.value

    def backward(g):
        _accum(x, 2.0 * g * X)

    return x.tape._record(X * X, (x,), backward)


def exp(x: Var) -> Var:
    out = np.exp(x.value)

    def backward(g):
        _accum(x, g * out)

    return x.tape._record(out, (x,), backward)


def log(x: Var) -> Var:
    X = x.value

    def backward(g):
        _accum(x, g / X)

    return x.tape._record(np.log(X), (x,), backward)


def sqrt(x: Var) -> Var:
    out = np.sqrt(x.value)

    def backward(g):
        _accum(x, 0.5 * g / out)

    return x.tape._record(out, (x,), backward)


def softplus(x: Var) -> Var:
    X = x.value
    out = np.logaddexp(0.0, X)

    def backward(g):
        _accum(x, g / (1.0 + np.exp(-X)))

    return x.tape._record(out, (x,), backward)


# reductions -------------------------------------------------------------------

def sum(x: Var, axis: Optional[int] = None) -> Var:  # noqa: A001
    X = x.value

    def backward(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, X.shape).copy())
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g, axis), X.shape).copy())

    return x.tape._record(X.sum(axis=axis), (x,), backward)


def mean(x: Var, axis: Optional[int] = None) -> Var:
    X = x.value
    n = X.size if axis is None else X.shape[axis]

    def backward(g):
        if axis is None:
            _accum(x, np.full(X.shape, g / n))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g / n, axis), X.shape).copy())

    return x.tape._record(X.mean(axis=axis), (x,), backward)


def where(cond: np.ndarray, a, b) -> Var:
    """Select ``a`` where ``cond`` else ``b``; ``cond`` is a constant mask."""
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    cond = np.asarray(cond, dtype=bool)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.where(cond, g, 0.0), a.value.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.where(cond, 0.0, g), b.value.shape))

    return tape._record(np.where(cond, a.value, b.value), (a, b), backward)


def value_and_grad(fn: Callable[[Tape, list], Var], params: list[np.ndarray]):
    """Evaluate ``fn(tape, param_vars)`` and return (value, list of gradients)."""
    tape = Tape()
    pv = [tape.var(p) for p in params]
    out = fn(tape, pv)
    tape.backward(out)
    grads = [np.zeros_like(p) if v.grad is None else np.asarray(v.grad) for p, v in zip(params, pv)]
    return float(out.value), grads
