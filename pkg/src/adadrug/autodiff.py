"""Tape-based reverse-mode differentiation over dense float64 matrices.

Every value in the graph is a 2-D ``numpy.float64`` array. Operations append
``Node`` objects to a ``Tape`` in creation order, which is by construction a
valid topological order; ``backward`` walks it once in reverse.

Gradient contract: ``backward`` *adds* into ``Node.grad``, so two calls
without ``Tape.zero_grads`` accumulate. Subgradients at the relu/abs kinks
are 0. Elementwise hot loops are delegated to :mod:`adadrug.kernels`.
"""

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_matrix(x):
    """Coerce to a 2-D float64 array, copying only if needed."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


class Node:
    """One tape entry: a value, its gradient accumulator, and provenance."""

    __slots__ = ("value", "grad", "op", "parents", "_backward", "_idx", "tape")

    def __init__(self, value, op, parents, backward, idx, tape):
        self.value = value
        self.grad = np.zeros_like(value)
        self.op = op
        self.parents = parents
        self._backward = backward
        self._idx = idx
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


class Tape:
    """Ordered record of nodes; creation order doubles as topological order."""

    def __init__(self):
        self.nodes = []

    def leaf(self, value, op="leaf"):
        """Enter a parameter or constant into the graph."""
        return self._record(as_matrix(value), op, (), None)

    def _record(self, value, op, parents, backward):
        node = Node(value, op, parents, backward, len(self.nodes), self)
        self.nodes.append(node)
        return node

    def zero_grads(self):
        for node in self.nodes:
            node.grad[...] = 0.0


def backward(tape, loss):
    """Accumulate d(loss)/d(node) into every node's ``grad``.

    ``loss`` must be a 1x1 node on ``tape``. Per-call gradients are built in
    local buffers and added to ``Node.grad`` at the end, so repeated calls
    accumulate additively.
    """
    if loss.value.shape != (1, 1):
        raise ValueError(
            f"backward requires a scalar (1x1) loss node, got shape {loss.value.shape}"
        )
    if loss.tape is not tape:
        raise ValueError("loss node does not belong to this tape")
    local = [None] * len(tape.nodes)
    local[loss._idx] = np.ones((1, 1))
    for node in reversed(tape.nodes):
        g = local[node._idx]
        if g is None:
            continue
        if node._backward is not None:
            for parent, contrib in zip(node.parents, node._backward(g)):
                if contrib is None:
                    continue
                acc = local[parent._idx]
                local[parent._idx] = contrib if acc is None else acc + contrib
        node.grad += g


def _same_shape(a, b, op):
    if a.value.shape != b.value.shape:
        raise ShapeError(
            f"{op}: shapes {a.value.shape} and {b.value.shape} do not match"
        )


def matmul(a, b):
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions disagree, {a.value.shape} x {b.value.shape}"
        )
    out = a.value @ b.value

    def bwd(g):
        return g @ b.value.T, a.value.T @ g

    return a.tape._record(out, "matmul", (a, b), bwd)


def add(a, b):
    _same_shape(a, b, "add")

    def bwd(g):
        return g, g

    return a.tape._record(a.value + b.value, "add", (a, b), bwd)


def sub(a, b):
    _same_shape(a, b, "sub")

    def bwd(g):
        return g, -g

    return a.tape._record(a.value - b.value, "sub", (a, b), bwd)


def ewmul(a, b):
    _same_shape(a, b, "ewmul")

    def bwd(g):
        return g * b.value, g * a.value

    return a.tape._record(a.value * b.value, "ewmul", (a, b), bwd)


def add_bias(x, b):
    """Row-broadcast bias add: x is (B, n), b is (1, n)."""
    if b.value.shape != (1, x.value.shape[1]):
        raise ShapeError(
            f"add_bias: bias shape {b.value.shape} does not broadcast over {x.value.shape}"
        )

    def bwd(g):
        return g, g.sum(axis=0, keepdims=True)

    return x.tape._record(x.value + b.value, "add_bias", (x, b), bwd)


def scale(x, c):
    c = float(c)

    def bwd(g):
        return (g * c,)

    return x.tape._record(x.value * c, "scale", (x,), bwd)


def relu(x):
    def bwd(g):
        return (kernels.relu_bwd(x.value, g),)

    return x.tape._record(kernels.relu(x.value), "relu", (x,), bwd)


def sigmoid(x):
    out = kernels.sigmoid(x.value)

    def bwd(g):
        return (kernels.sigmoid_bwd(out, g),)

    return x.tape._record(out, "sigmoid", (x,), bwd)


def absval(x):
    def bwd(g):
        return (kernels.abs_bwd(x.value, g),)

    return x.tape._record(np.abs(x.value), "abs", (x,), bwd)


def log(x):
    def bwd(g):
        return (g / x.value,)

    return x.tape._record(np.log(x.value), "log", (x,), bwd)


def clamp(x, lo, hi):
    """Clip to [lo, hi]; gradient passes only strictly inside the interval."""

    def bwd(g):
        return (g * ((x.value > lo) & (x.value < hi)),)

    return x.tape._record(np.clip(x.value, lo, hi), "clamp", (x,), bwd)


def row_sum(x):
    """Sum along each row -> (B, 1)."""

    def bwd(g):
        return (np.broadcast_to(g, x.value.shape),)

    return x.tape._record(x.value.sum(axis=1, keepdims=True), "row_sum", (x,), bwd)


def sum_all(x):
    def bwd(g):
        return (np.full(x.value.shape, g[0, 0]),)

    return x.tape._record(
        np.array([[x.value.sum()]]), "sum_all", (x,), bwd
    )


def mean_all(x):
    n = x.value.size

    def bwd(g):
        return (np.full(x.value.shape, g[0, 0] / n),)

    return x.tape._record(
        np.array([[x.value.sum() / n]]), "mean_all", (x,), bwd
    )


def grad_reverse(x, lam=1.0):
    """Identity forward; backward multiplies the upstream gradient by -lam."""
    lam = float(lam)
    if lam < 0.0:
        raise ValueError(f"grad_reverse coefficient must be >= 0, got {lam}")

    def bwd(g):
        return (-lam * g,)

    return x.tape._record(x.value, "grad_reverse", (x,), bwd)
