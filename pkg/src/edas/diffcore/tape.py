"""Reverse-mode differentiation over numpy arrays.

A :class:`Tape` records every primitive applied to its :class:`Node` values,
in creation order, together with the vector-Jacobian product needed to push
an adjoint back to each input.  Values are plain ``float64`` arrays; binary
ops broadcast like numpy and reduce adjoints back to the operand shape.

    tape = Tape()
    x = tape.var(np.array([3.0]))
    loss = (x * x).sum()
    grads = grad_backward(tape, loss)
    grads[x.id]  # -> array([6.])
"""

import numpy as np

from ..exceptions import InvalidArgument


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Node:
    __slots__ = ("tape", "id", "value")
    __array_priority__ = 100  # make ndarray <op> Node dispatch to Node

    def __init__(self, tape, id, value):
        self.tape = tape
        self.id = id
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, shape={self.value.shape})"

    def __add__(self, other):
        return self.tape.add(self, other)

    def __radd__(self, other):
        return self.tape.add(other, self)

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    def __rmul__(self, other):
        return self.tape.mul(other, self)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __rmatmul__(self, other):
        return self.tape.matmul(other, self)

    def __neg__(self):
        return self.tape.mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Node):
            raise InvalidArgument("division by a tape node is not a primitive")
        return self.tape.mul(self, 1.0 / np.asarray(other, dtype=float))

    def sum(self, axis=None):
        return self.tape.sum(self, axis)

    def mean(self, axis=None):
        return self.tape.mean(self, axis)


class Tape:
    """Append-only record of primitive operations.

    ``parents[i]`` holds ``(input_id, vjp)`` pairs for node ``i``; inputs
    always have smaller ids than the node that consumes them.
    """

    def __init__(self):
        self.values = []
        self.parents = []
        self.ops = []
        self.live = []  # node depends on some leaf
        self._params = {}

    def __len__(self):
        return len(self.values)

    def _push(self, value, op, parents=()):
        value = np.asarray(value, dtype=float)
        node = Node(self, len(self.values), value)
        links = tuple((pid, vjp) for pid, vjp in parents if self.live[pid])
        self.values.append(value)
        self.parents.append(links)
        self.ops.append(op)
        self.live.append(op == "leaf" or bool(links))
        return node

    def var(self, value):
        """New leaf node (a differentiable input)."""
        return self._push(np.array(value, dtype=float), "leaf")

    def const(self, value):
        if value is None:  # np.array(None, float) would be a silent nan
            raise InvalidArgument("cannot lift None onto the tape")
        return self._push(np.array(value, dtype=float), "const")

    def param(self, array):
        """Leaf bound to ``array`` by identity; repeated calls share one node."""
        hit = self._params.get(id(array))
        if hit is None:
            # keep ``array`` referenced so its id cannot be recycled
            hit = (array, self._push(array, "leaf"))
            self._params[id(array)] = hit
        return hit[1]

    def lift(self, x):
        if isinstance(x, Node):
            if x.tape is not self:
                raise InvalidArgument("node belongs to a different tape")
            return x
        return self.const(x)

    # -- primitives -------------------------------------------------------

    def add(self, a, b):
        a, b = self.lift(a), self.lift(b)
        sa, sb = a.shape, b.shape
        return self._push(a.value + b.value, "add", [
            (a.id, lambda g: _unbroadcast(g, sa)),
            (b.id, lambda g: _unbroadcast(g, sb)),
        ])

    def sub(self, a, b):
        a, b = self.lift(a), self.lift(b)
        sa, sb = a.shape, b.shape
        return self._push(a.value - b.value, "add", [
            (a.id, lambda g: _unbroadcast(g, sa)),
            (b.id, lambda g: -_unbroadcast(g, sb)),
        ])

    def mul(self, a, b):
        a, b = self.lift(a), self.lift(b)
        va, vb = a.value, b.value
        return self._push(va * vb, "mul", [
            (a.id, lambda g: _unbroadcast(g * vb, va.shape)),
            (b.id, lambda g: _unbroadcast(g * va, vb.shape)),
        ])

    def matmul(self, a, b):
        a, b = self.lift(a), self.lift(b)
        va, vb = a.value, b.value
        if va.ndim != 2 or vb.ndim != 2 or va.shape[1] != vb.shape[0]:
            raise InvalidArgument(f"matmul shape mismatch {va.shape} @ {vb.shape}")
        return self._push(va @ vb, "matmul", [
            (a.id, lambda g: g @ vb.T),
            (b.id, lambda g: va.T @ g),
        ])

    def tanh(self, a):
        a = self.lift(a)
        out = np.tanh(a.value)
        return self._push(out, "tanh", [(a.id, lambda g: g * (1.0 - out * out))])

    def exp(self, a):
        a = self.lift(a)
        out = np.exp(a.value)
        return self._push(out, "exp", [(a.id, lambda g: g * out)])

    def log(self, a):
        a = self.lift(a)
        va = a.value
        return self._push(np.log(va), "log", [(a.id, lambda g: g / va)])

    def square(self, a):
        a = self.lift(a)
        va = a.value
        return self._push(va * va, "square", [(a.id, lambda g: 2.0 * g * va)])

    def relu(self, a):
        """max(a, 0); the subgradient at exactly 0 is taken as 0."""
        a = self.lift(a)
        va = a.value
        mask = (va > 0).astype(float)
        return self._push(va * mask, "relu", [(a.id, lambda g: g * mask)])

    def sum(self, a, axis=None):
        a = self.lift(a)
        shape = a.shape
        out = a.value.sum(axis=axis)

        def vjp(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape).copy()

        return self._push(out, "sum", [(a.id, vjp)])

    def mean(self, a, axis=None):
        a = self.lift(a)
        shape = a.shape
        n = a.value.size if axis is None else shape[axis]
        out = a.value.mean(axis=axis)

        def vjp(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g / n, shape).copy()

        return self._push(out, "mean", [(a.id, vjp)])

    def concat(self, parts, axis=-1):
        parts = [self.lift(p) for p in parts]
        sizes = [p.shape[axis] for p in parts]
        bounds = np.cumsum([0] + sizes)
        out = np.concatenate([p.value for p in parts], axis=axis)
        links = []
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * out.ndim
            idx[axis] = slice(lo, hi)
            links.append((p.id, lambda g, idx=tuple(idx): g[idx]))
        return self._push(out, "concat", links)

    def clip(self, a, limit):
        """Symmetric clip to [-limit, limit] composed from relu."""
        return a - self.relu(a - limit) + self.relu(-a - limit)

    # -- reverse pass ------------------------------------------------------

    def gradient(self, loss, wrt):
        """Adjoints of ``loss`` for each node or bound array in ``wrt``.

        Entries that the loss does not reach get zeros of matching shape.
        """
        adj = grad_backward(self, loss)
        out = []
        for item in wrt:
            if isinstance(item, Node):
                g = adj.get(item.id)
                shape = item.shape
            else:
                hit = self._params.get(id(item))
                g = None if hit is None else adj.get(hit[1].id)
                shape = np.shape(item)
            out.append(np.zeros(shape) if g is None else g)
        return out


def grad_backward(tape, loss):
    """Run the reverse sweep from a scalar ``loss`` node.

    Returns a dict mapping node id to adjoint for every node the loss
    depends on; the loss node's own adjoint is 1.
    """
    if not isinstance(loss, Node) or loss.tape is not tape:
        raise InvalidArgument("loss must be a node on this tape")
    if loss.value.size != 1:
        raise InvalidArgument(f"loss must be scalar, got shape {loss.shape}")
    adj = {loss.id: np.ones_like(loss.value)}
    for i in range(loss.id, -1, -1):
        g = adj.get(i)
        if g is None:
            continue
        for pid, vjp in tape.parents[i]:
            contrib = vjp(g)
            prev = adj.get(pid)
            adj[pid] = contrib if prev is None else prev + contrib
    return adj


def tanh(x):
    return x.tape.tanh(x)


def exp(x):
    return x.tape.exp(x)


def log(x):
    return x.tape.log(x)


def square(x):
    return x.tape.square(x)


def relu(x):
    return x.tape.relu(x)
