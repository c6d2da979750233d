"""Minimal reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records an acyclic graph of :class:`Node` values as they are
computed; :meth:`Tape.backward` accumulates gradients in reverse order.  The
op set is intentionally small: exactly what the coupling layers, the feature
adapter, and the likelihood losses need.  Anything else is rejected.

All module-level math helpers (``add``, ``matmul``, ``exp`` ...) dispatch on
type: handed plain numpy arrays they compute eagerly with numpy, handed
:class:`Node` objects they record onto the node's tape.  Model code is
therefore written once and runs both in tracked (training) and untracked
(scoring) mode.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

_OPS = frozenset({
    "leaf", "matmul", "add", "sub", "mul", "exp", "tanh",
    "sum", "mean", "maxc", "slice", "concat", "smul",
})


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


class Node:
    """One recorded value: array, op tag, parent links, gradient slot."""

    __slots__ = ("tape", "idx", "value", "grad", "op", "parents", "_vjps")

    def __init__(self, tape, idx, value, op, parents, vjps):
        self.tape = tape
        self.idx = idx
        self.value = value
        self.grad = None
        self.op = op
        self.parents = parents
        self._vjps = vjps

    @property
    def shape(self):
        return self.value.shape

    # arithmetic sugar; all routes through the module-level dispatchers
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(-1.0, self)

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.shape}, idx={self.idx})"


class Tape:
    """Append-only recording of a computation; single-threaded by contract."""

    def __init__(self):
        self.nodes: list[Node] = []

    def record(self, op, value, parents, vjps) -> Node:
        if op not in _OPS:
            raise ShapeError(f"unsupported operation {op!r}")
        for p in parents:
            if p.tape is not self:
                raise ShapeError("all operands must live on the same tape")
        node = Node(self, len(self.nodes), _as_array(value), op, tuple(parents), vjps)
        self.nodes.append(node)
        return node

    def leaf(self, value) -> Node:
        """A tracked input (parameter or data constant)."""
        return self.record("leaf", value, (), ())

    def backward(self, loss: Node) -> None:
        """Reverse accumulation of d(loss)/d(node) into every ``node.grad``.

        All gradients are zeroed first, so calling backward twice on the
        same tape is idempotent rather than silently double-accumulating.
        """
        if loss.tape is not self:
            raise ShapeError("loss node does not belong to this tape")
        if loss.value.size != 1:
            raise ShapeError(
                f"backward requires a scalar loss, got shape {loss.value.shape}"
            )
        for n in self.nodes:
            n.grad = np.zeros_like(n.value)
        loss.grad = np.ones_like(loss.value)
        for n in reversed(self.nodes[: loss.idx + 1]):
            if n.op == "leaf":
                continue
            g = n.grad
            for parent, vjp in zip(n.parents, n._vjps):
                parent.grad = parent.grad + vjp(g)


def _is_node(x) -> bool:
    return isinstance(x, Node)


def _tape_of(*args) -> Tape:
    for a in args:
        if _is_node(a):
            return a.tape
    raise ShapeError("no Node operand found")


def _lift(x, tape: Tape) -> Node:
    return x if _is_node(x) else tape.leaf(_as_array(x))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if g.shape == tuple(shape):
        return g
    if shape == ():
        return np.asarray(g.sum())
    # matrix + row-vector bias is the only non-trivial broadcast we allow
    return g.sum(axis=0).reshape(shape)


def _check_addlike(sa, sb, opname):
    if sa == sb:
        return
    if sa == () or sb == ():
        return
    if len(sa) == 2 and sb == (sa[1],):
        return
    if len(sb) == 2 and sa == (sb[1],):
        return
    raise ShapeError(f"{opname}: shapes {sa} and {sb} do not conform")


def add(a, b):
    if not (_is_node(a) or _is_node(b)):
        return np.asarray(a) + np.asarray(b)
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_addlike(a.shape, b.shape, "add")
    return tape.record(
        "add", a.value + b.value, (a, b),
        (lambda g, s=a.shape: _unbroadcast(g, s),
         lambda g, s=b.shape: _unbroadcast(g, s)),
    )


def sub(a, b):
    if not (_is_node(a) or _is_node(b)):
        return np.asarray(a) - np.asarray(b)
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_addlike(a.shape, b.shape, "sub")
    return tape.record(
        "sub", a.value - b.value, (a, b),
        (lambda g, s=a.shape: _unbroadcast(g, s),
         lambda g, s=b.shape: _unbroadcast(-g, s)),
    )


def mul(a, b):
    """Elementwise product (same shapes, or one scalar / row-vector)."""
    if not (_is_node(a) or _is_node(b)):
        return np.asarray(a) * np.asarray(b)
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_addlike(a.shape, b.shape, "mul")
    return tape.record(
        "mul", a.value * b.value, (a, b),
        (lambda g, o=b, s=a.shape: _unbroadcast(g * o.value, s),
         lambda g, o=a, s=b.shape: _unbroadcast(g * o.value, s)),
    )


def matmul(a, b):
    if not (_is_node(a) or _is_node(b)):
        return np.asarray(a) @ np.asarray(b)
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    return tape.record(
        "matmul", a.value @ b.value, (a, b),
        (lambda g, o=b: g @ o.value.T,
         lambda g, o=a: o.value.T @ g),
    )


def exp(x):
    if not _is_node(x):
        return np.exp(np.asarray(x))
    out = np.exp(x.value)
    return x.tape.record("exp", out, (x,), (lambda g, o=out: g * o,))


def tanh(x):
    if not _is_node(x):
        return np.tanh(np.asarray(x))
    out = np.tanh(x.value)
    return x.tape.record("tanh", out, (x,), (lambda g, o=out: g * (1.0 - o * o),))


def reduce_sum(x, axis=None):
    if not _is_node(x):
        return np.asarray(x).sum(axis=axis)
    out = x.value.sum(axis=axis)

    def vjp(g, shape=x.shape, axis=axis):
        if axis is None:
            return np.broadcast_to(g, shape).astype(np.float64)
        return np.broadcast_to(np.expand_dims(g, axis), shape).astype(np.float64)

    return x.tape.record("sum", out, (x,), (vjp,))


def reduce_mean(x, axis=None):
    if not _is_node(x):
        return np.asarray(x).mean(axis=axis)
    n = x.value.size if axis is None else x.shape[axis]
    out = x.value.mean(axis=axis)

    def vjp(g, shape=x.shape, axis=axis, n=n):
        if axis is None:
            return np.broadcast_to(g / n, shape).astype(np.float64)
        return np.broadcast_to(np.expand_dims(g / n, axis), shape).astype(np.float64)

    return x.tape.record("mean", out, (x,), (vjp,))


def maximum(x, c: float):
    """max(x, c) with a constant; subgradient 0 at the kink."""
    c = float(c)
    if not _is_node(x):
        return np.maximum(np.asarray(x), c)
    mask = x.value > c
    return x.tape.record(
        "maxc", np.maximum(x.value, c), (x,), (lambda g, m=mask: g * m,)
    )


def cols(x, start: int, stop: int):
    """Slice along the last axis."""
    if not _is_node(x):
        return np.asarray(x)[..., start:stop]
    if not (0 <= start <= stop <= x.shape[-1]):
        raise ShapeError(f"slice [{start}:{stop}] out of range for shape {x.shape}")
    out = x.value[..., start:stop]

    def vjp(g, shape=x.shape, start=start, stop=stop):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return full

    return x.tape.record("slice", out, (x,), (vjp,))


def concat(a, b):
    """Concatenate along the last axis."""
    if not (_is_node(a) or _is_node(b)):
        return np.concatenate([np.asarray(a), np.asarray(b)], axis=-1)
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.value.ndim != b.value.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat: shapes {a.shape} and {b.shape} do not conform")
    na = a.shape[-1]
    return tape.record(
        "concat", np.concatenate([a.value, b.value], axis=-1), (a, b),
        (lambda g, na=na: g[..., :na],
         lambda g, na=na: g[..., na:]),
    )


def scale(c: float, x):
    """Multiply by a python scalar constant."""
    c = float(c)
    if not _is_node(x):
        return c * np.asarray(x)
    return x.tape.record("smul", c * x.value, (x,), (lambda g, c=c: c * g,))
