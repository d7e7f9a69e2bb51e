"""Reverse-mode automatic differentiation over dense float64 arrays.

Graphs are built from immutable :class:`Node` objects and evaluated lazily
with :func:`evaluate`.  :func:`grad` returns *nodes*, not arrays, so a
gradient can itself be differentiated again.  This is what makes a gradient
penalty trainable: the penalty is a function of an input-gradient, and the
critic update needs the parameter-gradient of that penalty.

Example::

    x = param("x", ())
    (dx,) = grad(square(x) * x, [x])       # 3 x^2
    (ddx,) = grad(dx, [x])                  # 6 x
    evaluate(ddx, {"x": np.array(2.0)})     # -> 12.0
"""

from __future__ import annotations

import builtins
import itertools
from typing import Iterable, Mapping, Sequence

import numpy as np

LEAKY_SLOPE = 0.2

_ids = itertools.count()


class GraphError(ValueError):
    """Raised on malformed graphs, unbound slots and non-finite values."""


class Node:
    """One vertex of an expression graph.

    Nodes are immutable after construction; the output shape is fixed from
    the operand shapes so shape errors surface while the graph is built.
    """

    __slots__ = ("op", "inputs", "shape", "attr", "uid", "name")

    def __init__(self, op, inputs, shape, attr=None, name=None):
        init = object.__setattr__
        init(self, "op", op)
        init(self, "inputs", tuple(inputs))
        init(self, "shape", tuple(shape))
        init(self, "attr", attr)
        init(self, "uid", next(_ids))
        init(self, "name", name)

    def __setattr__(self, key, value):
        raise AttributeError("Node is immutable")

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node#{self.uid} {self.op}{label} shape={self.shape}>"

    @property
    def size(self):
        return int(np.prod(self.shape, dtype=np.int64))

    # operator sugar keeps loss code readable
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _lift(value):
    if isinstance(value, Node):
        return value
    return const(value)


# ---------------------------------------------------------------------------
# leaves

def const(value, name=None) -> Node:
    arr = np.array(value, dtype=np.float64)
    arr.setflags(write=False)
    return Node("const", (), arr.shape, attr=arr, name=name)


def zeros(shape) -> Node:
    return const(np.zeros(shape))


def param(slot: str, shape) -> Node:
    """A leaf whose value is supplied at evaluation time under ``slot``."""
    return Node("param", (), shape, attr=slot, name=slot)


# ---------------------------------------------------------------------------
# primitives

def _broadcast(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise GraphError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a: Node, b: Node) -> Node:
    return Node("add", (a, b), _broadcast("add", a, b))


def sub(a: Node, b: Node) -> Node:
    return Node("sub", (a, b), _broadcast("sub", a, b))


def mul(a: Node, b: Node) -> Node:
    return Node("mul", (a, b), _broadcast("mul", a, b))


def div(a: Node, b: Node) -> Node:
    return Node("div", (a, b), _broadcast("div", a, b))


def scale(a: Node, c: float) -> Node:
    return Node("scale", (a,), a.shape, attr=float(c))


def matmul(a: Node, b: Node) -> Node:
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise GraphError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return Node("matmul", (a, b), (a.shape[0], b.shape[1]))


def transpose(a: Node) -> Node:
    if len(a.shape) != 2:
        raise GraphError(f"transpose: expected a matrix, got shape {a.shape}")
    return Node("transpose", (a,), a.shape[::-1])


def concat_last_axis(parts: Sequence[Node]) -> Node:
    parts = tuple(parts)
    if not parts or any(len(p.shape) != 2 for p in parts):
        raise GraphError(f"concat_last_axis: expected matrices, got {[p.shape for p in parts]}")
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise GraphError(f"concat_last_axis: row counts differ {[p.shape for p in parts]}")
    width = builtins.sum(p.shape[1] for p in parts)
    return Node("concat", parts, (parts[0].shape[0], width))


def concat_rows(parts: Sequence[Node]) -> Node:
    parts = tuple(parts)
    if not parts or any(len(p.shape) != 2 for p in parts):
        raise GraphError(f"concat_rows: expected matrices, got {[p.shape for p in parts]}")
    if len({p.shape[1] for p in parts}) != 1:
        raise GraphError(f"concat_rows: widths differ {[p.shape for p in parts]}")
    height = builtins.sum(p.shape[0] for p in parts)
    return Node("concat_rows", parts, (height, parts[0].shape[1]))


def slice_rows(a: Node, start: int, stop: int) -> Node:
    if len(a.shape) != 2 or not 0 <= start <= stop <= a.shape[0]:
        raise GraphError(f"slice_rows: bad range [{start}, {stop}) for shape {a.shape}")
    return Node("slice_rows", (a,), (stop - start, a.shape[1]), attr=(start, stop))


def slice_cols(a: Node, start: int, stop: int) -> Node:
    if len(a.shape) != 2 or not 0 <= start <= stop <= a.shape[1]:
        raise GraphError(f"slice_cols: bad range [{start}, {stop}) for shape {a.shape}")
    return Node("slice_cols", (a,), (a.shape[0], stop - start), attr=(start, stop))


def leaky_relu(a: Node, slope: float = LEAKY_SLOPE) -> Node:
    return Node("leaky_relu", (a,), a.shape, attr=float(slope))


def _leaky_mask(a: Node, slope: float) -> Node:
    # derivative of leaky_relu; right derivative at 0, itself has zero derivative
    return Node("leaky_mask", (a,), a.shape, attr=float(slope))


def tanh(a: Node) -> Node:
    return Node("tanh", (a,), a.shape)


def square(a: Node) -> Node:
    return Node("square", (a,), a.shape)


def sqrt(a: Node) -> Node:
    return Node("sqrt", (a,), a.shape)


def sum(a: Node) -> Node:  # noqa: A001 - mirrors numpy naming
    return Node("sum", (a,), ())


def mean(a: Node) -> Node:
    return Node("mean", (a,), ())


def l2_norm_rows(a: Node) -> Node:
    if len(a.shape) != 2:
        raise GraphError(f"l2_norm_rows: expected a matrix, got shape {a.shape}")
    return Node("l2_norm_rows", (a,), (a.shape[0],))


def reshape(a: Node, shape) -> Node:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise GraphError(f"reshape: cannot reshape {a.shape} to {shape}")
    return Node("reshape", (a,), shape)


def broadcast_to(a: Node, shape) -> Node:
    shape = tuple(shape)
    try:
        if np.broadcast_shapes(a.shape, shape) != shape:
            raise ValueError
    except ValueError:
        raise GraphError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from None
    return Node("broadcast_to", (a,), shape)


def sum_to(a: Node, shape) -> Node:
    """Sum ``a`` down to ``shape``, undoing a numpy broadcast."""
    shape = tuple(shape)
    if shape == a.shape:
        return a
    return Node("sum_to", (a,), shape)


def _safe_div(a: Node, b: Node) -> Node:
    # a / b with 0 where b == 0; used for d||x|| / dx at x = 0
    return Node("safe_div", (a, b), _broadcast("safe_div", a, b))


PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "matmul": matmul,
    "concat_last_axis": concat_last_axis,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "square": square,
    "sqrt": sqrt,
    "sum": sum,
    "mean": mean,
    "l2_norm_rows": l2_norm_rows,
}


def primitive(kind: str, operands: Sequence[Node], **attrs) -> Node:
    """Build a node by primitive name; ``concat_last_axis`` takes the operand list."""
    try:
        build = PRIMITIVES[kind]
    except KeyError:
        raise GraphError(f"unknown primitive {kind!r}") from None
    if kind == "concat_last_axis":
        return build(operands)
    return build(*operands, **attrs)


# ---------------------------------------------------------------------------
# evaluation

def _unbroadcast(value, shape):
    if value.shape == shape:
        return value
    lead = value.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and value.shape[i + lead] != 1
    )
    out = value.sum(axis=axes, keepdims=True)
    return out.reshape(shape)


def _compute(node: Node, v):
    op = node.op
    if op == "add":
        return v[0] + v[1]
    if op == "sub":
        return v[0] - v[1]
    if op == "mul":
        return v[0] * v[1]
    if op == "div":
        return v[0] / v[1]
    if op == "scale":
        return node.attr * v[0]
    if op == "matmul":
        return v[0] @ v[1]
    if op == "transpose":
        return v[0].T
    if op == "concat":
        return np.concatenate(v, axis=1)
    if op == "slice_cols":
        start, stop = node.attr
        return v[0][:, start:stop]
    if op == "concat_rows":
        return np.concatenate(v, axis=0)
    if op == "slice_rows":
        start, stop = node.attr
        return v[0][start:stop]
    if op == "leaky_relu":
        # equals where(x >= 0, x, s*x) bit for bit when 0 <= s <= 1
        x = v[0]
        return np.maximum(x, node.attr * x) if 0.0 <= node.attr <= 1.0 else np.where(x >= 0, x, node.attr * x)
    if op == "leaky_mask":
        out = np.full(v[0].shape, node.attr)
        out[v[0] >= 0] = 1.0
        return out
    if op == "tanh":
        return np.tanh(v[0])
    if op == "square":
        return v[0] * v[0]
    if op == "sqrt":
        return np.sqrt(v[0])
    if op == "sum":
        return np.asarray(v[0].sum())
    if op == "mean":
        return np.asarray(v[0].mean())
    if op == "l2_norm_rows":
        return np.sqrt(np.einsum("ij,ij->i", v[0], v[0]))
    if op == "reshape":
        return v[0].reshape(node.shape)
    if op == "broadcast_to":
        return np.broadcast_to(v[0], node.shape)
    if op == "sum_to":
        return _unbroadcast(v[0], node.shape)
    if op == "safe_div":
        a, b = np.broadcast_arrays(v[0], v[1])
        out = np.zeros(a.shape)
        np.divide(a, b, out=out, where=b != 0)
        return out
    raise GraphError(f"no evaluation rule for op {op!r}")


def topo_order(roots: Iterable[Node]) -> list[Node]:
    order, seen = [], set()
    for root in roots:
        if root.uid in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if node.uid in seen:
                continue
            seen.add(node.uid)
            stack.append((node, True))
            for inp in reversed(node.inputs):
                if inp.uid not in seen:
                    stack.append((inp, False))
    return order


# BLAS-backed ops bypass numpy's floating-point error flags, so their outputs
# are scanned explicitly; every other op raises through np.errstate.
_SCAN = frozenset({"matmul", "l2_norm_rows"})


def _nonfinite(node, exc=None):
    msg = f"non-finite value produced at {node!r}"
    if exc is not None:
        msg += f" ({exc})"
    return GraphError(msg)


class Program:
    """A fixed set of roots with its evaluation order worked out once.

    Re-running a program with new bindings gives the same result as building
    and evaluating a fresh graph, without the per-step construction cost.
    """

    def __init__(self, roots: Sequence[Node]):
        self.roots = list(roots)
        self.order = topo_order(self.roots)
        self._plan = [(n, n.op, n.uid, tuple(i.uid for i in n.inputs)) for n in self.order]

    @property
    def slots(self) -> set[str]:
        return {n.attr for n in self.order if n.op == "param"}

    def run(self, bindings: Mapping[str, np.ndarray]) -> list[np.ndarray]:
        cache: dict[int, np.ndarray] = {}
        with np.errstate(over="raise", invalid="raise", divide="raise", under="ignore"):
            for node, op, uid, ins in self._plan:
                if op == "const":
                    value = node.attr
                    if not np.isfinite(value).all():
                        raise _nonfinite(node)
                elif op == "param":
                    try:
                        value = np.asarray(bindings[node.attr], dtype=np.float64)
                    except KeyError:
                        raise GraphError(f"unbound parameter slot {node.attr!r}") from None
                    if value.shape != node.shape:
                        raise GraphError(
                            f"slot {node.attr!r} bound to shape {value.shape}, expected {node.shape}"
                        )
                    if not np.isfinite(value).all():
                        raise _nonfinite(node)
                else:
                    try:
                        value = _compute(node, [cache[i] for i in ins])
                    except FloatingPointError as exc:
                        raise _nonfinite(node, exc) from None
                    if op in _SCAN and not np.isfinite(value).all():
                        raise _nonfinite(node)
                cache[uid] = value
        return [cache[r.uid] for r in self.roots]


def evaluate_many(roots: Sequence[Node], bindings: Mapping[str, np.ndarray]) -> list[np.ndarray]:
    """Evaluate several roots in one pass so shared subgraphs run once."""
    return Program(roots).run(bindings)


def evaluate(root: Node, bindings: Mapping[str, np.ndarray] | None = None) -> np.ndarray:
    return evaluate_many([root], bindings or {})[0]


eval = evaluate  # noqa: A001 - contract name


# ---------------------------------------------------------------------------
# differentiation

def _vjp(node: Node, g: Node, out: Node) -> list[Node | None]:
    """Adjoints for each input of ``node`` given the output adjoint ``g``."""
    op, ins = node.op, node.inputs
    if op == "add":
        return [sum_to(g, ins[0].shape), sum_to(g, ins[1].shape)]
    if op == "sub":
        return [sum_to(g, ins[0].shape), sum_to(scale(g, -1.0), ins[1].shape)]
    if op == "mul":
        a, b = ins
        return [sum_to(mul(g, b), a.shape), sum_to(mul(g, a), b.shape)]
    if op == "div":
        a, b = ins
        ga = div(g, b)
        gb = scale(mul(ga, div(a, b)), -1.0)
        return [sum_to(ga, a.shape), sum_to(gb, b.shape)]
    if op == "safe_div":
        a, b = ins
        ga = _safe_div(g, b)
        gb = scale(mul(ga, _safe_div(a, b)), -1.0)
        return [sum_to(ga, a.shape), sum_to(gb, b.shape)]
    if op == "scale":
        return [scale(g, node.attr)]
    if op == "matmul":
        a, b = ins
        return [matmul(g, transpose(b)), matmul(transpose(a), g)]
    if op == "transpose":
        return [transpose(g)]
    if op == "concat":
        grads, start = [], 0
        for part in ins:
            stop = start + part.shape[1]
            grads.append(slice_cols(g, start, stop))
            start = stop
        return grads
    if op == "slice_cols":
        (a,) = ins
        start, stop = node.attr
        pieces = []
        if start > 0:
            pieces.append(zeros((a.shape[0], start)))
        pieces.append(g)
        if stop < a.shape[1]:
            pieces.append(zeros((a.shape[0], a.shape[1] - stop)))
        return [concat_last_axis(pieces) if len(pieces) > 1 else g]
    if op == "concat_rows":
        grads, start = [], 0
        for part in ins:
            stop = start + part.shape[0]
            grads.append(slice_rows(g, start, stop))
            start = stop
        return grads
    if op == "slice_rows":
        (a,) = ins
        start, stop = node.attr
        pieces = []
        if start > 0:
            pieces.append(zeros((start, a.shape[1])))
        pieces.append(g)
        if stop < a.shape[0]:
            pieces.append(zeros((a.shape[0] - stop, a.shape[1])))
        return [concat_rows(pieces) if len(pieces) > 1 else g]
    if op == "leaky_relu":
        return [mul(g, _leaky_mask(ins[0], node.attr))]
    if op == "tanh":
        return [mul(g, sub(const(1.0), square(out)))]
    if op == "square":
        return [mul(g, scale(ins[0], 2.0))]
    if op == "sqrt":
        return [div(scale(g, 0.5), out)]
    if op == "sum":
        return [broadcast_to(g, ins[0].shape)]
    if op == "mean":
        n = ins[0].size
        return [scale(broadcast_to(g, ins[0].shape), 1.0 / n)]
    if op == "l2_norm_rows":
        (a,) = ins
        m = a.shape[0]
        col = lambda v: reshape(v, (m, 1))  # noqa: E731
        return [mul(col(g), _safe_div(a, col(out)))]
    if op == "reshape":
        return [reshape(g, ins[0].shape)]
    if op == "broadcast_to":
        return [sum_to(g, ins[0].shape)]
    if op == "sum_to":
        return [broadcast_to(g, ins[0].shape)]
    if op == "leaky_mask":
        return [None]
    raise GraphError(f"no derivative rule for op {op!r}")


def grad(root: Node, wrt: Sequence[Node]) -> list[Node]:
    """Symbolic gradient of scalar ``root`` with respect to each node in ``wrt``.

    The returned nodes are ordinary graph nodes and may be passed to ``grad``
    again.  Inputs that ``root`` does not depend on get a constant zero.
    """
    if root.shape != ():
        raise GraphError(f"grad needs a scalar root, got shape {root.shape}")
    wrt = list(wrt)
    targets = {w.uid for w in wrt}
    order = topo_order([root])

    # only propagate along paths that reach a requested input
    live: set[int] = set()
    for node in order:
        if node.uid in targets or any(i.uid in live for i in node.inputs):
            live.add(node.uid)

    adjoint: dict[int, list[Node]] = {root.uid: [const(1.0)]}
    total: dict[int, Node] = {}
    for node in reversed(order):
        contribs = adjoint.pop(node.uid, None)
        if contribs is None or node.uid not in live:
            continue
        g = contribs[0]
        for c in contribs[1:]:
            g = add(g, c)
        total[node.uid] = g
        if not node.inputs:
            continue
        if not any(i.uid in live for i in node.inputs):
            continue
        for inp, gi in zip(node.inputs, _vjp(node, g, node)):
            if gi is None or inp.uid not in live:
                continue
            adjoint.setdefault(inp.uid, []).append(gi)

    return [total.get(w.uid) or zeros(w.shape) for w in wrt]
