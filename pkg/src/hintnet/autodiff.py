"""Reverse-mode automatic differentiation on small dense float64 tensors.

The engine records every operation as a node in an append-only graph.
Backward passes are themselves built out of graph operations, so the
result of ``grad(..., create_graph=True)`` is an ordinary differentiable
node and gradients can be differentiated again.  That property is what
makes a training loss defined on gradientsers optimizable.

Scope is deliberately narrow: 1-D and 2-D tensors, float64 only, and a
restricted broadcasting rule set (same shape, one (1,)-shaped scalar
operand, and matrix-plus-row-vector bias for ``add``/``sub``).  Graphs
are meant to be short-lived: build one per training step, differentiate,
throw it away.  Parameters live outside the graph as plain numpy arrays
and re-enter as leaves each step.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "AutodiffError",
    "ShapeError",
    "DomainError",
    "Graph",
    "Node",
    "as_tensor",
    "gather_rows",
    "scatter_rows",
    "stack_rows",
    "dot",
    "matvec",
    "vecmat",
    "grad",
]


class AutodiffError(Exception):
    """Base class for engine errors."""


class ShapeError(AutodiffError):
    """Operand shapes violate an operation's contract."""


class DomainError(AutodiffError):
    """Operand values leave an operation's numeric domain (log <= 0, div by 0, non-finite)."""


def as_tensor(value) -> np.ndarray:
    """Coerce ``value`` to an immutable, C-contiguous float64 array.

    Rejects 0-d and >2-d shapes, zero-sized dimensions, and non-finite
    entries.  The returned array is a copy with the writeable flag
    cleared, so node values can never be mutated after creation.
    """
    arr = np.array(value, dtype=np.float64, order="C")
    if arr.ndim == 0 or arr.ndim > 2:
        raise ShapeError(f"tensors must be 1-D or 2-D, got shape {arr.shape}")
    if 0 in arr.shape:
        raise ShapeError(f"zero-sized dimension in shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DomainError("tensor contains NaN or Inf")
    arr.flags.writeable = False
    return arr


def _is_scalar(shape: tuple) -> bool:
    return shape == (1,)


class Node:
    """One value in the computation graph.

    ``value`` is an immutable float64 array.  ``vjp`` is ``None`` for
    leaves; for interior nodes it maps an incoming adjoint node to
    ``(parent, adjoint_contribution)`` pairs, built with the same public
    operations so repeated differentiation works.
    """

    __slots__ = ("graph", "nid", "op", "parents", "value", "requires_grad", "vjp")

    def __init__(self, graph, nid, op, parents, value, requires_grad, vjp):
        self.graph = graph
        self.nid = nid
        self.op = op
        self.parents = parents
        self.value = value
        self.requires_grad = requires_grad
        self.vjp = vjp

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element node, got shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    # -- arithmetic sugar ------------------------------------------------

    def __add__(self, other):
        return _binary("add", self, _coerce(self.graph, other))

    def __radd__(self, other):
        return _binary("add", _coerce(self.graph, other), self)

    def __sub__(self, other):
        return _binary("sub", self, _coerce(self.graph, other))

    def __rsub__(self, other):
        return _binary("sub", _coerce(self.graph, other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        return _binary("mul", self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            if other == 0:
                raise DomainError("division by zero")
            return self.scale(1.0 / float(other))
        return _binary("div", self, other)

    def __rtruediv__(self, other):
        return _binary("div", _coerce(self.graph, other), self)

    def __neg__(self):
        return self.scale(-1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- unary / structural ops ------------------------------------------

    def scale(self, c: float) -> "Node":
        c = float(c)
        if not np.isfinite(c):
            raise DomainError("scale factor must be finite")
        out = self.graph._append("scale", [self], self.value * c, self.requires_grad)
        if out.requires_grad:
            a = self

            def vjp(g):
                return [(a, g.scale(c))]

            out.vjp = vjp
        return out

    def tanh(self) -> "Node":
        out = self.graph._append("tanh", [self], np.tanh(self.value), self.requires_grad)
        if out.requires_grad:
            a = self

            def vjp(g):
                ones = g.graph.constant(np.ones(out.shape))
                return [(a, g * (ones - out * out))]

            out.vjp = vjp
        return out

    def exp(self) -> "Node":
        val = np.exp(self.value)
        if not np.isfinite(val).all():
            raise DomainError("exp overflow")
        out = self.graph._append("exp", [self], val, self.requires_grad)
        if out.requires_grad:
            a = self

            def vjp(g):
                return [(a, g * out)]

            out.vjp = vjp
        return out

    def log(self) -> "Node":
        if not np.all(self.value > 0):
            raise DomainError("log requires strictly positive input")
        out = self.graph._append("log", [self], np.log(self.value), self.requires_grad)
        if out.requires_grad:
            a = self

            def vjp(g):
                return [(a, g / a)]

            out.vjp = vjp
        return out

    def t(self) -> "Node":
        if self.ndim != 2:
            raise ShapeError(f"transpose needs a matrix, got shape {self.shape}")
        out = self.graph._append(
            "transpose", [self], np.ascontiguousarray(self.value.T), self.requires_grad
        )
        if out.requires_grad:
            a = self

            def vjp(g):
                return [(a, g.t())]

            out.vjp = vjp
        return out

    def reshape(self, shape) -> "Node":
        shape = tuple(int(d) for d in shape)
        if len(shape) == 0 or len(shape) > 2 or any(d <= 0 for d in shape):
            raise ShapeError(f"invalid target shape {shape}")
        if int(np.prod(shape)) != self.size:
            raise ShapeError(f"cannot reshape {self.shape} to {shape}")
        out = self.graph._append(
            "reshape", [self], self.value.reshape(shape), self.requires_grad
        )
        if out.requires_grad:
            a = self
            orig = self.shape

            def vjp(g):
                return [(a, g.reshape(orig))]

            out.vjp = vjp
        return out

    def sum(self, axis: int | None = None) -> "Node":
        """Reduce over ``axis`` (0 or 1 for matrices), or everything when None.

        Full reductions and 1-D reductions produce a (1,)-shaped scalar.
        """
        a = self
        if axis is None or self.ndim == 1:
            if axis not in (None, 0):
                raise ShapeError(f"axis {axis} invalid for shape {self.shape}")
            out = self.graph._append(
                "sum", [self], np.array([self.value.sum()]), self.requires_grad
            )
            if out.requires_grad:

                def vjp(g):
                    ones = g.graph.constant(np.ones(a.shape))
                    return [(a, ones * g)]

                out.vjp = vjp
            return out
        if axis not in (0, 1):
            raise ShapeError(f"axis {axis} invalid for shape {self.shape}")
        m, n = self.shape
        out = self.graph._append(
            "sum", [self], self.value.sum(axis=axis), self.requires_grad
        )
        if out.requires_grad:
            if axis == 0:

                def vjp(g):
                    ones = g.graph.constant(np.ones((m, 1)))
                    return [(a, matmul(ones, g.reshape((1, n))))]

            else:

                def vjp(g):
                    ones = g.graph.constant(np.ones((1, n)))
                    return [(a, matmul(g.reshape((m, 1)), ones))]

            out.vjp = vjp
        return out

    def mean(self, axis: int | None = None) -> "Node":
        if axis is None:
            return self.sum().scale(1.0 / self.size)
        return self.sum(axis=axis).scale(1.0 / self.shape[axis])

    def softmax(self) -> "Node":
        """Stable softmax: over the whole vector, or row-wise for a matrix."""
        x = self.value
        if self.ndim == 1:
            shifted = x - x.max()
            e = np.exp(shifted)
            val = e / e.sum()
        else:
            shifted = x - x.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            val = e / e.sum(axis=1, keepdims=True)
        out = self.graph._append("softmax", [self], val, self.requires_grad)
        if out.requires_grad:
            a = self

            def vjp(g):
                # d softmax: s * (g - <s, g>), with the inner product per row.
                sg = out * g
                if a.ndim == 1:
                    return [(a, out * (g - sg.sum()))]
                m, n = a.shape
                ones = g.graph.constant(np.ones((1, n)))
                inner = matmul(sg.sum(axis=1).reshape((m, 1)), ones)
                return [(a, out * (g - inner))]

            out.vjp = vjp
        return out


def _coerce(graph: "Graph", other) -> Node:
    if isinstance(other, Node):
        return other
    if isinstance(other, (int, float)):
        return graph.constant(np.array([float(other)]))
    raise TypeError(f"cannot use {type(other).__name__} as an operand")


class Graph:
    """Append-only record of computation.

    Nodes reference only earlier nodes, so iterating ids in reverse is a
    valid reverse-topological order.  Graph instances are single-threaded;
    distinct graphs are independent.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, op, parents, value, requires_grad, vjp=None) -> Node:
        value = np.ascontiguousarray(value, dtype=np.float64)
        value.flags.writeable = False
        node = Node(self, len(self.nodes), op, parents, value, requires_grad, vjp)
        self.nodes.append(node)
        return node

    def leaf(self, value, requires_grad: bool = False) -> Node:
        """Insert an input node. Validates shape and finiteness."""
        return self._append("leaf", [], as_tensor(value), bool(requires_grad))

    def constant(self, value) -> Node:
        return self.leaf(value, requires_grad=False)


def _reduce_to(g: Node, target_shape: tuple) -> Node:
    """Sum an adjoint down to a broadcast operand's shape."""
    if g.shape == target_shape:
        return g
    if _is_scalar(target_shape):
        return g.sum()
    # row-vector bias (n,) under a (m, n) adjoint
    if g.ndim == 2 and target_shape == (g.shape[1],):
        return g.sum(axis=0)
    raise ShapeError(f"cannot reduce adjoint {g.shape} to {target_shape}")


def _binary(op: str, a: Node, b: Node) -> Node:
    if not isinstance(b, Node):
        raise TypeError(f"cannot use {type(b).__name__} as an operand")
    if a.graph is not b.graph:
        raise AutodiffError("operands belong to different graphs")
    sa, sb = a.shape, b.shape
    bias = a.ndim == 2 and sb == (sa[1],) or b.ndim == 2 and sa == (sb[1],)
    if not (sa == sb or _is_scalar(sa) or _is_scalar(sb) or (bias and op in ("add", "sub"))):
        raise ShapeError(f"cannot {op} shapes {sa} and {sb}")
    av, bv = a.value, b.value
    if op == "add":
        val = av + bv
    elif op == "sub":
        val = av - bv
    elif op == "mul":
        val = av * bv
    else:
        if np.any(bv == 0.0):
            raise DomainError("division by zero")
        val = av / bv
    out = a.graph._append(op, [a, b], val, a.requires_grad or b.requires_grad)
    if out.requires_grad:
        if op == "add":

            def vjp(g):
                parts = []
                if a.requires_grad:
                    parts.append((a, _reduce_to(g, sa)))
                if b.requires_grad:
                    parts.append((b, _reduce_to(g, sb)))
                return parts

        elif op == "sub":

            def vjp(g):
                parts = []
                if a.requires_grad:
                    parts.append((a, _reduce_to(g, sa)))
                if b.requires_grad:
                    parts.append((b, _reduce_to(g.scale(-1.0), sb)))
                return parts

        elif op == "mul":

            def vjp(g):
                parts = []
                if a.requires_grad:
                    parts.append((a, _reduce_to(g * b, sa)))
                if b.requires_grad:
                    parts.append((b, _reduce_to(g * a, sb)))
                return parts

        else:

            def vjp(g):
                parts = []
                if a.requires_grad:
                    parts.append((a, _reduce_to(g / b, sa)))
                if b.requires_grad:
                    parts.append((b, _reduce_to((g * a / (b * b)).scale(-1.0), sb)))
                return parts

        out.vjp = vjp
    return out


def matmul(a: Node, b: Node) -> Node:
    """Matrix product of a [m,k] and b [k,n]. Backward: dA = G Bᵀ, dB = Aᵀ G."""
    if a.graph is not b.graph:
        raise AutodiffError("operands belong to different graphs")
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    out = a.graph._append(
        "matmul", [a, b], a.value @ b.value, a.requires_grad or b.requires_grad
    )
    if out.requires_grad:

        def vjp(g):
            parts = []
            if a.requires_grad:
                parts.append((a, matmul(g, b.t())))
            if b.requires_grad:
                parts.append((b, matmul(a.t(), g)))
            return parts

        out.vjp = vjp
    return out


def gather_rows(table: Node, indices) -> Node:
    """Select rows of a matrix. Backward scatter-adds into the table's adjoint."""
    if table.ndim != 2:
        raise ShapeError(f"gather_rows needs a matrix, got shape {table.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeError("indices must be a non-empty 1-D sequence")
    if np.any(idx < 0) or np.any(idx >= table.shape[0]):
        raise AutodiffError(
            f"index out of range for table with {table.shape[0]} rows"
        )
    idx = tuple(int(i) for i in idx)
    out = table.graph._append(
        "gather_rows", [table], table.value[list(idx)], table.requires_grad
    )
    if out.requires_grad:
        nrows = table.shape[0]

        def vjp(g):
            return [(table, scatter_rows(g, idx, nrows))]

        out.vjp = vjp
    return out


def scatter_rows(values: Node, indices, num_rows: int) -> Node:
    """Accumulate rows of ``values`` into a zero matrix with ``num_rows`` rows.

    Duplicate indices add. This is the adjoint of gather_rows and its own
    adjoint is gather_rows, which closes the op set under differentiation.
    """
    if values.ndim != 2:
        raise ShapeError(f"scatter_rows needs a matrix, got shape {values.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or idx.size != values.shape[0]:
        raise ShapeError("need exactly one index per row")
    if np.any(idx < 0) or np.any(idx >= num_rows):
        raise AutodiffError(f"index out of range for {num_rows} rows")
    idx = tuple(int(i) for i in idx)
    acc = np.zeros((int(num_rows), values.shape[1]))
    np.add.at(acc, list(idx), values.value)
    out = values.graph._append("scatter_rows", [values], acc, values.requires_grad)
    if out.requires_grad:

        def vjp(g):
            return [(values, gather_rows(g, idx))]

        out.vjp = vjp
    return out


def stack_rows(rows: Sequence[Node]) -> Node:
    """Stack k same-length vectors into a [k, n] matrix."""
    rows = list(rows)
    if not rows:
        raise ShapeError("stack_rows needs at least one row")
    graph = rows[0].graph
    shape = rows[0].shape
    for r in rows:
        if r.graph is not graph:
            raise AutodiffError("operands belong to different graphs")
        if r.ndim != 1 or r.shape != shape:
            raise ShapeError("stack_rows needs 1-D nodes of equal length")
    out = graph._append(
        "stack_rows",
        rows,
        np.stack([r.value for r in rows]),
        any(r.requires_grad for r in rows),
    )
    if out.requires_grad:
        n = shape[0]

        def vjp(g):
            return [
                (r, gather_rows(g, (i,)).reshape((n,)))
                for i, r in enumerate(rows)
                if r.requires_grad
            ]

        out.vjp = vjp
    return out


# -- composite helpers (no new backward rules) ----------------------------


def dot(a: Node, b: Node) -> Node:
    """Inner product of two vectors, as a (1,)-shaped node."""
    return (a * b).sum()


def matvec(a: Node, x: Node) -> Node:
    """a [m,n] times x [n] -> [m]."""
    return matmul(a, x.reshape((x.size, 1))).reshape((a.shape[0],))


def vecmat(x: Node, a: Node) -> Node:
    """x [m] times a [m,n] -> [n]  (i.e. aᵀx)."""
    return matmul(x.reshape((1, x.size)), a).reshape((a.shape[1],))


def grad(
    output: Node, wrt: Iterable[Node], create_graph: bool = False
) -> list[Node]:
    """Gradients of a scalar ``output`` with respect to each node in ``wrt``.

    Returned nodes match the shapes of ``wrt``.  With ``create_graph`` the
    results stay attached to the graph and can be differentiated again;
    otherwise they are detached constants with identical values.  Nodes
    that cannot influence the output (including requires_grad=False
    leaves) get exact zeros.
    """
    if output.size != 1:
        raise ShapeError(f"grad needs a scalar output, got shape {output.shape}")
    wrt = list(wrt)
    g = output.graph
    for w in wrt:
        if w.graph is not g:
            raise AutodiffError("wrt node belongs to a different graph")
    adjoint: dict[int, Node] = {}
    if output.requires_grad:
        adjoint[output.nid] = g.constant(np.ones(output.shape))
        # Snapshot: nodes appended by the backward pass itself live beyond
        # output.nid and belong to future differentiations, not this one.
        for node in reversed(g.nodes[: output.nid + 1]):
            gnode = adjoint.get(node.nid)
            if gnode is None or node.vjp is None:
                continue
            for parent, contrib in node.vjp(gnode):
                prev = adjoint.get(parent.nid)
                adjoint[parent.nid] = contrib if prev is None else prev + contrib
    results = []
    for w in wrt:
        gn = adjoint.get(w.nid)
        if gn is None:
            results.append(g.constant(np.zeros(w.shape)))
        elif create_graph:
            results.append(gn)
        else:
            results.append(g.constant(gn.value))
    return results
