"""Define-by-run reverse-mode automatic differentiation on float64 arrays.

A :class:`Graph` is a tape. Every operation appends a :class:`Node` holding its
forward value and a closure mapping the upstream gradient to gradients for its
inputs. Nodes are appended in creation order, so walking the tape backwards is
a valid reverse topological order and each node is visited once.

Shape rules
-----------
* ``add``, ``sub``, ``mul``: numpy broadcasting.
* ``matmul``: ``(..., n, k) @ (..., k, p) -> (..., n, p)`` with broadcast batch
  dims; 1-D right operands are not supported.
* ``softmax``, ``layer_norm``: over the last axis, shape preserved.
* ``sum``/``mean``: numpy ``axis``/``keepdims`` semantics.
* ``concat``: numpy ``concatenate`` along ``axis``.
* ``mse``: scalar mean of squared differences of equal-shape operands.

The nonlinearity is GELU (tanh approximation), chosen over ReLU because it is
smooth, which keeps finite-difference gradient checks meaningful everywhere.
"""
from __future__ import annotations

import math

import numpy as np

from romda.errors import ContractError, NumericError, ShapeError

LAYER_NORM_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


class Node:
    __slots__ = ("graph", "value", "parents", "backward_fn", "name", "requires_grad")

    def __init__(self, graph, value, parents=(), backward_fn=None, name=None,
                 requires_grad=False):
        self.graph = graph
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Node({self.label}, shape={self.shape})"

    @property
    def label(self):
        return self.name or "<tmp>"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


class Graph:
    """Tape of operations plus the named parameter leaves.

    With ``record=False`` nodes are not kept on the tape (inference mode) and
    :meth:`backward` is unavailable.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def param(self, name: str, value) -> Node:
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        arr = _checked(np.asarray(value, dtype=np.float64), name)
        node = Node(self, arr, name=name, requires_grad=self.record)
        self.params[name] = node
        self._push(node)
        return node

    def const(self, value, name: str | None = None) -> Node:
        arr = _checked(np.asarray(value, dtype=np.float64), name or "const")
        node = Node(self, arr, name=name)
        self._push(node)
        return node

    def _push(self, node):
        if self.record:
            self.nodes.append(node)

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Gradients of scalar ``loss`` with respect to every registered parameter."""
        if not self.record:
            raise ContractError("backward requires a recording graph")
        if loss.graph is not self:
            raise ContractError("loss node belongs to a different graph")
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        for node in reversed(self.nodes):
            g = grads.get(id(node))
            if g is None or node.backward_fn is None:
                continue
            parent_grads = node.backward_fn(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return {
            name: grads.get(id(node), np.zeros_like(node.value)).copy()
            for name, node in self.params.items()
        }


def _checked(arr, label):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {label}")
    return arr


def _lift(graph, x):
    if isinstance(x, Node):
        return x
    return graph.const(x)


def _graph_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.graph
    raise ContractError("at least one operand must be a Node")


def _make(graph, kind, value, parents, backward_fn):
    value = _checked(value, kind)
    req = graph.record and any(p.requires_grad for p in parents)
    node = Node(graph, value, parents, backward_fn if req else None, kind, req)
    graph._push(node)
    return node


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a, b, kind):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"{kind}: cannot broadcast {a.label} {a.shape} with {b.label} {b.shape}"
        ) from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    g = _graph_of(a, b)
    a, b = _lift(g, a), _lift(g, b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(g, "add", a.value + b.value, (a, b),
                 lambda gr: (_unbroadcast(gr, sa), _unbroadcast(gr, sb)))


def sub(a, b):
    g = _graph_of(a, b)
    a, b = _lift(g, a), _lift(g, b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(g, "sub", a.value - b.value, (a, b),
                 lambda gr: (_unbroadcast(gr, sa), _unbroadcast(-gr, sb)))


def mul(a, b):
    g = _graph_of(a, b)
    a, b = _lift(g, a), _lift(g, b)
    _broadcast_shape(a, b, "mul")
    av, bv = a.value, b.value

    def back(gr):
        return (_unbroadcast(gr * bv, av.shape) if a.requires_grad else None,
                _unbroadcast(gr * av, bv.shape) if b.requires_grad else None)

    return _make(g, "mul", av * bv, (a, b), back)


def scale(a: Node, c: float):
    c = float(c)
    return _make(a.graph, "scale", a.value * c, (a,), lambda gr: (gr * c,))


def tanh(a: Node):
    y = np.tanh(a.value)
    return _make(a.graph, "tanh", y, (a,), lambda gr: (gr * (1.0 - y * y),))


def gelu(a: Node):
    x = a.value
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    y = 0.5 * x * (1.0 + t)

    def back(gr):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (gr * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(a.graph, "gelu", y, (a,), back)


def exp(a: Node):
    with np.errstate(over="ignore"):
        y = np.exp(a.value)
    return _make(a.graph, "exp", y, (a,), lambda gr: (gr * y,))


def log(a: Node):
    x = a.value
    if np.any(x <= 0):
        raise NumericError(f"log of non-positive values in {a.label}")
    return _make(a.graph, "log", np.log(x), (a,), lambda gr: (gr / x,))


def square(a: Node):
    x = a.value
    return _make(a.graph, "square", x * x, (a,), lambda gr: (2.0 * gr * x,))


# ------------------------------------------------------------------ linear ops

def matmul(a, b):
    g = _graph_of(a, b)
    a, b = _lift(g, a), _lift(g, b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul: {a.label} {av.shape} incompatible with {b.label} {bv.shape}")
    try:
        np.broadcast_shapes(av.shape[:-2], bv.shape[:-2])
    except ValueError:
        raise ShapeError(
            f"matmul: batch dims of {a.label} {av.shape} and {b.label} {bv.shape} differ"
        ) from None

    if bv.ndim == 2 and av.ndim > 2:
        # fold batch dims into one GEMM: (..., n, k) @ (k, p)
        k = av.shape[-1]
        a2 = av.reshape(-1, k)

        def back(gr):
            g2 = gr.reshape(-1, gr.shape[-1])
            ga = (g2 @ bv.T).reshape(av.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        out = (a2 @ bv).reshape(*av.shape[:-1], bv.shape[-1])
        return _make(g, "matmul", out, (a, b), back)

    def back(gr):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(gr @ np.swapaxes(bv, -1, -2), av.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(av, -1, -2) @ gr, bv.shape)
        return ga, gb

    return _make(g, "matmul", av @ bv, (a, b), back)


def reshape(a: Node, shape):
    src = a.shape
    try:
        y = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.label} {src} as {shape}") from None
    return _make(a.graph, "reshape", y, (a,), lambda gr: (gr.reshape(src),))


def transpose(a: Node, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.graph, "transpose", np.transpose(a.value, axes), (a,),
                 lambda gr: (np.transpose(gr, inv),))


def getitem(a: Node, index):
    src_shape = a.shape
    y = a.value[index]
    basic = _is_basic_index(index)

    def back(gr):
        out = np.zeros(src_shape)
        if basic:
            out[index] += gr
        else:
            np.add.at(out, index, gr)
        return (out,)

    return _make(a.graph, "getitem", np.array(y, dtype=np.float64), (a,), back)


def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in items)


def concat(nodes, axis: int = -1):
    g = _graph_of(*nodes)
    nodes = [_lift(g, n) for n in nodes]
    values = [n.value for n in nodes]
    ref = values[0]
    ax = axis % ref.ndim
    for n in nodes[1:]:
        v = n.value
        if v.ndim != ref.ndim or any(
            v.shape[d] != ref.shape[d] for d in range(ref.ndim) if d != ax
        ):
            raise ShapeError(
                f"concat: {nodes[0].label} {ref.shape} and {n.label} {v.shape} differ off axis {axis}"
            )
    bounds = np.cumsum([v.shape[ax] for v in values])[:-1]

    def back(gr):
        return tuple(np.split(gr, bounds, axis=ax))

    return _make(g, "concat", np.concatenate(values, axis=ax), tuple(nodes), back)


# --------------------------------------------------------------- reductions

def sum(a: Node, axis=None, keepdims: bool = False):  # noqa: A001 - mirrors numpy
    src = a.shape
    y = np.sum(a.value, axis=axis, keepdims=keepdims)

    def back(gr):
        if axis is not None and not keepdims:
            gr = np.expand_dims(gr, axis)
        return (np.broadcast_to(gr, src).copy(),)

    return _make(a.graph, "sum", np.asarray(y, dtype=np.float64), (a,), back)


def mean(a: Node, axis=None, keepdims: bool = False):
    src = a.shape
    count = a.value.size if axis is None else int(np.prod([src[i] for i in np.atleast_1d(axis)]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def mse(a, b):
    g = _graph_of(a, b)
    a, b = _lift(g, a), _lift(g, b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: {a.label} {a.shape} vs {b.label} {b.shape}")
    diff = a.value - b.value
    n = diff.size
    value = np.asarray(np.sum(diff * diff) / n)

    def back(gr):
        d = (2.0 / n) * gr * diff
        return (d if a.requires_grad else None, -d if b.requires_grad else None)

    return _make(g, "mse", value, (a, b), back)


# ----------------------------------------------------------- normalisations

def softmax(a: Node):
    x = a.value
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(gr):
        return (s * (gr - np.sum(gr * s, axis=-1, keepdims=True)),)

    return _make(a.graph, "softmax", s, (a,), back)


def layer_norm(a: Node, gamma=None, beta=None, eps: float = LAYER_NORM_EPS):
    """Normalise over the last axis, then apply optional affine ``gamma``, ``beta``."""
    x = a.value
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(gr):
        gm = gr.mean(axis=-1, keepdims=True)
        gxm = np.mean(gr * xhat, axis=-1, keepdims=True)
        return (inv * (gr - gm - xhat * gxm),)

    out = _make(a.graph, "layer_norm", xhat, (a,), back)
    if gamma is not None:
        out = mul(out, gamma)
    if beta is not None:
        out = add(out, beta)
    return out
