"""Reverse-mode automatic differentiation over dense float64 arrays.

The graph is built dynamically: every operation whose inputs require
gradients returns a :class:`Var` that remembers its parents and a
vector-Jacobian rule.  Nodes carry a global creation index, so walking
nodes by decreasing index is a valid reverse topological order.

Vector-Jacobian rules are written with the same ``Var`` operations they
differentiate.  When :func:`gradient` runs with ``create_graph=True`` the
backward pass is itself recorded, which is what makes Hessian-vector
products (gradient of ``dot(grad, v)``) and mixed second derivatives
available without ever forming a Hessian.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Var",
    "constant",
    "variable",
    "no_grad",
    "add",
    "sub",
    "neg",
    "mul",
    "div",
    "square",
    "sqrt",
    "exp",
    "log",
    "relu",
    "sigmoid",
    "tanh",
    "minimum",
    "clip",
    "sum",
    "mean",
    "dot",
    "reshape",
    "broadcast_to",
    "sum_to",
    "index",
    "index_add",
    "gather",
    "embed_rows",
    "concat",
    "swap_last",
    "matmul",
    "det2x2",
    "cofactor2x2",
    "affine",
    "gradient",
    "hvp",
    "hvp_operator",
    "mixed_vjp",
]

_order = itertools.count()
_local = threading.local()


class ShapeError(ValueError):
    """Operands of an operation have incompatible shapes."""

    def __init__(self, op: str, *shapes: tuple):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}")


def _recording() -> bool:
    return getattr(_local, "record", True)


@contextlib.contextmanager
def _set_recording(flag: bool):
    prev = _recording()
    _local.record = flag
    try:
        yield
    finally:
        _local.record = prev


def no_grad():
    """Context manager that disables graph recording on this thread."""
    return _set_recording(False)


class Var:
    """A node of the computation graph holding a float64 array."""

    __slots__ = ("value", "requires_grad", "parents", "vjp", "op", "order")
    __array_priority__ = 100.0

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.parents: tuple = ()
        self.vjp = None
        self.op = "leaf"
        self.order = next(_order)

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
        return float(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def detach(self) -> "Var":
        return Var(self.value)

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Var({self.value!r}{tag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self):
        return swap_last(self)


def constant(value) -> Var:
    return Var(value)


def variable(value) -> Var:
    return Var(np.array(value, dtype=np.float64), requires_grad=True)


def _lift(x) -> Var:
    return x if type(x) is Var else Var(x)


def _make(value, op: str, parents: tuple, vjp) -> Var:
    out = Var.__new__(Var)
    out.value = value if type(value) is np.ndarray else np.asarray(value, dtype=np.float64)
    out.op = op
    out.order = next(_order)
    for p in parents:
        if p.requires_grad:
            if _local.__dict__.get("record", True):
                out.requires_grad = True
                out.parents = parents
                out.vjp = vjp
                return out
            break
    out.requires_grad = False
    out.parents = ()
    out.vjp = None
    return out


def _binary(fn, op: str, a: Var, b: Var) -> np.ndarray:
    try:
        return fn(a.value, b.value)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- shape ops


def sum_to(g, shape: tuple) -> Var:
    """Sum ``g`` down to ``shape`` (the adjoint of broadcasting)."""
    g = _lift(g)
    if g.shape == tuple(shape):
        return g
    gv = g.value
    lead = gv.ndim - len(shape)
    if lead < 0:
        raise ShapeError("sum_to", g.shape, tuple(shape))
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and gv.shape[i + lead] != 1
    )
    out = gv.sum(axis=axes, keepdims=True).reshape(shape)

    def vjp(h):
        return (broadcast_to(h, g.shape),)

    return _make(out, "sum_to", (g,), vjp)


def broadcast_to(a, shape: tuple) -> Var:
    a = _lift(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    try:
        out = np.broadcast_to(a.value, shape).copy()
    except ValueError:
        raise ShapeError("broadcast_to", a.shape, shape) from None

    def vjp(g):
        return (sum_to(g, a.shape),)

    return _make(out, "broadcast_to", (a,), vjp)


def reshape(a, shape: tuple) -> Var:
    a = _lift(a)
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None

    def vjp(g):
        return (reshape(g, a.shape),)

    return _make(out, "reshape", (a,), vjp)


def swap_last(a) -> Var:
    """Transpose the last two axes."""
    a = _lift(a)
    if a.ndim < 2:
        raise ShapeError("swap_last", a.shape)

    def vjp(g):
        return (swap_last(g),)

    return _make(np.swapaxes(a.value, -1, -2), "swap_last", (a,), vjp)


def index(a, key) -> Var:
    """``a[key]`` for any numpy basic or integer-array key."""
    a = _lift(a)
    try:
        out = np.array(a.value[key], dtype=np.float64)
    except IndexError:
        raise ShapeError("index", a.shape) from None

    def vjp(g):
        return (index_add(g, key, a.shape),)

    return _make(out, "index", (a,), vjp)


def index_add(g, key, shape: tuple) -> Var:
    """Zeros of ``shape`` with ``g`` scatter-added at ``key`` (duplicates accumulate)."""
    g = _lift(g)
    out = np.zeros(shape)
    try:
        np.add.at(out, key, g.value)
    except (ValueError, IndexError):
        raise ShapeError("index_add", g.shape, tuple(shape)) from None

    def vjp(h):
        return (index(h, key),)

    return _make(out, "index_add", (g,), vjp)


def gather(a, idx) -> Var:
    """Rows of ``a`` selected by an integer index array of any shape."""
    return index(a, np.asarray(idx, dtype=np.intp))


def embed_rows(values, rows, n: int) -> Var:
    """An ``n``-row array that is zero except ``rows``, which hold ``values``."""
    values = _lift(values)
    return index_add(values, np.asarray(rows, dtype=np.intp), (n,) + values.shape[1:])


def concat(parts: Sequence, axis: int = 0) -> Var:
    parts = [_lift(p) for p in parts]
    try:
        out = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(p.shape for p in parts)) from None
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [p.shape[ax] for p in parts])

    def vjp(g):
        res = []
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                res.append(index(g, (slice(None),) * ax + (slice(int(lo), int(hi)),)))
            else:
                res.append(None)
        return tuple(res)

    return _make(out, "concat", tuple(parts), vjp)


# ------------------------------------------------------------ arithmetic


def add(a, b) -> Var:
    a, b = _lift(a), _lift(b)

    def vjp(g):
        return (
            sum_to(g, a.shape) if a.requires_grad else None,
            sum_to(g, b.shape) if b.requires_grad else None,
        )

    return _make(_binary(np.add, "add", a, b), "add", (a, b), vjp)


def sub(a, b) -> Var:
    a, b = _lift(a), _lift(b)

    def vjp(g):
        return (
            sum_to(g, a.shape) if a.requires_grad else None,
            sum_to(neg(g), b.shape) if b.requires_grad else None,
        )

    return _make(_binary(np.subtract, "sub", a, b), "sub", (a, b), vjp)


def neg(a) -> Var:
    a = _lift(a)

    def vjp(g):
        return (neg(g),)

    return _make(-a.value, "neg", (a,), vjp)


def mul(a, b) -> Var:
    a, b = _lift(a), _lift(b)

    def vjp(g):
        return (
            sum_to(mul(g, b), a.shape) if a.requires_grad else None,
            sum_to(mul(g, a), b.shape) if b.requires_grad else None,
        )

    return _make(_binary(np.multiply, "mul", a, b), "mul", (a, b), vjp)


def div(a, b) -> Var:
    a, b = _lift(a), _lift(b)

    def vjp(g):
        ga = gb = None
        q = div(g, b)
        if a.requires_grad:
            ga = sum_to(q, a.shape)
        if b.requires_grad:
            gb = sum_to(neg(mul(q, out)), b.shape)
        return ga, gb

    out = _make(_binary(np.divide, "div", a, b), "div", (a, b), vjp)
    return out


def square(a) -> Var:
    a = _lift(a)

    def vjp(g):
        return (mul(g, mul(a, 2.0)),)

    return _make(a.value * a.value, "square", (a,), vjp)


def sqrt(a) -> Var:
    a = _lift(a)

    def vjp(g):
        return (div(mul(g, 0.5), out),)

    out = _make(np.sqrt(a.value), "sqrt", (a,), vjp)
    return out


def exp(a) -> Var:
    a = _lift(a)

    def vjp(g):
        return (mul(g, out),)

    out = _make(np.exp(a.value), "exp", (a,), vjp)
    return out


def log(a) -> Var:
    a = _lift(a)

    def vjp(g):
        return (div(g, a),)

    return _make(np.log(a.value), "log", (a,), vjp)


def relu(a) -> Var:
    a = _lift(a)
    mask = (a.value > 0).astype(np.float64)

    def vjp(g):
        return (mul(g, mask),)

    return _make(a.value * mask, "relu", (a,), vjp)


def sigmoid(a) -> Var:
    a = _lift(a)
    # split on sign so large |a| never overflows exp
    v = a.value
    e = np.exp(-np.abs(v))
    s = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def vjp(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    out = _make(s, "sigmoid", (a,), vjp)
    return out


def tanh(a) -> Var:
    a = _lift(a)

    def vjp(g):
        return (mul(g, sub(1.0, square(out))),)

    out = _make(np.tanh(a.value), "tanh", (a,), vjp)
    return out


def minimum(a, b) -> Var:
    """Elementwise minimum; ties send the gradient to ``a``."""
    a, b = _lift(a), _lift(b)
    out = _binary(np.minimum, "minimum", a, b)
    take_a = (a.value <= b.value).astype(np.float64)

    def vjp(g):
        return (
            sum_to(mul(g, take_a), a.shape) if a.requires_grad else None,
            sum_to(mul(g, 1.0 - take_a), b.shape) if b.requires_grad else None,
        )

    return _make(out, "minimum", (a, b), vjp)


def clip(a, lo: float, hi: float) -> Var:
    a = _lift(a)
    inside = ((a.value >= lo) & (a.value <= hi)).astype(np.float64)

    def vjp(g):
        return (mul(g, inside),)

    return _make(np.clip(a.value, lo, hi), "clip", (a,), vjp)


def sum(a, axis=None) -> Var:  # noqa: A001 - mirrors numpy naming
    a = _lift(a)
    out = np.asarray(a.value.sum(axis=axis), dtype=np.float64)
    keep = np.asarray(a.value.sum(axis=axis, keepdims=True)).shape

    def vjp(g):
        return (broadcast_to(reshape(g, keep), a.shape),)

    return _make(out, "sum", (a,), vjp)


def mean(a, axis=None) -> Var:
    a = _lift(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis), 1.0 / float(count))


def dot(u, v) -> Var:
    """Total sum of the elementwise product; shapes must match exactly."""
    u, v = _lift(u), _lift(v)
    if u.shape != v.shape:
        raise ShapeError("dot", u.shape, v.shape)
    return sum(mul(u, v))


# ------------------------------------------------------------- linear algebra


def matmul(a, b) -> Var:
    """Batched matrix product; both operands need at least two axes."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape)
    out = _binary(np.matmul, "matmul", a, b)

    def vjp(g):
        return (
            sum_to(matmul(g, swap_last(b)), a.shape) if a.requires_grad else None,
            sum_to(matmul(swap_last(a), g), b.shape) if b.requires_grad else None,
        )

    return _make(out, "matmul", (a, b), vjp)


def cofactor2x2(a) -> Var:
    """Map ``[[p, q], [r, s]]`` to ``[[s, -r], [-q, p]]``; this map is self-adjoint."""
    a = _lift(a)
    if a.shape[-2:] != (2, 2):
        raise ShapeError("cofactor2x2", a.shape)
    v = a.value
    out = np.empty_like(v)
    out[..., 0, 0] = v[..., 1, 1]
    out[..., 0, 1] = -v[..., 1, 0]
    out[..., 1, 0] = -v[..., 0, 1]
    out[..., 1, 1] = v[..., 0, 0]

    def vjp(g):
        return (cofactor2x2(g),)

    return _make(out, "cofactor2x2", (a,), vjp)


def det2x2(a) -> Var:
    """Determinants of a stack of 2x2 matrices, shape ``(..., 2, 2) -> (...)``."""
    a = _lift(a)
    if a.ndim < 2 or a.shape[-2:] != (2, 2):
        raise ShapeError("det2x2", a.shape)
    v = a.value
    out = v[..., 0, 0] * v[..., 1, 1] - v[..., 0, 1] * v[..., 1, 0]

    def vjp(g):
        return (mul(reshape(g, g.shape + (1, 1)), cofactor2x2(a)),)

    return _make(np.asarray(out, dtype=np.float64), "det2x2", (a,), vjp)


def affine(W, x, b) -> Var:
    """``W x + b`` for a single vector ``x`` or ``x @ W.T + b`` for a batch of rows."""
    W, x, b = _lift(W), _lift(x), _lift(b)
    if W.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != W.shape[1]:
        raise ShapeError("affine", W.shape, x.shape, b.shape)
    if x.ndim == 1:
        y = reshape(matmul(W, reshape(x, (x.shape[0], 1))), (W.shape[0],))
    else:
        y = matmul(x, swap_last(W))
    return add(y, b)


# ------------------------------------------------------------- differentiation


def _prune(y: Var, targets: set) -> list:
    """Ancestors of ``y`` that lie on a path to some target, in reverse order."""
    seen = {}
    stack = [y]
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen[id(n)] = n
        for p in n.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append(p)
    nodes = sorted(seen.values(), key=lambda n: n.order)
    live = set()
    for n in nodes:
        if id(n) in targets or any(id(p) in live for p in n.parents):
            live.add(id(n))
    return [n for n in reversed(nodes) if id(n) in live]


def gradient(y: Var, xs: Iterable[Var], create_graph: bool = False) -> list:
    """Gradients of scalar ``y`` with respect to each of ``xs``.

    Inputs that ``y`` does not depend on get a zero array of their shape.
    With ``create_graph`` the returned gradients are recorded ``Var`` nodes
    that can be differentiated again; otherwise they are constants.
    """
    xs = list(xs)
    if y.size != 1:
        raise ValueError(f"gradient: output must be scalar, got shape {y.shape}")
    result = {id(x): None for x in xs}
    if y.requires_grad:
        grads = {id(y): Var(np.ones_like(y.value))}
        with _set_recording(create_graph):
            for node in _prune(y, set(result)):
                g = grads.pop(id(node), None)
                if g is None:
                    continue
                if id(node) in result:
                    result[id(node)] = g
                if node.vjp is None:
                    continue
                for p, gp in zip(node.parents, node.vjp(g)):
                    if gp is None or not p.requires_grad:
                        continue
                    prev = grads.get(id(p))
                    grads[id(p)] = gp if prev is None else add(prev, gp)
    elif id(y) in result:
        result[id(y)] = Var(np.ones_like(y.value))
    out = []
    for x in xs:
        g = result[id(x)]
        out.append(Var(np.zeros(x.shape)) if g is None else g)
    return out


def hvp_operator(energy: Callable[[Var], Var], x) -> Callable[[np.ndarray], np.ndarray]:
    """Return ``v -> (d2E/dx2) v`` reusing one recorded gradient graph.

    Each application backpropagates through ``dot(grad E, v)``; no Hessian
    matrix is formed.
    """
    xv = variable(x.value if isinstance(x, Var) else x)
    (g,) = gradient(energy(xv), [xv], create_graph=True)

    def apply(v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != xv.shape:
            raise ShapeError("hvp", xv.shape, v.shape)
        if not g.requires_grad:
            return np.zeros(xv.shape)
        (hv,) = gradient(dot(g, v), [xv])
        return hv.value

    return apply


def hvp(energy: Callable[[Var], Var], x, v) -> np.ndarray:
    """Hessian-vector product of a scalar energy at ``x``."""
    return hvp_operator(energy, x)(v)


def mixed_vjp(energy: Callable[..., Var], x, a, z):
    """``z^T df/da`` with ``f = -grad_x E(x, a)``, i.e. ``-d/da <grad_x E, z>``.

    ``a`` may also be a tuple of arrays; then ``energy(x, *a)`` is used and a
    tuple of results is returned.
    """
    many = isinstance(a, tuple)
    params = [variable(p.value if isinstance(p, Var) else p) for p in (a if many else (a,))]
    xv = variable(x.value if isinstance(x, Var) else x)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != xv.shape:
        raise ShapeError("mixed_vjp", xv.shape, z.shape)
    (g,) = gradient(energy(xv, *params), [xv], create_graph=True)
    res = tuple(-r.value for r in gradient(dot(g, z), params))
    return res if many else res[0]
