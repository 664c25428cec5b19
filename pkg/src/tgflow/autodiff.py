"""Array-level reverse-mode automatic differentiation.

Every backward rule is written in terms of differentiable ``Var`` operations,
so gradients can themselves be differentiated (``create_graph=True``).  This
is what the gauge consistency regularizer needs: it penalizes input gradients
of a network and is then differentiated with respect to the weights.

Only the primitives the models use are provided: elementwise arithmetic with
numpy broadcasting, ``matmul`` on 1-D/2-D operands, reductions, reshapes,
slicing, concatenation, ``sigmoid``/``silu``, ``sqrt``, ``abs`` and a
zero-safe Euclidean norm.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "Var",
    "as_var",
    "constant",
    "leaf",
    "grad",
    "no_grad",
    "is_recording",
    "matmul",
    "concat",
    "sigmoid",
    "silu",
    "sqrt",
    "absolute",
    "norm",
    "sum_to",
    "broadcast_to",
]

_RECORDING = True


def is_recording() -> bool:
    return _RECORDING


@contextlib.contextmanager
def _recording(flag: bool) -> Iterator[None]:
    global _RECORDING
    prev = _RECORDING
    _RECORDING = flag
    try:
        yield
    finally:
        _RECORDING = prev


def no_grad() -> contextlib.AbstractContextManager[None]:
    """Context in which no operation records a graph."""
    return _recording(False)


class Var:
    """A node holding a float64 array and, when recorded, its backward rule."""

    __slots__ = ("value", "parents", "backward", "requires_grad")
    __array_priority__ = 1000
    __array_ufunc__ = None

    def __init__(
        self,
        value: np.ndarray,
        parents: tuple["Var", ...] = (),
        backward: Callable[["Var"], Sequence["Var | None"]] | None = None,
        requires_grad: bool = False,
    ) -> None:
        self.value = value
        self.parents = parents
        self.backward = backward
        self.requires_grad = requires_grad

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def numpy(self) -> np.ndarray:
        return self.value

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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False) -> "Var":
        return vsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Var":
        return vmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Var":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self) -> "Var":
        return transpose(self)


def constant(value) -> Var:
    return Var(np.asarray(value, dtype=np.float64))


def leaf(value) -> Var:
    """A differentiable input (parameter or coordinate)."""
    return Var(np.array(value, dtype=np.float64), requires_grad=True)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else constant(x)


def _node(value: np.ndarray, parents: tuple[Var, ...], backward) -> Var:
    if _RECORDING and any(p.requires_grad for p in parents):
        return Var(value, parents, backward, True)
    return Var(value)


# -- broadcasting helpers -------------------------------------------------------


def _reduce_axes(from_shape: tuple[int, ...], to_shape: tuple[int, ...]) -> tuple[tuple[int, ...], int]:
    lead = len(from_shape) - len(to_shape)
    axes = list(range(lead))
    for i, n in enumerate(to_shape):
        if n == 1 and from_shape[lead + i] != 1:
            axes.append(lead + i)
    return tuple(axes), lead


def sum_to(x: Var, shape: tuple[int, ...]) -> Var:
    """Sum ``x`` down to ``shape`` (inverse of numpy broadcasting)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    axes, lead = _reduce_axes(x.shape, shape)
    value = x.value.sum(axis=axes, keepdims=True)
    if lead:
        value = value.reshape(shape)
    src = x.shape
    return _node(value, (x,), lambda g: (broadcast_to(g, src),))


def broadcast_to(x: Var, shape: tuple[int, ...]) -> Var:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape
    value = np.broadcast_to(x.value, shape)
    return _node(value, (x,), lambda g: (sum_to(g, src),))


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, (a, b), lambda g: (sum_to(g, sa), sum_to(g, sb)))


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    sa, sb = a.shape, b.shape
    return _node(a.value - b.value, (a, b), lambda g: (sum_to(g, sa), sum_to(neg(g), sb)))


def neg(a) -> Var:
    a = as_var(a)
    return _node(-a.value, (a,), lambda g: (neg(g),))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def backward(g):
        ga = sum_to(mul(g, b), a.shape) if a.requires_grad else None
        gb = sum_to(mul(g, a), b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.value * b.value, (a, b), backward)


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def backward(g):
        ga = sum_to(div(g, b), a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return _node(a.value / b.value, (a, b), backward)


# -- linear algebra and shape ops ---------------------------------------------


def matmul(a, b) -> Var:
    """Matrix product for operands of rank 1 or 2."""
    a, b = as_var(a), as_var(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ValueError("matmul supports rank-1 and rank-2 operands only")

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            if b.ndim == 1:
                # g: (m,) or (), b: (k,) -> a: (m, k) or (k,)
                ga = mul(reshape(g, g.shape + (1,)), b) if a.ndim == 2 else mul(g, b)
            else:
                ga = matmul(g, transpose(b))
        if b.requires_grad:
            if a.ndim == 1:
                gb = mul(reshape(a, (a.shape[0], 1)), g) if b.ndim == 2 else mul(a, g)
            else:
                gb = matmul(transpose(a), g)
        return ga, gb

    return _node(a.value @ b.value, (a, b), backward)


def transpose(a) -> Var:
    a = as_var(a)
    return _node(a.value.T, (a,), lambda g: (transpose(g),))


def reshape(a, shape: tuple[int, ...]) -> Var:
    a = as_var(a)
    src = a.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (reshape(g, src),))


def vsum(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    src = a.shape
    value = a.value.sum(axis=axis, keepdims=keepdims)
    if axis is None:
        kept = (1,) * len(src)
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(src) for ax in axes)
        kept = tuple(1 if i in axes else n for i, n in enumerate(src))

    def backward(g):
        return (broadcast_to(reshape(g, kept), src),)

    return _node(value, (a,), backward)


def vmean(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    total = vsum(a, axis=axis, keepdims=keepdims)
    count = a.size // max(total.size, 1) if a.size else 1
    return mul(total, 1.0 / count)


def getitem(a, key) -> Var:
    a = as_var(a)
    src = a.shape
    return _node(a.value[key], (a,), lambda g: (_scatter(g, src, key),))


def _scatter(g: Var, shape: tuple[int, ...], key) -> Var:
    value = np.zeros(shape)
    value[key] = g.value
    return _node(value, (g,), lambda gg: (getitem(gg, key),))


def concat(items: Sequence, axis: int = -1) -> Var:
    vs = [as_var(v) for v in items]
    value = np.concatenate([v.value for v in vs], axis=axis)
    ndim = value.ndim
    ax = axis % ndim
    bounds = np.cumsum([0] + [v.shape[ax] for v in vs])

    def backward(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            key = (slice(None),) * ax + (slice(int(lo), int(hi)),)
            out.append(getitem(g, key))
        return tuple(out)

    return _node(value, tuple(vs), backward)


# -- nonlinearities ------------------------------------------------------------


def _sigmoid_value(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(a) -> Var:
    a = as_var(a)

    def backward(g):
        s = sigmoid(a)
        return (mul(g, mul(s, sub(1.0, s))),)

    return _node(_sigmoid_value(a.value), (a,), backward)


def silu(a) -> Var:
    """SiLU(z) = z * sigmoid(z)."""
    a = as_var(a)
    return mul(a, sigmoid(a))


def sqrt(a) -> Var:
    a = as_var(a)

    def backward(g):
        return (div(g, mul(2.0, sqrt(a))),)

    return _node(np.sqrt(a.value), (a,), backward)


def absolute(a) -> Var:
    a = as_var(a)
    sign = np.sign(a.value)
    return _node(np.abs(a.value), (a,), lambda g: (mul(g, sign),))


def norm(a, axis: int = -1) -> Var:
    """Euclidean norm along ``axis``; the gradient at a zero vector is zero."""
    a = as_var(a)
    value = np.sqrt((a.value * a.value).sum(axis=axis))

    def backward(g):
        n = norm(a, axis=axis)
        zero = (n.value == 0.0).astype(np.float64)
        scale = div(g, add(n, zero))
        expanded = np.expand_dims(scale.value, axis).shape
        return (mul(a, reshape(scale, expanded)),)

    return _node(value, (a,), backward)


# -- gradient driver -----------------------------------------------------------


def _topo_order(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(
    output: Var,
    inputs: Iterable[Var],
    grad_output=None,
    create_graph: bool = False,
) -> list[np.ndarray | Var]:
    """Gradients of ``output`` with respect to ``inputs``.

    With ``create_graph=False`` plain arrays are returned.  With
    ``create_graph=True`` the results are ``Var`` nodes that can be
    differentiated again.  Inputs the output does not depend on get zeros.
    """
    inputs = list(inputs)
    if grad_output is None:
        if output.size != 1:
            raise ValueError("grad_output is required for non-scalar outputs")
        seed = np.ones_like(output.value)
    else:
        seed = np.asarray(grad_output, dtype=np.float64)
    grads: dict[int, Var] = {}
    if output.requires_grad:
        grads[id(output)] = Var(seed)
        wanted = {id(v) for v in inputs}
        with _recording(create_graph):
            for node in reversed(_topo_order(output)):
                g = grads.get(id(node))
                if g is None or node.backward is None:
                    continue
                if id(node) not in wanted:
                    del grads[id(node)]
                for parent, pg in zip(node.parents, node.backward(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    prev = grads.get(id(parent))
                    grads[id(parent)] = pg if prev is None else add(prev, pg)
    out: list[np.ndarray | Var] = []
    for v in inputs:
        g = grads.get(id(v))
        if g is None:
            g = Var(np.zeros(v.shape))
        if g.shape != v.shape:
            g = Var(np.broadcast_to(g.value, v.shape).copy())
        out.append(g if create_graph else np.array(g.value, dtype=np.float64))
    return out
