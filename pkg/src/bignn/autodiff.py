"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

Every value in the pipeline lives in a :class:`Tensor`.  Operations build a
computation graph; calling ``backward()`` on a scalar result accumulates
gradients into every reachable tensor with ``requires_grad=True``.  The op set
is deliberately small: exactly what the scene-graph attention layers, the
temporal convolutions and the classifier heads need, nothing more.  All
analytic gradients are validated against central finite differences in the
test suite.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "constant",
    "parameter",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "pow_",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "gather",
    "narrow",
    "segment_sum",
    "scale_rows",
    "mul_rowvec",
    "add_rowvec",
    "tsum",
    "tmean",
    "tmax",
    "maximum",
    "segment_max",
    "softmax_rows",
    "exp",
    "log",
    "sqrt",
    "sigmoid",
    "leaky_relu",
    "relu",
    "segment_softmax",
    "softmax1d",
]


class Tensor:
    """A node in the computation graph.

    ``data`` is always a float64 ndarray.  ``grad`` is filled by
    :meth:`backward` and has the same shape as ``data``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, data, requires_grad=False, parents=(), vjp=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        # Graph edges are only kept when a gradient can flow through them.
        self._parents = parents if self.requires_grad else ()
        self._vjp = vjp if self.requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate gradients of this scalar w.r.t. all graph leaves."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order = _toposort(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._vjp is None:
                # Leaf: accumulate into .grad
                node.grad = g if node.grad is None else node.grad + g
                continue
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # Operator sugar; every method defers to the module-level op.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __pow__(self, exponent):
        return pow_(self, exponent)

    def __repr__(self):  # pragma: no cover - debug aid
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}{tag})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
    """Reverse topological order, iterative to survive deep TCN chains."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def constant(data) -> Tensor:
    return Tensor(data)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# Elementwise arithmetic.  Same-shape or scalar operands only; row-vector
# broadcasts go through the dedicated *_rowvec ops so each backward rule stays
# a one-liner.
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape numpy broadcast it up from."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = np.add(a.data, b.data)
    return Tensor(out, parents=(a, b),
                  vjp=lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = np.subtract(a.data, b.data)
    return Tensor(out, parents=(a, b),
                  vjp=lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = np.multiply(a.data, b.data)
    return Tensor(out, parents=(a, b),
                  vjp=lambda g: (_unbroadcast(g * b.data, a.data.shape),
                                 _unbroadcast(g * a.data, b.data.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    out = np.divide(a.data, b.data)
    return Tensor(out, parents=(a, b),
                  vjp=lambda g: (_unbroadcast(g / b.data, a.data.shape),
                                 _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)))


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, parents=(a,), vjp=lambda g: (-g,))


def pow_(a: Tensor, exponent: float) -> Tensor:
    out = np.power(a.data, exponent)
    return Tensor(out, parents=(a,),
                  vjp=lambda g: (g * exponent * np.power(a.data, exponent - 1.0),))


# ---------------------------------------------------------------------------
# Linear algebra and shape ops.
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    out = ad @ bd

    def vjp(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return g @ bd.T, np.outer(ad, g)
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        raise ValueError("matmul supports 1-D and 2-D operands only")

    return Tensor(out, parents=(a, b), vjp=vjp)


def transpose(a: Tensor) -> Tensor:
    return Tensor(a.data.T, parents=(a,), vjp=lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return Tensor(a.data.reshape(shape), parents=(a,), vjp=lambda g: (g.reshape(old),))


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(sizes)))

    return Tensor(out, parents=tuple(tensors), vjp=vjp)


def gather(a: Tensor, idx) -> Tensor:
    """Row gather ``a[idx]`` along axis 0; repeated indices are allowed."""
    idx = np.asarray(idx, dtype=np.intp)
    out = a.data[idx]

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return Tensor(out, parents=(a,), vjp=vjp)


def narrow(a: Tensor, start: int, length: int) -> Tensor:
    """Contiguous slice ``a[start:start+length]`` along axis 0."""
    out = a.data[start:start + length]

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[start:start + length] = g
        return (ga,)

    return Tensor(out, parents=(a,), vjp=vjp)


def segment_sum(a: Tensor, segments, n_segments: int,
                splits: np.ndarray | None = None) -> Tensor:
    """Sum rows of ``a`` into ``n_segments`` buckets given per-row ids.

    ``splits`` (segment start offsets) marks the rows as grouped and sorted,
    enabling the fast reduceat path; segments must then be non-empty.
    """
    segments = np.asarray(segments, dtype=np.intp)
    if splits is not None:
        out = np.add.reduceat(a.data, splits, axis=0)
    else:
        out = np.zeros((n_segments,) + a.data.shape[1:], dtype=np.float64)
        np.add.at(out, segments, a.data)
    return Tensor(out, parents=(a,), vjp=lambda g: (g[segments],))


def scale_rows(a: Tensor, w: Tensor) -> Tensor:
    """Multiply each row of 2-D ``a`` by the matching scalar in 1-D ``w``."""
    out = a.data * w.data[:, None]
    return Tensor(out, parents=(a, w),
                  vjp=lambda g: (g * w.data[:, None], np.sum(g * a.data, axis=1)))


def mul_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Elementwise product of every row of ``a`` with vector ``v``."""
    out = a.data * v.data
    return Tensor(out, parents=(a, v),
                  vjp=lambda g: (g * v.data,
                                 np.sum(g * a.data, axis=0) if a.data.ndim == 2 else g * a.data))


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Add vector ``v`` to every row of ``a``."""
    out = a.data + v.data
    return Tensor(out, parents=(a, v),
                  vjp=lambda g: (g, np.sum(g, axis=0) if a.data.ndim == 2 else g))


# ---------------------------------------------------------------------------
# Reductions.
# ---------------------------------------------------------------------------


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    out = np.sum(a.data, axis=axis)

    def vjp(g):
        if axis is None:
            return (np.full_like(a.data, g if np.ndim(g) == 0 else float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(),)

    return Tensor(out, parents=(a,), vjp=vjp)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis) * (1.0 / n)


def tmax(a: Tensor, axis: int = 0) -> Tensor:
    """Max along ``axis``; the gradient flows to the first maximal entry."""
    out = np.max(a.data, axis=axis)
    idx = np.argmax(a.data, axis=axis)

    def vjp(g):
        ga = np.zeros_like(a.data)
        grid = np.indices(out.shape)
        index = list(grid)
        index.insert(axis, idx)
        ga[tuple(index)] = g
        return (ga,)

    return Tensor(out, parents=(a,), vjp=vjp)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties route the gradient to the first operand."""
    take_a = a.data >= b.data
    out = np.where(take_a, a.data, b.data)
    return Tensor(out, parents=(a, b),
                  vjp=lambda g: (np.where(take_a, g, 0.0), np.where(take_a, 0.0, g)))


def segment_max(a: Tensor, splits: np.ndarray) -> Tensor:
    """Per-segment columnwise max over contiguous row groups.

    ``splits`` holds the start row of each (non-empty) segment.  The
    gradient flows to the first maximal row of each segment per column.
    """
    splits = np.asarray(splits, dtype=np.intp)
    out = np.maximum.reduceat(a.data, splits, axis=0)
    bounds = np.append(splits, a.data.shape[0])

    def vjp(g):
        ga = np.zeros_like(a.data)
        for s in range(len(splits)):
            lo, hi = bounds[s], bounds[s + 1]
            rows = lo + np.argmax(a.data[lo:hi], axis=0)
            ga[rows, np.arange(a.data.shape[1])] += g[s]
        return (ga,)

    return Tensor(out, parents=(a,), vjp=vjp)


def softmax_rows(a: Tensor) -> Tensor:
    """Numerically stable softmax along axis 1 of a 2-D tensor."""
    if a.data.ndim != 2 or a.data.shape[1] == 0:
        raise ValueError("empty distribution")
    shift = np.max(a.data, axis=1, keepdims=True)
    e = exp(a - Tensor(shift))
    totals = tsum(e, axis=1)
    return scale_rows(e, pow_(totals, -1.0))


# ---------------------------------------------------------------------------
# Nonlinearities.
# ---------------------------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, parents=(a,), vjp=lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.data), parents=(a,), vjp=lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor(out, parents=(a,), vjp=lambda g: (g * 0.5 / out,))


def sigmoid(a: Tensor) -> Tensor:
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor(out, parents=(a,), vjp=lambda g: (g * out * (1.0 - out),))


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    pos = a.data >= 0
    out = np.where(pos, a.data, slope * a.data)
    return Tensor(out, parents=(a,), vjp=lambda g: (np.where(pos, g, slope * g),))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return Tensor(np.where(pos, a.data, 0.0), parents=(a,),
                  vjp=lambda g: (np.where(pos, g, 0.0),))


# ---------------------------------------------------------------------------
# Softmax helpers.  The max subtraction uses detached values: it is constant
# under differentiation because softmax is shift invariant.
# ---------------------------------------------------------------------------


def segment_softmax(scores: Tensor, segments, n_segments: int,
                    splits: np.ndarray | None = None) -> Tensor:
    """Softmax of 1-D ``scores`` normalized independently within segments."""
    segments = np.asarray(segments, dtype=np.intp)
    if splits is not None:
        shift = np.maximum.reduceat(scores.data, splits)
    else:
        shift = np.full(n_segments, -np.inf)
        np.maximum.at(shift, segments, scores.data)
    e = exp(scores - Tensor(shift[segments]))
    total = segment_sum(e, segments, n_segments, splits=splits)
    return div(e, gather(total, segments))


def softmax1d(scores: Tensor) -> Tensor:
    """Numerically stable softmax of a 1-D tensor."""
    if scores.data.size == 0:
        raise ValueError("empty distribution")
    e = exp(scores - Tensor(np.max(scores.data)))
    return div(e, gather(reshape(tsum(e), (1,)), np.zeros(scores.data.shape[0], dtype=np.intp)))
