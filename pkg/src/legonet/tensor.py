"""Dense N-D tensors with reverse-mode automatic differentiation.

Every op records a :class:`TapeNode` on its output when at least one input
requires a gradient. :func:`backward` walks the tape in reverse creation
order and frees it afterwards. Arrays are numpy float64 by default; ops never
alias mutable data between tensors.
"""

from __future__ import annotations

import contextlib
import hashlib
import itertools
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

DEFAULT_DTYPE = np.float64

_grad_enabled = True
_strict_div = False
_counter = itertools.count()


class ShapeError(ValueError):
    pass


class NonSmoothWarning(UserWarning):
    """Raised by :func:`grad_check` when the graph hit a non-differentiable point."""


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def strict_division():
    """Make ``div`` raise on an exact zero divisor instead of returning inf."""
    global _strict_div
    prev = _strict_div
    _strict_div = True
    try:
        yield
    finally:
        _strict_div = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


@dataclass(eq=False)
class TapeNode:
    op: str
    inputs: tuple
    backward: Callable
    ctx: dict = field(default_factory=dict)
    nonsmooth: bool = False
    order: int = field(default_factory=lambda: next(_counter))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_node", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=dtype or DEFAULT_DTYPE, copy=True)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._node: TapeNode | None = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ---------------------------------------------------
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
        return neg(self)

    def __pow__(self, p):
        return pow(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    @property
    def T(self):
        return permute(self, tuple(reversed(range(self.ndim))))

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def log(self):
        return log(self)

    def exp(self):
        return exp(self)

    def gelu(self):
        return gelu(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, op: str, inputs: Sequence[Tensor], backward_fn: Callable,
                nonsmooth: bool = False, **ctx) -> Tensor:
    """Wrap ``data`` in a Tensor and record a tape node if any input needs grad.

    ``backward_fn(grad_out, ctx)`` must return one gradient (or None) per input.
    Used by every differentiable op, including the fused ones in ``functional``.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._node = None
    needs = _grad_enabled and any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    if needs:
        out._node = TapeNode(op, tuple(inputs), backward_fn, ctx, nonsmooth)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def broadcast_shape(a: tuple, b: tuple) -> tuple:
    """Trailing-dimension broadcasting rule."""
    out = []
    for i in range(1, max(len(a), len(b)) + 1):
        x = a[-i] if i <= len(a) else 1
        y = b[-i] if i <= len(b) else 1
        if x != y and x != 1 and y != 1:
            raise ShapeError(f"shapes {tuple(a)} and {tuple(b)} are not broadcastable")
        out.append(max(x, y))
    return tuple(reversed(out))


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _binary(a, b):
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary(a, b)

    def bw(g, ctx):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _binary(a, b)

    def bw(g, ctx):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, "sub", (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _binary(a, b)

    def bw(g, ctx):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, "mul", (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _binary(a, b)
    if _strict_div and np.any(b.data == 0):
        raise ZeroDivisionError("division by an exact zero in strict mode")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def bw(g, ctx):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, "div", (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, "neg", (a,), lambda g, ctx: (-g,))


def pow(a, p: float) -> Tensor:
    a = as_tensor(a)
    if isinstance(p, Tensor):
        raise TypeError("pow supports a scalar exponent only")
    out = a.data ** p

    def bw(g, ctx):
        return (g * p * a.data ** (p - 1),)

    return make_result(out, "pow", (a,), bw, p=p)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def bw(g, ctx):
        return (g * mask,)

    return make_result(a.data * mask, "relu", (a,), bw, nonsmooth=bool(np.any(a.data == 0)))


_SQRT_HALF = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _SQRT_HALF))

    def bw(g, ctx):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
        return (g * (cdf + a.data * pdf),)

    return make_result(a.data * cdf, "gelu", (a,), bw)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split to avoid overflow in exp for large |x|
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bw(g, ctx):
        return (g * out * (1.0 - out),)

    return make_result(out, "sigmoid", (a,), bw)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_result(out, "tanh", (a,), lambda g, ctx: (g * (1.0 - out * out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, "exp", (a,), lambda g, ctx: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return make_result(out, "log", (a,), lambda g, ctx: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_result(out, "sqrt", (a,), lambda g, ctx: (g * 0.5 / out,))


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi
    return make_result(out, "clamp", (a,), lambda g, ctx: (g * inside,))


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "div": div,
    "relu": relu, "gelu": gelu, "sigmoid": sigmoid, "log": log, "neg": neg,
    "tanh": tanh, "exp": exp,
}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch an elementwise op by name; ``pow`` takes a scalar exponent as ``b``."""
    if kind == "pow":
        return pow(a, b)
    fn = _ELEMENTWISE.get(kind)
    if fn is None:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    if kind in ("add", "sub", "mul", "div"):
        if b is None:
            raise ValueError(f"{kind} needs two operands")
        return fn(a, b)
    return fn(a)


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    broadcast_shape(a.shape[:-2], b.shape[:-2])
    out = np.matmul(a.data, b.data)

    def bw(g, ctx):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                # collapse leading dims so the weight grad is one GEMM
                a2 = np.broadcast_to(a.data, g.shape[:-2] + a.shape[-2:]).reshape(-1, a.shape[-1])
                gb = a2.T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_result(out, "matmul", (a, b), bw)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise IndexError(f"axis {ax} out of range for {ndim}-D tensor")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    if not axes:
        return identity(x)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g, ctx):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(out, "sum", (x,), bw, axes=axes)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    if not axes:
        return identity(x)
    count = int(np.prod([x.shape[a] for a in axes]))
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def bw(g, ctx):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return make_result(out, "mean", (x,), bw, axes=axes)


def max_(x, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; the gradient goes to the first maximal element (row-major)."""
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    if not axes:
        return identity(x)
    keep = [a for a in range(x.ndim) if a not in axes]
    moved = np.transpose(x.data, keep + list(axes))
    lead = moved.shape[: len(keep)]
    flat = moved.reshape(lead + (-1,))
    idx = np.argmax(flat, axis=-1)
    vals = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    ties = bool(np.any((flat == vals[..., None]).sum(axis=-1) > 1))
    out = vals
    if keepdims:
        out = np.expand_dims(out, axes)

    def bw(g, ctx):
        g = np.asarray(g)
        if keepdims:
            g = np.squeeze(g, axis=axes)
        gflat = np.zeros(flat.shape, dtype=g.dtype)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gmoved = gflat.reshape(moved.shape)
        inv = np.argsort(keep + list(axes))
        return (np.transpose(gmoved, inv).copy(),)

    return make_result(np.asarray(out, dtype=x.dtype), "max", (x,), bw, nonsmooth=ties, axes=axes)


_REDUCE = {"sum": sum_, "mean": mean, "max": max_}


def reduce(kind: str, x, axes=None, keepdims: bool = False) -> Tensor:
    fn = _REDUCE.get(kind)
    if fn is None:
        raise ValueError(f"unknown reduction {kind!r}")
    return fn(x, axes, keepdims)


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------

def identity(x) -> Tensor:
    x = as_tensor(x)
    return make_result(x.data.copy(), "identity", (x,), lambda g, ctx: (g,))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape).copy()
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} ({x.size} elements) to {shape}") from exc
    return make_result(out, "reshape", (x,), lambda g, ctx: (g.reshape(x.shape),))


def permute(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(a % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"invalid permutation {axes} for {x.ndim}-D tensor")
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    return make_result(out, "permute", (x,), lambda g, ctx: (np.ascontiguousarray(np.transpose(g, inv)),))


def pad(x, widths: Sequence[tuple], value: float = 0.0) -> Tensor:
    """Constant pad; ``widths`` lists (before, after) per axis, leading axes may be omitted."""
    x = as_tensor(x)
    widths = [(0, 0)] * (x.ndim - len(widths)) + [tuple(w) for w in widths]
    if any(lo < 0 or hi < 0 for lo, hi in widths):
        raise ValueError("pad widths must be non-negative")
    out = np.pad(x.data, widths, constant_values=value)
    crop = tuple(slice(lo, n + lo) for (lo, _), n in zip(widths, x.shape))
    return make_result(out, "pad", (x,), lambda g, ctx: (g[crop].copy(),))


def _check_index(index, shape):
    if not isinstance(index, tuple):
        index = (index,)
    for ax, ix in enumerate(i for i in index if i is not Ellipsis and i is not None):
        if ax >= len(shape):
            raise IndexError(f"too many indices for shape {shape}")
        if isinstance(ix, slice):
            if ix.step not in (None, 1) and ix.step <= 0:
                raise IndexError("negative slice steps are not supported")
            for bound in (ix.start, ix.stop):
                if bound is not None and not -shape[ax] <= bound <= shape[ax]:
                    raise IndexError(f"slice bound {bound} out of range for axis {ax} of size {shape[ax]}")
        elif isinstance(ix, (int, np.integer)):
            if not -shape[ax] <= ix < shape[ax]:
                raise IndexError(f"index {ix} out of range for axis {ax} of size {shape[ax]}")


def slice_(x, index) -> Tensor:
    x = as_tensor(x)
    _check_index(index, x.shape)
    out = np.array(x.data[index], copy=True)

    def bw(g, ctx):
        full = np.zeros(x.shape, dtype=g.dtype)
        if _is_fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return make_result(out, "slice", (x,), bw)


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def take(x, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis`` with an integer index array (repeats allowed)."""
    x = as_tensor(x)
    indices = np.asarray(indices)
    out = np.take(x.data, indices, axis=axis)
    axis = axis % x.ndim

    def bw(g, ctx):
        full = np.zeros(x.shape, dtype=g.dtype)
        moved = np.moveaxis(full, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + indices.ndim)), list(range(indices.ndim)))
        np.add.at(moved, indices, gm)
        return (full,)

    return make_result(out, "take", (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g, ctx):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return make_result(out, "concat", tuple(tensors), bw)


def roll(x, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shifts, axes = tuple(shifts), tuple(axes)
    out = np.roll(x.data, shifts, axes)
    back = tuple(-s for s in shifts)
    return make_result(out, "roll", (x,), lambda g, ctx: (np.roll(g, back, axes),))


def reshape_permute_pad_slice(x, kind: str, arg) -> Tensor:
    """Single entry point for the layout transforms."""
    if kind == "reshape":
        return reshape(x, arg)
    if kind == "permute":
        return permute(x, arg)
    if kind == "pad":
        return pad(x, arg)
    if kind == "slice":
        return slice_(x, arg)
    raise ValueError(f"unknown layout op {kind!r}")


# ---------------------------------------------------------------------------
# autodiff driver
# ---------------------------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
    seen = set()
    order = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen or t._node is None:
            continue
        seen.add(id(t))
        order.append(t)
        stack.extend(i for i in t._node.inputs if i.requires_grad)
    # creation order is a valid topological order of an acyclic tape
    order.sort(key=lambda t: t._node.order, reverse=True)
    return order


def graph_nodes(root: Tensor) -> list[TapeNode]:
    return [t._node for t in _topo(root)]


def backward(root: Tensor, free_graph: bool = True) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable leaf."""
    if root.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    if root._node is None:
        root.grad = np.ones_like(root.data) if root.grad is None else root.grad + 1.0
        return
    grads = {id(root): np.ones_like(root.data)}
    order = _topo(root)
    for t in order:
        g = grads.pop(id(t), None)
        if g is None:
            continue
        node = t._node
        in_grads = node.backward(g, node.ctx)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            if inp._node is None:
                inp.grad = ig.astype(inp.data.dtype, copy=True) if inp.grad is None else inp.grad + ig
            else:
                prev = grads.get(id(inp))
                grads[id(inp)] = ig if prev is None else prev + ig
    if free_graph:
        for t in order:
            t._node = None


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5,
               max_components: int | None = None, rng=None, floor: float = 1e-8) -> float:
    """Max relative error between autodiff and central differences of ``f`` at ``x``.

    Per component the error is ``|a - cd| / max(|a|, |cd|, floor)``; ``floor``
    sets the magnitude below which differences count in absolute terms, which
    matters for gradients that are exactly zero (finite differences then
    return round-off noise).

    ``x`` is perturbed in place, so ``f`` may also close over it (for checking
    parameters of a layer). With ``max_components`` a random subset of entries
    is probed. Emits :class:`NonSmoothWarning` if the tape contains a kink
    (relu at 0, max with ties).
    """
    if not 0 < eps <= 1e-2:
        raise ValueError("eps must lie in (0, 1e-2]")
    was = x.requires_grad
    x.requires_grad = True
    x.grad = None
    out = f(x)
    if any(n.nonsmooth for n in graph_nodes(out)):
        warnings.warn("grad_check evaluated at a non-smooth point", NonSmoothWarning, stacklevel=2)
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None
    flat = x.data.reshape(-1)
    n = flat.size
    if max_components is not None and max_components < n:
        rng = rng or np.random.default_rng(0)
        comps = rng.choice(n, size=max_components, replace=False)
    else:
        comps = range(n)
    worst = 0.0
    a_flat = analytic.reshape(-1)
    with no_grad():
        for i in comps:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(x).data.sum())
            flat[i] = orig - eps
            fm = float(f(x).data.sum())
            flat[i] = orig
            cd = (fp - fm) / (2 * eps)
            a = a_flat[i]
            err = abs(a - cd) / max(abs(a), abs(cd), floor)
            worst = max(worst, err)
    x.requires_grad = was
    return worst


def zeros(shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def parameters_hash(tensors: Iterable[Tensor]) -> str:
    h = hashlib.sha256()
    for t in tensors:
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()
