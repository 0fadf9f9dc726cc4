"""Dense float32 tensors with reverse-mode automatic differentiation.

Storage and raw arithmetic are delegated to numpy; the differentiation
machinery (graph recording, gradient rules, the backward pass) lives here.
Every operation that participates in differentiation creates a graph node
holding its input tensors and a closure computing input gradients from the
output gradient.  Calling :meth:`Tensor.backward` on a scalar linearizes
the recorded graph into a tape (inputs strictly before consumers), then
walks it once in reverse, accumulating gradients additively across fan-out.

Conventions, pinned by the test suite:

* float32 everywhere; gradients are float32 buffers of the same shape.
* Broadcasting follows numpy's singleton-expansion rules (enough for
  bias rows and for weighting an ``N x N x d`` map by ``N x N x 1``
  coefficients); gradients of broadcast operands are summed back to the
  operand's shape.
* A second ``backward()`` on the same graph accumulates into the existing
  ``grad`` buffers; callers reset gradients between passes.
* The graph is rebuilt on every forward pass; nothing is cached.
* :func:`precision` temporarily lifts newly created tensors to another
  dtype (numpy promotion carries it through mixed arithmetic); the
  finite-difference checker uses float64 forwards so its numeric route
  is independent of float32 rounding.
"""

from __future__ import annotations

import contextlib

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


_grad_enabled = True
_dtype = np.float32


@contextlib.contextmanager
def no_grad():
    """Disable graph recording, e.g. for evaluation-only forward passes."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def precision(dtype):
    """Coerce tensors created inside the block to ``dtype`` (default float32)."""
    global _dtype
    prev = _dtype
    _dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _dtype = prev


class Tensor:
    """A dense float32 array, optionally recorded for differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._op = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self) -> "Tensor":
        return transpose(self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def backward(self) -> None:
        """Populate ``grad`` on every requires-grad tensor reachable from here.

        Only defined for scalars (one element).  The recorded graph is
        ordered into a tape and visited exactly once in reverse; gradients
        add across fan-out, and across repeated ``backward()`` calls.
        """
        if self.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that is not on the tape")

        tape = _linearize(self)
        # gradients for this pass accumulate in a local map so that a
        # second backward() adds exactly one fresh d(loss)/d(tensor) to
        # each .grad instead of compounding the stored totals
        local: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(tape):
            g = local.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward_fn is None:
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                # out-of-place accumulation: backward closures may return
                # views of the upstream grad, which must never be mutated
                prev = local.get(id(parent))
                local[id(parent)] = pg if prev is None else prev + pg


def _linearize(root: Tensor) -> list[Tensor]:
    """Topologically order the sub-graph below ``root`` (inputs first)."""
    tape: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            tape.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return tape


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
        out._op = op
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_dtype))


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _node(ad * bd, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g / bd, a.shape),
            _unbroadcast(-g * ad / (bd * bd), b.shape),
        )

    return _node(ad / bd, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        return (-g,)

    return _node(-a.data, (a,), backward, "neg")


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _node(out, (a,), backward, "tanh")


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # stable both directions: 1/(1+e^-x) for x>=0, e^x/(1+e^x) otherwise
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = out.astype(x.dtype, copy=False)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _node(out, (a,), backward, "sigmoid")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return _node(np.maximum(a.data, 0), (a,), backward, "relu")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _node(out, (a,), backward, "exp")


def log(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data

    def backward(g):
        return (g / ad,)

    return _node(np.log(ad), (a,), backward, "log")


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        # subgradient 0 at exactly zero keeps constant-input paths finite
        return (g * 0.5 / np.maximum(out, np.float32(1e-12)),)

    return _node(out, (a,), backward, "sqrt")


def clamp(a, lo: float, hi: float) -> Tensor:
    a = _as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        return (g * inside,)

    return _node(np.clip(a.data, lo, hi), (a,), backward, "clamp")


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along ``axis``, stabilized by max subtraction."""
    a = _as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _node(out, (a,), backward, "softmax")


# ---------------------------------------------------------------------------
# shape and structure ops


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _node(ad @ bd, (a, b), backward, "matmul")


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d tensor, got shape {a.shape}")

    def backward(g):
        return (g.T,)

    return _node(a.data.T.copy(), (a,), backward, "transpose")


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    old = a.shape

    def backward(g):
        return (g.reshape(old),)

    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from None
    return _node(out, (a,), backward, "reshape")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    data = [t.data for t in tensors]
    try:
        out = np.concatenate(data, axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    sizes = [d.shape[axis] for d in data]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(
            np.moveaxis(moved[offsets[i]:offsets[i + 1]], 0, axis)
            for i in range(len(sizes))
        )

    return _node(out, tuple(tensors), backward, "concat")


def take_rows(a, indices) -> Tensor:
    """Gather rows of a tensor along axis 0; scatter-adds on backward."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"take_rows: indices must be 1-d, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"take_rows: indices out of range for leading axis {a.shape[0]}")
    shape = a.shape

    def backward(g):
        gx = np.zeros(shape, dtype=np.float32)
        np.add.at(gx, idx, g)
        return (gx,)

    return _node(a.data[idx], (a,), backward, "take_rows")


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(a: Tensor, axis, op: str) -> int | None:
    if axis is None:
        if a.size == 0:
            raise ShapeError(f"{op}: reduction over empty tensor")
        return None
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"{op}: axis {axis} invalid for shape {a.shape}")
    axis = axis % a.ndim
    if a.shape[axis] == 0:
        raise ShapeError(f"{op}: axis {axis} is empty in shape {a.shape}")
    return axis


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axis = _norm_axis(a, axis, "sum")
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(np.float32, copy=False),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axis = _norm_axis(a, axis, "mean")
    shape = a.shape
    n = a.size if axis is None else shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((np.broadcast_to(g, shape) / np.float32(n)).astype(np.float32, copy=False),)

    return _node(a.data.mean(axis=axis, keepdims=keepdims, dtype=a.data.dtype), (a,), backward, "mean")


def reduce_max(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; the gradient routes to the first argmax of each slice."""
    a = _as_tensor(a)
    axis = _norm_axis(a, axis, "max")
    ad = a.data
    if axis is None:
        flat_idx = int(ad.argmax())

        def backward(g):
            gx = np.zeros(ad.shape, dtype=np.float32)
            gx.flat[flat_idx] = np.asarray(g).reshape(())
            return (gx,)

        return _node(ad.max(), (a,), backward, "max")

    idx = np.expand_dims(ad.argmax(axis=axis), axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        gx = np.zeros(ad.shape, dtype=np.float32)
        np.put_along_axis(gx, idx, g, axis)
        return (gx,)

    return _node(ad.max(axis=axis, keepdims=keepdims), (a,), backward, "max")


# ---------------------------------------------------------------------------
# 2-d convolution (stride 1, symmetric zero padding, odd kernel)


def conv2d(x, kernel, bias=None) -> Tensor:
    """Convolve ``x`` of shape (H, W, Cin) with ``kernel`` (kh, kw, Cin, Cout).

    Stride 1 with zero padding of (k-1)/2 on each side, so the spatial
    shape is preserved.  Implemented as a sum of shifted matrix products,
    which keeps both passes as dense gemms.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeError(f"conv2d: need (H,W,Cin) and (kh,kw,Cin,Cout), got {x.shape}, {kernel.shape}")
    h, w, cin = x.shape
    kh, kw, kcin, cout = kernel.shape
    if kcin != cin or kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel {kernel.shape} incompatible with input {x.shape}")
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((ph, ph), (pw, pw), (0, 0)))
    kd = kernel.data
    out = np.zeros((h * w, cout), dtype=np.result_type(xp, kd))
    for dy in range(kh):
        for dx in range(kw):
            out += xp[dy:dy + h, dx:dx + w].reshape(h * w, cin) @ kd[dy, dx]
    out = out.reshape(h, w, cout)
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gf = g.reshape(h * w, cout)
        gk = np.empty_like(kd)
        gxp = np.zeros_like(xp)
        for dy in range(kh):
            for dx in range(kw):
                patch = xp[dy:dy + h, dx:dx + w].reshape(h * w, cin)
                gk[dy, dx] = patch.T @ gf
                gxp[dy:dy + h, dx:dx + w] += (gf @ kd[dy, dx].T).reshape(h, w, cin)
        gx = gxp[ph:ph + h, pw:pw + w]
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 1))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _node(out, parents, backward, "conv2d")
