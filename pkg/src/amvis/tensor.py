"""Dense tensors with reverse-mode automatic differentiation.

Every tensor wraps a numpy array. Operations on tensors that require gradients
record a node in an implicit graph (parents plus a backward closure); calling
:meth:`Tensor.backward` on a scalar walks that graph in reverse topological
order and accumulates ``grad`` on every leaf with ``requires_grad=True``.

Model data is float32 by default. Anything built from float64 arrays stays
float64, which is what the finite-difference oracles rely on.
"""

from __future__ import annotations

import contextlib
import hashlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class BackwardError(RuntimeError):
    """Raised when backward is requested from a non-scalar output."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    if isinstance(data, np.ndarray):
        if dtype is not None:
            return data.astype(dtype, copy=False)
        if data.dtype.kind != "f":
            return data.astype(DEFAULT_DTYPE)
        return data
    return np.asarray(data, dtype=dtype or DEFAULT_DTYPE)


class Tensor:
    """An n-dimensional real array that can take part in a differentiation graph.

    Args:
        data: array-like values. Float arrays keep their dtype; everything else
            becomes float32.
        requires_grad: whether gradients should be accumulated on this tensor.
        dtype: optional explicit dtype.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _make(cls, data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
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
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise BackwardError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self.op})"

    # -- autodiff ---------------------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every requires_grad leaf reachable from this scalar.

        Gradients accumulate, so call ``zero_grad`` on leaves between passes.
        """
        if self.data.size != 1:
            raise BackwardError(f"backward needs a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad = node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar -------------------------------------------------------

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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce("mean", self, axis, keepdims)

    def max(self, axis=None, keepdims: bool = False):
        return reduce("max", self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)


def _topological_order(root: Tensor) -> list[Tensor]:
    # Iterative DFS; returns nodes from root towards leaves, each exactly once.
    visited: set[int] = set()
    post: list[Tensor] = []
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            post.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    post.reverse()
    return post


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the adjoint of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise ----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return Tensor._make(
        a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add"
    )


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return Tensor._make(
        a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub"
    )


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)

    return Tensor._make(ad * bd, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return unbroadcast(g / bd, ad.shape), unbroadcast(-g * ad / (bd * bd), bd.shape)

    return Tensor._make(ad / bd, (a, b), backward, "div")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._make(a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    # Subgradient at exactly 0 is 0.
    mask = a.data > 0
    return Tensor._make(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor._make(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    u = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(u)
    out = 0.5 * x * (1 + t)

    def backward(g):
        du = _GELU_C * (1 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1 + t) + 0.5 * x * (1 - t * t) * du),)

    return Tensor._make(out.astype(x.dtype, copy=False), (a,), backward, "gelu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor._make(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    return Tensor._make(np.log(x), (a,), lambda g: (g / x,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    safe = np.where(out > 0, out, 1)

    def backward(g):
        return (np.where(out > 0, g / (2 * safe), 0).astype(out.dtype),)

    return Tensor._make(out, (a,), backward, "sqrt")


def absolute(a: Tensor) -> Tensor:
    # sign(0) == 0, so ties get a zero subgradient.
    s = np.sign(a.data)
    return Tensor._make(np.abs(a.data), (a,), lambda g: (g * s,), "abs")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "relu": relu,
    "gelu": gelu,
    "sigmoid": sigmoid,
    "scale": scale,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "abs": absolute,
}


def elementwise(op: str, *operands) -> Tensor:
    """Dispatch an elementwise op by tag, e.g. ``elementwise("scale", t, 2.0)``."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; known: {sorted(_ELEMENTWISE)}") from None
    return fn(*operands)


# -- shape manipulation ---------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {src} into {tuple(shape)}") from None
    return Tensor._make(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        index = index.data.astype(np.int64)
    src_shape, dtype = a.shape, a.dtype

    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros(src_shape, dtype=dtype)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return Tensor._make(a.data[index], (a,), backward, "getitem")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def gather_weighted(a: Tensor, index: np.ndarray, weight: np.ndarray) -> Tensor:
    """Weighted gather along the flattened trailing spatial axes.

    ``a`` has shape [..., H, W]; ``index`` and ``weight`` have shape [P, K] with
    flat indices into H*W. Output is [..., P] with
    ``out[..., p] = sum_k weight[p, k] * a[..., index[p, k]]``.
    """
    lead = a.shape[:-2]
    hw = a.shape[-2] * a.shape[-1]
    flat = a.data.reshape(lead + (hw,))
    w = weight.astype(a.dtype, copy=False)
    out = (flat[..., index] * w).sum(axis=-1)

    def backward(g):
        full = np.zeros(lead + (hw,), dtype=a.dtype)
        contrib = g[..., None] * w
        m = int(np.prod(lead)) if lead else 1
        full2 = full.reshape(m, hw)
        contrib2 = contrib.reshape(m, -1)
        flat_idx = index.reshape(-1)
        for row in range(m):
            full2[row] = np.bincount(flat_idx, weights=contrib2[row], minlength=hw)
        return (full2.reshape(a.shape),)

    return Tensor._make(out, (a,), backward, "gather")


# -- reductions -------------------------------------------------------------------


def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < max(ndim, 1):
            raise ShapeError(f"axis {ax} out of range for tensor of rank {ndim}")
        out.append(ax % ndim if ndim else 0)
    return tuple(sorted(set(out)))


def reduce(op: str, a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    """Reduce with ``op`` in {"sum", "mean", "max"} over ``axes`` (None means all)."""
    a = _wrap(a)
    axes = _norm_axes(axes, a.ndim)
    x = a.data
    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(a.shape))
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1

    if op == "sum":
        out = x.sum(axis=axes, keepdims=keepdims)

        def backward(g):
            return (np.broadcast_to(g.reshape(kept_shape), a.shape).copy(),)

    elif op == "mean":
        if count == 0:
            raise ShapeError("mean over an empty selection")
        out = x.mean(axis=axes, keepdims=keepdims)

        def backward(g):
            return (np.broadcast_to(g.reshape(kept_shape) / count, a.shape).astype(x.dtype),)

    elif op == "max":
        out = x.max(axis=axes, keepdims=keepdims)

        def backward(g):
            # Ties share the gradient equally.
            mask = x == out.reshape(kept_shape)
            share = mask / mask.sum(axis=axes, keepdims=True)
            return ((g.reshape(kept_shape) * share).astype(x.dtype),)

    else:
        raise ValueError(f"unknown reduction {op!r}")
    out = np.asarray(out, dtype=x.dtype)
    return Tensor._make(out, (a,), backward, op)


# -- linear algebra -----------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Leading (batch) axes broadcast like ``np.matmul``."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape} (axis -1 vs -2)")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return unbroadcast(ga, ad.shape), unbroadcast(gb, bd.shape)

    try:
        out = ad @ bd
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return Tensor._make(out, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with weight of shape [out, in]."""
    out = matmul(x, transpose(weight))
    return out + bias if bias is not None else out


# -- softmax family ---------------------------------------------------------------


def softmax(z: Tensor, axis: int = -1) -> Tensor:
    x = z.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._make(s, (z,), backward, "softmax")


def log_softmax(z: Tensor, axis: int = -1) -> Tensor:
    x = z.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def backward(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (z,), backward, "log_softmax")


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits`` [N, K]."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    lp = log_softmax(logits, axis=-1)
    picked = getitem(lp, (np.arange(n), labels))
    return scale(reduce("sum", picked), -1.0 / n)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data
    def backward(g):
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        ggamma = unbroadcast(g * xhat, gd.shape)
        gbeta = unbroadcast(g, beta.shape)
        return gx.astype(xd.dtype), ggamma, gbeta

    return Tensor._make(out.astype(xd.dtype), (x, gamma, beta), backward, "layer_norm")


# -- convolution and pooling ---------------------------------------------------------


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of x [N,C,H,W] with kernel [K,C,kh,kw]."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    k, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d channel mismatch: input axis 1 has {c}, kernel axis 1 has {kc}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be positive and padding non-negative")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp} (axes 2, 3)")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xd = x.data
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xd, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [N,C,Ho,Wo,kh,kw]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = kernel.data.reshape(k, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, ho, wo, k).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, k)
        gk = (gmat.T @ cols).reshape(kernel.shape)
        gcols = (gmat @ wmat).reshape(n, ho, wo, c, kh, kw)
        gx = np.zeros((n, c, hp, wp), dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if padding:
            gx = gx[:, :, padding:-padding, padding:-padding]
        grads = [gx, gk]
        if bias is not None:
            grads.append(gmat.sum(axis=0))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor._make(out, parents, backward, "conv2d")


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling with window and stride ``size``; trailing rows/cols that
    do not fill a window are dropped."""
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    if ho == 0 or wo == 0:
        raise ShapeError(f"pool window {size} larger than input {h}x{w}")
    xd = x.data[:, :, : ho * size, : wo * size]
    blocks = xd.reshape(n, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, size * size)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * size, wo * size)
        full = np.zeros(x.shape, dtype=x.dtype)
        full[:, :, : ho * size, : wo * size] = gb
        return (full,)

    return Tensor._make(out, (x,), backward, "max_pool2d")


# -- Fourier ----------------------------------------------------------------------------


def irfft2(real: Tensor, imag: Tensor, shape: tuple[int, int]) -> Tensor:
    """Orthonormal inverse real 2-D FFT over the last two axes.

    ``real`` and ``imag`` hold a half spectrum of shape [..., H, W//2+1]. The map
    is real-linear in (real, imag); its adjoint is the orthonormal forward
    rfft2 with non-edge columns counted twice (they stand for a conjugate pair).
    """
    h, w = shape
    if real.shape != imag.shape or real.shape[-2:] != (h, w // 2 + 1):
        raise ShapeError(f"half spectrum must be [..., {h}, {w // 2 + 1}], got {real.shape} / {imag.shape}")
    dtype = real.dtype
    spec = real.data + 1j * imag.data
    out = np.fft.irfft2(spec, s=(h, w), norm="ortho").astype(dtype, copy=False)
    weight = np.full(w // 2 + 1, 2.0)
    weight[0] = 1.0
    if w % 2 == 0:
        weight[-1] = 1.0

    def backward(g):
        gs = np.fft.rfft2(g, norm="ortho") * weight
        return gs.real.astype(dtype), gs.imag.astype(dtype)

    return Tensor._make(out, (real, imag), backward, "irfft2")


# -- gradient checking ---------------------------------------------------------------


class GradCheckReport:
    """Outcome of a finite-difference comparison.

    ``errors`` maps probed flat index to relative error; ``flagged`` lists
    coordinates where one-sided differences disagree (kinks), which are left
    out of ``max_error``.
    """

    def __init__(self, errors: dict[int, float], flagged: list[int]):
        self.errors = errors
        self.flagged = flagged

    @property
    def max_error(self) -> float:
        vals = [e for i, e in self.errors.items() if i not in set(self.flagged)]
        return max(vals) if vals else 0.0

    def __repr__(self) -> str:
        return f"GradCheckReport(max_error={self.max_error:.3e}, probed={len(self.errors)}, flagged={len(self.flagged)})"


def grad_check_report(
    f: Callable[[Tensor], Tensor],
    x,
    h: float = 1e-4,
    probes: int | None = None,
    seed: int = 0,
    kink_tol: float = 1e-3,
) -> GradCheckReport:
    """Compare the analytic gradient of scalar ``f`` at ``x`` against central differences.

    Runs in float64. With ``probes`` set, only that many randomly chosen
    coordinates are differenced.
    """
    x0 = np.array(_as_array(x), dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    out = f(xt)
    out.backward()
    analytic = np.zeros_like(x0) if xt.grad is None else xt.grad.astype(np.float64)

    flat = x0.reshape(-1)
    if probes is None or probes >= flat.size:
        coords = np.arange(flat.size)
    else:
        coords = np.random.default_rng(seed).choice(flat.size, size=probes, replace=False)

    def value(vec):
        with no_grad():
            return float(f(Tensor(vec.reshape(x0.shape))).data)

    f0 = value(flat)
    errors: dict[int, float] = {}
    flagged: list[int] = []
    a_flat = analytic.reshape(-1)
    for i in coords:
        i = int(i)
        plus = flat.copy()
        plus[i] += h
        minus = flat.copy()
        minus[i] -= h
        fp, fm = value(plus), value(minus)
        central = (fp - fm) / (2 * h)
        fwd, bwd = (fp - f0) / h, (f0 - fm) / h
        if abs(fwd - bwd) > kink_tol * max(1.0, abs(fwd), abs(bwd)):
            flagged.append(i)
        errors[i] = abs(a_flat[i] - central) / max(1.0, abs(a_flat[i]))
    return GradCheckReport(errors, flagged)


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-4, **kwargs) -> float:
    """Max relative error ``|analytic - central| / max(1, |analytic|)`` over probed,
    non-kink coordinates."""
    return grad_check_report(f, x, h, **kwargs).max_error


def parameters_checksum(arrays: Iterable[np.ndarray]) -> str:
    digest = hashlib.sha256()
    for arr in arrays:
        digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()
