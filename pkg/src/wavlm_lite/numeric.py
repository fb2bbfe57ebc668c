"""Small reverse-mode autodiff engine on top of numpy.

Every tensor keeps the numpy array it wraps plus, when it was produced by a
recorded op, a closure mapping the upstream gradient to gradients for each
parent. :func:`backward` walks the graph in reverse topological order and
accumulates into :class:`Parameter` leaves.

Precision follows the arrays: models train in float32 and gradient checks
build the same model in float64.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

_GRAD_ENABLED = True

HALF_MAX = 65504.0


class ShapeError(ValueError):
    """Operand extents do not line up."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "_parents", "_backward", "requires_grad")

    def __init__(self, data, parents: Sequence["Tensor"] = (), backward: Callable | None = None):
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        track = _GRAD_ENABLED and backward is not None and any(p.requires_grad for p in parents)
        self.requires_grad = track
        self._parents = tuple(parents) if track else ()
        self._backward = backward if track else None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def __len__(self):
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
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)


class Parameter(Tensor):
    """A named leaf tensor that receives gradients."""

    __slots__ = ("name", "grad")

    def __init__(self, value, name: str = ""):
        super().__init__(np.array(value, copy=True))
        self.requires_grad = True
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _coerce(a, b):
    """Wrap operands; python scalars take the dtype of the tensor operand."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not isinstance(a, Tensor):
        a, b = as_tensor(a), as_tensor(b)
    return a, b


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape
    return Tensor(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape
    return Tensor(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data
    return Tensor(ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def _back(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return Tensor(out, (a, b), _back)


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    return Tensor(ad ** exponent, (a,), lambda g: (g * exponent * ad ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor(out, (a,), lambda g: (g * 0.5 / out,))


def clamp_min(a: Tensor, lo: float) -> Tensor:
    ad = a.data
    keep = ad >= lo
    return Tensor(np.maximum(ad, lo).astype(ad.dtype), (a,), lambda g: (g * keep,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    # split by sign so exp never sees a large positive argument
    out = np.empty_like(ad)
    pos = ad >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    e = np.exp(ad[~pos])
    out[~pos] = e / (1.0 + e)
    return Tensor(out, (a,), lambda g: (g * out * (1.0 - out),))


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    """GELU with the exact error-function CDF."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    cdf = cdf.astype(x.dtype, copy=False)

    def _back(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf).astype(x.dtype, copy=False),)

    return Tensor(x * cdf, (a,), _back)


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``cond`` holds, else ``b``; ``cond`` is a constant mask."""
    a, b = _coerce(a, b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)
    sa, sb = a.shape, b.shape

    def _back(g):
        zero = np.zeros((), dtype=g.dtype)
        return _unbroadcast(np.where(cond, g, zero), sa), _unbroadcast(np.where(cond, zero, g), sb)

    return Tensor(out, (a, b), _back)


# -- reductions and shape ops -------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor(out, (a,), _back)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / float(count))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def take(a: Tensor, index) -> Tensor:
    """Numpy-style indexing; the backward pass scatter-adds so repeated indices accumulate."""
    shape, dtype = a.shape, a.dtype

    def _back(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return Tensor(a.data[index], (a,), _back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                  lambda g: tuple(np.split(g, splits, axis=axis)))


def pad_last(a: Tensor, left: int, right: int) -> Tensor:
    """Zero-pad the last axis."""
    if left == 0 and right == 0:
        return a
    width = [(0, 0)] * (a.ndim - 1) + [(left, right)]
    n = a.shape[-1]
    return Tensor(np.pad(a.data, width), (a,), lambda g: (g[..., left:left + n],))


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading axes."""
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data
    if ad.ndim < 1 or bd.ndim < 1:
        raise ShapeError("matmul needs at least 1-d operands")
    inner_a = ad.shape[-1]
    inner_b = bd.shape[-2] if bd.ndim > 1 else bd.shape[0]
    if inner_a != inner_b:
        raise ShapeError(f"matmul inner extents differ: {ad.shape} @ {bd.shape}")
    if ad.ndim == 1 or bd.ndim == 1:
        raise ShapeError("matmul expects operands with at least two axes")

    def _back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor(ad @ bd, (a, b), _back)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# -- fused numerics -----------------------------------------------------------

def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the affine map."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layernorm affine shape {gain.shape}/{bias.shape} does not match last extent {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def _back(g):
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return Tensor(xhat * gd + bias.data, (x, gain, bias), _back)


def _check_finite(arr: np.ndarray):
    if np.isnan(arr).any():
        raise FloatingPointError("NaN in softmax input")


def softmax(z: Tensor, axis: int = -1, shift: bool = True) -> Tensor:
    """Softmax along ``axis``.

    With ``shift=False`` the exponent is taken as given; callers use this when
    the arguments were already translated (see :func:`stable_attention_weights`).
    """
    z = as_tensor(z)
    zd = z.data
    _check_finite(zd)
    if shift:
        zd = zd - zd.max(axis=axis, keepdims=True)
    e = np.exp(zd)
    out = e / e.sum(axis=axis, keepdims=True)

    def _back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor(out, (z,), _back)


def log_softmax(z: Tensor, axis: int = -1) -> Tensor:
    z = as_tensor(z)
    zd = z.data
    _check_finite(zd)
    shifted = zd - zd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def _back(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor(out, (z,), _back)


def stable_softmax_rows(logits, scale_c: float = 32.0) -> Tensor:
    """Row softmax computed as ``exp((x/c - max(x/c)) * c)``, normalized.

    No exponent argument is positive, so the exponentials stay within [0, 1].
    The row maximum is a constant for differentiation purposes because the
    softmax is translation invariant.
    """
    if scale_c <= 0:
        raise ValueError("scale_c must be positive")
    x = as_tensor(logits)
    _check_finite(x.data)
    scaled = mul(x, 1.0 / scale_c)
    top = scaled.data.max(axis=-1, keepdims=True)
    args = mul(sub(scaled, Tensor(top)), scale_c)
    return softmax(args, axis=-1, shift=False)


def stable_attention_weights(q: Tensor, k: Tensor, bias: Tensor | None, scale_c: float = 32.0):
    """Attention weights with the translated logit form used for fp16 safety.

    ``q`` is (..., T, d_k) and ``k`` is (..., S, d_k). Returns the weights and
    the pre-bias exponent arguments (all <= 0) for inspection.
    """
    d_k = q.shape[-1]
    scores = matmul(mul(q, 1.0 / (scale_c * np.sqrt(d_k))), swapaxes(k, -1, -2))
    top = scores.data.max(axis=-1, keepdims=True)
    args = mul(sub(scores, Tensor(top)), scale_c)
    z = args if bias is None else add(args, bias)
    return softmax(z, axis=-1, shift=False), args


def conv1d(x, weight, bias=None, stride: int = 1, groups: int = 1, padding: tuple[int, int] = (0, 0)) -> Tensor:
    """Grouped 1-d convolution (cross-correlation).

    ``x`` is (channels_in, L) or (batch, channels_in, L); ``weight`` is
    (channels_out, channels_in // groups, kernel). No padding unless given.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if padding != (0, 0):
        x = pad_last(x, *padding)
    B, cin, L = x.shape
    cout, cin_g, k = weight.shape
    if cin % groups or cout % groups:
        raise ShapeError(f"channels ({cin} in, {cout} out) not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise ShapeError(f"weight expects {cin_g * groups} input channels, got {cin}")
    if L < k:
        raise ShapeError(f"input length {L} shorter than kernel {k}: empty output")
    L_out = (L - k) // stride + 1
    xd, wd = x.data, weight.data
    win = np.lib.stride_tricks.sliding_window_view(xd, k, axis=-1)[:, :, ::stride, :]
    win = win.reshape(B, groups, cin_g, L_out, k)
    wg = wd.reshape(groups, cout // groups, cin_g, k)
    # (B,G,L_out,cin_g*k) @ (G,cin_g*k,cout_g) -> (B,G,L_out,cout_g)
    cols = win.transpose(0, 1, 3, 2, 4).reshape(B, groups, L_out, cin_g * k)
    wmat = wg.reshape(groups, cout // groups, cin_g * k).transpose(0, 2, 1)
    out = (cols @ wmat).transpose(0, 1, 3, 2).reshape(B, cout, L_out)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[:, None]

    def _back(g):
        gg = g.reshape(B, groups, cout // groups, L_out).transpose(0, 1, 3, 2)  # B,G,L_out,cout_g
        gw = np.einsum("bglo,bglc->goc", gg, cols).reshape(cout, cin_g, k)
        gcols = gg @ wmat.transpose(0, 2, 1)  # B,G,L_out,cin_g*k
        gwin = gcols.reshape(B, groups, L_out, cin_g, k).transpose(0, 1, 3, 2, 4).reshape(B, cin, L_out, k)
        gx = np.zeros((B, cin, L), dtype=xd.dtype)
        span = stride * (L_out - 1) + 1
        for j in range(k):
            gx[:, :, j:j + span:stride] += gwin[:, :, :, j]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    res = Tensor(out, parents, _back)
    if squeeze:
        res = reshape(res, res.shape[1:])
    return res


def conv_out_length(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1


# -- graph traversal ----------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(value) into every reachable Parameter's ``grad``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = node.grad + g.astype(node.dtype, copy=False)
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()
