"""Reverse-mode differentiable tensors on a numpy backend.

The engine provides exactly the operations the raw-to-RGB networks and
their losses need: 2-D convolution, 2x2 max/average pooling, bilinear
2x upsampling, global average pooling, fully connected layers, PReLU,
ReLU, sigmoid, channel concatenation, and a small set of pointwise and
reduction ops.  Feature maps follow the (N, C, H, W) layout; parameter
tensors may be lower rank (conv weights are 4-D, FC weights 2-D,
biases 1-D, loss values 0-D).

Gradients are accumulated by closures recorded at op time and replayed
in reverse topological order, micrograd style.  Tensors with
``requires_grad=False`` never receive gradient, which is how frozen
network stages stay untouched.
"""

from __future__ import annotations

import zlib

import numpy as np

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when an op's shape contract is violated."""


def set_default_dtype(dtype) -> None:
    """Set the dtype new tensors are created with (float32 or float64).

    float32 is the training dtype; float64 exists for tight gradient
    checks and must be selected before any tensors are built.
    """
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


class using_dtype:
    """Context manager that temporarily switches the default dtype."""

    def __init__(self, dtype):
        self.dtype = dtype

    def __enter__(self):
        self.saved = _DEFAULT_DTYPE
        set_default_dtype(self.dtype)
        return self

    def __exit__(self, *exc):
        set_default_dtype(self.saved)
        return False


class no_grad:
    """Context manager that disables tape recording (for inference)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self.saved = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self.saved
        return False


def rng_from(seed: int, tag: str = "") -> np.random.Generator:
    """Deterministic PCG64 generator for (seed, tag).

    Identical (seed, tag) pairs yield bit-identical streams; distinct
    tags derived from one seed are independent.
    """
    key = zlib.crc32(tag.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


class Tensor:
    """A dense float array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = "",
                 dtype=None):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE if dtype is None else dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out.name = self.name
        out._parents = ()
        out._backward = None
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None) -> None:
        """Backpropagate from this tensor through the recorded tape."""
        if grad is None:
            if self.data.ndim != 0:
                raise ShapeError(
                    f"backward() without an explicit gradient needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        self._accum(np.asarray(grad, dtype=self.data.dtype))

        order = _topo_order(self)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar -------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul_scalar(self, 1.0 / float(other))

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{tag})"


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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _from_op(data, parents, backward) -> Tensor:
    # op results keep the dtype numpy computed; the default dtype only
    # governs leaf construction
    out = Tensor(data, dtype=np.asarray(data).dtype)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _require_4d(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op} expects an (N, C, H, W) tensor, got shape {tuple(x.shape)}")


# ---------------------------------------------------------------------------
# convolution / pooling / resampling
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution (cross-correlation) over (N, C, H, W).

    weight is (outC, inC, kH, kW) with kH, kW in {1, 3}; bias is (outC,)
    or None.  3x3 kernels with padding=1 preserve spatial size.
    """
    _require_4d(x, "conv2d")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be 4-D, got shape {tuple(weight.shape)}")
    n, c, h, w = x.shape
    oc, ic, kh, kw = weight.shape
    if ic != c:
        raise ShapeError(f"conv2d input has {c} channels but weight expects {ic}")
    if kh not in (1, 3) or kw not in (1, 3):
        raise ShapeError(f"conv2d kernel must be 1x1 or 3x3, got {kh}x{kw}")
    if bias is not None and bias.shape != (oc,):
        raise ShapeError(f"conv2d bias must have shape ({oc},), got {tuple(bias.shape)}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")

    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {h}x{w}, kernel {kh}x{kw}")

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]           # (N, C, Ho, Wo, kh, kw)
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5))
    cols = cols.reshape(n, ho * wo, c * kh * kw)
    wmat = weight.data.reshape(oc, c * kh * kw)

    out = cols @ wmat.T                                    # (N, Ho*Wo, outC)
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.transpose(0, 2, 1).reshape(n, oc, ho, wo))

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gmat = g.reshape(n, oc, ho * wo).transpose(0, 2, 1)   # (N, P, outC)
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2, 3)))
        if weight.requires_grad:
            gw = np.tensordot(gmat, cols, axes=([0, 1], [0, 1]))  # (outC, C*kh*kw)
            weight._accum(gw.reshape(weight.shape))
        if x.requires_grad:
            gcols = gmat @ wmat                              # (N, P, C*kh*kw)
            gcols = gcols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            gp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gp[:, :, i:i + (ho - 1) * stride + 1:stride,
                          j:j + (wo - 1) * stride + 1:stride] += gcols[:, :, i, j]
            if padding:
                gp = gp[:, :, padding:-padding, padding:-padding]
            x._accum(gp)

    return _from_op(out, parents, backward)


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling; gradient routes to the first (row-major) argmax."""
    _require_4d(x, "maxpool2x2")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    ho, wo = h // 2, w // 2
    win = x.data.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        if x.requires_grad:
            gw = np.zeros((n, c, ho, wo, 4), dtype=g.dtype)
            np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
            gx = gw.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
            x._accum(gx)

    return _from_op(out, (x,), backward)


def avgpool2x2(x: Tensor) -> Tensor:
    """2x2 average pooling."""
    _require_4d(x, "avgpool2x2")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2x2 needs even spatial dims, got {h}x{w}")
    ho, wo = h // 2, w // 2
    out = x.data.reshape(n, c, ho, 2, wo, 2).mean(axis=(3, 5))

    def backward(g):
        if x.requires_grad:
            gx = np.repeat(np.repeat(g * 0.25, 2, axis=2), 2, axis=3)
            x._accum(gx)

    return _from_op(out, (x,), backward)


def _upsample2x_axis(a, axis):
    # align_corners=False: out[2k] = .25*a[k-1] + .75*a[k]; out[2k+1] = .75*a[k] + .25*a[k+1]
    # (indices clamped to the edge)
    a = np.moveaxis(a, axis, 0)
    up = np.concatenate([a[:1], a[:-1]], axis=0)
    dn = np.concatenate([a[1:], a[-1:]], axis=0)
    out = np.empty((2 * a.shape[0],) + a.shape[1:], dtype=a.dtype)
    out[0::2] = 0.75 * a + 0.25 * up
    out[1::2] = 0.75 * a + 0.25 * dn
    return np.moveaxis(out, 0, axis)


def _upsample2x_axis_adjoint(g, axis):
    g = np.moveaxis(g, axis, 0)
    ge, go = g[0::2], g[1::2]
    gx = 0.75 * (ge + go)
    gx[1:] += 0.25 * go[:-1]
    gx[-1] += 0.25 * go[-1]
    gx[:-1] += 0.25 * ge[1:]
    gx[0] += 0.25 * ge[0]
    return np.moveaxis(gx, 0, axis)


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Bilinear 2x upsampling (align_corners=False), a linear operator."""
    _require_4d(x, "bilinear_upsample2x")
    out = _upsample2x_axis(_upsample2x_axis(x.data, 2), 3)

    def backward(g):
        if x.requires_grad:
            x._accum(_upsample2x_axis_adjoint(_upsample2x_axis_adjoint(g, 3), 2))

    return _from_op(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over H and W, keeping (N, C, 1, 1)."""
    _require_4d(x, "global_avg_pool")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def backward(g):
        if x.requires_grad:
            x._accum(np.broadcast_to(g / (h * w), x.shape))

    return _from_op(out, (x,), backward)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map on (N, C, 1, 1) tensors: weight (outC, C), bias (outC,)."""
    _require_4d(x, "fully_connected")
    n, c, h, w = x.shape
    if (h, w) != (1, 1):
        raise ShapeError(f"fully_connected needs 1x1 spatial input, got {h}x{w}")
    oc, ic = weight.shape
    if ic != c:
        raise ShapeError(f"fully_connected input has {c} channels but weight expects {ic}")
    x2 = x.data.reshape(n, c)
    out = (x2 @ weight.data.T + bias.data).reshape(n, oc, 1, 1)

    def backward(g):
        g2 = g.reshape(n, oc)
        if bias.requires_grad:
            bias._accum(g2.sum(axis=0))
        if weight.requires_grad:
            weight._accum(g2.T @ x2)
        if x.requires_grad:
            x._accum((g2 @ weight.data).reshape(n, c, 1, 1))

    return _from_op(out, (x, weight, bias), backward)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """PReLU with one learnable slope per layer; slope has shape (1,)."""
    if slope.shape != (1,):
        raise ShapeError(f"prelu slope must have shape (1,), got {tuple(slope.shape)}")
    a = slope.data[0]
    neg = x.data < 0
    out = np.where(neg, a * x.data, x.data)

    def backward(g):
        if x.requires_grad:
            x._accum(np.where(neg, a, 1.0).astype(g.dtype) * g)
        if slope.requires_grad:
            slope._accum(np.array([(g * np.where(neg, x.data, 0.0)).sum()], dtype=g.dtype))

    return _from_op(out, (x, slope), backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward(g):
        if x.requires_grad:
            x._accum((x.data > 0) * g)

    return _from_op(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic function; output strictly in (0, 1)."""
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def backward(g):
        if x.requires_grad:
            x._accum(out * (1.0 - out) * g)

    return _from_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# pointwise / structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add needs identical shapes, got {tuple(a.shape)} vs {tuple(b.shape)}")
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g)

    return _from_op(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub needs identical shapes, got {tuple(a.shape)} vs {tuple(b.shape)}")
    out = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(-g)

    return _from_op(out, (a, b), backward)


def _is_nc11_broadcast(full, small):
    return (len(full) == 4 and len(small) == 4 and small[0] == full[0]
            and small[1] == full[1] and small[2] == small[3] == 1)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; one operand may be (N, C, 1, 1) against (N, C, H, W)."""
    if a.shape == b.shape:
        bcast = None
    elif _is_nc11_broadcast(a.shape, b.shape):
        bcast = "b"
    elif _is_nc11_broadcast(b.shape, a.shape):
        bcast = "a"
    else:
        raise ShapeError(f"mul cannot combine shapes {tuple(a.shape)} and {tuple(b.shape)}")
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            ga = g * b.data
            if bcast == "a":
                ga = ga.sum(axis=(2, 3), keepdims=True)
            a._accum(ga)
        if b.requires_grad:
            gb = g * a.data
            if bcast == "b":
                gb = gb.sum(axis=(2, 3), keepdims=True)
            b._accum(gb)

    return _from_op(out, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"div needs identical shapes, got {tuple(a.shape)} vs {tuple(b.shape)}")
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accum(g / b.data)
        if b.requires_grad:
            b._accum(-g * a.data / (b.data * b.data))

    return _from_op(out, (a, b), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis, a's channels first."""
    _require_4d(a, "concat_channels")
    _require_4d(b, "concat_channels")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(
            f"concat_channels needs matching N, H, W, got {tuple(a.shape)} vs {tuple(b.shape)}"
        )
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(g):
        if a.requires_grad:
            a._accum(g[:, :ca])
        if b.requires_grad:
            b._accum(g[:, ca:])

    return _from_op(out, (a, b), backward)


def add_scalar(x: Tensor, c: float) -> Tensor:
    out = x.data + np.asarray(c, dtype=x.data.dtype)

    def backward(g):
        if x.requires_grad:
            x._accum(g)

    return _from_op(out, (x,), backward)


def mul_scalar(x: Tensor, c: float) -> Tensor:
    out = x.data * np.asarray(c, dtype=x.data.dtype)

    def backward(g):
        if x.requires_grad:
            x._accum(g * np.asarray(c, dtype=g.dtype))

    return _from_op(out, (x,), backward)


def absolute(x: Tensor) -> Tensor:
    out = np.abs(x.data)

    def backward(g):
        if x.requires_grad:
            x._accum(np.sign(x.data) * g)

    return _from_op(out, (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    """Elementwise square root; the derivative at 0 is taken as 0."""
    out = np.sqrt(x.data)

    def backward(g):
        if x.requires_grad:
            safe = np.where(out > 0, out, 1.0)
            x._accum(np.where(out > 0, g * 0.5 / safe, 0.0))

    return _from_op(out, (x,), backward)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through unclipped elements."""
    out = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        if x.requires_grad:
            x._accum(inside * g)

    return _from_op(out, (x,), backward)


def sum_channels(x: Tensor) -> Tensor:
    """Sum over the channel axis, keeping (N, 1, H, W)."""
    _require_4d(x, "sum_channels")
    out = x.data.sum(axis=1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            x._accum(np.broadcast_to(g, x.shape))

    return _from_op(out, (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    """Mean over every element; the usual loss head."""
    out = np.asarray(x.data.mean(), dtype=x.data.dtype)
    inv = 1.0 / x.size

    def backward(g):
        if x.requires_grad:
            x._accum(np.broadcast_to(g * np.asarray(inv, dtype=g.dtype), x.shape))

    return _from_op(out, (x,), backward)


def channel_affine(x: Tensor, scale, shift) -> Tensor:
    """Fixed per-channel affine map out[:, c] = x[:, c] * scale[c] + shift[c].

    scale and shift are plain arrays (not learnable); used for
    normalization and denormalization inside loss graphs.
    """
    _require_4d(x, "channel_affine")
    c = x.shape[1]
    scale = np.asarray(scale, dtype=x.data.dtype).reshape(1, c, 1, 1)
    shift = np.asarray(shift, dtype=x.data.dtype).reshape(1, c, 1, 1)
    out = x.data * scale + shift

    def backward(g):
        if x.requires_grad:
            x._accum(g * scale)

    return _from_op(out, (x,), backward)
