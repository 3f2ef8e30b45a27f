"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays in row-major order; the canonical feature-map layout
is (batch, channels, height, width). Every differentiable operation records a
per-result backward closure, so each forward pass builds its own tape; the
tape is released with the result tensors once a step completes.

A global precision switch selects float32 (training/inference) or float64
(gradient-check builds). Any operation that produces a non-finite value
raises :class:`NumericError` naming the op.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np


class NumericError(RuntimeError):
    """A numeric invariant was violated (NaN/Inf value, bad gradient)."""


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


_STATE = {"dtype": np.float64, "grad": True, "gates": None}

_DTYPE_NAMES = {
    "f32": np.float32,
    "f64": np.float64,
    "float32": np.float32,
    "float64": np.float64,
}


def set_default_dtype(dtype) -> None:
    """Select the global precision: "f32"/"f64" or a numpy float type."""
    if isinstance(dtype, str):
        if dtype not in _DTYPE_NAMES:
            raise ValueError(f"unknown precision {dtype!r}")
        dtype = _DTYPE_NAMES[dtype]
    if dtype not in (np.float32, np.float64):
        raise ValueError("precision must be float32 or float64")
    _STATE["dtype"] = dtype


def default_dtype():
    return _STATE["dtype"]


@contextmanager
def precision(dtype):
    """Temporarily switch the global precision."""
    prev = _STATE["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _STATE["dtype"] = prev


def grad_enabled() -> bool:
    return _STATE["grad"]


@contextmanager
def no_grad():
    """Disable tape recording (inference / metric evaluation)."""
    prev = _STATE["grad"]
    _STATE["grad"] = False
    try:
        yield
    finally:
        _STATE["grad"] = prev


@contextmanager
def trace_gates():
    """Collect a signature of every gating mask (relu, clip) in the forwards
    run inside the context. Two forwards with equal signatures took identical
    piecewise-linear branches, so finite differences between them are clean."""
    prev = _STATE["gates"]
    _STATE["gates"] = sig = []
    try:
        yield sig
    finally:
        _STATE["gates"] = prev


def _record_gate(mask: np.ndarray) -> None:
    gates = _STATE["gates"]
    if gates is not None:
        gates.append(hash(mask.tobytes()))


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by op '{op}'")


class Tensor:
    """A dense n-dimensional array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=default_dtype())
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...],
                backward: Callable | None, op: str) -> "Tensor":
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.op = op
        if _STATE["grad"] and backward is not None and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- basic accessors ------------------------------------------------------

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

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"item() on tensor of shape {self.shape}")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def permute(self, axes):
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), backward, "add")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def sub(a, b) -> Tensor:
    return add(a, neg(_as_tensor(b)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(a.data * b.data, (a, b), backward, "mul")


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    return Tensor._result(a.data * s, (a,), lambda g: (g * s,), "scale")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)
    return Tensor._result(out_data, (a,), lambda g: (g * out_data,), "exp")


def log(a) -> Tensor:
    a = _as_tensor(a)
    return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    _record_gate(mask)

    def backward(g):
        return (g * mask,)

    return Tensor._result(np.where(mask, a.data, 0.0), (a,), backward, "relu")


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        return (g * out_data * (1.0 - out_data),)

    return Tensor._result(out_data, (a,), backward, "sigmoid")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only inside the bounds."""
    a = _as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    _record_gate(mask)

    def backward(g):
        return (g * mask,)

    return Tensor._result(np.clip(a.data, lo, hi), (a,), backward, "clip")


# -- reductions ------------------------------------------------------------------


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        count = a.size
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        count = 1
        for i in ax:
            count *= a.shape[i]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape) / count,)

    return Tensor._result(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward, "mean")


# -- linear algebra / layout -----------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with numpy-style broadcasting over leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul requires at least 2-d operands")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return Tensor._result(a.data @ b.data, (a, b), backward, "matmul")


def transpose_last2(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        return (np.swapaxes(g, -1, -2),)

    return Tensor._result(np.swapaxes(a.data, -1, -2).copy(), (a,), backward, "transpose")


def permute(a, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inv),)

    return Tensor._result(a.data.transpose(axes).copy(), (a,), backward, "permute")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape

    def backward(g):
        return (g.reshape(old),)

    return Tensor._result(a.data.reshape(shape).copy(), (a,), backward, "reshape")


def concat(xs: Iterable[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat of zero tensors")
    sizes = [x.shape[axis] for x in xs]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(xs)))

    return Tensor._result(np.concatenate([x.data for x in xs], axis=axis),
                          tuple(xs), backward, "concat")


def concat_channels(xs: Iterable[Tensor]) -> Tensor:
    """Concatenate feature maps along the channel axis (argument order)."""
    xs = list(xs)
    base = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(base) or x.shape[0] != base[0] or x.shape[2:] != base[2:]:
            raise ShapeError(f"concat_channels extent mismatch: {base} vs {x.shape}")
    return concat(xs, axis=1)


def permute_rows(a, perm: np.ndarray) -> Tensor:
    """Reorder axis -2 of ``a`` by an integer permutation (per batch item).

    ``perm`` has shape a.shape[:-1]; the backward pass scatters gradients
    through the inverse permutation, exactly.
    """
    a = _as_tensor(a)
    idx = perm[..., None]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.broadcast_to(idx, g.shape), g, axis=-2)
        return (ga,)

    out_data = np.take_along_axis(a.data, np.broadcast_to(idx, a.shape), axis=-2)
    return Tensor._result(out_data, (a,), backward, "permute_rows")


# -- softmax ---------------------------------------------------------------------


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis, stable for magnitudes up to ~1e4."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        return (out_data * (g - dot),)

    return Tensor._result(out_data, (a,), backward, "softmax_rows")


# -- convolution and pooling -----------------------------------------------------


def _conv_out_extent(n: int, k: int, stride: int, dilation: int, padding: int) -> int:
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _im2col(xpad: np.ndarray, k: int, stride: int, dilation: int,
            ho: int, wo: int) -> np.ndarray:
    """Gather sliding-window taps into (B, C, k, k, ho, wo)."""
    b, c = xpad.shape[:2]
    cols = np.empty((b, c, k, k, ho, wo), dtype=xpad.dtype)
    for i in range(k):
        ri = i * dilation
        for j in range(k):
            rj = j * dilation
            cols[:, :, i, j] = xpad[:, :, ri:ri + stride * (ho - 1) + 1:stride,
                                    rj:rj + stride * (wo - 1) + 1:stride]
    return cols


def conv2d(x, weight, bias, stride: int = 1, dilation: int = 1,
           padding: int = 0) -> Tensor:
    """Dilated 2-d cross-correlation plus per-channel bias.

    x: (B, Cin, H, W); weight: (Cout, Cin, k, k), k odd; bias: (Cout,).
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects 4-d input and kernel")
    bsz, cin, h, w = x.shape
    cout, cin_k, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d kernel must be square with odd side, got {k}x{k2}")
    if cin != cin_k:
        raise ShapeError(f"conv2d channel mismatch: input {cin}, kernel {cin_k}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d bias must have shape ({cout},)")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ShapeError("conv2d requires stride>=1, dilation>=1, padding>=0")
    ho = _conv_out_extent(h, k, stride, dilation, padding)
    wo = _conv_out_extent(w, k, stride, dilation, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output extent non-positive ({ho}x{wo})")

    def pad(arr):
        if padding == 0:
            return arr
        return np.pad(arr, ((0, 0), (0, 0), (padding, padding), (padding, padding)))

    cols = _im2col(pad(x.data), k, stride, dilation, ho, wo)
    cols2 = cols.reshape(bsz, cin * k * k, ho * wo)
    wf = weight.data.reshape(cout, cin * k * k)
    out_data = (wf[None] @ cols2).reshape(bsz, cout, ho, wo) + bias.data[None, :, None, None]

    def backward(g):
        gf = g.reshape(bsz, cout, ho * wo)
        cols_b = _im2col(pad(x.data), k, stride, dilation, ho, wo)
        dw = np.matmul(gf, cols_b.reshape(bsz, cin * k * k, ho * wo).transpose(0, 2, 1)).sum(0)
        db = g.sum(axis=(0, 2, 3))
        dcols = (wf.T[None] @ gf).reshape(bsz, cin, k, k, ho, wo)
        hp, wp = h + 2 * padding, w + 2 * padding
        dxp = np.zeros((bsz, cin, hp, wp), dtype=g.dtype)
        for i in range(k):
            ri = i * dilation
            for j in range(k):
                rj = j * dilation
                dxp[:, :, ri:ri + stride * (ho - 1) + 1:stride,
                    rj:rj + stride * (wo - 1) + 1:stride] += dcols[:, :, i, j]
        dx = dxp[:, :, padding:padding + h, padding:padding + w]
        return dx, dw.reshape(weight.shape), db

    return Tensor._result(out_data, (x, weight, bias), backward, "conv2d")


def avg_pool2d(x) -> Tensor:
    """2x2 stride-2 average pooling; odd trailing rows/columns are dropped."""
    x = _as_tensor(x)
    bsz, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    if ho < 1 or wo < 1:
        raise ShapeError(f"avg_pool2d input too small: {h}x{w}")
    view = x.data[:, :, :2 * ho, :2 * wo].reshape(bsz, c, ho, 2, wo, 2)
    out_data = view.mean(axis=(3, 5))

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[:, :, :2 * ho, :2 * wo] = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25
        return (dx,)

    return Tensor._result(out_data, (x,), backward, "avg_pool2d")


class BatchNormState:
    """Running statistics for one batchnorm layer."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.mean = np.zeros(channels, dtype=np.float64)
        self.var = np.ones(channels, dtype=np.float64)
        self.momentum = momentum
        self.eps = eps


def batchnorm(x, gamma, beta, state: BatchNormState, mode: str) -> Tensor:
    """Per-channel batch normalization over (B, C, H, W).

    Train mode normalizes by batch statistics and updates the running
    estimates; eval mode normalizes by the running estimates. The backward
    pass in train mode differentiates through the batch statistics.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if mode not in ("train", "eval"):
        raise ValueError(f"batchnorm mode must be train or eval, got {mode!r}")
    bsz, c, h, w = x.shape
    n = bsz * h * w
    eps = state.eps
    if mode == "train":
        if n < 2:
            raise ShapeError("batchnorm train mode needs at least 2 values per channel")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        m = state.momentum
        state.mean = (1 - m) * state.mean + m * mu
        state.var = (1 - m) * state.var + m * var * (n / (n - 1))
    else:
        mu = state.mean.astype(x.dtype)
        var = state.var.astype(x.dtype)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * ivar[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gamma.data[None, :, None, None]
        if mode == "eval":
            dx = dxhat * ivar[None, :, None, None]
        else:
            xc = x.data - mu[None, :, None, None]
            iv4 = ivar[None, :, None, None]
            dvar = (dxhat * xc * -0.5 * iv4 ** 3).sum(axis=(0, 2, 3))
            dmu = (dxhat * -iv4).sum(axis=(0, 2, 3)) + dvar * (-2.0 / n) * xc.sum(axis=(0, 2, 3))
            dx = (dxhat * iv4
                  + dvar[None, :, None, None] * 2.0 * xc / n
                  + dmu[None, :, None, None] / n)
        return dx, dgamma, dbeta

    return Tensor._result(out_data, (x, gamma, beta), backward, "batchnorm")


# -- log-sum-exp pooling ----------------------------------------------------------


def lse_pool(x, r: float) -> Tensor:
    """Smooth pooling over the two trailing axes.

    Computes (1/r) * log(mean(exp(r * x))), stabilized by factoring out the
    maximum; interpolates between mean (small r) and max (large r) pooling.
    """
    x = _as_tensor(x)
    if r <= 0:
        raise ValueError(f"lse_pool requires r > 0, got {r}")
    if x.ndim < 2:
        raise ShapeError("lse_pool needs at least 2 axes")
    count = x.shape[-1] * x.shape[-2]
    z = x.data * r
    m = z.max(axis=(-2, -1), keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=(-2, -1), keepdims=True)
    weights = e / s
    out_data = ((m + np.log(s / count)) / r)[..., 0, 0]

    def backward(g):
        return (g[..., None, None] * weights,)

    return Tensor._result(out_data, (x,), backward, "lse_pool")


# -- backward driver --------------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable requires_grad leaf.

    ``loss`` must be a scalar. Repeated calls without zeroing gradients
    accumulate.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            _check_finite(pg, f"{node.op}.backward")
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- binary tensor dump (RGT1) ----------------------------------------------------

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    """Serialize an array: magic RGT1, u32 rank, u32 extents, u8 dtype, raw LE."""
    arr = np.asarray(arr)
    if arr.dtype == np.float32:
        tag, cast = 0, "<f4"
    elif arr.dtype == np.float64:
        tag, cast = 1, "<f8"
    else:
        raise ValueError(f"RGT1 supports float32/float64, got {arr.dtype}")
    head = b"RGT1" + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return head + struct.pack("<B", tag) + arr.astype(cast, copy=False).tobytes()


def tensor_from_stream(f) -> np.ndarray:
    """Read one RGT1 record from a binary stream."""
    magic = f.read(4)
    if magic != b"RGT1":
        raise ValueError(f"bad RGT1 magic: {magic!r}")
    (rank,) = struct.unpack("<I", f.read(4))
    shape = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
    (tag,) = struct.unpack("<B", f.read(1))
    if tag not in _DTYPE_TAGS:
        raise ValueError(f"unknown RGT1 dtype tag {tag}")
    dt = _DTYPE_TAGS[tag]
    count = int(np.prod(shape)) if shape else 1
    payload = f.read(count * dt.itemsize)
    if len(payload) != count * dt.itemsize:
        raise ValueError("truncated RGT1 payload")
    return np.frombuffer(payload, dtype=dt).reshape(shape).copy()


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return tensor_from_stream(f)
