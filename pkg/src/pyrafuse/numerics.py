"""Dense tensors with reverse-mode autodiff and the exact kernel set the
forecaster needs: matmul, softmax, layer norm, average pooling, linear
interpolation, a real FFT pair, element-wise ops and reductions.

The graph is a dynamic tape: every op closes over its inputs and records a
backward closure; `backward()` walks the tape in reverse topological order.
Tensors are immutable after creation except for leaf gradient accumulation.

Precision is configurable per tensor (float32 default, float64 for
gradient checking). The FFT pair and the interpolation map are linear, so
they are implemented as cached-matrix products, which makes their
gradients exact transposes. FFT matrix products run in float64 internally
and are rounded back to the working dtype, keeping the round-trip error at
rounding level even for L=720.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, MalformedSpectrumError

float32 = np.float32
float64 = np.float64

# per-thread mode flags: concurrent inference on other threads must not see
# another thread's no_grad()/using_dtype() windows
_STATE = threading.local()


def default_dtype():
    return getattr(_STATE, "dtype", np.float32)


def _grad_enabled() -> bool:
    return getattr(_STATE, "grad", True)


@contextlib.contextmanager
def using_dtype(dtype):
    """Temporarily change the dtype used for freshly created tensors
    (current thread only)."""
    old = default_dtype()
    _STATE.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _STATE.dtype = old


@contextlib.contextmanager
def no_grad():
    """Disable tape recording; ops inside produce constant tensors
    (current thread only)."""
    old = _grad_enabled()
    _STATE.grad = False
    try:
        yield
    finally:
        _STATE.grad = old


class Tensor:
    """N-dimensional array of real scalars with an optional gradient slot.

    `grad` is populated on leaves with requires_grad=True by `backward()`
    and accumulates across calls until `zero_grad()`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and \
                data.dtype in (np.float32, np.float64) else default_dtype()
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- construction -----------------------------------------------------

    @staticmethod
    def _op(data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- bookkeeping --------------------------------------------------------

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

    def is_leaf(self) -> bool:
        return self._backward is None

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    # -- operators ----------------------------------------------------------

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

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and
                       isinstance(shape[0], (tuple, list)) else shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    """Wrap plain data as a constant tensor (no-op for Tensor input)."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


# -- backward pass ---------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dLeaf into every requires_grad leaf under `loss`.

    Repeated calls add into existing `.grad` buffers.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in node._backward(g):
            if not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg


# -- broadcasting helper ----------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- element-wise arithmetic -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return Tensor._op(a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return Tensor._op(a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        return ((a, _unbroadcast(g * b.data, a.shape)),
                (b, _unbroadcast(g * a.data, b.shape)))

    return Tensor._op(a.data * b.data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bwd(g):
        return ((a, _unbroadcast(g / b.data, a.shape)),
                (b, _unbroadcast(-g * out / b.data, b.shape)))

    return Tensor._op(out, (a, b), bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._op(-a.data, (a,), lambda g: ((a, -g),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._op(a.data * a.data, (a,), lambda g: ((a, 2.0 * a.data * g),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return Tensor._op(out, (a,), lambda g: ((a, 0.5 * g / out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._op(out, (a,), lambda g: ((a, g * out),))


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    flat = np.ascontiguousarray(a.data).reshape(-1)
    out = kernels.gelu_fwd(flat).reshape(a.shape)

    def bwd(g):
        gx = kernels.gelu_bwd(flat, np.ascontiguousarray(g).reshape(-1))
        return ((a, gx.reshape(a.shape)),)

    return Tensor._op(out, (a,), bwd)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not train or p <= 0.0:
        return a
    if rng is None:
        raise DimensionError("dropout in training mode needs an RNG")
    draw_dtype = np.float32 if a.dtype == np.float32 else np.float64
    keep = (rng.random(a.shape, dtype=draw_dtype) >= p).astype(a.dtype)
    keep *= 1.0 / (1.0 - p)
    return mul(a, Tensor(keep, dtype=a.dtype))


# -- shape ops ---------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    out = a.data.reshape(shape)
    return Tensor._op(out, (a,), lambda g: ((a, g.reshape(a.shape)),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    out = np.swapaxes(a.data, ax1, ax2)
    return Tensor._op(out, (a,), lambda g: ((a, np.swapaxes(g, ax1, ax2)),))


def concat(tensors: Iterable[Tensor], axis: int) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        pieces = np.split(g, offsets, axis=axis)
        return tuple(zip(ts, pieces))

    return Tensor._op(out, ts, bwd)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = a.data[index].copy()

    def bwd(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return ((a, full),)

    return Tensor._op(out, (a,), bwd)


# -- reductions ---------------------------------------------------------------


def _restore_axes(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if not keepdims and axis is not None:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None and not keepdims:
            return ((a, np.broadcast_to(g, a.shape).copy()),)
        return ((a, _restore_axes(g, a.shape, axis, keepdims).copy()),)

    return Tensor._op(np.asarray(out, dtype=a.dtype), (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size if axis is None else a.data.size // out.size

    def bwd(g):
        g = g / count
        if axis is None and not keepdims:
            return ((a, np.broadcast_to(g, a.shape).copy()),)
        return ((a, _restore_axes(g, a.shape, axis, keepdims).copy()),)

    return Tensor._op(np.asarray(out, dtype=a.dtype), (a,), bwd)


# -- matmul -------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched matrix product; leading dims broadcast, both operands ndim>=2."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs ndim >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul batch extents incompatible: {a.shape} @ {b.shape}") from exc

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ((a, _unbroadcast(ga, a.shape)), (b, _unbroadcast(gb, b.shape)))

    return Tensor._op(out, (a, b), bwd)


# -- fused row kernels --------------------------------------------------------


def _rows2d(data: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(data).reshape(-1, data.shape[-1])


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis` (max subtraction)."""
    a = as_tensor(a)
    axis = axis % a.ndim
    last = a.ndim - 1
    xd = a.data if axis == last else np.swapaxes(a.data, axis, last)
    moved_shape = xd.shape
    y2 = kernels.softmax_fwd(_rows2d(xd))
    y = y2.reshape(moved_shape)
    out = y if axis == last else np.swapaxes(y, axis, last)

    def bwd(g):
        gd = g if axis == last else np.swapaxes(g, axis, last)
        gx2 = kernels.softmax_bwd(y2, _rows2d(gd))
        gx = gx2.reshape(moved_shape)
        if axis != last:
            gx = np.swapaxes(gx, axis, last)
        return ((a, gx),)

    return Tensor._op(np.ascontiguousarray(out), (a,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match feature dim {d}")
    if eps <= 0:
        raise DimensionError("layer_norm eps must be positive")
    x2 = _rows2d(x.data)
    y2, xhat, rstd = kernels.layernorm_fwd(x2, gain.data, bias.data, float(eps))

    def bwd(g):
        g2 = _rows2d(g)
        gx2, dgain, dbias = kernels.layernorm_bwd(g2, xhat, rstd, gain.data)
        return ((x, gx2.reshape(x.shape)), (gain, dgain), (bias, dbias))

    return Tensor._op(y2.reshape(x.shape), (x, gain, bias), bwd)


# -- pooling and interpolation ------------------------------------------------


def avg_pool1d(x: Tensor) -> Tensor:
    """Halve the sequence axis of (..., L, C) by averaging adjacent pairs."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError(f"avg_pool1d needs (..., L, C), got {x.shape}")
    L = x.shape[-2]
    if L % 2 != 0:
        raise DimensionError(f"avg_pool1d needs an even sequence length, got L={L}")
    lead = x.shape[:-2]
    C = x.shape[-1]
    out = x.data.reshape(*lead, L // 2, 2, C).mean(axis=-2)

    def bwd(g):
        gx = np.broadcast_to((g * 0.5)[..., :, None, :], (*lead, L // 2, 2, C))
        return ((x, gx.reshape(x.shape).copy()),)

    return Tensor._op(out, (x,), bwd)


_UPSAMPLE_CACHE: dict[tuple[int, str], np.ndarray] = {}


def _upsample_matrix(L: int, dtype) -> np.ndarray:
    key = (L, np.dtype(dtype).name)
    mat = _UPSAMPLE_CACHE.get(key)
    if mat is None:
        out_len = 2 * L
        m = np.zeros((out_len, L), dtype=np.float64)
        if L == 1:
            m[:, 0] = 1.0
        else:
            # align-corners: position i maps to i*(L-1)/(2L-1)
            for i in range(out_len):
                pos = i * (L - 1) / (out_len - 1)
                j = int(np.floor(pos))
                w = pos - j
                j2 = min(j + 1, L - 1)
                m[i, j] += 1.0 - w
                m[i, j2] += w
        mat = m.astype(dtype)
        _UPSAMPLE_CACHE[key] = mat
    return mat


def upsample_linear(x: Tensor, target_len: int) -> Tensor:
    """Double the sequence axis of (..., L, d) by align-corners interpolation."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError(f"upsample_linear needs (..., L, d), got {x.shape}")
    L = x.shape[-2]
    if target_len != 2 * L:
        raise DimensionError(f"upsample_linear target_len must be 2L={2 * L}, got {target_len}")
    m = _upsample_matrix(L, x.dtype)
    out = np.matmul(m, x.data)

    def bwd(g):
        return ((x, np.matmul(m.T, g)),)

    return Tensor._op(out, (x,), bwd)


# -- real FFT pair -------------------------------------------------------------


class ComplexSpectrum:
    """RFFT output: N = floor(L/2)+1 complex bins stored as two real tensors.

    Bin 0 and (for even L) the Nyquist bin have exactly zero imaginary
    part; the forward transform enforces this structurally by zeroing the
    corresponding sine-matrix columns.
    """

    __slots__ = ("real", "imag", "origin_length", "axis")

    def __init__(self, real: Tensor, imag: Tensor, origin_length: int, axis: int):
        self.real = real
        self.imag = imag
        self.origin_length = int(origin_length)
        self.axis = int(axis)

    @property
    def num_bins(self) -> int:
        return self.real.shape[self.axis]

    def scale_bins(self, weights: np.ndarray) -> "ComplexSpectrum":
        """Multiply every bin by a per-bin weight (e.g. a band mask)."""
        w = np.asarray(weights, dtype=self.real.dtype)
        if w.shape != (self.num_bins,):
            raise DimensionError(f"bin weights shape {w.shape} != ({self.num_bins},)")
        shape = [1] * self.real.ndim
        shape[self.axis] = self.num_bins
        w = w.reshape(shape)
        return ComplexSpectrum(mul(self.real, w), mul(self.imag, w),
                               self.origin_length, self.axis)

    def validate(self) -> None:
        L, N = self.origin_length, self.num_bins
        if N != L // 2 + 1:
            raise MalformedSpectrumError(f"{N} bins inconsistent with origin length {L}")
        if self.real.shape != self.imag.shape:
            raise MalformedSpectrumError(
                f"real/imag shapes differ: {self.real.shape} vs {self.imag.shape}")
        idx = [slice(None)] * self.imag.ndim
        idx[self.axis] = 0
        if np.any(self.imag.data[tuple(idx)] != 0):
            raise MalformedSpectrumError("bin 0 must have zero imaginary part")
        if L % 2 == 0:
            idx[self.axis] = N - 1
            if np.any(self.imag.data[tuple(idx)] != 0):
                raise MalformedSpectrumError("Nyquist bin must have zero imaginary part")


_DFT_CACHE: dict[int, tuple[np.ndarray, ...]] = {}


def _dft_matrices(L: int):
    """Forward/inverse real-DFT matrices (float64).

    Forward is unnormalized; the inverse carries 1/L and the doubling
    weights for the redundant conjugate bins.
    """
    mats = _DFT_CACHE.get(L)
    if mats is None:
        N = L // 2 + 1
        n = np.arange(L)[:, None]
        k = np.arange(N)[None, :]
        theta = 2.0 * np.pi * n * k / L
        fcos = np.cos(theta)
        fsin = -np.sin(theta)
        fsin[:, 0] = 0.0
        if L % 2 == 0:
            fsin[:, N - 1] = 0.0
        w = np.full(N, 2.0)
        w[0] = 1.0
        if L % 2 == 0:
            w[N - 1] = 1.0
        icos = (w[:, None] / L) * np.cos(theta.T)
        isin = (w[:, None] / L) * np.sin(theta.T)
        mats = (fcos, fsin, icos, isin)
        _DFT_CACHE[L] = mats
    return mats


def _apply_last(data: np.ndarray, mat: np.ndarray, dtype) -> np.ndarray:
    return np.matmul(data.astype(np.float64, copy=False), mat).astype(dtype)


def rfft(x: Tensor, axis: int = -1) -> ComplexSpectrum:
    """Real DFT along `axis`: bins k = sum_n x[n] exp(-2*pi*i*k*n/L)."""
    x = as_tensor(x)
    axis = axis % x.ndim
    L = x.shape[axis]
    if L < 2:
        raise DimensionError(f"rfft needs length >= 2 along axis {axis}, got {L}")
    fcos, fsin, _, _ = _dft_matrices(L)
    last = x.ndim - 1
    xd = x.data if axis == last else np.swapaxes(x.data, axis, last)

    def make(mat):
        od = _apply_last(xd, mat, x.dtype)
        if axis != last:
            od = np.swapaxes(od, axis, last)

        def bwd(g):
            gd = g if axis == last else np.swapaxes(g, axis, last)
            gx = _apply_last(gd, mat.T, x.dtype)
            if axis != last:
                gx = np.swapaxes(gx, axis, last)
            return ((x, np.ascontiguousarray(gx)),)

        return Tensor._op(np.ascontiguousarray(od), (x,), bwd)

    return ComplexSpectrum(make(fcos), make(fsin), L, axis)


def irfft(spectrum: ComplexSpectrum) -> Tensor:
    """Inverse of `rfft` (the 1/L normalization lives here)."""
    spectrum.validate()
    L, axis = spectrum.origin_length, spectrum.axis
    _, _, icos, isin = _dft_matrices(L)
    re, im = spectrum.real, spectrum.imag
    last = re.ndim - 1
    red = re.data if axis == last else np.swapaxes(re.data, axis, last)
    imd = im.data if axis == last else np.swapaxes(im.data, axis, last)
    out = _apply_last(red, icos, re.dtype) - _apply_last(imd, isin, re.dtype)
    if axis != last:
        out = np.swapaxes(out, axis, last)

    def bwd(g):
        gd = g if axis == last else np.swapaxes(g, axis, last)
        gre = _apply_last(gd, icos.T, re.dtype)
        gim = -_apply_last(gd, isin.T, re.dtype)
        if axis != last:
            gre = np.swapaxes(gre, axis, last)
            gim = np.swapaxes(gim, axis, last)
        return ((re, np.ascontiguousarray(gre)), (im, np.ascontiguousarray(gim)))

    return Tensor._op(np.ascontiguousarray(out), (re, im), bwd)
