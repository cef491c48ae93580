"""Dense float64/complex128 tensors with taped reverse-mode differentiation.

Ops execute eagerly on numpy arrays. While a :class:`GradientTape` is active,
every primitive appends its adjoint to the tape; the tape's append order is a
valid topological order, so the backward pass is a single reverse sweep.

Complex tensors are differentiated by treating real and imaginary parts as
independent real degrees of freedom: a gradient array ``g`` for a complex
tensor ``t`` stores ``dL/d(Re t) + 1j * dL/d(Im t)``. All adjoints below
follow that convention (hence the conjugates in the product rules).
"""

from __future__ import annotations

import threading

import numpy as np
import scipy.fft

from .backend import KERNELS

_REAL = np.float64
_COMPLEX = np.complex128

_state = threading.local()

_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Validate finiteness of every op output (slow; meant for tests)."""
    global _debug_checks
    _debug_checks = bool(enabled)


def _tape_stack():
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Immutable dense array of float64 or complex128 values."""

    __slots__ = ("data", "requires_grad", "_traced")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if np.iscomplexobj(arr):
            arr = arr.astype(_COMPLEX, copy=False)
        else:
            arr = arr.astype(_REAL, copy=False)
        if _debug_checks and not np.all(np.isfinite(arr)):
            raise FloatingPointError("tensor holds non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self._traced = False

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_complex(self):
        return self.data.dtype == _COMPLEX

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Record:
    __slots__ = ("out", "bwd")

    def __init__(self, out, bwd):
        self.out = out
        self.bwd = bwd


class GradientTape:
    """Ordered record of primitive ops; consumed by :meth:`gradients`."""

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self._records)

    def _record(self, out: Tensor, bwd) -> None:
        out._traced = True
        self._records.append(_Record(out, bwd))

    def gradients(self, loss: Tensor, params) -> dict:
        """Accumulated gradient for each parameter; zeros if disconnected.

        The tape is reset afterwards ("consumed"). Raises if ``loss`` is not
        a scalar.
        """
        if loss.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        owned: set[int] = set()  # safe to accumulate into in place
        for rec in reversed(self._records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            for tensor, gt in rec.bwd(g):
                if not (tensor.requires_grad or tensor._traced):
                    continue
                key = id(tensor)
                if key not in grads:
                    grads[key] = gt
                elif key in owned:
                    np.add(grads[key], gt, out=grads[key])
                else:
                    grads[key] = grads[key] + gt
                    owned.add(key)
        out = {}
        for p in params:
            g = grads.get(id(p))
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise AssertionError("gradient shape mismatch")
            if _debug_checks:
                flat = g.view(_REAL) if g.dtype == _COMPLEX else g
                if not np.all(np.isfinite(flat)):
                    raise FloatingPointError("non-finite gradient")
            out[p] = g
        self._records.clear()
        return out


def backward(loss: Tensor, tape: GradientTape, params) -> dict:
    """Reverse sweep over ``tape``; returns ``{param: gradient array}``."""
    return tape.gradients(loss, params)


def _make(data, bwd, inputs) -> Tensor:
    """Wrap an op result; records the adjoint if a tape is listening."""
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad or t._traced for t in inputs):
        tape._record(out, bwd)
    return out


def _conj(a: np.ndarray) -> np.ndarray:
    """Conjugate for complex arrays; identity (no copy) for real ones."""
    return np.conj(a) if np.iscomplexobj(a) else a


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to ``shape``."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic ---------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return [(a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))]

    return _make(a.data + b.data, bwd, (a, b))


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return [(a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))]

    return _make(a.data - b.data, bwd, (a, b))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, lambda g: [(a, -g)], (a,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (broadcasting) product; complex factors use conjugate adjoints."""
    ad, bd = a.data, b.data

    def bwd(g):
        ga = _unbroadcast(g * _conj(bd), a.shape)
        gb = _unbroadcast(g * _conj(ad), b.shape)
        if not a.is_complex:
            ga = ga.real if np.iscomplexobj(ga) else ga
        if not b.is_complex:
            gb = gb.real if np.iscomplexobj(gb) else gb
        return [(a, ga), (b, gb)]

    return _make(ad * bd, bwd, (a, b))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the trailing two axes, with numpy batch broadcasting."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul inner extents differ: {ad.shape} @ {bd.shape}")

    def bwd(g):
        ga = _unbroadcast(g @ _conj(np.swapaxes(bd, -1, -2)), a.shape)
        gb = _unbroadcast(_conj(np.swapaxes(ad, -1, -2)) @ g, b.shape)
        return [(a, ga), (b, gb)]

    return _make(ad @ bd, bwd, (a, b))


def mode_dot(t: Tensor, m: Tensor, axis: int) -> Tensor:
    """Contract matrix ``m`` (new, old) with ``t`` along ``axis``."""
    td, md = t.data, m.data
    moved = np.moveaxis(td, axis, -1)
    outd = np.moveaxis(moved @ np.swapaxes(md, 0, 1), -1, axis)

    def bwd(g):
        gm_moved = np.moveaxis(g, axis, -1)
        gt = np.moveaxis(gm_moved @ _conj(md), -1, axis)
        batch = tuple(range(td.ndim - 1))
        gm = np.tensordot(gm_moved, _conj(moved), axes=(batch, batch))
        return [(t, gt), (m, gm)]

    return _make(outd, bwd, (t, m))


def transpose(t: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(t.data, axes),
                 lambda g: [(t, np.transpose(g, inv))], (t,))


def reshape(t: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = t.shape
    return _make(t.data.reshape(shape), lambda g: [(t, g.reshape(old))], (t,))


def tsum(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    td = t.data

    def bwd(g):
        if axis is None:
            return [(t, np.broadcast_to(g.reshape((1,) * td.ndim), td.shape).copy())]
        gg = g if keepdims else np.expand_dims(g, axis)
        return [(t, np.broadcast_to(gg, td.shape).copy())]

    return _make(td.sum(axis=axis, keepdims=keepdims), bwd, (t,))


def tmean(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    td = t.data
    if axis is None:
        count = td.size
    elif isinstance(axis, tuple):
        count = int(np.prod([td.shape[a] for a in axis]))
    else:
        count = td.shape[axis]

    def bwd(g):
        if axis is None:
            return [(t, np.broadcast_to((g / count).reshape((1,) * td.ndim), td.shape).copy())]
        gg = g if keepdims else np.expand_dims(g, axis)
        return [(t, np.broadcast_to(gg / count, td.shape).copy())]

    return _make(td.mean(axis=axis, keepdims=keepdims), bwd, (t,))


def sqrt(t: Tensor) -> Tensor:
    if t.is_complex:
        raise TypeError("sqrt expects a real tensor")
    y = np.sqrt(t.data)
    return _make(y, lambda g: [(t, g * (0.5 / y))], (t,))


def real(t: Tensor) -> Tensor:
    """Real part; the imaginary component receives zero gradient."""
    if not t.is_complex:
        return t
    return _make(t.data.real.copy(), lambda g: [(t, g.astype(_COMPLEX))], (t,))


def gelu(t: Tensor) -> Tensor:
    """Exact-erf GELU: 0.5 * x * (1 + erf(x / sqrt(2))) = x * Phi(x)."""
    if t.is_complex:
        raise TypeError("gelu expects a real tensor")
    xd = np.ascontiguousarray(t.data)
    flat = xd.reshape(-1)
    y, phi = KERNELS.gelu_fwd(flat)

    def bwd(g):
        gf = np.ascontiguousarray(g).reshape(-1)
        return [(t, KERNELS.gelu_bwd(flat, phi, gf).reshape(t.shape))]

    return _make(y.reshape(t.shape), bwd, (t,))


# -- structural ops -----------------------------------------------------

def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    offs = np.cumsum([0] + sizes)

    def bwd(g):
        gm = np.moveaxis(g, axis, 0)
        return [(t, np.moveaxis(gm[offs[i]:offs[i + 1]], 0, axis))
                for i, t in enumerate(tensors)]

    return _make(np.concatenate([t.data for t in tensors], axis=axis), bwd, tensors)


def slice_axis(t: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * t.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bwd(g):
        gt = np.zeros_like(t.data)
        gt[idx] = g
        return [(t, gt)]

    return _make(t.data[idx].copy(), bwd, (t,))


def place_slice(t: Tensor, axis: int, total: int, start: int) -> Tensor:
    """Embed ``t`` into a zero tensor of extent ``total`` along ``axis``."""
    shape = list(t.shape)
    length = shape[axis]
    shape[axis] = total
    idx = [slice(None)] * t.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = np.zeros(shape, dtype=t.dtype)
    out[idx] = t.data
    return _make(out, lambda g: [(t, g[idx].copy())], (t,))


# -- Fourier transforms --------------------------------------------------
# Forward convention: unnormalized forward, 1/n on the inverse.

def rfft(t: Tensor, axis: int = -1) -> Tensor:
    """Half-spectrum DFT of a real tensor along ``axis``."""
    if t.is_complex:
        raise TypeError("rfft expects a real tensor")
    n = t.shape[axis]
    if n == 0:
        raise ValueError("rfft along an empty axis")

    def bwd(g):
        h = np.array(g)
        sl = [slice(None)] * g.ndim
        sl[axis] = slice(1, n // 2 + (n % 2))
        h[tuple(sl)] *= 0.5
        dc = [slice(None)] * g.ndim
        dc[axis] = 0
        h[tuple(dc)] = h[tuple(dc)].real
        if n % 2 == 0:
            ny = [slice(None)] * g.ndim
            ny[axis] = n // 2
            h[tuple(ny)] = h[tuple(ny)].real
        return [(t, n * scipy.fft.irfft(h, n=n, axis=axis))]

    return _make(scipy.fft.rfft(t.data, axis=axis), bwd, (t,))


def irfft(t: Tensor, n: int, axis: int = -1) -> Tensor:
    """Inverse of :func:`rfft`; output length ``n`` must be supplied."""
    if not t.is_complex:
        raise TypeError("irfft expects a complex half-spectrum")
    if t.shape[axis] != n // 2 + 1:
        raise ValueError(f"half-spectrum has {t.shape[axis]} bins; expected {n // 2 + 1} for n={n}")
    xd = np.array(t.data)
    # irfft treats DC (and Nyquist for even n) as purely real; drop the
    # imaginary components so the forward map matches the adjoint below.
    dc = [slice(None)] * t.ndim
    dc[axis] = 0
    xd[tuple(dc)] = xd[tuple(dc)].real
    if n % 2 == 0:
        ny = [slice(None)] * t.ndim
        ny[axis] = n // 2
        xd[tuple(ny)] = xd[tuple(ny)].real

    def bwd(g):
        G = scipy.fft.rfft(g, axis=axis)
        G *= 2.0 / n
        dc_ = [slice(None)] * g.ndim
        dc_[axis] = 0
        G[tuple(dc_)] = G[tuple(dc_)].real * 0.5
        if n % 2 == 0:
            ny_ = [slice(None)] * g.ndim
            ny_[axis] = n // 2
            G[tuple(ny_)] = G[tuple(ny_)].real * 0.5
        return [(t, G)]

    return _make(scipy.fft.irfft(xd, n=n, axis=axis), bwd, (t,))


def fft(t: Tensor, axis: int) -> Tensor:
    if not t.is_complex:
        raise TypeError("fft expects a complex tensor (use rfft for real input)")
    n = t.shape[axis]
    return _make(scipy.fft.fft(t.data, axis=axis),
                 lambda g: [(t, n * scipy.fft.ifft(g, axis=axis))], (t,))


def ifft(t: Tensor, axis: int) -> Tensor:
    if not t.is_complex:
        raise TypeError("ifft expects a complex tensor")
    n = t.shape[axis]
    return _make(scipy.fft.ifft(t.data, axis=axis),
                 lambda g: [(t, scipy.fft.fft(g, axis=axis) / n)], (t,))
