"""Fourier spectral convolutions with Tucker-factorized complex mode weights.

A spectral convolution transforms the input along its grid axes, applies an
independent channel-mixing matrix to each retained low-frequency mode, zeroes
the rest, and transforms back. The per-mode weights form a complex tensor of
shape ``(C_in, C_out, *modes)`` stored in Tucker form (a small core plus one
factor matrix per axis), which is where the parameter savings come from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class RankPolicy:
    """Target compression of the full complex weight tensor.

    ``rank_fraction`` is the requested ratio of factorized complex-entry
    count (core + factors) to the full tensor's entry count. Per-axis ranks
    are proportional to the axis extents, rounded half-up and clamped to
    [1, extent]; the largest rank is then reduced until the count fits
    within ``rank_fraction * full * (1 + slack)``. With ``slack = 0`` the
    only unavoidable overshoot is the all-ones floor. ``rank_fraction >= 1``
    disables compression entirely (full ranks), so that the factorization
    can represent any tensor exactly.
    """

    rank_fraction: float
    rounding: str = "half-up"
    slack: float = 0.0


def _half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def tucker_count(shape, ranks) -> int:
    """Complex-entry count of a Tucker representation (core + factors)."""
    core = int(np.prod(ranks))
    return core + sum(int(s) * int(r) for s, r in zip(shape, ranks))


def tucker_ranks(full_shape, policy: RankPolicy):
    """Deterministic per-axis ranks realizing the policy's target count."""
    full_shape = tuple(int(s) for s in full_shape)
    if any(s <= 0 for s in full_shape):
        raise ValueError(f"degenerate weight shape {full_shape}")
    if not 0.0 < policy.rank_fraction:
        raise ValueError("rank_fraction must be positive")
    if policy.rounding != "half-up":
        raise ValueError(f"unknown rounding rule {policy.rounding!r}")
    if policy.rank_fraction >= 1.0:
        return full_shape

    full = float(np.prod(full_shape))
    target = policy.rank_fraction * full

    def count_at(f):
        return (np.prod([f * s for s in full_shape])
                + sum(f * s * s for s in full_shape))

    f = brentq(lambda x: count_at(x) - target, 1e-12, 1.0)
    ranks = [min(max(_half_up(f * s), 1), s) for s in full_shape]
    budget = target * (1.0 + policy.slack)
    while tucker_count(full_shape, ranks) > budget and max(ranks) > 1:
        i = int(np.argmax(ranks))
        ranks[i] -= 1
    return tuple(ranks)


def tucker_reconstruct(core: Tensor, factors) -> Tensor:
    """Contract the core with every factor matrix: full tensor of shape
    ``(factors[0].shape[0], factors[1].shape[0], ...)``. Differentiable."""
    if len(factors) != core.ndim:
        raise ValueError("need one factor per core axis")
    for i, f in enumerate(factors):
        if f.shape[1] != core.shape[i]:
            raise ValueError(f"factor {i} has rank {f.shape[1]}, core expects {core.shape[i]}")
    out = core
    for axis in range(core.ndim - 1, -1, -1):
        out = T.mode_dot(out, factors[axis], axis)
    return out


def tucker_decompose(full: np.ndarray, ranks):
    """Higher-order SVD: per-axis truncated factors plus the projected core.

    Exact at full ranks; used as the independent reconstruction oracle and
    by checkpoint round-trip tests. Operates on plain arrays.
    """
    factors = []
    for axis, r in enumerate(ranks):
        unfolded = np.moveaxis(full, axis, 0).reshape(full.shape[axis], -1)
        u, _, _ = np.linalg.svd(unfolded, full_matrices=False)
        factors.append(u[:, :r])
    core = full
    for axis, f in enumerate(factors):
        core = np.moveaxis(np.tensordot(np.conj(f).T, core, axes=(1, axis)), 0, axis)
    return core, factors


@dataclass
class SpectralWeights:
    """Tucker-form complex weights for one spectral layer.

    ``modes`` is the retained-mode grid: ``(M,)`` for 1D (leading rfft bins)
    or ``(R, M2)`` for 2D, where ``R`` counts the retained full-spectrum rows
    (split into a positive and a negative Hermitian block) and ``M2`` the
    leading half-spectrum bins.
    """

    in_channels: int
    out_channels: int
    modes: tuple
    core: Tensor
    factors: list = field(default_factory=list)

    @property
    def full_shape(self):
        return (self.in_channels, self.out_channels) + tuple(self.modes)

    @property
    def ranks(self):
        return tuple(self.core.shape)

    def parameters(self):
        return [self.core] + list(self.factors)

    def reconstruct(self) -> Tensor:
        return tucker_reconstruct(self.core, self.factors)


def init_spectral_weights(in_channels, out_channels, modes, policy: RankPolicy,
                          rng: np.random.Generator) -> SpectralWeights:
    """Random Tucker weights whose reconstruction matches the magnitude of a
    dense init uniform in +-1/(C_in*C_out) per real/imaginary part."""
    shape = (in_channels, out_channels) + tuple(modes)
    ranks = tucker_ranks(shape, policy)
    target_var = (1.0 / (in_channels * out_channels)) ** 2 / 3.0
    n_terms = float(np.prod(ranks))
    depth = len(shape) + 1  # core plus one factor per axis
    amp = math.sqrt(3.0 * (target_var / n_terms) ** (1.0 / depth))

    def cuniform(sz):
        re = rng.uniform(-amp, amp, size=sz)
        im = rng.uniform(-amp, amp, size=sz)
        return Tensor(re + 1j * im, requires_grad=True)

    core = cuniform(ranks)
    factors = [cuniform((s, r)) for s, r in zip(shape, ranks)]
    return SpectralWeights(in_channels, out_channels, tuple(modes), core, factors)


def _mix_modes(x_modes: Tensor, weight_full: Tensor) -> Tensor:
    """Per-mode channel mixing: (B, C_in, K) x (C_in, C_out, K) -> (B, C_out, K)."""
    k_first_x = T.transpose(x_modes, (2, 0, 1))        # (K, B, C_in)
    k_first_w = T.transpose(weight_full, (2, 0, 1))    # (K, C_in, C_out)
    mixed = T.matmul(k_first_x, k_first_w)             # (K, B, C_out)
    return T.transpose(mixed, (1, 2, 0))


def spectral_conv_1d(x: Tensor, w: SpectralWeights, n_modes: int | None = None) -> Tensor:
    """Truncated-mode spectral convolution along the last axis.

    ``n_modes`` (defaulting to the weight's mode extent) counts retained
    rfft bins and must not exceed the available ``n//2 + 1``; exceeding the
    budget is an error rather than a clamp.
    """
    if x.ndim != 3:
        raise ValueError(f"expected (batch, channels, n), got {x.shape}")
    modes = w.modes[0] if n_modes is None else n_modes
    n = x.shape[-1]
    bins = n // 2 + 1
    if modes > bins:
        raise ValueError(f"{modes} modes requested but only {bins} available at n={n}")
    if x.shape[1] != w.in_channels:
        raise ValueError(f"input has {x.shape[1]} channels, weights expect {w.in_channels}")

    spec = T.rfft(x, axis=-1)
    kept = T.slice_axis(spec, -1, 0, modes) if modes < bins else spec
    full_w = w.reconstruct()
    if modes != w.modes[0]:
        full_w = T.slice_axis(full_w, -1, 0, modes)
    mixed = _mix_modes(kept, full_w)
    out_spec = T.place_slice(mixed, -1, bins, 0) if modes < bins else mixed
    return T.irfft(out_spec, n, axis=-1)


def spectral_conv_2d(x: Tensor, w: SpectralWeights) -> Tensor:
    """2D spectral convolution retaining the two Hermitian-conjugate corner
    blocks along the full-spectrum (height) axis and the leading bins along
    the half-spectrum (width) axis."""
    if x.ndim != 4:
        raise ValueError(f"expected (batch, channels, height, width), got {x.shape}")
    rows, m2 = w.modes
    b, c, h, wd = x.shape
    bins = wd // 2 + 1
    if rows > h:
        raise ValueError(f"{rows} spectral rows requested but grid height is {h}")
    if m2 > bins:
        raise ValueError(f"{m2} modes requested but only {bins} available at width={wd}")
    if c != w.in_channels:
        raise ValueError(f"input has {c} channels, weights expect {w.in_channels}")
    n_pos = (rows + 1) // 2
    n_neg = rows // 2

    spec = T.fft(T.rfft(x, axis=-1), axis=-2)          # (B, C, H, bins)
    blocks = [T.slice_axis(spec, 2, 0, n_pos)]
    if n_neg:
        blocks.append(T.slice_axis(spec, 2, h - n_neg, h))
    gathered = blocks[0] if len(blocks) == 1 else T.concat(blocks, axis=2)
    gathered = T.slice_axis(gathered, 3, 0, m2) if m2 < bins else gathered

    flat = T.reshape(gathered, (b, c, rows * m2))
    mixed = _mix_modes(flat, T.reshape(w.reconstruct(), (c, w.out_channels, rows * m2)))
    mixed = T.reshape(mixed, (b, w.out_channels, rows, m2))

    mixed = T.place_slice(mixed, 3, bins, 0) if m2 < bins else mixed
    pos = T.place_slice(T.slice_axis(mixed, 2, 0, n_pos), 2, h, 0)
    if n_neg:
        neg = T.place_slice(T.slice_axis(mixed, 2, n_pos, rows), 2, h, h - n_neg)
        out_spec = pos + neg
    else:
        out_spec = pos
    return T.irfft(T.ifft(out_spec, axis=-2), wd, axis=-1)
