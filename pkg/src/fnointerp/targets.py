"""Analytic benchmark targets and synthetic dataset generation.

Families:
  partial_wave  f_L(theta) = 1/2 * sum_{l<=L} (2l+1) sin(2 delta_l) P_l(cos theta)
  heaviside     unit step on [0, 1] with the jump at x = 0.5
  piecewise     two Gaussian bumps, a flat plateau, a sharp spike and a dip
  noise         uniform values on a fixed 100-point grid in [0, 1]
  hyp_2F1       2F1(a, b; c; z) as a 4D function of (a, b, c, z)
  hyp_3F2       3F2(a, b, c; d, e; z) as a 6D function
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lifting import TargetDataset

SERIES_CAP = 100_000
SERIES_RTOL = 1e-14


def legendre_p(ell: int, x):
    """Legendre polynomial P_ell via the Bonnet recurrence."""
    if ell < 0:
        raise ValueError("degree must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    if np.any((x < -1.0) | (x > 1.0)):
        raise ValueError("argument outside [-1, 1]")
    p_prev = np.ones_like(x)
    if ell == 0:
        return p_prev
    p_cur = x.copy()
    for n in range(1, ell):
        p_prev, p_cur = p_cur, ((2 * n + 1) * x * p_cur - n * p_prev) / (n + 1)
    return p_cur


def partial_wave(order: int, phases, theta):
    """Real part of a finite partial-wave expansion with phases delta_l."""
    phases = np.asarray(phases, dtype=np.float64)
    if phases.shape != (order + 1,):
        raise ValueError(f"need {order + 1} phases for order {order}")
    theta = np.asarray(theta, dtype=np.float64)
    c = np.cos(theta)
    total = np.zeros_like(theta)
    for ell in range(order + 1):
        total += (2 * ell + 1) * np.sin(2.0 * phases[ell]) * legendre_p(ell, c)
    return 0.5 * total


def heaviside(x):
    """Unit step on [0, 1]; the jump point 0.5 maps to 1 (right-closed)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any((x < 0.0) | (x > 1.0)):
        raise ValueError("argument outside [0, 1]")
    return (x >= 0.5).astype(np.float64)


def piecewise(x):
    """Gaussian bumps / plateau / spike-and-dip composite on [-5, 15]."""
    x = np.asarray(x, dtype=np.float64)
    if np.any((x < -5.0) | (x > 15.0)):
        raise ValueError("argument outside [-5, 15]")
    out = np.empty_like(x)
    left = x <= 0.7
    mid = (x > 0.7) & (x < 3.7)
    right = x >= 3.7
    xl = x[left]
    out[left] = 0.8 * np.exp(-(xl + 4.0) ** 2 / 0.2) + 0.2 * np.exp(-(xl + 1.0) ** 2 / 0.1)
    out[mid] = 0.5
    xr = x[right]
    out[right] = 0.6 * np.exp(-(xr - 6.0) ** 2 / 0.01) - 0.4 * np.exp(-(xr - 10.0) ** 2 / 0.3)
    return out


def noise_target(seed: int) -> TargetDataset:
    """Uniform[-2, 3] values on the fixed 100-point grid k/99 in [0, 1]."""
    grid = np.arange(100, dtype=np.float64) / 99.0
    values = np.random.default_rng(seed).uniform(-2.0, 3.0, size=100)
    return TargetDataset(grid[:, None], values)


def hyp_pfq(a, b, z: float) -> float:
    """Generalized hypergeometric series sum_n [prod (a_i)_n / prod (b_j)_n] z^n / n!.

    Converges geometrically on the domain used here (z <= 0.75); terms are
    added until they fall below SERIES_RTOL of the partial sum, with a hard
    cap as the divergence guard.
    """
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    if len(a) > len(b) + 1:
        raise ValueError("series requires p <= q + 1")
    for bj in b:
        if bj <= 0.0 and float(bj).is_integer():
            raise ValueError("lower parameters must not be non-positive integers")
    if not 0.0 <= z <= 0.75:
        raise ValueError("argument outside [0, 0.75]")
    if z == 0.0:
        return 1.0
    total = 1.0
    term = 1.0
    for n in range(SERIES_CAP):
        num = 1.0
        for ai in a:
            num *= ai + n
        den = float(n + 1)
        for bj in b:
            den *= bj + n
        term *= num / den * z
        total += term
        if abs(term) < SERIES_RTOL * abs(total):
            return total
    raise RuntimeError("hypergeometric series did not converge within the term cap")


@dataclass(frozen=True)
class TargetSpec:
    """A concrete target: family name, parameters, domain box, dimension."""

    family: str
    d_in: int
    domain: tuple                      # ((lo, hi), ...) per input dimension
    params: dict = field(default_factory=dict)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if points.shape[1] != self.d_in:
            raise ValueError(f"{self.family} expects {self.d_in}-D points")
        if self.family == "affine":
            return 0.8 * points[:, 0] - 0.3
        if self.family == "partial_wave":
            return partial_wave(self.params["order"], self.params["phases"], points[:, 0])
        if self.family == "heaviside":
            return heaviside(points[:, 0])
        if self.family == "piecewise":
            return piecewise(points[:, 0])
        if self.family == "noise":
            ds = noise_target(self.params["noise_seed"])
            idx = np.rint(points[:, 0] * 99.0).astype(int)
            if not np.allclose(points[:, 0], idx / 99.0, atol=1e-12):
                raise ValueError("the noise target is defined only on its grid")
            return ds.values[idx, 0]
        if self.family in ("hyp_2F1", "hyp_3F2"):
            p = 2 if self.family == "hyp_2F1" else 3
            return np.array([hyp_pfq(row[:p], row[p:-1], row[-1]) for row in points])
        raise ValueError(f"unknown family {self.family!r}")


def make_target(family: str, seed: int = 0, order: int = 3) -> TargetSpec:
    """Build a TargetSpec; random family parameters derive from ``seed``.

    ``affine`` is a trivially learnable diagnostics family (sanity checks
    and smoke runs), not part of the benchmark set.
    """
    if family == "affine":
        return TargetSpec(family, 1, ((0.0, 1.0),))
    if family == "partial_wave":
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(101,)))
        phases = rng.uniform(0.0, 2.0 * np.pi, size=order + 1)
        eps = 1e-9  # open interval (0, pi)
        return TargetSpec(family, 1, ((eps, np.pi - eps),),
                          {"order": order, "phases": phases})
    if family == "heaviside":
        return TargetSpec(family, 1, ((0.0, 1.0),))
    if family == "piecewise":
        return TargetSpec(family, 1, ((-5.0, 15.0),))
    if family == "noise":
        return TargetSpec(family, 1, ((0.0, 1.0),), {"noise_seed": seed})
    if family == "hyp_2F1":
        return TargetSpec(family, 4, ((1.0, 2.0),) * 3 + ((0.0, 0.75),))
    if family == "hyp_3F2":
        return TargetSpec(family, 6, ((1.0, 2.0),) * 5 + ((0.0, 0.75),))
    raise ValueError(f"unknown family {family!r}")


def synthesize(spec: TargetSpec, n: int, seed: int = 0) -> TargetDataset:
    """Uniform random points on the domain box, evaluated through the family.

    The noise family ignores ``n`` and returns its fixed 100-point grid.
    """
    if n < 1:
        raise ValueError("need at least one point")
    if spec.family == "noise":
        return noise_target(spec.params["noise_seed"])
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    lo = np.array([d[0] for d in spec.domain])
    hi = np.array([d[1] for d in spec.domain])
    points = rng.uniform(lo, hi, size=(n, spec.d_in))
    return TargetDataset(points, spec.evaluate(points))
