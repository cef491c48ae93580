"""Lifting point datasets into discretized function pairs over a base grid.

A target dataset of (x_i, f_i) pairs is turned into training *functions*:
each sample assigns r of the pairs to the r points of an auxiliary base
grid, giving an input function x(s) and output function f(x(s)). Repeating
the assignment with overlaps covers the dataset. Inference packs query
points into input functions the same way and scatters the outputs back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import ModelBundle
from .tensor import Tensor


@dataclass
class TargetDataset:
    """Finite sample of a target map: points (N, D) and values (N, d_out)."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        self.values = values
        if len(self.points) != len(self.values):
            raise ValueError("points and values must pair up")
        if not (np.all(np.isfinite(self.points)) and np.all(np.isfinite(self.values))):
            raise ValueError("dataset holds non-finite entries")

    def __len__(self):
        return len(self.points)

    @property
    def d_in(self) -> int:
        return self.points.shape[1]

    @property
    def d_out(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SamplingStrategy:
    """How dataset indices are grouped into one input function.

    modes:
      random-global  r distinct indices drawn uniformly per sample
      local-compact  a random anchor plus its nearest neighbours (drawn from
                     the ``window`` nearest; window defaults to r)
      noisy-overlap  like random-global but unsorted, with each slot
                     independently resampled with probability ``jitter``
                     (duplicates allowed, creating overlaps)

    ``sort=None`` applies the default: 1D inputs are sorted ascending so
    x(s) is monotone and low-frequency, except in noisy-overlap mode;
    multi-dimensional inputs are never sorted.
    """

    mode: str = "random-global"
    sort: bool | None = None
    window: int | None = None
    jitter: float = 0.1

    def __post_init__(self):
        if self.mode not in ("random-global", "local-compact", "noisy-overlap"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if not 0.0 <= self.jitter <= 1.0:
            raise ValueError("jitter must lie in [0, 1]")


@dataclass
class LiftedBatch:
    """Stacked discretized functions: inputs (S, D, r), targets (S, d_out, r)."""

    inputs: np.ndarray
    targets: np.ndarray | None
    indices: np.ndarray  # (S, r) source row of every grid point
    r: int

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]


def _sample_indices(ds: TargetDataset, r: int, strategy: SamplingStrategy,
                    rng: np.random.Generator) -> np.ndarray:
    n = len(ds)
    if strategy.mode == "local-compact":
        window = strategy.window or r
        if window < r or window > n:
            raise ValueError(f"window must lie in [r, N]; got {window}")
        anchor = int(rng.integers(n))
        dist = np.linalg.norm(ds.points - ds.points[anchor], axis=1)
        pool = np.argsort(dist, kind="stable")[:window]
        return pool[:r] if window == r else rng.choice(pool, size=r, replace=False)
    idx = rng.choice(n, size=r, replace=False)
    if strategy.mode == "noisy-overlap" and strategy.jitter > 0.0:
        redraw = rng.random(r) < strategy.jitter
        idx[redraw] = rng.integers(0, n, size=int(redraw.sum()))
    return idx


def _apply_sort(ds: TargetDataset, idx: np.ndarray, strategy: SamplingStrategy) -> np.ndarray:
    sort = strategy.sort
    if sort is None:
        sort = ds.d_in == 1 and strategy.mode != "noisy-overlap"
    if sort and ds.d_in == 1:
        return idx[np.argsort(ds.points[idx, 0], kind="stable")]
    return idx


def lift(ds: TargetDataset, r: int, n_samples: int,
         strategy: SamplingStrategy | None = None, seed: int = 0) -> LiftedBatch:
    """Draw ``n_samples`` input/output function pairs on an r-point grid.

    Indices are drawn without replacement within one function and with
    replacement across functions. Deterministic given the seed; each sample
    uses an independent stream spawned from (seed, sample index).
    """
    strategy = strategy or SamplingStrategy()
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if r > len(ds):
        raise ValueError(f"cannot draw {r} distinct points from {len(ds)}")
    streams = np.random.SeedSequence(seed).spawn(n_samples)
    indices = np.empty((n_samples, r), dtype=np.intp)
    for i, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        indices[i] = _apply_sort(ds, _sample_indices(ds, r, strategy, rng), strategy)
    inputs = np.swapaxes(ds.points[indices], 1, 2).copy()   # (S, D, r)
    targets = np.swapaxes(ds.values[indices], 1, 2).copy()  # (S, d_out, r)
    return LiftedBatch(inputs, targets, indices, r)


def lift_zero_dim(ds: TargetDataset, seed: int = 0) -> LiftedBatch:
    """One single-point function per dataset row, in seeded shuffled order."""
    order = np.random.default_rng(seed).permutation(len(ds))
    indices = order[:, None]
    return LiftedBatch(np.swapaxes(ds.points[indices], 1, 2).copy(),
                       np.swapaxes(ds.values[indices], 1, 2).copy(),
                       indices, 1)


@dataclass
class QueryPlan:
    """Query points packed into input functions plus the scatter map home."""

    batch: LiftedBatch
    sample_of: np.ndarray  # (Q,) function index of each query point
    slot_of: np.ndarray    # (Q,) grid position of each query point

    def scatter(self, outputs: np.ndarray) -> np.ndarray:
        """(S, d_out, r) model outputs -> (Q, d_out) in query order."""
        return outputs[self.sample_of, :, self.slot_of]


def assemble_query(points: np.ndarray, r_policy: int | str = "single",
                   sort: bool | None = None) -> QueryPlan:
    """Pack query points into one (or minimally many) input functions.

    ``r_policy`` is either ``"single"`` (one function holding every point)
    or a fixed grid resolution; with a fixed resolution the final function
    is padded by repeating its last point. 1D queries are sorted ascending
    by default so the packed function is monotone.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    q, d = points.shape
    if q == 0:
        raise ValueError("empty query")
    if sort is None:
        sort = d == 1
    order = np.argsort(points[:, 0], kind="stable") if (sort and d == 1) else np.arange(q)

    r = q if r_policy == "single" else int(r_policy)
    if r < 1:
        raise ValueError("grid resolution must be positive")
    n_funcs = (q + r - 1) // r
    padded = np.concatenate([order, np.full(n_funcs * r - q, order[-1], dtype=np.intp)])
    indices = padded.reshape(n_funcs, r)
    inputs = np.swapaxes(points[indices], 1, 2).copy()

    sample_of = np.empty(q, dtype=np.intp)
    slot_of = np.empty(q, dtype=np.intp)
    pos = np.arange(q)
    sample_of[padded[:q]] = pos // r
    slot_of[padded[:q]] = pos % r
    return QueryPlan(LiftedBatch(inputs, None, indices, r), sample_of, slot_of)


def predict(bundle: ModelBundle, points: np.ndarray,
            r_policy: int | str | None = None, chunk: int = 256) -> np.ndarray:
    """Scale, pack, run, inverse-scale, and scatter back to query order.

    The bundle's recorded hash is verified so a model cannot silently run
    with scalers it was not fitted with.
    """
    expected = bundle.meta.get("hash")
    if expected is not None and expected != bundle.hash:
        raise ValueError("model/scaler mismatch: bundle hash differs from its record")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    model = bundle.model

    if model.kind == "mlp":
        scaled = bundle.x_scaler.transform(points)
        outs = [model.forward(Tensor(scaled[i:i + chunk])).data
                for i in range(0, len(scaled), chunk)]
        return bundle.y_scaler.inverse(np.concatenate(outs, axis=0))

    if r_policy is None:
        r_policy = 1 if getattr(model, "collapse_modes", False) else "single"
    plan = assemble_query(bundle.x_scaler.transform(points), r_policy)
    inputs = plan.batch.inputs
    outs = [model.forward(Tensor(inputs[i:i + chunk])).data
            for i in range(0, len(inputs), chunk)]
    raw = plan.scatter(np.concatenate(outs, axis=0))
    return bundle.y_scaler.inverse(raw)
