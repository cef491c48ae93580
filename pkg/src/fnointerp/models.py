"""Model builders: TFNO (1D/2D), its single-point collapse, and an MLP baseline.

The TFNO pipeline is: pointwise lifting (in -> lifting -> hidden, GELU) ->
``n_layers`` spectral blocks -> pointwise projection (hidden -> projection ->
out, GELU). Each block is

    u = gelu(spectral_conv(h) + W_skip h + b_skip)
    h' = ChannelMLP(u) + (g * u + c)          # soft-gated channel affine skip
    h' = gelu(h')                              # except after the final block

with ChannelMLP = hidden -> hidden//2 -> hidden (GELU inside). All pointwise
maps act per grid point. ``n_modes`` entries count total modes per axis: the
trailing (half-spectrum) axis stores ``n//2 + 1`` rfft bins and any leading
full-spectrum axis stores ``n//2`` positive plus ``n//2`` negative rows.

All trainable values live in one flat float64 buffer per model (complex
leaves are interleaved re/im views into it), so the optimizer can update a
model with a single fused kernel call.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .spectral import (RankPolicy, init_spectral_weights, spectral_conv_1d,
                       spectral_conv_2d, tucker_count, tucker_ranks)

CHECKPOINT_FORMAT = "fnointerp-checkpoint-1"


@dataclass(frozen=True)
class TFNOConfig:
    n_modes: tuple
    hidden_channels: int
    n_layers: int = 2
    rank_fraction: float = 0.01
    in_channels: int = 1
    out_channels: int = 1
    lifting_channels: int | None = None    # default: 2 * hidden
    projection_channels: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "n_modes", tuple(int(m) for m in self.n_modes))
        if not self.n_modes or any(m < 1 for m in self.n_modes):
            raise ValueError(f"invalid n_modes {self.n_modes}")
        for name in ("hidden_channels", "n_layers", "in_channels", "out_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.rank_fraction <= 1.0:
            raise ValueError("rank_fraction must lie in (0, 1]")

    @property
    def lifting(self) -> int:
        return self.lifting_channels or 2 * self.hidden_channels

    @property
    def projection(self) -> int:
        return self.projection_channels or 2 * self.hidden_channels

    @property
    def base_dim(self) -> int:
        return len(self.n_modes)

    def stored_modes(self) -> tuple:
        """Retained-mode grid of the spectral weights."""
        *full_axes, last = self.n_modes
        kept = [2 * (m // 2) if m > 1 else 1 for m in full_axes]
        return tuple(kept) + (last // 2 + 1,)


@dataclass(frozen=True)
class MLPConfig:
    widths: tuple

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ValueError(f"invalid widths {self.widths}")


class StandardScaler:
    """Per-channel (mean, population std) affine normalizer.

    Degenerate channels (zero variance) fall back to std = 1 so scaled values
    become exactly zero instead of dividing by zero.
    """

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def fit(cls, data: np.ndarray) -> "StandardScaler":
        data = np.asarray(data, dtype=np.float64)
        if data.size == 0:
            raise ValueError("cannot fit a scaler on empty data")
        if data.ndim == 1:
            data = data[:, None]
        mean = data.mean(axis=0)
        std = data.std(axis=0)  # population convention (divide by N)
        std = np.where(std > 0.0, std, 1.0)
        return cls(mean, std)

    def transform(self, data: np.ndarray) -> np.ndarray:
        return (np.asarray(data, dtype=np.float64) - self.mean) / self.std

    def inverse(self, data: np.ndarray) -> np.ndarray:
        return np.asarray(data, dtype=np.float64) * self.std + self.mean

    def transform_channels(self, array: np.ndarray, axis: int = 1) -> np.ndarray:
        """Apply along a channel axis of an (..., C, ...) array."""
        shape = [1] * array.ndim
        shape[axis] = -1
        return (array - self.mean.reshape(shape)) / self.std.reshape(shape)

    def inverse_channels(self, array: np.ndarray, axis: int = 1) -> np.ndarray:
        shape = [1] * array.ndim
        shape[axis] = -1
        return array * self.std.reshape(shape) + self.mean.reshape(shape)

    def state(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_state(cls, state: dict) -> "StandardScaler":
        return cls(np.array(state["mean"]), np.array(state["std"]))


def fit_scaler(data: np.ndarray) -> StandardScaler:
    return StandardScaler.fit(data)


# -- parameter packing ----------------------------------------------------

def _pack_parameters(params: list[Tensor]) -> np.ndarray:
    """Repoint every parameter at a view into one flat float64 buffer."""
    layout = []
    offset = 0
    for p in params:
        width = p.size * (2 if p.is_complex else 1)
        if p.is_complex and offset % 2:
            offset += 1  # keep complex views 16-byte aligned
        layout.append((p, offset, width))
        offset += width
    buf = np.zeros(offset, dtype=np.float64)
    for p, off, width in layout:
        flat = buf[off:off + width]
        view = flat.view(np.complex128) if p.is_complex else flat
        view = view.reshape(p.shape)
        view[...] = p.data
        p.data = view
    return buf


class _ParamModel:
    """Shared plumbing: flat buffer, gradient flattening, counting."""

    params: list[Tensor]

    def _finalize(self):
        self.flat = _pack_parameters(self.params)

    def parameters(self) -> list[Tensor]:
        return self.params

    def flat_gradient(self, grads: dict) -> np.ndarray:
        """Order gradients to match the flat parameter buffer."""
        out = np.zeros_like(self.flat)
        offset = 0
        for p in self.params:
            width = p.size * (2 if p.is_complex else 1)
            if p.is_complex and offset % 2:
                offset += 1
            g = grads[p]
            gflat = np.ascontiguousarray(g).view(np.float64).reshape(-1)
            out[offset:offset + width] = gflat
            offset += width
        return out

    def get_flat(self) -> np.ndarray:
        return self.flat.copy()

    def set_flat(self, values: np.ndarray) -> None:
        if values.shape != self.flat.shape:
            raise ValueError("flat parameter vector has the wrong length")
        self.flat[...] = values


def param_count(model, complex_as_two: bool = True) -> int:
    """Trainable scalar count. ``complex_as_two=False`` counts a complex
    entry once (the convention used by the reference parameter totals)."""
    total = 0
    for p in model.parameters():
        total += p.size * (2 if (p.is_complex and complex_as_two) else 1)
    return total


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class TFNO(_ParamModel):
    """Tensorized Fourier neural operator over a 1D or 2D base grid."""

    kind = "tfno"

    def __init__(self, cfg: TFNOConfig, rng: np.random.Generator,
                 collapse_modes: bool = False):
        self.cfg = cfg
        self.collapse_modes = collapse_modes
        h, lift, proj = cfg.hidden_channels, cfg.lifting, cfg.projection
        policy = RankPolicy(cfg.rank_fraction)
        stored = cfg.stored_modes()

        self.lift_w1 = _uniform(rng, (cfg.in_channels, lift), cfg.in_channels)
        self.lift_b1 = _uniform(rng, (lift,), cfg.in_channels)
        self.lift_w2 = _uniform(rng, (lift, h), lift)
        self.lift_b2 = _uniform(rng, (h,), lift)

        self.blocks = []
        h2 = max(h // 2, 1)
        for _ in range(cfg.n_layers):
            blk = {
                "spectral": init_spectral_weights(h, h, stored, policy, rng),
                "skip_w": _uniform(rng, (h, h), h),
                "skip_b": _uniform(rng, (h,), h),
                "mlp_w1": _uniform(rng, (h, h2), h),
                "mlp_b1": _uniform(rng, (h2,), h),
                "mlp_w2": _uniform(rng, (h2, h), h2),
                "mlp_b2": _uniform(rng, (h,), h2),
                "gate_w": Tensor(np.ones(h), requires_grad=True),
                "gate_b": Tensor(np.zeros(h), requires_grad=True),
            }
            self.blocks.append(blk)

        self.proj_w1 = _uniform(rng, (h, proj), h)
        self.proj_b1 = _uniform(rng, (proj,), h)
        self.proj_w2 = _uniform(rng, (proj, cfg.out_channels), proj)
        self.proj_b2 = _uniform(rng, (cfg.out_channels,), proj)

        self.params = [self.lift_w1, self.lift_b1, self.lift_w2, self.lift_b2]
        for blk in self.blocks:
            self.params.extend(blk["spectral"].parameters())
            self.params.extend(blk[k] for k in ("skip_w", "skip_b", "mlp_w1", "mlp_b1",
                                                "mlp_w2", "mlp_b2", "gate_w", "gate_b"))
        self.params.extend([self.proj_w1, self.proj_b1, self.proj_w2, self.proj_b2])
        self._finalize()

    def _spectral(self, blk, h_flat: Tensor, batch: int, grid: tuple) -> Tensor:
        if self.collapse_modes:
            # Single-point collapse: only the DC mode of the stored weights
            # acts, and it acts as a dense real channel map.
            w = blk["spectral"]
            full = w.reconstruct()
            dense = T.reshape(full, (w.in_channels, w.out_channels, -1))
            dense = T.real(T.reshape(T.slice_axis(dense, 2, 0, 1),
                                     (w.in_channels, w.out_channels)))
            return T.matmul(h_flat, dense)
        h = self.cfg.hidden_channels
        npix = int(np.prod(grid))
        chan_first = T.reshape(T.transpose(T.reshape(h_flat, (batch, npix, h)),
                                           (0, 2, 1)), (batch, h) + grid)
        if len(grid) == 1:
            out = spectral_conv_1d(chan_first, blk["spectral"])
        else:
            out = spectral_conv_2d(chan_first, blk["spectral"])
        return T.reshape(T.transpose(T.reshape(out, (batch, h, npix)), (0, 2, 1)),
                         (batch * npix, h))

    def forward(self, x: Tensor) -> Tensor:
        """(batch, in_channels, *grid) -> (batch, out_channels, *grid)."""
        cfg = self.cfg
        if x.ndim != 2 + cfg.base_dim or x.shape[1] != cfg.in_channels:
            raise ValueError(f"expected (B, {cfg.in_channels}, grid...), got {x.shape}")
        batch, grid = x.shape[0], tuple(x.shape[2:])
        npix = int(np.prod(grid))

        # grid points collapse into the row axis so every pointwise map is
        # one flat GEMM: (batch * npix, channels) @ (channels, channels')
        h = T.reshape(T.transpose(T.reshape(x, (batch, cfg.in_channels, npix)),
                                  (0, 2, 1)), (batch * npix, cfg.in_channels))
        h = T.gelu(T.matmul(h, self.lift_w1) + self.lift_b1)
        h = T.matmul(h, self.lift_w2) + self.lift_b2

        last = len(self.blocks) - 1
        for i, blk in enumerate(self.blocks):
            s = self._spectral(blk, h, batch, grid)
            u = T.gelu(s + T.matmul(h, blk["skip_w"]) + blk["skip_b"])
            m = T.gelu(T.matmul(u, blk["mlp_w1"]) + blk["mlp_b1"])
            m = T.matmul(m, blk["mlp_w2"]) + blk["mlp_b2"]
            h = m + (u * blk["gate_w"] + blk["gate_b"])
            if i != last:
                h = T.gelu(h)

        y = T.gelu(T.matmul(h, self.proj_w1) + self.proj_b1)
        y = T.matmul(y, self.proj_w2) + self.proj_b2
        return T.reshape(T.transpose(T.reshape(y, (batch, npix, cfg.out_channels)),
                                     (0, 2, 1)), (batch, cfg.out_channels) + grid)

    def config_dict(self) -> dict:
        d = asdict(self.cfg)
        d["n_modes"] = list(self.cfg.n_modes)
        d["collapse_modes"] = self.collapse_modes
        return d


class MLP(_ParamModel):
    """Plain dense network, GELU on hidden layers, linear output."""

    kind = "mlp"

    def __init__(self, cfg: MLPConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.weights, self.biases = [], []
        for w_in, w_out in zip(cfg.widths[:-1], cfg.widths[1:]):
            self.weights.append(_uniform(rng, (w_in, w_out), w_in))
            self.biases.append(_uniform(rng, (w_out,), w_in))
        self.params = []
        for w, b in zip(self.weights, self.biases):
            self.params.extend((w, b))
        self._finalize()

    def forward(self, x: Tensor) -> Tensor:
        """(batch, d_in) -> (batch, d_out)."""
        if x.ndim != 2 or x.shape[1] != self.cfg.widths[0]:
            raise ValueError(f"expected (B, {self.cfg.widths[0]}), got {x.shape}")
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = T.matmul(h, w) + b
            if i < len(self.weights) - 1:
                h = T.gelu(h)
        return h

    def config_dict(self) -> dict:
        return {"widths": list(self.cfg.widths)}


def build_tfno(cfg: TFNOConfig, base_dim: int, seed: int = 0) -> TFNO:
    if cfg.base_dim != base_dim:
        raise ValueError(f"config has {cfg.base_dim} mode axes, requested base_dim={base_dim}")
    return TFNO(cfg, np.random.default_rng(seed))


def build_0d_no(cfg: TFNOConfig, seed: int = 0) -> TFNO:
    """The TFNO collapsed onto a single-point base grid (a tensorized MLP).

    Parameter storage is identical to the matching TFNO; only the DC slice
    of each spectral weight participates in the forward pass.
    """
    if cfg.base_dim != 1:
        raise ValueError("the collapsed model is built from a 1D config")
    return TFNO(cfg, np.random.default_rng(seed), collapse_modes=True)


def build_mlp(cfg: MLPConfig, seed: int = 0) -> MLP:
    return MLP(cfg, np.random.default_rng(seed))


def spectral_parameter_report(cfg: TFNOConfig) -> dict:
    """Per-layer Tucker accounting used by the reconciliation report."""
    stored = cfg.stored_modes()
    h = cfg.hidden_channels
    shape = (h, h) + stored
    ranks = tucker_ranks(shape, RankPolicy(cfg.rank_fraction))
    return {
        "weight_shape": list(shape),
        "ranks": list(ranks),
        "complex_entries_per_layer": tucker_count(shape, ranks),
        "full_complex_entries": int(np.prod(shape)),
    }


# -- checkpointing ---------------------------------------------------------

def config_hash(config: dict, scaler_states: dict) -> str:
    blob = json.dumps({"config": config, "scalers": scaler_states}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ModelBundle:
    """A trained model plus the scalers its inputs/outputs were fit with."""

    model: object
    x_scaler: StandardScaler
    y_scaler: StandardScaler
    meta: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.model.config_dict(),
                           {"x": self.x_scaler.state(), "y": self.y_scaler.state()})


def save_checkpoint(path, bundle: ModelBundle) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "kind": bundle.model.kind,
        "config": bundle.model.config_dict(),
        "scalers": {"x": bundle.x_scaler.state(), "y": bundle.y_scaler.state()},
        "meta": bundle.meta,
        "hash": bundle.hash,
    }
    buf = io.BytesIO()
    np.savez(buf, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
             flat=bundle.model.flat)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> ModelBundle:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        flat = data["flat"].copy()
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {header.get('format')!r}")
    cfg = dict(header["config"])
    if header["kind"] == "tfno":
        collapse = cfg.pop("collapse_modes", False)
        model = TFNO(TFNOConfig(**{**cfg, "n_modes": tuple(cfg["n_modes"])}),
                     np.random.default_rng(0), collapse_modes=collapse)
    elif header["kind"] == "mlp":
        model = MLP(MLPConfig(tuple(cfg["widths"])), np.random.default_rng(0))
    else:
        raise ValueError(f"unknown model kind {header['kind']!r}")
    model.set_flat(flat)
    bundle = ModelBundle(model,
                         StandardScaler.from_state(header["scalers"]["x"]),
                         StandardScaler.from_state(header["scalers"]["y"]),
                         meta=header.get("meta", {}))
    if bundle.hash != header["hash"]:
        raise ValueError("checkpoint hash mismatch: config/scaler state corrupted")
    return bundle
