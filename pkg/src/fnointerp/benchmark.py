"""Benchmark protocol: train the model family on an analytic target and
trace test RMSE against the evaluation grid size.

Per-family data protocol (training-set size, lifting resolution, sample and
batch counts) follows the defaults table below; models and optimizer settings
are shared across families. The 1D operator is evaluated by packing each test
grid into a single input function whose resolution equals the grid size, so
the RMSE curve doubles as a zero-shot super-resolution probe.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .lifting import TargetDataset, lift, lift_zero_dim, predict
from .models import (MLP, MLPConfig, ModelBundle, StandardScaler, TFNO,
                     TFNOConfig, param_count)
from .targets import TargetSpec, synthesize
from .training import TrainConfig, train

MODEL_NAMES = ("tfno1d", "no0d", "mlp")

# Data handling per target family: dense models train full-batch unless a
# batch size is listed; the 1D operator always trains on lifted functions.
FAMILY_PROTOCOL = {
    "affine": dict(train_n=100, lift_r=50, lift_s=2500, tfno_batch=64, dense_batch=None),
    "partial_wave": dict(train_n=100, lift_r=50, lift_s=2500, tfno_batch=64, dense_batch=None),
    "heaviside": dict(train_n=100, lift_r=50, lift_s=2500, tfno_batch=64, dense_batch=None),
    "noise": dict(train_n=100, lift_r=50, lift_s=2500, tfno_batch=64, dense_batch=None),
    "piecewise": dict(train_n=500, lift_r=50, lift_s=2500, tfno_batch=128, dense_batch=128),
    "hyp_2F1": dict(train_n=75_000, lift_r=150, lift_s=4500, tfno_batch=128, dense_batch=1536),
    "hyp_3F2": dict(train_n=150_000, lift_r=150, lift_s=4500, tfno_batch=128, dense_batch=3072),
}


@dataclass(frozen=True)
class BenchProtocol:
    seeds: tuple = (0, 1, 2, 3, 4)
    test_sizes: tuple = (50, 100, 200, 500, 1000, 2000)
    models: tuple = MODEL_NAMES
    epochs: int = 1000
    train_n: int | None = None      # None: family default
    lift_s: int | None = None
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5

    def smoke(self) -> "BenchProtocol":
        return replace(self, seeds=self.seeds[:1], test_sizes=(20, 50),
                       epochs=30, train_n=60, lift_s=150)


def tfno_benchmark_config(d_in: int) -> TFNOConfig:
    return TFNOConfig(n_modes=(16,), hidden_channels=32, n_layers=2,
                      rank_fraction=0.01, in_channels=d_in, out_channels=1,
                      lifting_channels=64, projection_channels=64)


def mlp_benchmark_config(d_in: int) -> MLPConfig:
    return MLPConfig((d_in, 53, 53, 53, 53, 1))


def _scaled_dataset(ds: TargetDataset):
    xs = StandardScaler.fit(ds.points)
    ys = StandardScaler.fit(ds.values)
    scaled = TargetDataset(xs.transform(ds.points), ys.transform(ds.values))
    return scaled, xs, ys


def train_model(ds: TargetDataset, model_name: str, seed: int,
                protocol: BenchProtocol, family: str) -> tuple[ModelBundle, dict]:
    """Fit one model on the dataset with the family's data protocol."""
    proto = FAMILY_PROTOCOL[family]
    scaled, xs, ys = _scaled_dataset(ds)
    model_key = {"tfno1d": 1, "no0d": 2, "mlp": 3}[model_name]
    init_seed = int(np.random.SeedSequence(entropy=seed, spawn_key=(model_key,)
                                           ).generate_state(1)[0])
    rng = np.random.default_rng(init_seed)
    cfg = TrainConfig(learning_rate=protocol.learning_rate,
                      weight_decay=protocol.weight_decay,
                      epochs=protocol.epochs, seed=init_seed)

    if model_name == "tfno1d":
        model = TFNO(tfno_benchmark_config(ds.d_in), rng)
        batch = lift(scaled, min(proto["lift_r"], len(ds)),
                     protocol.lift_s or proto["lift_s"], seed=init_seed)
        cfg = replace(cfg, batch_size=proto["tfno_batch"])
        data = (batch.inputs, batch.targets)
    elif model_name == "no0d":
        model = TFNO(tfno_benchmark_config(ds.d_in), rng, collapse_modes=True)
        batch = lift_zero_dim(scaled, seed=init_seed)
        cfg = replace(cfg, batch_size=proto["dense_batch"])
        data = (batch.inputs, batch.targets)
    elif model_name == "mlp":
        model = MLP(mlp_benchmark_config(ds.d_in), rng)
        cfg = replace(cfg, batch_size=proto["dense_batch"])
        data = (scaled.points, scaled.values)
    else:
        raise ValueError(f"unknown model {model_name!r}")

    tic = time.perf_counter()
    result = train(model, data, cfg)
    wall = time.perf_counter() - tic
    bundle = ModelBundle(model, xs, ys, meta={"model": model_name, "seed": seed})
    info = {"model": model_name, "seed": seed, "wall_s": wall,
            "final_train_loss": result.history.train_loss[-1] if result.history.train_loss else None,
            "best_epoch": result.best_epoch, "param_count": param_count(model),
            "param_count_complex_as_one": param_count(model, complex_as_two=False),
            "param_hash": result.param_hash, "diverged": result.diverged,
            "history_jsonl": result.history.jsonl()}
    return bundle, info


def evaluate_rmse(bundle: ModelBundle, spec: TargetSpec, test_size: int,
                  eval_seed: int) -> float:
    """RMSE on a fresh uniform test grid, in original (unscaled) units."""
    test = synthesize(spec, test_size, seed=eval_seed)
    preds = predict(bundle, test.points)
    return float(np.sqrt(np.mean((preds[:, 0] - test.values[:, 0]) ** 2)))


def training_rmse(bundle: ModelBundle, ds: TargetDataset) -> float:
    preds = predict(bundle, ds.points)
    return float(np.sqrt(np.mean((preds[:, 0] - ds.values[:, 0]) ** 2)))


@dataclass
class BenchmarkReport:
    family: str
    curve_rows: list = field(default_factory=list)   # family/model/seed/test_size/rmse
    train_rows: list = field(default_factory=list)   # per-training metadata
    prediction_rows: list = field(default_factory=list)

    def curves(self, model: str, seed: int) -> dict:
        return {r["test_size"]: r["rmse"] for r in self.curve_rows
                if r["model"] == model and r["seed"] == seed}


def _bench_job(args):
    spec, model_name, seed, protocol = args
    proto = FAMILY_PROTOCOL[spec.family]
    ds = synthesize(spec, protocol.train_n or proto["train_n"], seed=seed)
    bundle, info = train_model(ds, model_name, seed, protocol, spec.family)
    info["train_rmse"] = training_rmse(bundle, ds)
    curve_rows = []
    for size in protocol.test_sizes:
        eval_seed = int(np.random.SeedSequence(
            entropy=seed, spawn_key=(997, size)).generate_state(1)[0])
        rmse_val = (np.nan if info["diverged"]
                    else evaluate_rmse(bundle, spec, size, eval_seed))
        curve_rows.append({"family": spec.family, "model": model_name,
                           "seed": seed, "test_size": size, "rmse": rmse_val})
    return curve_rows, info, _prediction_trace(bundle, spec, model_name, seed)


def run_benchmark(spec: TargetSpec, protocol: BenchProtocol,
                  threads: int = 1) -> BenchmarkReport:
    """Train every (model, seed) pair on one shared-per-seed dataset and
    record the RMSE-versus-test-size table plus prediction traces.

    Trainings are independent; ``threads > 1`` runs them in separate
    processes. Assembly order (hence the report) is identical either way.
    """
    report = BenchmarkReport(spec.family)
    jobs = [(spec, model_name, seed, protocol)
            for seed in protocol.seeds for model_name in protocol.models]
    if threads > 1 and len(jobs) > 1:
        import concurrent.futures
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_bench_job, jobs))
    else:
        results = [_bench_job(job) for job in jobs]
    for curve_rows, info, prediction_rows in results:
        report.curve_rows.extend(curve_rows)
        report.train_rows.append(info)
        report.prediction_rows.extend(prediction_rows)
    return report


def _prediction_trace(bundle, spec, model_name, seed, n_points=400):
    """Dense prediction trace for the report plots: argument vs value in 1D,
    prediction vs ground truth in higher dimensions."""
    if spec.family == "noise":
        from .targets import noise_target
        ds = noise_target(spec.params["noise_seed"])
        points, truth = ds.points, ds.values[:, 0]
    elif spec.d_in == 1:
        lo, hi = spec.domain[0]
        points = np.linspace(lo, hi, n_points)[:, None]
        truth = spec.evaluate(points)
    else:
        test = synthesize(spec, n_points, seed=10_000 + seed)
        points, truth = test.points, test.values[:, 0]
    preds = predict(bundle, points)[:, 0]
    rows = []
    for i in range(len(points)):
        rows.append({"family": spec.family, "model": model_name, "seed": seed,
                     "x": points[i, 0] if spec.d_in == 1 else np.nan,
                     "truth": truth[i], "pred": preds[i]})
    return rows


def write_report_csvs(report: BenchmarkReport, out_dir) -> None:
    _write_csv(out_dir / "rmse_curves.csv",
               ["family", "model", "seed", "test_size", "rmse"], report.curve_rows)
    _write_csv(out_dir / "predictions.csv",
               ["family", "model", "seed", "x", "truth", "pred"], report.prediction_rows)
    _write_csv(out_dir / "trainings.csv",
               ["model", "seed", "wall_s", "final_train_loss", "train_rmse",
                "best_epoch", "param_count", "param_count_complex_as_one",
                "param_hash", "diverged"], report.train_rows)
    history_dir = out_dir / "history"
    history_dir.mkdir(exist_ok=True)
    for row in report.train_rows:
        log = row.get("history_jsonl")
        if log:
            name = f"{row['model']}-seed{row['seed']}.jsonl"
            (history_dir / name).write_text(log)


def _write_csv(path, fields, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in fields})
