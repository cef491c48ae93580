"""Binding-energy residual completion on the proton-neutron chart.

Experimental binding energies are matched nucleus-by-nucleus to a global
mass-model table; the difference (the residual, in keV) is treated as a
partially observed field on the (Z, N) grid and completed by a 2D TFNO
trained as masked inpainting. Evaluation is pooled out-of-fold: every
testable nucleus is predicted exactly once, by an ensemble that never saw
its residual, and the errors are pooled into one RMS.
"""

from __future__ import annotations

import concurrent.futures
import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .lifting import ModelBundle
from .models import StandardScaler, TFNO, TFNOConfig
from .tensor import Tensor
from .training import (EarlyStopConfig, SchedulerConfig, TrainConfig, rmse, train)

GRID_SHAPE = (111, 162)            # Z rows 0..110, N columns 0..161
MAGIC_NUMBERS = (2, 8, 20, 28, 50, 82, 126)
CHART_CUT = 12                     # training support requires N > 12 or Z > 12
STRICT_SIGMA_KEV = 100.0           # evaluation additionally requires sigma below this

# AME2020 mass-excess constants (keV); configurable at ingestion and recorded
# in the data manifest rather than trusted blindly downstream.
DELTA_H_KEV = 7288.971064
DELTA_N_KEV = 8071.318062


class LeakageError(AssertionError):
    """A held-out nucleus reached a visible channel or the loss mask."""


class DataError(ValueError):
    """Malformed or inconsistent input tables."""


@dataclass(frozen=True)
class NucleusRecord:
    z: int
    n: int
    eb_kev: float
    sigma_kev: float
    estimated: bool

    def __post_init__(self):
        if self.z < 0 or self.n < 0 or self.sigma_kev < 0:
            raise DataError(f"invalid nucleus record Z={self.z} N={self.n}")


@dataclass(frozen=True)
class Ws4Record:
    z: int
    n: int
    eb_kev: float

    def __post_init__(self):
        if not np.isfinite(self.eb_kev):
            raise DataError(f"non-finite model energy at Z={self.z} N={self.n}")


def _check_duplicates(records, label):
    seen = set()
    for r in records:
        key = (r.z, r.n)
        if key in seen:
            raise DataError(f"duplicate (Z, N) = {key} in {label}")
        seen.add(key)


# -- normalized CSV interchange -------------------------------------------

def parse_ame2020_csv(path) -> list[NucleusRecord]:
    """Normalized table with columns Z,N,Eb_keV,sigma_keV,estimated."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"Z", "N", "Eb_keV", "sigma_keV", "estimated"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise DataError(f"{path}: expected columns {sorted(needed)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                records.append(NucleusRecord(int(row["Z"]), int(row["N"]),
                                             float(row["Eb_keV"]), float(row["sigma_keV"]),
                                             bool(int(row["estimated"]))))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    _check_duplicates(records, path)
    return records


def parse_ws4_csv(path) -> list[Ws4Record]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"Z", "N", "Eb_keV"}.issubset(reader.fieldnames):
            raise DataError(f"{path}: expected columns ['Eb_keV', 'N', 'Z']")
        for lineno, row in enumerate(reader, start=2):
            try:
                records.append(Ws4Record(int(row["Z"]), int(row["N"]), float(row["Eb_keV"])))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    _check_duplicates(records, path)
    return records


def write_ame2020_csv(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Z", "N", "Eb_keV", "sigma_keV", "estimated"])
        for r in sorted(records, key=lambda r: (r.z, r.n)):
            writer.writerow([r.z, r.n, f"{r.eb_kev:.6f}", f"{r.sigma_kev:.6f}",
                             int(r.estimated)])


def write_ws4_csv(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Z", "N", "Eb_keV"])
        for r in sorted(records, key=lambda r: (r.z, r.n)):
            writer.writerow([r.z, r.n, f"{r.eb_kev:.6f}"])


# -- native table ingestion ------------------------------------------------
# Fixed-width 2020 mass-table layout; '#' in place of a decimal point marks
# a non-experimental estimate. Binding energies are reconstructed from the
# mass excess: Eb = Z * delta_H + N * delta_n - delta(Z, N).

_AME_COLS = {"n": (4, 9), "z": (9, 14), "mass_excess": (28, 42), "sigma": (42, 54)}


def parse_ame2020_native(path, delta_h_kev=DELTA_H_KEV,
                         delta_n_kev=DELTA_N_KEV) -> list[NucleusRecord]:
    records = []
    with open(path, errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            if len(line.rstrip("\n")) < 54:
                continue
            try:
                n = int(line[slice(*_AME_COLS["n"])])
                z = int(line[slice(*_AME_COLS["z"])])
            except ValueError:
                continue  # header / separator lines
            raw_me = line[slice(*_AME_COLS["mass_excess"])]
            raw_sig = line[slice(*_AME_COLS["sigma"])]
            estimated = "#" in raw_me
            try:
                me = float(raw_me.replace("#", "."))
                sigma = float(raw_sig.replace("#", "."))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: unparsable mass excess "
                                f"{raw_me!r}/{raw_sig!r}") from exc
            eb = z * delta_h_kev + n * delta_n_kev - me
            records.append(NucleusRecord(z, n, eb, abs(sigma), estimated))
    if not records:
        raise DataError(f"{path}: no mass-table rows recognized")
    _check_duplicates(records, path)
    return records


def parse_ws4_native(path, column="WS4", delta_h_kev=DELTA_H_KEV,
                     delta_n_kev=DELTA_N_KEV) -> list[Ws4Record]:
    """Whitespace table with a header naming Z, A and a mass-excess column (MeV)."""
    records = []
    with open(path) as fh:
        header = None
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens or line.lstrip().startswith("#"):
                continue
            if header is None:
                upper = [t.upper() for t in tokens]
                if "Z" in upper and "A" in upper:
                    header = {t.upper(): i for i, t in enumerate(tokens)}
                    if column.upper() not in header:
                        raise DataError(f"{path}: no column named {column!r} in header")
                    continue
                raise DataError(f"{path}:{lineno}: expected a header line naming Z and A")
            try:
                z = int(float(tokens[header["Z"]]))
                a = int(float(tokens[header["A"]]))
                me_kev = float(tokens[header[column.upper()]]) * 1000.0
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            n = a - z
            records.append(Ws4Record(z, n, z * delta_h_kev + n * delta_n_kev - me_kev))
    if not records:
        raise DataError(f"{path}: no rows parsed")
    _check_duplicates(records, path)
    return records


# -- chart construction -----------------------------------------------------

@dataclass
class ChartField:
    """Per-pixel arrays on the (Z, N) grid plus the subset masks."""

    eb_exp: np.ndarray        # keV, zero off support
    eb_ws4: np.ndarray        # keV, zero off support
    residual: np.ndarray      # keV, exp - model, zero off support
    sigma: np.ndarray         # keV
    support: np.ndarray       # bool: matched, non-estimated, past the chart cut
    strict: np.ndarray        # bool: support and sigma below the strict cut

    @property
    def shape(self):
        return self.support.shape

    def coords(self, mask):
        zz, nn = np.nonzero(mask)
        return zz, nn


def build_field(ame_records, ws4_records) -> ChartField:
    """Match tables, apply the chart and uncertainty cuts, grid the residual."""
    shape = GRID_SHAPE
    eb_exp = np.zeros(shape)
    eb_ws4 = np.zeros(shape)
    sigma = np.zeros(shape)
    support = np.zeros(shape, dtype=bool)
    strict = np.zeros(shape, dtype=bool)

    ws4 = {(r.z, r.n): r.eb_kev for r in ws4_records}
    for rec in ame_records:
        if rec.estimated or (rec.n <= CHART_CUT and rec.z <= CHART_CUT):
            continue
        model = ws4.get((rec.z, rec.n))
        if model is None:
            continue
        if rec.z >= shape[0] or rec.n >= shape[1]:
            raise DataError(f"nucleus Z={rec.z} N={rec.n} falls outside the "
                            f"{shape} chart grid")
        support[rec.z, rec.n] = True
        eb_exp[rec.z, rec.n] = rec.eb_kev
        eb_ws4[rec.z, rec.n] = model
        sigma[rec.z, rec.n] = rec.sigma_kev
        if rec.sigma_kev < STRICT_SIGMA_KEV:
            strict[rec.z, rec.n] = True

    residual = np.where(support, eb_exp - eb_ws4, 0.0)
    return ChartField(eb_exp, eb_ws4, residual, sigma, support, strict)


@dataclass
class FoldPlan:
    """Partition of the strict subset into k folds (grid of fold ids, -1 off)."""

    fold_of: np.ndarray
    k: int
    seed: int

    def heldout_mask(self, fold: int) -> np.ndarray:
        return self.fold_of == fold


def make_folds(field: ChartField, k: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded shuffle of the strict nuclei sliced into near-equal chunks
    (the first ``count % k`` folds take the extra nucleus)."""
    if k < 2:
        raise ValueError("need at least two folds")
    zz, nn = field.coords(field.strict)
    order = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                         spawn_key=(11,))).permutation(len(zz))
    fold_of = np.full(field.shape, -1, dtype=np.int64)
    sizes = [len(zz) // k + (1 if i < len(zz) % k else 0) for i in range(k)]
    start = 0
    for fold, size in enumerate(sizes):
        pick = order[start:start + size]
        fold_of[zz[pick], nn[pick]] = fold
        start += size
    return FoldPlan(fold_of, k, seed)


# -- masked-inpainting batches ----------------------------------------------

_Z_NORM = (np.arange(GRID_SHAPE[0], dtype=np.float64) / (GRID_SHAPE[0] - 1))[:, None]
_N_NORM = (np.arange(GRID_SHAPE[1], dtype=np.float64) / (GRID_SHAPE[1] - 1))[None, :]


def chart_channels(field: ChartField, visible: np.ndarray,
                   scaler: StandardScaler) -> np.ndarray:
    """The five input channels: normalized Z, normalized N, visible scaled
    residual, visible mask, support mask."""
    z = np.broadcast_to(_Z_NORM, field.shape)
    n = np.broadcast_to(_N_NORM, field.shape)
    scaled = scaler.transform_channels(field.residual[None], axis=0)[0]
    vis_resid = np.where(visible, scaled, 0.0)
    return np.stack([z, n, vis_resid, visible.astype(np.float64),
                     field.support.astype(np.float64)])


def _audit_leakage(heldout, visible, loss_mask):
    if np.any(heldout & visible):
        raise LeakageError("held-out nucleus appeared in the visible channel")
    if loss_mask is not None and np.any(heldout & loss_mask):
        raise LeakageError("held-out nucleus appeared in the loss mask")


def training_batch(field: ChartField, heldout: np.ndarray, train_pool: np.ndarray,
                   scaler: StandardScaler, rng: np.random.Generator,
                   hide_fraction: float = 0.05, batch_size: int = 4):
    """One masked-inpainting batch: a fresh ~hide_fraction of the training
    nuclei is hidden per sample and the loss covers exactly those pixels.

    Raises :class:`LeakageError` if a held-out pixel would become visible or
    enter the loss; the audit runs unconditionally.
    """
    zz, nn = np.nonzero(train_pool)
    n_train = len(zz)
    n_hide = int(round(hide_fraction * n_train))
    if n_hide < 1:
        raise ValueError("hide fraction leaves the loss mask empty")
    scaled = scaler.transform_channels(field.residual[None], axis=0)[0]
    inputs = np.empty((batch_size, 5) + field.shape)
    masks = np.zeros((batch_size, 1) + field.shape)
    targets = np.broadcast_to(scaled, (batch_size, 1) + field.shape).copy()
    targets[:, 0][:, ~field.support] = 0.0
    for b in range(batch_size):
        hide = rng.choice(n_train, size=n_hide, replace=False)
        hidden = np.zeros(field.shape, dtype=bool)
        hidden[zz[hide], nn[hide]] = True
        visible = train_pool & ~hidden
        _audit_leakage(heldout, visible, hidden)
        inputs[b] = chart_channels(field, visible, scaler)
        masks[b, 0] = hidden
    return inputs, targets, masks


# -- member training and out-of-fold evaluation ------------------------------

@dataclass(frozen=True)
class NuclearTrainSettings:
    learning_rate: float = 3e-4
    weight_decay: float = 1e-4
    batch_size: int = 4
    steps_per_epoch: int = 64
    max_epochs: int = 800
    early_stop_patience: int = 50
    hide_fraction: float = 0.05
    val_fraction: float = 0.05


def nuclear_model_config(smoke: bool = False) -> TFNOConfig:
    if smoke:
        return TFNOConfig(n_modes=(8, 8), hidden_channels=16, n_layers=2,
                          rank_fraction=0.05, in_channels=5, out_channels=1)
    return TFNOConfig(n_modes=(24, 32), hidden_channels=96, n_layers=2,
                      rank_fraction=0.01, in_channels=5, out_channels=1)


@dataclass
class MemberResult:
    fold: int
    seed: int
    flat: np.ndarray
    scaler_state: dict
    best_epoch: int
    val_rmse_scaled: float
    val_rmse_kev: float
    epochs_run: int
    diverged: bool
    history_jsonl: str = ""


def _member_masks(field, plan, fold, seed, val_fraction):
    heldout = plan.heldout_mask(fold) & field.strict
    pool = field.support & ~heldout
    zz, nn = np.nonzero(pool)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(fold, 23)))
    n_val = max(int(round(val_fraction * len(zz))), 1)
    pick = rng.choice(len(zz), size=n_val, replace=False)
    val = np.zeros(field.shape, dtype=bool)
    val[zz[pick], nn[pick]] = True
    train_pool = pool & ~val
    return heldout, val, train_pool


def train_member(field: ChartField, plan: FoldPlan, fold: int, seed: int,
                 model_cfg: TFNOConfig | None = None,
                 settings: NuclearTrainSettings | None = None) -> MemberResult:
    """Train one inpainting member for one outer fold.

    The held-out fold is never visible. A fixed seeded slice of the training
    nuclei (disjoint from the fold) is carved out as internal validation: it
    is never visible during training and its masked RMSE drives early
    stopping and best-checkpoint selection.
    """
    model_cfg = model_cfg or nuclear_model_config()
    settings = settings or NuclearTrainSettings()
    heldout, val, train_pool = _member_masks(field, plan, fold, seed,
                                             settings.val_fraction)
    # never-visible validation pixels are audited exactly like the fold
    blocked = heldout | val
    scaler = StandardScaler.fit(field.residual[train_pool][:, None])

    def batches(epoch, rng):
        out = []
        for _ in range(settings.steps_per_epoch):
            x, y, m = training_batch(field, blocked, train_pool, scaler, rng,
                                     settings.hide_fraction, settings.batch_size)
            out.append((x, y, m))
        return out

    scaled = scaler.transform_channels(field.residual[None], axis=0)[0]
    val_inputs = chart_channels(field, train_pool, scaler)[None]
    val_target = np.where(field.support, scaled, 0.0)[None, None]
    val_mask = val[None, None].astype(np.float64)
    _audit_leakage(heldout, train_pool, None)

    def validation(model):
        out = model.forward(Tensor(val_inputs))
        return rmse(out, val_target, val_mask).item()

    model = TFNO(model_cfg, np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(fold, 37))))
    cfg = TrainConfig(learning_rate=settings.learning_rate,
                      weight_decay=settings.weight_decay,
                      epochs=settings.max_epochs,
                      scheduler=SchedulerConfig(),
                      early_stop=EarlyStopConfig(patience=settings.early_stop_patience),
                      seed=seed * 100003 + fold)
    result = train(model, batches, cfg, validation=validation)
    val_scaled = result.best_monitored
    return MemberResult(fold, seed, model.get_flat(), scaler.state(),
                        result.best_epoch, val_scaled,
                        val_scaled * scaler.std[0], len(result.history.train_loss),
                        result.diverged, result.history.jsonl())


def member_bundle(member: MemberResult, model_cfg: TFNOConfig) -> ModelBundle:
    model = TFNO(model_cfg, np.random.default_rng(0))
    model.set_flat(member.flat)
    scaler = StandardScaler.from_state(member.scaler_state)
    ident = StandardScaler(np.zeros(5), np.ones(5))
    return ModelBundle(model, ident, scaler, meta={"fold": member.fold,
                                                   "seed": member.seed})


def predict_oof(members: list[MemberResult], field: ChartField, plan: FoldPlan,
                fold: int, model_cfg: TFNOConfig) -> dict:
    """Ensemble-mean corrected energies for one held-out fold.

    Context at prediction time is every training nucleus (the full support
    minus the fold); the held-out residuals never enter the visible channel.
    """
    if not members:
        raise ValueError(f"no trained members for fold {fold}")
    heldout = plan.heldout_mask(fold) & field.strict
    visible = field.support & ~heldout
    _audit_leakage(heldout, visible, None)
    zz, nn = field.coords(heldout)
    preds = np.zeros(len(zz))
    for member in members:
        scaler = StandardScaler.from_state(member.scaler_state)
        model = TFNO(model_cfg, np.random.default_rng(0))
        model.set_flat(member.flat)
        out = model.forward(Tensor(chart_channels(field, visible, scaler)[None])).data
        preds += scaler.inverse_channels(out[:, 0], axis=0)[0][zz, nn]
    preds /= len(members)
    return {(int(z), int(n)): field.eb_ws4[z, n] + p
            for z, n, p in zip(zz, nn, preds)}


def pooled_rms(field: ChartField, predictions: dict) -> float:
    """RMS error over the strict subset; every nucleus must be predicted."""
    zz, nn = field.coords(field.strict)
    errors = np.empty(len(zz))
    for i, (z, n) in enumerate(zip(zz, nn)):
        key = (int(z), int(n))
        if key not in predictions:
            raise ValueError(f"missing prediction for nucleus {key}")
        errors[i] = field.eb_exp[z, n] - predictions[key]
    return float(np.sqrt(np.mean(errors ** 2)))


def baseline_predictions(field: ChartField) -> dict:
    zz, nn = field.coords(field.strict)
    return {(int(z), int(n)): field.eb_ws4[z, n] for z, n in zip(zz, nn)}


# -- full run orchestration ---------------------------------------------------

@dataclass
class NuclearRunConfig:
    model: TFNOConfig = field(default_factory=nuclear_model_config)
    settings: NuclearTrainSettings = field(default_factory=NuclearTrainSettings)
    members_per_fold: int = 1
    folds: int = 5
    seed: int = 0
    threads: int = 1


def _member_job(args):
    field, plan, fold, seed, model_cfg, settings = args
    return train_member(field, plan, fold, seed, model_cfg, settings)


def run_nuclear(field: ChartField, run_cfg: NuclearRunConfig) -> dict:
    """Train every (fold, member) job, pool the out-of-fold predictions, and
    return the metrics plus per-nucleus prediction rows."""
    plan = make_folds(field, run_cfg.folds, run_cfg.seed)
    jobs = []
    for fold in range(run_cfg.folds):
        for m in range(run_cfg.members_per_fold):
            member_seed = int(np.random.SeedSequence(
                entropy=run_cfg.seed, spawn_key=(fold, m)).generate_state(1)[0])
            jobs.append((field, plan, fold, member_seed, run_cfg.model,
                         run_cfg.settings))

    if run_cfg.threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=run_cfg.threads) as pool:
            results = list(pool.map(_member_job, jobs))
    else:
        results = [_member_job(job) for job in jobs]

    by_fold: dict[int, list[MemberResult]] = {}
    excluded = []
    for res in results:
        if res.diverged:
            excluded.append({"fold": res.fold, "seed": res.seed})
            continue
        by_fold.setdefault(res.fold, []).append(res)

    predictions: dict = {}
    fold_rms = {}
    for fold in range(run_cfg.folds):
        fold_preds = predict_oof(by_fold.get(fold, []), field, plan, fold,
                                 run_cfg.model)
        predictions.update(fold_preds)
        heldout = plan.heldout_mask(fold) & field.strict
        zz, nn = field.coords(heldout)
        errs = [field.eb_exp[z, n] - fold_preds[(int(z), int(n))]
                for z, n in zip(zz, nn)]
        fold_rms[fold] = float(np.sqrt(np.mean(np.square(errs))))

    pooled = pooled_rms(field, predictions)
    rows = []
    for fold in range(run_cfg.folds):
        heldout = plan.heldout_mask(fold) & field.strict
        for z, n in zip(*field.coords(heldout)):
            key = (int(z), int(n))
            rows.append({"Z": key[0], "N": key[1],
                         "Eb_exp": field.eb_exp[z, n],
                         "Eb_ws4": field.eb_ws4[z, n],
                         "Eb_pred": predictions[key], "fold": fold})

    member_stats = [{"fold": r.fold, "seed": r.seed, "best_epoch": r.best_epoch,
                     "epochs_run": r.epochs_run,
                     "val_rmse_kev": r.val_rmse_kev} for r in results]
    histories = {f"fold{r.fold}-seed{r.seed}": r.history_jsonl for r in results}
    return {
        "histories": histories,
        "pooled_rms_kev": pooled,
        "baseline_rms_kev": pooled_rms(field, baseline_predictions(field)),
        "per_fold_rms_kev": {str(k): v for k, v in fold_rms.items()},
        "strict_count": int(field.strict.sum()),
        "support_count": int(field.support.sum()),
        "members_per_fold": run_cfg.members_per_fold,
        "excluded_members": excluded,
        "member_stats": member_stats,
        "predictions": rows,
    }
