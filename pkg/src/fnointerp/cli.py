"""Command-line entry points: ingest, bench, nuclear, report.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical or
protocol failure. Output root comes from --out, else $FNOINTERP_OUT, else
./runs. A YAML config file can pre-set any option; explicit flags win.
"""

from __future__ import annotations

import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import click
import numpy as np
import yaml

from . import __version__
from .manifest import RunManifest, sha256_file
from .models import build_0d_no, build_mlp, build_tfno, param_count
from .nuclear import (DataError, LeakageError, NuclearRunConfig, NuclearTrainSettings,
                      baseline_predictions, build_field, nuclear_model_config,
                      parse_ame2020_csv, parse_ame2020_native, parse_ws4_csv,
                      parse_ws4_native, pooled_rms, run_nuclear,
                      write_ame2020_csv, write_ws4_csv,
                      DELTA_H_KEV, DELTA_N_KEV)
from .training import TrainingDiverged

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

REFERENCE_PARAM_TOTALS = {"tfno_benchmark": 8917, "tfno_nuclear": 146929, "mlp": 8746}


class ConfigError(click.ClickException):
    exit_code = EXIT_USAGE


def _load_config(path: str | None, sets: tuple) -> dict:
    cfg = {}
    if path:
        try:
            cfg = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"bad config file: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a key/value mapping")
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = yaml.safe_load(value)
    return cfg


def _pick(flag, cfg: dict, key: str, default):
    if flag is not None:
        return flag
    return cfg.get(key, default)


def _out_dir(out: str | None, name: str) -> Path:
    root = Path(out) if out else Path(os.environ.get("FNOINTERP_OUT", "runs")) / name
    root.mkdir(parents=True, exist_ok=True)
    return root


@click.group()
@click.version_option(__version__)
def cli():
    """Operator-based function interpolation toolkit."""


@cli.command()
@click.option("--ame", required=True, type=click.Path(), help="AME2020 table (native or normalized CSV)")
@click.option("--ws4", required=True, type=click.Path(), help="WS4 table (native or normalized CSV)")
@click.option("--ame-format", type=click.Choice(["auto", "csv", "native"]), default="auto")
@click.option("--ws4-format", type=click.Choice(["auto", "csv", "native"]), default="auto")
@click.option("--ws4-column", default="WS4", help="mass-excess column name in the native WS4 table")
@click.option("--delta-h", type=float, default=DELTA_H_KEV, show_default=True,
              help="hydrogen mass excess (keV) used in the binding-energy conversion")
@click.option("--delta-n", type=float, default=DELTA_N_KEV, show_default=True,
              help="neutron mass excess (keV)")
@click.option("--out", type=click.Path(), default=None)
def ingest(ame, ws4, ame_format, ws4_format, ws4_column, delta_h, delta_n, out):
    """Normalize user-supplied mass tables into the repository CSV formats."""
    tic = time.perf_counter()
    out_dir = _out_dir(out, "data")

    def looks_csv(path):
        with open(path, errors="replace") as fh:
            return "Z,N" in fh.readline().replace(" ", "")

    if not Path(ame).exists():
        raise DataError(f"missing file: {ame}")
    if not Path(ws4).exists():
        raise DataError(f"missing file: {ws4}")

    ame_csv = ame_format == "csv" or (ame_format == "auto" and looks_csv(ame))
    ws4_csv = ws4_format == "csv" or (ws4_format == "auto" and looks_csv(ws4))
    ame_records = (parse_ame2020_csv(ame) if ame_csv
                   else parse_ame2020_native(ame, delta_h, delta_n))
    ws4_records = (parse_ws4_csv(ws4) if ws4_csv
                   else parse_ws4_native(ws4, ws4_column, delta_h, delta_n))

    ame_out = out_dir / "ame2020.csv"
    ws4_out = out_dir / "ws4.csv"
    write_ame2020_csv(ame_out, ame_records)
    write_ws4_csv(ws4_out, ws4_records)
    field = build_field(ame_records, ws4_records)
    metrics = {"ame_rows": len(ame_records), "ws4_rows": len(ws4_records),
               "support_count": int(field.support.sum()),
               "strict_count": int(field.strict.sum()),
               "baseline_rms_kev": (pooled_rms(field, baseline_predictions(field))
                                    if field.strict.any() else None),
               "delta_h_kev": delta_h, "delta_n_kev": delta_n}
    manifest = RunManifest("ingest", {"ame_format": "csv" if ame_csv else "native",
                                      "ws4_format": "csv" if ws4_csv else "native",
                                      "ws4_column": ws4_column},
                           seeds=[],
                           input_hashes={"ame_source": sha256_file(ame),
                                         "ws4_source": sha256_file(ws4),
                                         "ame2020.csv": sha256_file(ame_out),
                                         "ws4.csv": sha256_file(ws4_out)},
                           metrics=metrics, wall_clock_s=time.perf_counter() - tic)
    manifest.save(out_dir)
    click.echo(json.dumps(metrics, indent=2))


@cli.command()
@click.option("--family", type=click.Choice(["partial_wave", "heaviside", "piecewise",
                                             "noise", "hyp_2F1", "hyp_3F2"]),
              default="partial_wave", show_default=True)
@click.option("--order", "-L", type=int, default=3, help="partial-wave order")
@click.option("--seed", type=int, default=None)
@click.option("--n-seeds", type=int, default=None, help="seeds seed..seed+n-1")
@click.option("--models", default=None, help="comma list from tfno1d,no0d,mlp")
@click.option("--epochs", type=int, default=None)
@click.option("--train-n", type=int, default=None)
@click.option("--test-sizes", default=None, help="comma list of evaluation grid sizes")
@click.option("--smoke", is_flag=True, help="tiny budgets for a fast end-to-end pass")
@click.option("--threads", type=int, default=None, help="concurrent trainings")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--set", "sets", multiple=True, help="override config keys, key=value")
@click.option("--out", type=click.Path(), default=None)
def bench(family, order, seed, n_seeds, models, epochs, train_n, test_sizes,
          smoke, threads, config_path, sets, out):
    """Train the model family on an analytic target and emit the RMSE report."""
    from .benchmark import BenchProtocol, run_benchmark, write_report_csvs
    from .plotting import plot_benchmark
    from .targets import make_target

    tic = time.perf_counter()
    cfg = _load_config(config_path, sets)
    seed = int(_pick(seed, cfg, "seed", 0))
    n_seeds = int(_pick(n_seeds, cfg, "n_seeds", 1))
    protocol = BenchProtocol(seeds=tuple(range(seed, seed + n_seeds)))
    if models or cfg.get("models"):
        protocol = replace(protocol, models=tuple(
            (models or ",".join(cfg["models"])).split(",")))
    if test_sizes or cfg.get("test_sizes"):
        sizes = test_sizes or ",".join(str(s) for s in cfg["test_sizes"])
        protocol = replace(protocol, test_sizes=tuple(int(s) for s in sizes.split(",")))
    epochs = _pick(epochs, cfg, "epochs", None)
    if epochs:
        protocol = replace(protocol, epochs=int(epochs))
    train_n = _pick(train_n, cfg, "train_n", None)
    if train_n:
        protocol = replace(protocol, train_n=int(train_n))
    if smoke or cfg.get("smoke"):
        protocol = protocol.smoke()

    spec = make_target(family, seed=seed, order=order)
    out_dir = _out_dir(out, f"bench-{family}-seed{seed}")
    report = run_benchmark(spec, protocol,
                           threads=int(_pick(threads, cfg, "threads", 1)))
    write_report_csvs(report, out_dir)
    plot_benchmark(report, spec, out_dir / f"bench_{family}.svg")

    metrics = {"family": family,
               "models": list(protocol.models),
               "mean_rmse": {m: float(np.nanmean([r["rmse"] for r in report.curve_rows
                                                  if r["model"] == m]))
                             for m in protocol.models}}
    manifest = RunManifest("bench", {"family": family, "order": order,
                                     "protocol": protocol.__dict__},
                           seeds=list(protocol.seeds), metrics=metrics,
                           wall_clock_s=time.perf_counter() - tic)
    manifest.save(out_dir)
    click.echo(json.dumps(metrics, indent=2))


@cli.command()
@click.option("--data", "data_dir", type=click.Path(), default="data",
              show_default=True, help="directory holding ame2020.csv and ws4.csv")
@click.option("--members", type=int, default=None, help="ensemble members per fold")
@click.option("--folds", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None, help="concurrent member trainings")
@click.option("--baseline-only", is_flag=True, help="score the raw mass model only")
@click.option("--smoke", is_flag=True, help="tiny model and budgets")
@click.option("--paper-scale", is_flag=True,
              help="full protocol: 30 members per fold at full architecture")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--set", "sets", multiple=True)
@click.option("--out", type=click.Path(), default=None)
def nuclear(data_dir, members, folds, seed, threads, baseline_only, smoke,
            paper_scale, config_path, sets, out):
    """Residual-completion training and pooled out-of-fold evaluation."""
    from .plotting import plot_chart_residuals

    tic = time.perf_counter()
    cfg = _load_config(config_path, sets)
    data_dir = Path(data_dir)
    ame_path = data_dir / "ame2020.csv"
    ws4_path = data_dir / "ws4.csv"
    if not ame_path.exists() or not ws4_path.exists():
        raise DataError(f"normalized tables not found under {data_dir}; "
                        "run `fnointerp ingest` first")
    field = build_field(parse_ame2020_csv(ame_path), parse_ws4_csv(ws4_path))
    if not field.strict.any():
        raise DataError("no nuclei survive the evaluation cuts")

    seed = int(_pick(seed, cfg, "seed", 0))
    out_dir = _out_dir(out, f"nuclear-seed{seed}")
    input_hashes = {"ame2020.csv": sha256_file(ame_path),
                    "ws4.csv": sha256_file(ws4_path)}

    if baseline_only:
        metrics = {"pooled_rms_kev": pooled_rms(field, baseline_predictions(field)),
                   "strict_count": int(field.strict.sum()),
                   "support_count": int(field.support.sum()),
                   "mode": "baseline-only"}
        RunManifest("nuclear", {"baseline_only": True}, seeds=[seed],
                    input_hashes=input_hashes, metrics=metrics,
                    wall_clock_s=time.perf_counter() - tic).save(out_dir)
        (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
        click.echo(json.dumps(metrics, indent=2))
        return

    members = int(_pick(members, cfg, "members", 30 if paper_scale else 1))
    run_cfg = NuclearRunConfig(
        model=nuclear_model_config(smoke=smoke and not paper_scale),
        settings=NuclearTrainSettings(**cfg.get("train", {})),
        members_per_fold=members,
        folds=int(_pick(folds, cfg, "folds", 5)),
        seed=seed,
        threads=int(_pick(threads, cfg, "threads", 1)))
    if smoke and not paper_scale:
        run_cfg = replace(run_cfg,
                          settings=replace(run_cfg.settings, batch_size=2,
                                           steps_per_epoch=16, max_epochs=30,
                                           early_stop_patience=10))

    result = run_nuclear(field, run_cfg)
    rows = result.pop("predictions")
    histories = result.pop("histories")
    history_dir = out_dir / "history"
    history_dir.mkdir(exist_ok=True)
    for name, log in histories.items():
        (history_dir / f"{name}.jsonl").write_text(log)
    with open(out_dir / "oof_predictions.csv", "w") as fh:
        fh.write("Z,N,Eb_exp,Eb_ws4,Eb_pred,fold\n")
        for r in sorted(rows, key=lambda r: (r["Z"], r["N"])):
            fh.write(f"{r['Z']},{r['N']},{r['Eb_exp']:.3f},{r['Eb_ws4']:.3f},"
                     f"{r['Eb_pred']:.3f},{r['fold']}\n")
    corrected = {(r["Z"], r["N"]): r["Eb_exp"] - r["Eb_pred"] for r in rows}
    plot_chart_residuals(field, corrected, out_dir / "chart_residuals.svg")
    (out_dir / "metrics.json").write_text(json.dumps(result, indent=2,
                                                     sort_keys=True) + "\n")
    RunManifest("nuclear", {"members_per_fold": run_cfg.members_per_fold,
                            "folds": run_cfg.folds, "smoke": smoke,
                            "paper_scale": paper_scale,
                            "model": run_cfg.model.__dict__,
                            "settings": run_cfg.settings.__dict__},
                seeds=[seed], input_hashes=input_hashes,
                metrics={k: v for k, v in result.items() if k != "member_stats"},
                wall_clock_s=time.perf_counter() - tic).save(out_dir)
    click.echo(json.dumps({k: result[k] for k in
                           ("pooled_rms_kev", "baseline_rms_kev", "strict_count")},
                          indent=2))


@cli.command()
@click.option("--run", "run_dir", type=click.Path(), default=None,
              help="re-render figures and print metrics for an artifact directory")
@click.option("--params", "show_params", is_flag=True,
              help="print the parameter reconciliation table")
def report(run_dir, show_params):
    """Inspect artifact directories and parameter accounting."""
    if show_params:
        click.echo(json.dumps(parameter_reconciliation(), indent=2))
        return
    if not run_dir:
        raise ConfigError("pass --run DIR or --params")
    run_dir = Path(run_dir)
    if not (run_dir / "manifest.json").exists():
        raise DataError(f"{run_dir} has no manifest.json")
    manifest = RunManifest.load(run_dir)
    rendered = _rerender_figures(run_dir, manifest)
    click.echo(json.dumps({"command": manifest.command,
                           "tool_version": manifest.tool_version,
                           "seeds": manifest.seeds,
                           "rerendered": rendered,
                           "metrics": manifest.metrics}, indent=2))


def _rerender_figures(run_dir: Path, manifest: RunManifest) -> list:
    """Regenerate a run directory's SVG figures from its CSV tables."""
    import csv as _csv

    rendered = []
    curves = run_dir / "rmse_curves.csv"
    if manifest.command == "bench" and curves.exists():
        from .benchmark import BenchmarkReport
        from .plotting import plot_benchmark
        from .targets import make_target

        family = manifest.config.get("family", "partial_wave")
        report = BenchmarkReport(family)
        with open(curves) as fh:
            for row in _csv.DictReader(fh):
                report.curve_rows.append({"family": row["family"], "model": row["model"],
                                          "seed": int(row["seed"]),
                                          "test_size": int(row["test_size"]),
                                          "rmse": float(row["rmse"])})
        preds = run_dir / "predictions.csv"
        if preds.exists():
            with open(preds) as fh:
                for row in _csv.DictReader(fh):
                    report.prediction_rows.append(
                        {"family": row["family"], "model": row["model"],
                         "seed": int(row["seed"]),
                         "x": float(row["x"]) if row["x"] else float("nan"),
                         "truth": float(row["truth"]), "pred": float(row["pred"])})
        spec = make_target(family, seed=manifest.seeds[0] if manifest.seeds else 0,
                           order=manifest.config.get("order", 3))
        path = run_dir / f"bench_{family}.svg"
        plot_benchmark(report, spec, path)
        rendered.append(path.name)
    return rendered


def parameter_reconciliation() -> dict:
    """Audited parameter counts against the published reference totals,
    with the counting variants enumerated."""
    from .benchmark import mlp_benchmark_config, tfno_benchmark_config

    bench_cfg = tfno_benchmark_config(1)
    nuclear_cfg = nuclear_model_config()
    mlp = build_mlp(mlp_benchmark_config(1))
    tfno = build_tfno(bench_cfg, 1)
    tfno0d = build_0d_no(bench_cfg)
    nuc = build_tfno(nuclear_cfg, 2)

    def entry(model, reference):
        numel = param_count(model, complex_as_two=False)
        reals = param_count(model, complex_as_two=True)
        return {"count_complex_as_one": numel,
                "count_real_scalars": reals,
                "reference": reference,
                "deviation_pct": round(100.0 * (numel - reference) / reference, 3)}

    return {
        "convention": "complex entries count once under 'complex_as_one' "
                      "(the reference totals' convention) and twice under "
                      "'real_scalars'",
        "mlp_1d": entry(mlp, REFERENCE_PARAM_TOTALS["mlp"]),
        "tfno_1d_benchmark": entry(tfno, REFERENCE_PARAM_TOTALS["tfno_benchmark"]),
        "tfno_0d_benchmark": entry(tfno0d, REFERENCE_PARAM_TOTALS["tfno_benchmark"]),
        "tfno_2d_nuclear": entry(nuc, REFERENCE_PARAM_TOTALS["tfno_nuclear"]),
        "variants": {
            "coordinate_embedding_channels": "appending one base-grid coordinate "
                "channel per axis before lifting adds 64 (1D) / 384 (2D) scalars; "
                "with it the 2D total is exactly 146,929 and the 1D total 8,981",
            "skip_bias": "dropping the per-block linear-skip bias removes 64 (1D) "
                "/ 192 (2D) scalars",
            "rank_rounding": "half-up rounding of the fraction solve; floor gives "
                "the same ranks for both configs",
        },
    }


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.exceptions.Abort:
        return EXIT_USAGE
    except ConfigError as exc:
        click.echo(f"config error: {exc.message}", err=True)
        return EXIT_USAGE
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except (TrainingDiverged, LeakageError, FloatingPointError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
