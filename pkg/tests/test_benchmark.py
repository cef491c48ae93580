import csv

import numpy as np
import pytest

from fnointerp.benchmark import (BenchProtocol, FAMILY_PROTOCOL, run_benchmark,
                                 tfno_benchmark_config, train_model,
                                 training_rmse, write_report_csvs)
from fnointerp.targets import make_target, synthesize


class TestProtocolDefaults:
    def test_family_table_covers_every_family(self):
        for family in ("partial_wave", "heaviside", "piecewise", "noise",
                       "hyp_2F1", "hyp_3F2"):
            assert family in FAMILY_PROTOCOL

    def test_reference_data_protocols(self):
        assert FAMILY_PROTOCOL["partial_wave"] == dict(
            train_n=100, lift_r=50, lift_s=2500, tfno_batch=64, dense_batch=None)
        assert FAMILY_PROTOCOL["piecewise"]["train_n"] == 500
        assert FAMILY_PROTOCOL["piecewise"]["tfno_batch"] == 128
        assert FAMILY_PROTOCOL["hyp_2F1"] == dict(
            train_n=75_000, lift_r=150, lift_s=4500, tfno_batch=128,
            dense_batch=1536)
        assert FAMILY_PROTOCOL["hyp_3F2"]["dense_batch"] == 3072

    def test_benchmark_model_config(self):
        cfg = tfno_benchmark_config(4)
        assert cfg.n_modes == (16,)
        assert cfg.hidden_channels == 32
        assert cfg.lifting == 64 and cfg.projection == 64
        assert cfg.in_channels == 4 and cfg.out_channels == 1


@pytest.fixture(scope="module")
def affine_report():
    spec = make_target("affine")
    proto = BenchProtocol(seeds=(0,), test_sizes=(50, 200, 1000),
                          epochs=250, train_n=80, lift_s=256)
    return run_benchmark(spec, proto)


class TestAffineSanity:
    """Trivially learnable target: every model fits it and curves stay flat."""

    def test_every_model_reaches_low_rmse(self, affine_report):
        for row in affine_report.curve_rows:
            assert row["rmse"] < 1e-2, row

    def test_curves_flat(self, affine_report):
        for model in ("tfno1d", "no0d", "mlp"):
            vals = [r["rmse"] for r in affine_report.curve_rows
                    if r["model"] == model]
            assert max(vals) / max(min(vals), 1e-12) < 10.0


class TestReportEmission:
    def test_csvs_and_histories(self, tmp_path):
        spec = make_target("noise", seed=1)
        proto = BenchProtocol(seeds=(0,), test_sizes=(20,), epochs=4,
                              models=("mlp",))
        report = run_benchmark(spec, proto)
        write_report_csvs(report, tmp_path)
        with open(tmp_path / "rmse_curves.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert rows[0]["model"] == "mlp"
        history = (tmp_path / "history" / "mlp-seed0.jsonl").read_text()
        assert len(history.strip().splitlines()) == 4

    def test_training_rmse_uses_original_units(self, rng):
        spec = make_target("affine")
        ds = synthesize(spec, 60, seed=0)
        proto = BenchProtocol(seeds=(0,), epochs=150, train_n=60)
        bundle, info = train_model(ds, "mlp", 0, proto, "affine")
        assert training_rmse(bundle, ds) < 5e-2

    def test_divergence_recorded_not_fatal(self, monkeypatch, rng):
        # force a divergent run: absurd learning rate on the mlp
        spec = make_target("affine")
        proto = BenchProtocol(seeds=(0,), test_sizes=(20,), epochs=5,
                              models=("mlp",), learning_rate=1e12,
                              weight_decay=1e12)
        with np.errstate(over="ignore", invalid="ignore"):
            report = run_benchmark(spec, proto)
        row = report.train_rows[0]
        if row["diverged"]:
            assert all(np.isnan(r["rmse"]) for r in report.curve_rows)
        else:  # survived the absurd settings; rows must still be present
            assert len(report.curve_rows) == 1
