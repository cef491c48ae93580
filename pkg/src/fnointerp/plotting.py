"""SVG figure emission for benchmark reports and chart heatmaps."""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .nuclear import MAGIC_NUMBERS  # noqa: E402

_STYLE = {"tfno1d": dict(color="#1f77b4", label="1D-TFNO"),
          "no0d": dict(color="#2ca02c", label="0D-TFNO"),
          "mlp": dict(color="#d62728", label="MLP")}


def plot_benchmark(report, spec, path) -> None:
    """Two-panel figure: prediction traces (or pred-vs-truth) and RMSE curves."""
    fig, (ax_pred, ax_rmse) = plt.subplots(2, 1, figsize=(6.5, 7.5))
    seeds = sorted({r["seed"] for r in report.curve_rows})
    show_seed = seeds[0] if seeds else 0

    one_d = spec.d_in == 1
    drew_truth = False
    for model, style in _STYLE.items():
        rows = [r for r in report.prediction_rows
                if r["model"] == model and r["seed"] == show_seed]
        if not rows:
            continue
        truth = np.array([r["truth"] for r in rows])
        pred = np.array([r["pred"] for r in rows])
        if one_d:
            x = np.array([r["x"] for r in rows])
            order = np.argsort(x)
            if not drew_truth:
                ax_pred.plot(x[order], truth[order], "k-", lw=1.8, label="target")
                drew_truth = True
            ax_pred.plot(x[order], pred[order], lw=1.0, **style)
        else:
            ax_pred.plot(truth, pred, ".", ms=2.5, alpha=0.6, **style)
    if one_d:
        ax_pred.set_xlabel("x")
        ax_pred.set_ylabel("prediction")
    else:
        lims = ax_pred.get_xlim()
        ax_pred.plot(lims, lims, "k--", lw=0.8)
        ax_pred.set_xlabel("ground truth")
        ax_pred.set_ylabel("prediction")
    ax_pred.set_title(f"{spec.family} (seed {show_seed})")
    ax_pred.legend(fontsize=8)

    for model, style in _STYLE.items():
        sizes = sorted({r["test_size"] for r in report.curve_rows if r["model"] == model})
        if not sizes:
            continue
        per_size = []
        for s in sizes:
            vals = [r["rmse"] for r in report.curve_rows
                    if r["model"] == model and r["test_size"] == s
                    and np.isfinite(r["rmse"])]
            per_size.append(np.mean(vals) if vals else np.nan)
        ax_rmse.plot(sizes, per_size, "o-", ms=4, **style)
    ax_rmse.set_xscale("log")
    ax_rmse.set_yscale("log")
    ax_rmse.set_xlabel("number of test points")
    ax_rmse.set_ylabel(f"test RMSE (mean over {len(seeds)} seeds)")
    ax_rmse.legend(fontsize=8)
    ax_rmse.grid(alpha=0.3, which="both")

    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _chart_panel(ax, field, values, mask, title, vlim):
    shown = np.ma.masked_where(~mask, values)
    cmap = plt.get_cmap("RdBu_r", 15)
    im = ax.pcolormesh(np.arange(field.shape[1] + 1) - 0.5,
                       np.arange(field.shape[0] + 1) - 0.5,
                       shown, cmap=cmap, vmin=-vlim, vmax=vlim)
    for m in MAGIC_NUMBERS:
        if m < field.shape[0]:
            ax.axhline(m, color="0.4", lw=0.5, ls=":")
        if m < field.shape[1]:
            ax.axvline(m, color="0.4", lw=0.5, ls=":")
    ax.set_xlabel("N")
    ax.set_ylabel("Z")
    ax.set_title(title, fontsize=10)
    return im


def plot_chart_residuals(field, corrected_residual, path, vlim_kev=1000.0) -> None:
    """Before/after residual heatmaps on the strict subset, with magic-number
    guide lines. ``corrected_residual`` maps (Z, N) -> remaining error in keV."""
    after = np.zeros(field.shape)
    mask_after = np.zeros(field.shape, dtype=bool)
    for (z, n), err in corrected_residual.items():
        after[z, n] = err
        mask_after[z, n] = True

    fig, axes = plt.subplots(1, 2, figsize=(12, 4.4), sharey=True)
    im0 = _chart_panel(axes[0], field, field.residual, field.strict,
                       "residual before correction (keV)", vlim_kev)
    im1 = _chart_panel(axes[1], field, after, mask_after,
                       "held-out residual after correction (keV)", vlim_kev)
    fig.colorbar(im0, ax=axes[0], shrink=0.85)
    fig.colorbar(im1, ax=axes[1], shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
