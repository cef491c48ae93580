import fnointerp  # noqa: F401  (allocator/threading tuning must precede numpy)

from pathlib import Path

import numpy as np
import pytest

from fnointerp.tensor import GradientTape, Tensor
from fnointerp.training import rmse

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def model_gradcheck(model, x, y, n_coords=32, h=1e-6, seed=0,
                    rtol=1e-4, atol=1e-8):
    """Compare analytic gradients against central finite differences on a
    random subset of flat parameter coordinates.

    The comparison is |fd - analytic| <= rtol * max(|fd|, |analytic|) + atol;
    the absolute floor covers coordinates whose gradients sit at the float64
    cancellation noise level of the difference quotient.
    """
    with GradientTape() as tape:
        loss = rmse(model.forward(Tensor(x)), y)
    grads = tape.gradients(loss, model.parameters())
    flat_g = model.flat_gradient(grads)

    def loss_at():
        return rmse(model.forward(Tensor(x)), y).item()

    coords = np.random.default_rng(seed).choice(
        model.flat.size, size=min(n_coords, model.flat.size), replace=False)
    worst = 0.0
    for c in coords:
        orig = model.flat[c]
        model.flat[c] = orig + h
        lp = loss_at()
        model.flat[c] = orig - h
        lm = loss_at()
        model.flat[c] = orig
        fd = (lp - lm) / (2 * h)
        err = abs(fd - flat_g[c]) - atol
        scale = max(abs(fd), abs(flat_g[c]), 1e-300)
        worst = max(worst, err / scale)
    return worst


# real-data tables are not vendored; these gates control data-bound tests
def real_data_dir() -> Path | None:
    candidates = [Path("data"), Path(__file__).parent.parent / "data"]
    for c in candidates:
        if (c / "ame2020.csv").exists() and (c / "ws4.csv").exists():
            return c
    return None


requires_real_data = pytest.mark.skipif(
    real_data_dir() is None,
    reason="real AME2020/WS4 tables not ingested (run `fnointerp ingest`)")
