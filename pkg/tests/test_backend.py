import numpy as np
import pytest

from fnointerp import _kernels_np
from fnointerp import backend


requires_compiled = pytest.mark.skipif(
    "compiled" not in backend.available_backends(),
    reason="compiled kernel extension not built")


@requires_compiled
class TestBackendAgreement:
    def test_gelu_forward(self, rng):
        from fnointerp import _kernels
        x = rng.standard_normal(10_000) * 3
        y_c, phi_c = _kernels.gelu_fwd(x)
        y_n, phi_n = _kernels_np.gelu_fwd(x)
        np.testing.assert_allclose(y_c, y_n, atol=5e-16, rtol=1e-13)
        np.testing.assert_allclose(phi_c, phi_n, atol=5e-16, rtol=1e-13)

    def test_gelu_backward(self, rng):
        from fnointerp import _kernels
        x = rng.standard_normal(10_000) * 3
        gy = rng.standard_normal(10_000)
        _, phi = _kernels.gelu_fwd(x)
        np.testing.assert_allclose(_kernels.gelu_bwd(x, phi, gy),
                                   _kernels_np.gelu_bwd(x, phi, gy),
                                   atol=1e-15, rtol=1e-12)

    def test_adamw(self, rng):
        from fnointerp import _kernels
        p1 = rng.standard_normal(500)
        p2 = p1.copy()
        m1, v1 = np.zeros(500), np.zeros(500)
        m2, v2 = np.zeros(500), np.zeros(500)
        for t in range(1, 6):
            g = rng.standard_normal(500)
            _kernels.adamw_update(p1, g, m1, v1, 1e-3, 0.9, 0.999, 1e-8, 1e-2, t)
            _kernels_np.adamw_update(p2, g, m2, v2, 1e-3, 0.9, 0.999, 1e-8, 1e-2, t)
        np.testing.assert_allclose(p1, p2, atol=1e-15)
        np.testing.assert_allclose(m1, m2, atol=1e-15)
        np.testing.assert_allclose(v1, v2, atol=1e-15)


def test_backend_switching():
    original = backend.BACKEND_NAME
    try:
        assert backend.use_backend("numpy") == "numpy"
        assert backend.KERNELS is _kernels_np
        with pytest.raises(ValueError):
            backend.use_backend("cuda")
    finally:
        backend.use_backend(original)


def test_numpy_gelu_matches_reference_value():
    y, phi = _kernels_np.gelu_fwd(np.array([1.0]))
    assert y[0] == pytest.approx(0.8413447461, abs=1e-9)
    assert phi[0] == pytest.approx(0.8413447461, abs=1e-9)
