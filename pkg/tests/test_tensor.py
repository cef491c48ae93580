import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fnointerp import tensor as T
from fnointerp.tensor import GradientTape, Tensor, set_debug_checks


class TestMatmul:
    def test_identity(self, rng):
        v = rng.standard_normal((3, 1))
        out = T.matmul(Tensor(np.eye(3)), Tensor(v))
        np.testing.assert_allclose(out.data, v)

    def test_hand_product(self):
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [7.0]])

    def test_zero_annihilates(self, rng):
        x = rng.standard_normal((2, 5))
        out = T.matmul(Tensor(np.zeros((2, 2))), Tensor(x))
        np.testing.assert_array_equal(out.data, np.zeros((2, 5)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestGelu:
    def test_zero(self):
        assert T.gelu(Tensor([0.0])).data[0] == 0.0

    def test_asymptote(self):
        assert abs(T.gelu(Tensor([10.0])).data[0] - 10.0) < 1e-9

    def test_unit_point(self):
        # Phi(1) = 0.8413447461 to the printed digits
        assert T.gelu(Tensor([1.0])).data[0] == pytest.approx(0.8413447461, abs=1e-9)

    def test_rejects_complex(self):
        with pytest.raises(TypeError):
            T.gelu(Tensor([1.0 + 1.0j]))


class TestFourier:
    def test_constant_signal_is_dc_only(self):
        n = 8
        spec = T.rfft(Tensor(np.full(n, 3.0))).data
        assert spec[0] == pytest.approx(3.0 * n)
        np.testing.assert_allclose(np.abs(spec[1:]), 0.0, atol=1e-12)

    def test_single_bin_excitation(self):
        n, k = 16, 3
        x = np.cos(2 * np.pi * k * np.arange(n) / n)
        spec = T.rfft(Tensor(x)).data
        # direct DFT-sum oracle
        oracle = np.array([np.sum(x * np.exp(-2j * np.pi * j * np.arange(n) / n))
                           for j in range(n // 2 + 1)])
        np.testing.assert_allclose(spec, oracle, atol=1e-10)
        energy = np.abs(spec) ** 2
        assert energy[k] / energy.sum() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 7, 50, 64, 100, 111, 162])
    def test_roundtrip(self, n, rng):
        x = rng.standard_normal(n)
        back = T.irfft(T.rfft(Tensor(x)), n).data
        assert np.abs(back - x).max() < 1e-10

    def test_irfft_of_dc_is_constant(self):
        n = 6
        spec = np.zeros(n // 2 + 1, dtype=complex)
        spec[0] = n
        np.testing.assert_allclose(T.irfft(Tensor(spec), n).data, np.ones(n),
                                   atol=1e-12)

    @pytest.mark.parametrize("n", [50, 51])
    def test_parseval(self, n, rng):
        x = rng.standard_normal(n)
        spec = T.rfft(Tensor(x)).data
        weights = np.full(n // 2 + 1, 2.0)
        weights[0] = 1.0
        if n % 2 == 0:
            weights[-1] = 1.0
        lhs = np.sum(x ** 2)
        rhs = np.sum(weights * np.abs(spec) ** 2) / n
        assert lhs == pytest.approx(rhs, rel=1e-9)

    def test_empty_axis_rejected(self):
        with pytest.raises(ValueError):
            T.rfft(Tensor(np.zeros((2, 0))))

    def test_irfft_needs_output_length(self):
        spec = T.rfft(Tensor(np.arange(6.0)))
        with pytest.raises(ValueError):
            T.irfft(spec, 9)  # wrong bin count for requested length


class TestBackward:
    def test_sum_of_squares(self):
        p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        with GradientTape() as tape:
            loss = T.tsum(p * p)
        np.testing.assert_allclose(tape.gradients(loss, [p])[p], 2 * p.data)

    def test_matmul_chain_vs_finite_differences(self, rng):
        a = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
        x = rng.standard_normal((5, 2))

        def loss_for(ad, bd):
            with GradientTape() as tape:
                out = T.matmul(T.matmul(Tensor(ad, requires_grad=True),
                                        Tensor(bd)), Tensor(x))
                loss = T.tsum(out * out)
            return loss.item()

        with GradientTape() as tape:
            out = T.matmul(T.matmul(a, b), Tensor(x))
            loss = T.tsum(out * out)
        grads = tape.gradients(loss, [a, b])

        h = 1e-6
        for tensor, grad in grads.items():
            num = np.zeros_like(tensor.data)
            for idx in np.ndindex(tensor.shape):
                dp = tensor.data.copy()
                dp[idx] += h
                dm = tensor.data.copy()
                dm[idx] -= h
                if tensor is a:
                    num[idx] = (loss_for(dp, b.data) - loss_for(dm, b.data)) / (2 * h)
                else:
                    num[idx] = (loss_for(a.data, dp) - loss_for(a.data, dm)) / (2 * h)
            rel = np.abs(grad - num).max() / np.abs(num).max()
            assert rel < 1e-4

    def test_fft_chain_vs_finite_differences(self, rng):
        w = rng.standard_normal(10)
        scale = Tensor(rng.standard_normal(6) + 1j * rng.standard_normal(6))

        def run(wd):
            wt = Tensor(wd, requires_grad=True)
            with GradientTape() as tape:
                y = T.irfft(T.rfft(wt) * scale, 10)
                loss = T.tsum(y * y)
            return loss.item(), tape.gradients(loss, [wt])[wt]

        _, g = run(w)
        h = 1e-6
        num = np.array([(run(w + h * np.eye(10)[i])[0]
                         - run(w - h * np.eye(10)[i])[0]) / (2 * h)
                        for i in range(10)])
        assert np.abs(g - num).max() / np.abs(num).max() < 1e-4

    def test_complex_leaf_gradient_vs_finite_differences(self, rng):
        x = rng.standard_normal((4, 3)).astype(complex)
        w0 = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))

        def run(wd):
            wt = Tensor(wd, requires_grad=True)
            with GradientTape() as tape:
                y = T.real(T.matmul(Tensor(x), wt))
                loss = T.tsum(y * y)
            return loss.item(), tape.gradients(loss, [wt])[wt]

        _, g = run(w0)
        h = 1e-6
        for idx in np.ndindex(w0.shape):
            for part, delta in (("re", h), ("im", 1j * h)):
                lp = run(w0 + delta * _unit(w0.shape, idx))[0]
                lm = run(w0 - delta * _unit(w0.shape, idx))[0]
                fd = (lp - lm) / (2 * h)
                ana = g[idx].real if part == "re" else g[idx].imag
                assert fd == pytest.approx(ana, rel=1e-4, abs=1e-8)

    def test_loss_must_be_scalar(self):
        p = Tensor(np.ones(3), requires_grad=True)
        with GradientTape() as tape:
            out = p * p
        with pytest.raises(ValueError):
            tape.gradients(out, [p])

    def test_disconnected_parameter_gets_zeros(self):
        p = Tensor(np.ones(3), requires_grad=True)
        q = Tensor(np.ones(2), requires_grad=True)
        with GradientTape() as tape:
            loss = T.tsum(p * p)
        g = tape.gradients(loss, [p, q])
        np.testing.assert_array_equal(g[q], np.zeros(2))

    def test_backward_is_linear(self, rng):
        p = Tensor(rng.standard_normal(5), requires_grad=True)

        def grad_of(a, b):
            with GradientTape() as tape:
                l1 = T.tsum(p * p)
                l2 = T.tsum(T.gelu(p))
                loss = Tensor(a) * l1 + Tensor(b) * l2
            return tape.gradients(loss, [p])[p]

        g11 = grad_of(1.0, 0.0)
        g01 = grad_of(0.0, 1.0)
        gab = grad_of(2.5, -1.5)
        assert np.abs(gab - (2.5 * g11 - 1.5 * g01)).max() < 1e-12

    def test_tape_consumed_after_backward(self):
        p = Tensor(np.ones(2), requires_grad=True)
        with GradientTape() as tape:
            loss = T.tsum(p * p)
        tape.gradients(loss, [p])
        assert len(tape) == 0


def _unit(shape, idx):
    u = np.zeros(shape)
    u[idx] = 1.0
    return u


class TestDebugChecks:
    def test_nonfinite_is_an_error_state(self):
        set_debug_checks(True)
        try:
            with pytest.raises(FloatingPointError):
                Tensor([np.nan, 1.0])
            with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError):
                T.sqrt(Tensor([-1.0]))  # nan output
        finally:
            set_debug_checks(False)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=40), st.integers(min_value=0, max_value=2 ** 31))
def test_roundtrip_property(n, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    back = T.irfft(T.rfft(Tensor(x)), n).data
    assert np.abs(back - x).max() < 1e-10
