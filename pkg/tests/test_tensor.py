"""Autodiff engine: op-level gradients against finite differences, exact
hand-computed cases, and determinism."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowlift.tensor import (Tensor, concat, layer_norm, no_grad, relu,
                             softmax)


def finite_diff(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * step)
    return g


def check_grad(build, x: np.ndarray, rtol: float = 1e-6) -> None:
    """Compare the autodiff gradient of scalar `build(Tensor)` against
    central finite differences."""
    leaf = Tensor(x.copy(), requires_grad=True)
    out = build(leaf)
    out.backward()
    num = finite_diff(lambda a: float(build(Tensor(a)).data), x.copy())
    scale = np.maximum(np.abs(num), 1.0)
    np.testing.assert_allclose(leaf.grad, num, atol=rtol * scale.max())


rng = np.random.default_rng(0)

arrays = st.integers(0, 10_000).map(
    lambda s: np.random.default_rng(s).standard_normal((3, 4)))


class TestScalarRules:
    def test_square_gradient(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        (x * x).backward()
        assert x.grad == pytest.approx(6.0)

    def test_softmax_sum_has_zero_gradient(self):
        x = Tensor(rng.standard_normal(5), requires_grad=True)
        softmax(x).sum().backward()
        np.testing.assert_allclose(x.grad, 0.0, atol=1e-12)

    def test_gradient_of_output_wrt_itself_is_one(self):
        x = Tensor(np.array(2.5), requires_grad=True)
        x.sum().backward()
        assert float(x.grad) == 1.0

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            x.backward()


class TestOpGradients:
    @settings(max_examples=25, deadline=None)
    @given(arrays)
    def test_add_mul(self, x):
        check_grad(lambda a: ((a + 2.0) * (a * 0.5 + 1.0)).sum(), x)

    @settings(max_examples=25, deadline=None)
    @given(arrays)
    def test_matmul(self, x):
        w = np.random.default_rng(1).standard_normal((4, 2))
        check_grad(lambda a: (a @ Tensor(w)).sum(), x)

    @settings(max_examples=25, deadline=None)
    @given(arrays)
    def test_relu(self, x):
        # nudge values off the kink where the subgradient is ambiguous
        x = x + 0.05 * np.sign(x) + 1e-3
        check_grad(lambda a: (relu(a) * relu(a)).mean(), x)

    @settings(max_examples=25, deadline=None)
    @given(arrays)
    def test_softmax(self, x):
        w = np.random.default_rng(2).standard_normal((3, 4))
        check_grad(lambda a: (softmax(a) * Tensor(w)).sum(), x)

    @settings(max_examples=25, deadline=None)
    @given(arrays)
    def test_layer_norm(self, x):
        gamma = Tensor(np.full(4, 1.3))
        beta = Tensor(np.full(4, -0.2))
        check_grad(lambda a: (layer_norm(a, gamma, beta) ** 2.0).mean(), x)

    def test_layer_norm_param_gradients(self):
        x = Tensor(rng.standard_normal((3, 4)))
        g = Tensor(rng.standard_normal(4), requires_grad=True)
        b = Tensor(rng.standard_normal(4), requires_grad=True)
        (layer_norm(x, g, b) ** 2.0).sum().backward()
        num_g = finite_diff(
            lambda a: float((layer_norm(x, Tensor(a), Tensor(b.data)) ** 2.0)
                            .sum().data), g.data.copy())
        num_b = finite_diff(
            lambda a: float((layer_norm(x, Tensor(g.data), Tensor(a)) ** 2.0)
                            .sum().data), b.data.copy())
        np.testing.assert_allclose(g.grad, num_g, atol=1e-6)
        np.testing.assert_allclose(b.grad, num_b, atol=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(arrays)
    def test_broadcast_div_pow(self, x):
        x = np.abs(x) + 0.5
        check_grad(lambda a: ((a / 3.0) ** 2.0 + Tensor(1.0) / a).sum(), x)

    def test_concat_routes_gradients(self):
        a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal((2, 5)), requires_grad=True)
        w = rng.standard_normal((2, 8))
        (concat([a, b], axis=-1) * Tensor(w)).sum().backward()
        np.testing.assert_array_equal(a.grad, w[:, :3])
        np.testing.assert_array_equal(b.grad, w[:, 3:])

    def test_transpose_reshape_broadcast(self):
        x = rng.standard_normal((2, 3, 4))
        check_grad(lambda a: (a.transpose(2, 0, 1).reshape(4, 6)
                              @ Tensor(np.ones((6, 1)))).sum(), x)
        y = Tensor(rng.standard_normal((1, 4)), requires_grad=True)
        y.broadcast_to((3, 4)).sum().backward()
        np.testing.assert_allclose(y.grad, np.full((1, 4), 3.0))

    def test_broadcast_add_unbroadcasts(self):
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal(4), requires_grad=True)
        (a + b).sum().backward()
        np.testing.assert_allclose(a.grad, np.ones((3, 4)))
        np.testing.assert_allclose(b.grad, np.full(4, 3.0))


class TestSoftmaxValues:
    def test_symmetric_pair(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0])).data,
                                   [0.5, 0.5], atol=1e-15)

    def test_known_pair(self):
        # e^0 / (e^0 + e^-1) computed independently
        e = np.exp(-1.0)
        np.testing.assert_allclose(softmax(Tensor([0.0, -1.0])).data,
                                   [1 / (1 + e), e / (1 + e)], atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-100, 100))
    def test_shift_invariance_and_normalization(self, seed, shift):
        v = np.random.default_rng(seed).standard_normal(7)
        s0 = softmax(Tensor(v)).data
        s1 = softmax(Tensor(v + shift)).data
        np.testing.assert_allclose(s0, s1, atol=1e-12)
        assert abs(s0.sum() - 1.0) < 1e-12
        assert np.all(s0 >= 0)

    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(ValueError, match="empty"):
            softmax(Tensor(np.empty(0)))
        with pytest.raises(ValueError, match="non-finite"):
            softmax(Tensor([0.0, np.nan]))


class TestLayerNormValues:
    def test_constant_input_normalizes_to_beta(self):
        out = layer_norm(Tensor([1.0, 1.0, 1.0, 1.0]),
                         Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_two_point_case(self):
        # (x - mu) / sqrt(var + eps) with mu=1, var=1 evaluated by hand
        out = layer_norm(Tensor([0.0, 2.0]),
                         Tensor(np.ones(2)), Tensor(np.zeros(2)))
        expect = np.array([-1.0, 1.0]) / np.sqrt(1.0 + 1e-5)
        np.testing.assert_allclose(out.data, expect, atol=1e-12)

    def test_zero_gamma_returns_beta(self):
        out = layer_norm(Tensor(rng.standard_normal(6)),
                         Tensor(np.zeros(6)), Tensor(np.full(6, 3.0)))
        np.testing.assert_array_equal(out.data, np.full(6, 3.0))

    def test_normalized_moments(self):
        x = Tensor(rng.standard_normal((5, 16)))
        out = layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
        assert np.abs(out.mean(axis=-1)).max() < 1e-10
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)

    def test_shape_validation(self):
        with pytest.raises(ValueError, match="mismatch"):
            layer_norm(Tensor(np.ones(4)), Tensor(np.ones(3)),
                       Tensor(np.zeros(4)))
        with pytest.raises(ValueError, match="at least 2"):
            layer_norm(Tensor(np.ones(1)), Tensor(np.ones(1)),
                       Tensor(np.zeros(1)))


class TestEngineBehavior:
    def test_backward_is_deterministic(self):
        def run():
            x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
            w = Tensor(np.linspace(-1, 1, 8).reshape(4, 2),
                       requires_grad=True)
            (softmax(relu(x @ w)) ** 2.0).mean().backward()
            return x.grad.copy(), w.grad.copy()

        gx1, gw1 = run()
        gx2, gw2 = run()
        np.testing.assert_array_equal(gx1, gx2)
        np.testing.assert_array_equal(gw1, gw2)

    def test_no_grad_suppresses_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            out = (x * 2.0).sum()
        assert out.parents == () and not out.requires_grad

    def test_gradient_accumulates_across_uses(self):
        x = Tensor(np.array(2.0), requires_grad=True)
        (x * x + x * 3.0).backward()
        assert float(x.grad) == pytest.approx(7.0)
