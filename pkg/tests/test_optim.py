"""Adam optimizer: hand-computed first steps, descent behavior, and
diagnostics."""

import numpy as np
import pytest

from flowlift.optim import AdamState, adam_step


def test_zero_gradient_leaves_params_unchanged():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    state = AdamState(lr=0.1)
    out = adam_step(params, {"w": np.zeros(3)}, state)
    np.testing.assert_array_equal(out["w"], params["w"])
    assert state.step == 1


def test_first_step_magnitude_equals_lr():
    # bias correction makes m_hat = g and v_hat = g^2 at t=1, so the update
    # is lr * g / (|g| + eps) = lr * sign(g) up to eps
    state = AdamState(lr=0.1)
    out = adam_step({"w": np.array(0.0)}, {"w": np.array(1.0)}, state)
    assert float(out["w"]) == pytest.approx(-0.1, rel=1e-6)


def test_first_step_hand_computed_moments():
    g = np.array(2.0)
    state = AdamState(lr=0.01)
    adam_step({"w": np.array(5.0)}, {"w": g}, state)
    np.testing.assert_allclose(state.m["w"], 0.1 * g)
    np.testing.assert_allclose(state.v["w"], 0.001 * g * g)


def test_constant_gradient_moves_monotonically():
    params = {"w": np.array(0.0)}
    state = AdamState(lr=0.05)
    trace = []
    for _ in range(5):
        params = adam_step(params, {"w": np.array(1.0)}, state)
        trace.append(float(params["w"]))
    assert all(b < a for a, b in zip(trace, trace[1:]))
    assert all(v < 0 for v in trace)


def test_two_steps_match_reference_recurrence():
    # independent recomputation of the textbook update for two steps
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    w = 1.0
    m = v = 0.0
    grads = [0.5, -1.5]
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)

    params = {"w": np.array(1.0)}
    state = AdamState(lr=lr)
    for g in grads:
        params = adam_step(params, {"w": np.array(g)}, state)
    assert float(params["w"]) == pytest.approx(w, abs=1e-14)


def test_original_params_not_mutated():
    orig = np.array([1.0, 2.0])
    params = {"w": orig}
    adam_step(params, {"w": np.ones(2)}, AdamState(lr=0.1))
    np.testing.assert_array_equal(orig, [1.0, 2.0])


def test_nan_gradient_raises_with_name():
    with pytest.raises(FloatingPointError, match="'w'"):
        adam_step({"w": np.zeros(2)}, {"w": np.array([1.0, np.nan])},
                  AdamState())


def test_shape_mismatch_raises():
    with pytest.raises(ValueError, match="shape"):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())


def test_nonpositive_lr_raises():
    with pytest.raises(ValueError, match="learning rate"):
        adam_step({"w": np.zeros(1)}, {"w": np.zeros(1)}, AdamState(lr=0.0))
