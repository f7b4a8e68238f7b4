"""Velocity network: adjacency normalization, branch-level oracles,
equivariance, and parity between the training-graph forward pass and the
plain-numpy inference path."""

import numpy as np
import pytest

from flowlift.network import (NetConfig, attention, gcn_layer, init_params,
                              normalize_adjacency, num_params,
                              velocity_forward, velocity_infer)
from flowlift.skeleton import Skeleton, human17
from flowlift.tensor import Tensor

CFG = NetConfig(n_joints=17, width=64, blocks=2, heads=4, seed=0)


def tiny_skeleton(n=5):
    return Skeleton(n, tuple((i, i + 1) for i in range(n - 1)), 0,
                    tuple(range(n)))


def random_inputs(b, j, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((b, j, 3)), rng.uniform(0, 1, b),
            rng.standard_normal((b, j, 2)))


class TestAdjacency:
    def test_two_node_graph_all_half(self):
        skel = tiny_skeleton(2)
        np.testing.assert_allclose(normalize_adjacency(skel),
                                   np.full((2, 2), 0.5), atol=1e-15)

    def test_symmetric_and_bounded_spectrum(self):
        adjn = normalize_adjacency(human17())
        np.testing.assert_array_equal(adjn, adjn.T)
        eig = np.linalg.eigvalsh(adjn)
        assert np.abs(eig).max() <= 1 + 1e-10

    def test_self_loops_present(self):
        adjn = normalize_adjacency(human17())
        assert np.all(np.diag(adjn) > 0)


class TestGcnLayer:
    def test_identity_passthrough(self):
        x = Tensor(np.random.default_rng(0).standard_normal((4, 3)))
        out = gcn_layer(x, np.eye(4), Tensor(np.eye(3)), activate=False)
        np.testing.assert_array_equal(out.data, x.data)

    def test_two_node_hand_case(self):
        x = Tensor(np.array([[1.0], [3.0]]))
        out = gcn_layer(x, np.full((2, 2), 0.5), Tensor(np.eye(1)),
                        activate=False)
        np.testing.assert_allclose(out.data, [[2.0], [2.0]], atol=1e-15)

    def test_relu_clips_negative(self):
        x = Tensor(-np.ones((3, 2)))
        out = gcn_layer(x, np.eye(3), Tensor(np.eye(2)))
        np.testing.assert_array_equal(out.data, 0.0)


class TestAttention:
    def test_identical_keys_average_values(self):
        rng = np.random.default_rng(1)
        q = Tensor(rng.standard_normal((5, 4)))
        k = Tensor(np.tile(rng.standard_normal(4), (5, 1)))
        v = Tensor(rng.standard_normal((5, 4)))
        out = attention(q, k, v)
        np.testing.assert_allclose(out.data,
                                   np.tile(v.data.mean(axis=0), (5, 1)),
                                   atol=1e-12)

    def test_single_token_returns_value(self):
        rng = np.random.default_rng(2)
        q, k, v = (Tensor(rng.standard_normal((1, 4))) for _ in range(3))
        np.testing.assert_allclose(attention(q, k, v).data, v.data,
                                   atol=1e-15)

    def test_scalar_softmax_oracle(self):
        q = Tensor(np.array([[10.0], [10.0]]))
        k = Tensor(np.array([[1.0], [0.0]]))
        v = Tensor(np.array([[3.0], [7.0]]))
        w = np.exp([10.0, 0.0])
        w /= w.sum()
        expect = w[0] * 3.0 + w[1] * 7.0
        np.testing.assert_allclose(attention(q, k, v).data,
                                   [[expect], [expect]], rtol=1e-12)

    def test_multi_head_equals_per_head_single(self):
        rng = np.random.default_rng(3)
        q, k, v = (rng.standard_normal((6, 8)) for _ in range(3))
        multi = attention(Tensor(q), Tensor(k), Tensor(v), heads=2).data
        halves = [attention(Tensor(q[:, s]), Tensor(k[:, s]),
                            Tensor(v[:, s])).data
                  for s in (slice(0, 4), slice(4, 8))]
        np.testing.assert_allclose(multi, np.concatenate(halves, axis=-1),
                                   atol=1e-12)

    def test_indivisible_heads_rejected(self):
        t = Tensor(np.ones((3, 6)))
        with pytest.raises(ValueError, match="heads"):
            attention(t, t, t, heads=4)


class TestForward:
    def test_output_shape_and_determinism(self):
        params = init_params(CFG)
        adjn = normalize_adjacency(human17())
        x, t, c = random_inputs(3, 17)
        out1, _ = velocity_forward(x, t, c, params, adjn, CFG)
        out2, _ = velocity_forward(x, t, c, params, adjn, CFG)
        assert out1.data.shape == (3, 17, 3)
        np.testing.assert_array_equal(out1.data, out2.data)

    def test_single_pose_squeeze(self):
        params = init_params(CFG)
        adjn = normalize_adjacency(human17())
        x, t, c = random_inputs(1, 17)
        batched, _ = velocity_forward(x, t, c, params, adjn, CFG)
        single, _ = velocity_forward(x[0], t[0], c[0], params, adjn, CFG)
        assert single.data.shape == (17, 3)
        np.testing.assert_array_equal(single.data, batched.data[0])

    def test_time_changes_output(self):
        params = init_params(CFG)
        adjn = normalize_adjacency(human17())
        x, _, c = random_inputs(2, 17)
        o1, _ = velocity_forward(x, np.array([0.1, 0.1]), c, params, adjn, CFG)
        o2, _ = velocity_forward(x, np.array([0.9, 0.9]), c, params, adjn, CFG)
        assert np.abs(o1.data - o2.data).max() > 1e-6

    def test_permutation_equivariance(self):
        # shared per-joint weights + graph convolution + positionless
        # attention: permuting joints and the adjacency together permutes
        # the output identically
        cfg = NetConfig(n_joints=5, width=16, blocks=2, heads=2, seed=3)
        skel = tiny_skeleton(5)
        params = init_params(cfg)
        adjn = normalize_adjacency(skel)
        x, t, c = random_inputs(2, 5, seed=9)
        perm = np.array([3, 0, 4, 1, 2])
        base, _ = velocity_forward(x, t, c, params, adjn, cfg)
        permuted, _ = velocity_forward(x[:, perm], t, c[:, perm], params,
                                       adjn[np.ix_(perm, perm)], cfg)
        np.testing.assert_allclose(permuted.data, base.data[:, perm],
                                   atol=1e-10)

    def test_param_count_reported(self):
        params = init_params(CFG)
        assert num_params(params) == sum(v.size for v in params.values())
        assert num_params(params) > 10_000

    def test_invalid_widths_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            NetConfig(width=30)
        with pytest.raises(ValueError, match="heads"):
            NetConfig(width=24, heads=5)

    def test_config_kv_round_trip(self):
        cfg = NetConfig(n_joints=5, width=32, blocks=3, heads=2, seed=7,
                        residual=True)
        assert NetConfig.from_kv(cfg.to_kv()) == cfg


class TestInferencePath:
    """The plain-numpy inference forward must match the autodiff graph
    forward and be invariant to batch decomposition."""

    def test_float64_parity_with_graph_forward(self):
        params = init_params(CFG)
        adjn = normalize_adjacency(human17())
        x, t, c = random_inputs(6, 17, seed=11)
        graph, _ = velocity_forward(x, t, c, params, adjn, CFG)
        infer = velocity_infer(x, t, c, params, adjn, CFG)
        np.testing.assert_allclose(infer, graph.data, atol=1e-12)

    def test_float32_parity_within_single_precision(self):
        params = init_params(CFG)
        adjn = normalize_adjacency(human17())
        p32 = {k: v.astype(np.float32) for k, v in params.items()}
        x, t, c = random_inputs(6, 17, seed=12)
        graph, _ = velocity_forward(x, t, c, params, adjn, CFG)
        infer = velocity_infer(x, t, c, p32, adjn.astype(np.float32), CFG)
        assert infer.dtype == np.float32
        scale = np.abs(graph.data).max()
        np.testing.assert_allclose(infer, graph.data, atol=1e-4 * scale)

    @pytest.mark.parametrize("dtype", [np.float64, np.float32])
    def test_batch_decomposition_is_bitwise_exact(self, dtype):
        params = init_params(CFG)
        adjn = normalize_adjacency(human17()).astype(dtype)
        p = {k: v.astype(dtype) for k, v in params.items()}
        x, t, c = random_inputs(8, 17, seed=13)
        full = velocity_infer(x, t, c, p, adjn, CFG)
        rows = np.stack([velocity_infer(x[i:i + 1], t[i:i + 1], c[i:i + 1],
                                        p, adjn, CFG)[0]
                         for i in range(8)])
        np.testing.assert_array_equal(full, rows)

    def test_shared_condition_matches_repeated(self):
        params = init_params(CFG)
        adjn = normalize_adjacency(human17())
        rng = np.random.default_rng(14)
        x = rng.standard_normal((5, 17, 3))
        t = np.full(5, 0.25)
        cond = rng.standard_normal((1, 17, 2))
        shared = velocity_infer(x, t, cond, params, adjn, CFG)
        tiled = velocity_infer(x, t, np.repeat(cond, 5, axis=0), params,
                               adjn, CFG)
        np.testing.assert_array_equal(shared, tiled)

    def test_nonfinite_activation_raises(self):
        params = init_params(CFG)
        params = {k: v * 1e150 if k.endswith(".w1") else v
                  for k, v in params.items()}
        adjn = normalize_adjacency(human17())
        x, t, c = random_inputs(2, 17)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(FloatingPointError, match="block"):
                velocity_infer(x * 1e150, t, c * 1e150, params, adjn, CFG)
