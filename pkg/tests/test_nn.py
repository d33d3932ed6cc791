import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import dense_graphconv, naive_matmul, scalar_lstm
from stargraph import nn
from stargraph.graph import GraphSpec, GraphType, adjacency_matrix, build_dstar, build_frame_graph
from stargraph.nn.gradcheck import passes
from stargraph.pointcloud import PointFrame

TOL = 1e-4


def random_graph(rng, kind, n):
    return build_frame_graph(PointFrame.from_array(rng.uniform(0, 1.5, (n, 3))), GraphSpec(kind, k=2, r=0.8))


class TestLinear:
    def test_identity(self, rng):
        x = rng.normal(size=(4, 3))
        out, _ = nn.linear_forward(x, np.eye(3), np.zeros(3))
        np.testing.assert_array_equal(out, x)

    def test_hand_example(self):
        out, _ = nn.linear_forward(np.array([[1.0, 2.0]]), np.array([[1.0, 0], [0, 1], [1, 1]]), np.zeros(3))
        np.testing.assert_array_equal(out, [[1, 2, 3]])

    @given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
    def test_matches_naive_matmul(self, n, fi, fo, seed):
        r = np.random.default_rng(seed)
        x, W, b = r.normal(size=(n, fi)), r.normal(size=(fo, fi)), r.normal(size=fo)
        out, _ = nn.linear_forward(x, W, b)
        ref = np.array(naive_matmul(x.tolist(), W.T.tolist())) + b
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            nn.linear_forward(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(4))

    def test_grad_check_exact_to_roundoff(self, rng):
        x, W, b = rng.normal(size=(5, 4)), rng.normal(size=(3, 4)), rng.normal(size=3)
        R = rng.normal(size=(5, 3))
        out, cache = nn.linear_forward(x, W, b)
        dx, dW, db = nn.linear_backward(R, cache)
        f = lambda: float((nn.linear_forward(x, W, b)[0] * R).sum())
        report = nn.grad_check(f, {"x": x, "W": W, "b": b}, {"x": dx, "W": dW, "b": db})
        assert passes(report, 1e-6), report


class TestGraphConv:
    @pytest.mark.parametrize("kind", list(GraphType))
    def test_matches_dense_oracle(self, rng, kind):
        for n in (0, 1, 4, 17):
            g = random_graph(rng, kind, n)
            H = rng.normal(size=(g.num_nodes, 5))
            W1, W2 = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
            for act in (True, False):
                out, _ = nn.graphconv_forward(H, g, W1, W2, act)
                ref = dense_graphconv(H, adjacency_matrix(g), W1, W2, act)
                np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)

    def test_accepts_dense_and_sparse_adjacency(self, rng):
        g = random_graph(rng, GraphType.KNN, 6)
        H, W1, W2 = rng.normal(size=(6, 2)), rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        a, _ = nn.graphconv_forward(H, g, W1, W2)
        b, _ = nn.graphconv_forward(H, adjacency_matrix(g), W1, W2)
        c, _ = nn.graphconv_forward(H, g.sparse_adjacency(), W1, W2)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a, c)

    def test_zero_upstream_gives_zero_gradients(self, rng):
        g = random_graph(rng, GraphType.FC, 5)
        H, W1, W2 = rng.normal(size=(5, 3)), rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
        out, cache = nn.graphconv_forward(H, g, W1, W2)
        for grad in nn.graphconv_backward(np.zeros_like(out), cache):
            assert not grad.any()

    def test_single_node_is_sigmoid_linear(self, rng):
        g = build_frame_graph(PointFrame.from_array(rng.normal(size=(1, 3))), GraphSpec(GraphType.EMPTY))
        H, W1, W2 = rng.normal(size=(1, 3)), rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
        R = rng.normal(size=(1, 2))
        out, cache = nn.graphconv_forward(H, g, W1, W2)
        dH, dW1, dW2 = nn.graphconv_backward(R, cache)
        s = nn.sigmoid(H @ (W1 + W2).T)
        dz = R * s * (1 - s)
        np.testing.assert_allclose(out, s)
        np.testing.assert_allclose(dH, dz @ (W1 + W2))
        np.testing.assert_allclose(dW1, dz.T @ H)
        np.testing.assert_allclose(dW2, dz.T @ H)

    @pytest.mark.parametrize("kind", list(GraphType))
    @pytest.mark.parametrize("activate", [True, False])
    def test_finite_differences(self, rng, kind, activate):
        g = random_graph(rng, kind, 5)
        H = rng.normal(size=(g.num_nodes, 3))
        W1, W2 = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
        R = rng.normal(size=(g.num_nodes, 2))
        _, cache = nn.graphconv_forward(H, g, W1, W2, activate)
        dH, dW1, dW2 = nn.graphconv_backward(R, cache)
        f = lambda: float((nn.graphconv_forward(H, g, W1, W2, activate)[0] * R).sum())
        report = nn.grad_check(f, {"H": H, "W1": W1, "W2": W2}, {"H": dH, "W1": dW1, "W2": dW2})
        assert passes(report, TOL), report

    def test_dstar_four_nodes(self, rng):
        g = build_dstar(PointFrame.from_array(rng.normal(size=(3, 3))))
        H, W1, W2 = rng.normal(size=(4, 3)), rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
        R = rng.normal(size=(4, 2))
        _, cache = nn.graphconv_forward(H, g, W1, W2)
        dH, dW1, dW2 = nn.graphconv_backward(R, cache)
        f = lambda: float((nn.graphconv_forward(H, g, W1, W2)[0] * R).sum())
        assert passes(nn.grad_check(f, {"H": H, "W1": W1, "W2": W2}, {"H": dH, "W1": dW1, "W2": dW2}), TOL)

    def test_node_count_mismatch(self, rng):
        g = random_graph(rng, GraphType.FC, 3)
        with pytest.raises(ValueError):
            nn.graphconv_forward(np.zeros((4, 2)), g, np.zeros((2, 2)), np.zeros((2, 2)))


class TestPool:
    def test_examples(self):
        np.testing.assert_array_equal(nn.global_mean_pool(np.array([[1.0, 3], [3, 5]])), [[2, 4]])
        np.testing.assert_array_equal(nn.global_mean_pool(np.array([[1.0, 7]])), [[1, 7]])
        np.testing.assert_array_equal(nn.global_mean_pool(np.zeros((0, 6))), np.zeros((1, 6)))

    @given(st.integers(1, 12), st.integers(0, 2**31))
    def test_permutation_invariant(self, n, seed):
        r = np.random.default_rng(seed)
        H = r.normal(size=(n, 4))
        np.testing.assert_allclose(nn.global_mean_pool(H), nn.global_mean_pool(H[r.permutation(n)]), atol=1e-15)

    def test_segment_matrix_matches_blockwise_mean(self, rng):
        counts = [3, 0, 1, 5]
        H = rng.normal(size=(sum(counts), 2))
        pooled = nn.segment_pool_matrix(counts) @ H
        blocks = np.split(H, np.cumsum(counts)[:-1])
        ref = np.vstack([nn.global_mean_pool(b) for b in blocks])
        np.testing.assert_allclose(pooled, ref, atol=1e-15)


class TestDropout:
    def test_rate_zero_and_inference_are_identity(self, rng):
        H = rng.normal(size=(5, 5))
        assert nn.dropout_forward(H, 0.0, True, rng)[0] is H
        assert nn.dropout_forward(H, 0.9, False)[0] is H

    def test_statistics(self):
        H = np.ones((100, 1000))
        out, mask = nn.dropout_forward(H, 0.3, True, np.random.default_rng(7))
        assert abs((out != 0).mean() - 0.7) < 0.01
        assert abs(out.mean() - 1.0) < 0.02

    def test_backward_uses_mask(self, rng):
        H = rng.normal(size=(4, 4))
        out, mask = nn.dropout_forward(H, 0.5, True, rng)
        np.testing.assert_array_equal(nn.dropout_backward(np.ones_like(H), mask), mask)

    def test_bad_rate(self, rng):
        with pytest.raises(ValueError):
            nn.dropout_forward(np.ones(3), 1.0, True, rng)


def lstm_weights(rng, f_in, h, scale=0.5):
    return rng.normal(0, scale, (4 * h, f_in)), rng.normal(0, scale, (4 * h, h)), rng.normal(0, scale, 4 * h)


def bilstm_params(rng, f_in, h, layers=2):
    return {k: rng.normal(0, 0.5, s) for k, s in nn.lstm_param_shapes(f_in, h, layers).items()}


class TestLstm:
    def test_zero_weights_zero_output(self, rng):
        X = rng.normal(size=(6, 3))
        hs, _ = nn.lstm_forward(X, np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))
        assert not hs.any()

    @pytest.mark.parametrize("reverse", [False, True])
    def test_matches_scalar_reference(self, rng, reverse):
        X = rng.normal(size=(5, 3))
        Wx, Wh, b = lstm_weights(rng, 3, 4)
        hs, _ = nn.lstm_forward(X, Wx, Wh, b, reverse)
        np.testing.assert_allclose(hs, scalar_lstm(X, Wx, Wh, b, reverse), rtol=1e-12, atol=1e-13)

    def test_single_step_both_directions_agree(self, rng):
        X = rng.normal(size=(1, 3))
        Wx, Wh, b = lstm_weights(rng, 3, 4)
        f, _ = nn.lstm_forward(X, Wx, Wh, b, False)
        r, _ = nn.lstm_forward(X, Wx, Wh, b, True)
        np.testing.assert_array_equal(f, r)
        g = nn.sigmoid(X @ Wx.T + b)[0]
        c = g[:4] * np.tanh((X @ Wx.T + b)[0, 8:12])
        np.testing.assert_allclose(f[0], g[12:] * np.tanh(c), atol=1e-15)

    def test_zero_upstream_gives_zero_gradients(self, rng):
        X = rng.normal(size=(4, 3))
        hs, cache = nn.lstm_forward(X, *lstm_weights(rng, 3, 2))
        for grad in nn.lstm_backward(np.zeros_like(hs), cache):
            assert not grad.any()

    @pytest.mark.parametrize("reverse", [False, True])
    @pytest.mark.parametrize("N", [1, 5])
    def test_finite_differences(self, rng, reverse, N):
        X = rng.normal(size=(N, 3))
        Wx, Wh, b = lstm_weights(rng, 3, 4)
        R = rng.normal(size=(N, 4))
        _, cache = nn.lstm_forward(X, Wx, Wh, b, reverse)
        dX, dWx, dWh, db = nn.lstm_backward(R, cache)
        f = lambda: float((nn.lstm_forward(X, Wx, Wh, b, reverse)[0] * R).sum())
        report = nn.grad_check(f, {"X": X, "Wx": Wx, "Wh": Wh, "b": b}, {"X": dX, "Wx": dWx, "Wh": dWh, "b": db})
        assert passes(report, TOL), report


class TestBiLstm:
    def test_output_is_last_forward_and_first_backward(self, rng):
        V = rng.normal(size=(4, 3))
        p = bilstm_params(rng, 3, 2, layers=1)
        out, _ = nn.bilstm_forward(V, p, layers=1)
        f, _ = nn.lstm_forward(V, p["l0.fwd.Wx"], p["l0.fwd.Wh"], p["l0.fwd.b"])
        b, _ = nn.lstm_forward(V, p["l0.bwd.Wx"], p["l0.bwd.Wh"], p["l0.bwd.b"], reverse=True)
        np.testing.assert_array_equal(out[0], np.concatenate((f[-1], b[0])))

    def test_two_layers_stack(self, rng):
        V = rng.normal(size=(3, 3))
        p = bilstm_params(rng, 3, 2)
        out, _ = nn.bilstm_forward(V, p)
        x = V
        for layer in range(2):
            f, _ = nn.lstm_forward(x, *(p[f"l{layer}.fwd.{k}"] for k in ("Wx", "Wh", "b")))
            b, _ = nn.lstm_forward(x, *(p[f"l{layer}.bwd.{k}"] for k in ("Wx", "Wh", "b")), reverse=True)
            x = np.hstack([f, b])
        np.testing.assert_array_equal(out[0], np.concatenate((x[-1, :2], x[0, 2:])))

    def test_empty_input_rejected(self, rng):
        with pytest.raises(ValueError):
            nn.bilstm_forward(np.zeros((0, 3)), bilstm_params(rng, 3, 2))

    @pytest.mark.parametrize("N", [1, 3])
    def test_finite_differences(self, rng, N):
        V = rng.normal(size=(N, 3))
        p = bilstm_params(rng, 3, 2)
        R = rng.normal(size=(1, 4))
        _, cache = nn.bilstm_forward(V, p)
        dV, grads = nn.bilstm_backward(R, cache)
        f = lambda: float((nn.bilstm_forward(V, p)[0] * R).sum())
        report = nn.grad_check(f, {"V": V, **p}, {"V": dV, **grads})
        assert passes(report, TOL), report


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss, _ = nn.softmax_cross_entropy(np.zeros(13), 4)
        assert abs(loss - math.log(13)) < 1e-12

    def test_no_overflow(self):
        loss, grad = nn.softmax_cross_entropy(np.array([1000.0, 0.0]), 0)
        assert 0 <= loss < 1e-12 and np.all(np.isfinite(grad))
        loss, _ = nn.softmax_cross_entropy(np.array([1000.0, 0.0]), 1)
        assert loss == pytest.approx(1000.0)

    def test_finite_differences(self, rng):
        z = rng.normal(size=6)
        _, grad = nn.softmax_cross_entropy(z, 2)
        f = lambda: nn.softmax_cross_entropy(z, 2)[0]
        assert passes(nn.grad_check(f, {"z": z}, {"z": grad}), TOL)

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=10), st.floats(-100, 100))
    def test_shift_invariance(self, logits, c):
        z = np.array(logits)
        np.testing.assert_allclose(nn.softmax(z + c), nn.softmax(z), atol=1e-12)
        assert nn.softmax(z).sum() == pytest.approx(1.0)

    def test_bad_label(self):
        with pytest.raises(ValueError):
            nn.softmax_cross_entropy(np.zeros(3), 3)


class TestAdam:
    def test_zero_gradient(self):
        p = {"w": np.array([1.0, -2.0])}
        state = nn.adam_step(p, {"w": np.zeros(2)}, nn.AdamState())
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])
        assert state.t == 1

    def test_first_step_moves_by_lr(self, rng):
        g = rng.normal(size=10)
        p = {"w": np.zeros(10)}
        nn.adam_step(p, {"w": g}, nn.AdamState(), lr=1e-3)
        np.testing.assert_allclose(np.abs(p["w"]), 1e-3, rtol=1e-6)
        np.testing.assert_array_equal(np.sign(p["w"]), -np.sign(g))

    def test_three_step_trace(self):
        # g = 1 each step: m = 0.1, 0.19, 0.271; v = 0.001, 0.001999, 0.002997001
        p = {"w": np.array([0.0])}
        state = nn.AdamState()
        ms, vs = [], []
        for _ in range(3):
            nn.adam_step(p, {"w": np.array([1.0])}, state, lr=1e-3)
            ms.append(state.m["w"][0])
            vs.append(state.v["w"][0])
        np.testing.assert_allclose(ms, [0.1, 0.19, 0.271], rtol=1e-14)
        np.testing.assert_allclose(vs, [0.001, 0.001999, 0.002997001], rtol=1e-14)
        # both bias-corrected moments equal 1 at every step
        assert p["w"][0] == pytest.approx(-3e-3 / (1 + 1e-8), rel=1e-12)
        assert state.t == 3

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            nn.adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, nn.AdamState())


class TestGradCheck:
    def test_relative_error_floor(self):
        assert nn.relative_error(np.array([0.0]), np.array([1e-9])) == pytest.approx(1e-3)
        assert nn.relative_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)

    def test_numerical_gradient_restores_input(self, rng):
        x = rng.normal(size=4)
        before = x.copy()
        g = nn.numerical_gradient(lambda: float((x ** 2).sum()), x)
        np.testing.assert_array_equal(x, before)
        np.testing.assert_allclose(g, 2 * x, rtol=1e-8)
