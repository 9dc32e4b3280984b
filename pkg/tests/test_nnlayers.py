"""Layer forward/backward passes, closed-form cell cases and gradient checks."""

import math

import numpy as np
import pytest

from gemcap.error_handler import InvalidShape, ShapeMismatch, VocabOverflow
from gemcap.nnlayers import (
    GRU_PARAMS,
    LAYER_PROBES,
    LSTM_PARAMS,
    LayerParams,
    conv2d,
    dense,
    embedding,
    grad_check,
    gru_cell,
    init_conv,
    init_dense,
    init_embedding,
    init_gru,
    init_lstm,
    lstm_cell,
    maxpool2,
    maxpool2_backward,
    relu,
    relu_backward,
    run_layer_checks,
    softmax,
    softmax_xent,
)
from gemcap.tensor import Rng


def _zero(params: LayerParams) -> LayerParams:
    for _, param in params.items():
        param.value[...] = 0.0
    return params


class TestLayerParams:
    def test_declaration_order(self):
        params = init_gru(3, 4, Rng(0))
        assert list(params) == list(GRU_PARAMS)
        assert list(init_lstm(3, 4, Rng(0))) == list(LSTM_PARAMS)

    def test_duplicate_name(self):
        params = LayerParams()
        params.add("W", np.zeros(2))
        with pytest.raises(ValueError):
            params.add("W", np.zeros(2))

    def test_zero_grad(self):
        params = init_dense(2, 2, Rng(0))
        params["W"].grad += 1.0
        params.zero_grad()
        assert not params["W"].grad.any()


class TestDense:
    def test_affine(self):
        params = init_dense(2, 1, Rng(0))
        params["W"].value[...] = [[2.0], [3.0]]
        params["b"].value[...] = [1.0]
        y, _ = dense(np.array([[1.0, 1.0]]), params)
        np.testing.assert_array_equal(y, [[6.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            dense(np.zeros((1, 3)), init_dense(2, 1, Rng(0)))


class TestConv2d:
    def test_same_padding_keeps_spatial_dims(self):
        y, _ = conv2d(np.ones((2, 3, 8, 8)), init_conv(3, 5, Rng(0)))
        assert y.shape == (2, 5, 8, 8)

    def test_identity_kernel(self):
        params = _zero(init_conv(1, 1, Rng(0)))
        params["W"].value[0, 0, 1, 1] = 1.0
        x = Rng(1).normal(0.0, 1.0, (1, 1, 4, 4))
        y, _ = conv2d(x, params)
        np.testing.assert_allclose(y, x)

    def test_cross_correlation_orientation(self):
        params = _zero(init_conv(1, 1, Rng(0)))
        # tap (0, 1) reads the pixel above
        params["W"].value[0, 0, 0, 1] = 1.0
        x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
        y, _ = conv2d(x, params)
        np.testing.assert_array_equal(y[0, 0, 1:, :], x[0, 0, :-1, :])
        np.testing.assert_array_equal(y[0, 0, 0, :], 0.0)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeMismatch):
            conv2d(np.zeros((1, 2, 4, 4)), init_conv(3, 1, Rng(0)))


class TestMaxpool:
    def test_values(self):
        x = np.array([[1.0, 2.0], [4.0, 3.0]]).reshape(1, 1, 2, 2)
        y, cache = maxpool2(x)
        assert y.item() == 4.0
        dx = maxpool2_backward(np.ones((1, 1, 1, 1)), cache)
        np.testing.assert_array_equal(dx.reshape(2, 2), [[0.0, 0.0], [1.0, 0.0]])

    def test_tie_routes_to_lowest_index(self):
        y, cache = maxpool2(np.full((1, 1, 2, 2), 5.0))
        dx = maxpool2_backward(np.ones_like(y), cache)
        np.testing.assert_array_equal(dx.reshape(2, 2), [[1.0, 0.0], [0.0, 0.0]])

    def test_odd_dims(self):
        with pytest.raises(InvalidShape):
            maxpool2(np.zeros((1, 1, 3, 4)))


class TestRelu:
    def test_subgradient_at_zero(self):
        y, mask = relu(np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(y, [0.0, 0.0, 2.0])
        np.testing.assert_array_equal(relu_backward(np.ones(3), mask), [0.0, 0.0, 1.0])


class TestEmbedding:
    def test_lookup(self):
        params = init_embedding(5, 3, Rng(0))
        y, _ = embedding(np.array([4, 0]), params)
        np.testing.assert_array_equal(y, params["E"].value[[4, 0]])

    def test_out_of_range(self):
        with pytest.raises(VocabOverflow):
            embedding(np.array([5]), init_embedding(5, 3, Rng(0)))


class TestCells:
    def test_gru_zero_weights(self):
        params = _zero(init_gru(2, 1, Rng(0)))
        h_new, _ = gru_cell(np.zeros((1, 2)), np.array([[0.4]]), params)
        assert abs(h_new.item() - 0.2) <= 1e-12

    def test_lstm_zero_weights(self):
        params = _zero(init_lstm(2, 1, Rng(0)))
        state = (np.zeros((1, 1)), np.array([[0.4]]))
        (h_new, c_new), _ = lstm_cell(np.zeros((1, 2)), state, params)
        assert abs(c_new.item() - 0.2) <= 1e-12
        assert abs(h_new.item() - 0.5 * math.tanh(0.2)) <= 1e-12
        assert abs(h_new.item() - 0.098688) < 1e-6

    def test_gru_state_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            gru_cell(np.zeros((1, 2)), np.zeros((1, 3)), init_gru(2, 4, Rng(0)))


class TestSoftmaxXent:
    def test_uniform_logits(self):
        loss, dlogits = softmax_xent(np.zeros((2, 4)), np.array([0, 3]))
        assert loss == pytest.approx(math.log(4))
        np.testing.assert_allclose(dlogits.sum(axis=1), 0.0, atol=1e-15)

    def test_mask_excludes_rows(self):
        logits = Rng(0).normal(0.0, 1.0, (3, 4))
        targets = np.array([1, 2, 3])
        full, _ = softmax_xent(logits[:2], targets[:2])
        masked, grad = softmax_xent(logits, targets, np.array([1.0, 1.0, 0.0]))
        assert masked == pytest.approx(full)
        assert not grad[2].any()

    def test_target_out_of_range(self):
        with pytest.raises(VocabOverflow):
            softmax_xent(np.zeros((1, 3)), np.array([3]))

    def test_negative_target_reports_its_id(self):
        with pytest.raises(VocabOverflow) as exc:
            softmax_xent(np.zeros((2, 3)), np.array([-2, 1]))
        assert exc.value.details["token_id"] == -2

    def test_softmax_is_shift_invariant(self):
        x = np.array([[1.0, 2.0, 3.0]])
        np.testing.assert_allclose(softmax(x), softmax(x + 100.0))


class TestGradCheck:
    @pytest.mark.parametrize("name", sorted(LAYER_PROBES))
    def test_layer_passes(self, name):
        report = run_layer_checks(seed=0, probes=100, names=[name])[name]
        assert report.passed, report.failures[:3]
        assert report.max_rel_err <= 1e-4

    def test_detects_wrong_gradient(self):
        x = np.array([1.0, 2.0, 3.0])

        def objective():
            # true gradient is 2x
            return float(np.sum(x**2)), {"x": 3.0 * x}

        report = grad_check(objective, {"x": x}, eps=1e-5)
        assert not report.passed
        assert report.max_rel_err > 0.1

    def test_probe_limit(self):
        x = np.arange(20, dtype=float)

        def objective():
            return float(np.sum(x**2)), {"x": 2.0 * x}

        report = grad_check(objective, {"x": x}, eps=1e-5, probes=7, rng=Rng(1))
        assert report.probes == 7
        assert report.passed
