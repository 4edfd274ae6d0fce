"""Loss functions and the Adam optimizer."""

import numpy as np
import pytest

from pepclf import nn
from pepclf.nn.gradcheck import max_relative_error
from pepclf.nn.losses import EPS


class TestBinaryCrossEntropy:
    def test_perfect_prediction(self):
        loss, _ = nn.loss(np.array([1.0, 0.0]), np.array([1.0, 0.0]), "binary_ce")
        assert loss <= -np.log(1.0 - EPS) + 1e-12

    def test_half_probability(self):
        loss, _ = nn.loss(np.array([0.5]), np.array([1.0]), "binary_ce")
        np.testing.assert_allclose(loss, np.log(2.0), rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(nn.ShapeError):
            nn.loss(np.zeros((3, 1)), np.zeros(3), "binary_ce")

    def test_gradient(self):
        rng = np.random.default_rng(0)
        pred = rng.uniform(0.05, 0.95, (8, 1))
        target = rng.integers(0, 2, (8, 1)).astype(float)
        _, grad = nn.loss(pred, target, "binary_ce")
        err = max_relative_error(
            lambda: nn.loss(pred, target, "binary_ce")[0], [pred], [grad], eps=1e-6
        )
        assert err < 1e-6


class TestCategoricalCrossEntropy:
    def test_perfect_prediction(self):
        pred = np.array([[1.0, 0.0], [0.0, 1.0]])
        target = pred.copy()
        loss, _ = nn.loss(pred, target, "categorical_ce")
        assert loss <= -np.log(1.0 - EPS) + 1e-12

    def test_uniform_prediction(self):
        pred = np.full((4, 2), 0.5)
        target = np.zeros((4, 2))
        target[:, 1] = 1.0
        loss, _ = nn.loss(pred, target, "categorical_ce")
        np.testing.assert_allclose(loss, np.log(2.0), rtol=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(1)
        logits = rng.standard_normal((6, 3))
        pred = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
        target = np.zeros((6, 3))
        target[np.arange(6), rng.integers(0, 3, 6)] = 1.0
        _, grad = nn.loss(pred, target, "categorical_ce")
        err = max_relative_error(
            lambda: nn.loss(pred, target, "categorical_ce")[0],
            [pred], [grad], eps=1e-6,
        )
        assert err < 1e-6

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown loss"):
            nn.loss(np.zeros(2), np.zeros(2), "hinge")


class TestAdam:
    def test_zero_gradient_fixed_point(self):
        p = nn.Parameter(np.array([1.0, -2.0]), "p")
        opt = nn.Adam([p], lr=0.1)
        opt.step()
        np.testing.assert_array_equal(p.value, [1.0, -2.0])

    def test_single_step_closed_form(self):
        p = nn.Parameter(np.array([0.0]), "p")
        opt = nn.Adam([p], lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
        p.grad[...] = 1.0
        opt.step()
        # bias correction makes m_hat = v_hat = 1 on the first step
        expected = -0.01 * 1.0 / (1.0 + 1e-8)
        np.testing.assert_allclose(p.value, [expected], rtol=1e-12)
        assert opt.t == 1

    def test_grads_zeroed_after_step(self):
        p = nn.Parameter(np.zeros(3), "p")
        opt = nn.Adam([p], lr=0.01)
        p.grad[...] = 5.0
        opt.step()
        np.testing.assert_array_equal(p.grad, 0.0)

    def test_quadratic_bowl_convergence(self):
        p = nn.Parameter(np.array([3.0]), "p")
        opt = nn.Adam([p], lr=0.05)
        for _ in range(500):
            p.grad[...] = 2.0 * p.value  # d/dx of x^2
            opt.step()
        assert abs(p.value[0]) < 1e-2

    def test_moment_shapes_match(self):
        params = [nn.Parameter(np.zeros((2, 3)), "a"), nn.Parameter(np.zeros(4), "b")]
        opt = nn.Adam(params)
        for p, m, v in zip(params, opt.m, opt.v):
            assert m.shape == p.value.shape
            assert v.shape == p.value.shape
