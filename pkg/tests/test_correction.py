"""Predictive correction: initial estimate, additive refinement, the
step budget, and error statistics."""

import numpy as np
import pytest

from lpcsm.numerics import Tensor, NumericsError, ParameterStore, grad_check
from lpcsm.correction import (
    predict_init, refine_step, run_refinement, error_stats,
)


def make_params(d, seed=0, zero=False):
    rng = np.random.default_rng(seed)
    params = ParameterStore()

    def mat(name, rows, cols):
        val = np.zeros((rows, cols)) if zero else rng.standard_normal((rows, cols)) / np.sqrt(rows)
        params.add(name, val)

    mat("pred.w1", 2 * d, d); params.add("pred.b1", np.zeros(d))
    mat("pred.w2", d, d); params.add("pred.b2", np.zeros(d))
    mat("refine.w1", 3 * d, d); params.add("refine.b1", np.zeros(d))
    mat("refine.w2", d, d); params.add("refine.b2", np.zeros(d))
    return params


def mlp(x, params, prefix):
    h = np.tanh(x @ params[prefix + "w1"].data + params[prefix + "b1"].data)
    return h @ params[prefix + "w2"].data + params[prefix + "b2"].data


class TestPredictInit:
    def test_zero_weights_zero_estimate(self):
        d = 4
        params = make_params(d, zero=True)
        rng = np.random.default_rng(1)
        state = predict_init(Tensor(rng.standard_normal(d)),
                             Tensor(rng.standard_normal(d)), params)
        assert np.array_equal(state.estimate.data, np.zeros(d))
        assert state.step == 0

    def test_duplicated_input(self):
        d = 4
        params = make_params(d, seed=2)
        a = np.random.default_rng(3).standard_normal(d)
        state = predict_init(Tensor(a), Tensor(a), params)
        expect = mlp(np.concatenate([a, a]), params, "pred.")
        assert np.max(np.abs(state.estimate.data - expect)) < 1e-12

    def test_width_mismatch(self):
        params = make_params(4)
        with pytest.raises(NumericsError):
            predict_init(Tensor(np.zeros(4)), Tensor(np.zeros(3)), params)

    def test_grad_check(self):
        d = 4
        params = make_params(d, seed=4)
        rng = np.random.default_rng(5)
        a, r = rng.standard_normal(d), rng.standard_normal(d)

        def loss(p):
            est = predict_init(Tensor(a), Tensor(r), p).estimate
            return (est * est).sum()

        assert grad_check(loss, params).passed


class TestRefineStep:
    def test_zero_refine_keeps_estimate(self):
        d = 4
        params = make_params(d, seed=6)
        for name in ("refine.w1", "refine.w2"):
            params[name].data = np.zeros_like(params[name].data)
        rng = np.random.default_rng(7)
        a, r, h = (Tensor(rng.standard_normal(d)) for _ in range(3))
        s0 = predict_init(a, r, params)
        s1 = refine_step(a, r, h, s0, params, max_steps=2)
        assert np.array_equal(s1.estimate.data, s0.estimate.data)
        assert s1.step == 1

    def test_zero_error_slice(self):
        d = 4
        params = make_params(d, seed=8)
        rng = np.random.default_rng(9)
        a, r = (rng.standard_normal(d) for _ in range(2))
        s0 = predict_init(Tensor(a), Tensor(r), params)
        h = Tensor(s0.estimate.data.copy())  # estimate already equals h
        s1 = refine_step(Tensor(a), Tensor(r), h, s0, params, max_steps=1)
        delta = mlp(np.concatenate([a, r, np.zeros(d)]), params, "refine.")
        assert np.max(np.abs(s1.estimate.data - (s0.estimate.data + delta))) < 1e-12

    def test_budget_exhausted(self):
        d = 4
        params = make_params(d, seed=10)
        rng = np.random.default_rng(11)
        a, r, h = (Tensor(rng.standard_normal(d)) for _ in range(3))
        state = refine_step(a, r, h, predict_init(a, r, params), params, 1)
        with pytest.raises(NumericsError):
            refine_step(a, r, h, state, params, max_steps=1)

    def test_manual_unroll_oracle(self):
        d = 5
        params = make_params(d, seed=12)
        rng = np.random.default_rng(13)
        a, r, h = (rng.standard_normal(d) for _ in range(3))
        state = run_refinement(Tensor(a), Tensor(r), Tensor(h), params, steps=2)
        est = mlp(np.concatenate([a, r]), params, "pred.")
        for _ in range(2):
            est = est + mlp(np.concatenate([a, r, h - est]), params, "refine.")
        assert np.max(np.abs(state.estimate.data - est)) < 1e-12
        assert np.max(np.abs(state.last_error.data - (h - est))) < 1e-12

    def test_grad_through_unroll(self):
        d = 4
        params = make_params(d, seed=14)
        rng = np.random.default_rng(15)
        a, r, h = (rng.standard_normal(d) for _ in range(3))

        def loss(p):
            state = run_refinement(Tensor(a), Tensor(r), Tensor(h), p, steps=2)
            e = state.last_error
            return (e * e).sum()

        assert grad_check(loss, params, sample=8).passed


class TestErrorStats:
    def test_perfect_prediction(self):
        h = Tensor(np.ones((3, 4)))
        stats = error_stats(h, Tensor(np.ones((3, 4))))
        assert np.array_equal(stats.per_token_error_norm.data, np.zeros(3))
        assert stats.mean_error == 0.0

    def test_three_four_five(self):
        h = Tensor(np.array([[3.0, 4.0]]))
        stats = error_stats(h, Tensor(np.zeros((1, 2))))
        assert abs(stats.per_token_error_norm.data[0] - 5.0) < 1e-14

    def test_direct_norms(self):
        rng = np.random.default_rng(16)
        h = rng.standard_normal((6, 5))
        est = rng.standard_normal((6, 5))
        stats = error_stats(Tensor(h), Tensor(est))
        expect = np.linalg.norm(h - est, axis=1)
        assert np.max(np.abs(stats.per_token_error_norm.data - expect)) < 1e-12
        assert abs(stats.mean_error - expect.mean()) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(NumericsError):
            error_stats(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
