import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wolearn import dgp
from wolearn.core import HistoryView, InterventionPlan, always_treat, never_treat
from wolearn.dgp import (
    ConfigError,
    DgpConfig,
    HorizonError,
    State,
    _gauss_exp_moment,
    conditional_rollout,
    exact_cate,
    ground_truth_cate,
    oracle_nuisances,
    outcome_mean,
    propensity_logit,
    sigmoid,
    simulate,
)
from wolearn.dgp import test_set_truth as truth_for_test_set


class TestConfig:
    def test_family_defaults(self):
        assert DgpConfig.make("gamma").T == 5 and DgpConfig.make("gamma").d_x == 1
        assert DgpConfig.make("pi").T == 15
        assert DgpConfig.make("mu").d_x == 5 and DgpConfig.make("mu").T == 15
        assert DgpConfig.make("n").T == 5 and DgpConfig.make("n").d_x == 5

    def test_overrides_and_roundtrip(self):
        cfg = DgpConfig.make("gamma", gamma=6.5, n_train=2000)
        assert cfg.gamma == 6.5 and cfg.n_train == 2000
        assert DgpConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            DgpConfig.make("nope")

    def test_eval_anchor(self):
        assert DgpConfig.make("gamma", tau=1).eval_anchor == 3
        assert DgpConfig.make("pi", tau=7).eval_anchor == 7


class TestSimulate:
    def test_shapes_and_determinism(self):
        cfg = DgpConfig.make("gamma", n_train=50)
        d1 = simulate(cfg, seed=3)
        d2 = simulate(cfg, seed=3)
        assert d1.x.shape == (50, 5, 1)
        np.testing.assert_array_equal(d1.x, d2.x)
        np.testing.assert_array_equal(d1.a, d2.a)
        np.testing.assert_array_equal(d1.y, d2.y)
        d3 = simulate(cfg, seed=4)
        assert not np.array_equal(d1.y, d3.y)
        assert d1.meta["generator"] == "gamma" and d1.meta["seed"] == 3

    def test_covariate_marginals_stationary(self):
        # X_t = 0.5 X_{t-1} + eps with var(eps) = 0.75 keeps unit variance.
        cfg = DgpConfig.make("gamma", n_train=20000)
        data = simulate(cfg, seed=0)
        for t in range(cfg.T):
            assert abs(data.x[:, t, 0].std() - 1.0) < 0.03

    def test_covariates_autonomous(self):
        # Treatments never feed back into X: forcing different treatments
        # under common noise leaves the covariate path untouched.
        cfg = DgpConfig.make("gamma", n_train=10)
        data = simulate(cfg, seed=1)
        h = HistoryView(data.trajectory(0), 1)
        a = conditional_rollout(cfg, h, always_treat(1, 2), m=50, seed=9)
        b = conditional_rollout(cfg, h, never_treat(1, 2), m=50, seed=9)
        np.testing.assert_allclose(a["x"], b["x"])
        assert not np.allclose(a["y"], b["y"])

    def test_conditional_rollout_obeys_plan(self):
        cfg = DgpConfig.make("gamma", n_train=5)
        data = simulate(cfg, seed=2)
        h = HistoryView(data.trajectory(2), 2)
        out = conditional_rollout(cfg, h, InterventionPlan(2, (1, 0, 1)), m=20, seed=0)
        np.testing.assert_array_equal(out["a"], np.tile([1.0, 0.0, 1.0], (20, 1)))
        with pytest.raises(HorizonError):
            conditional_rollout(cfg, h, always_treat(2, 5), m=5)


class TestClosedForms:
    def test_gauss_exp_moment_against_quadrature(self):
        from numpy.polynomial.hermite import hermgauss

        nodes, weights = hermgauss(80)
        for mean, var in [(0.0, 0.75), (1.3, 0.5), (-2.0, 2.0)]:
            z = mean + math.sqrt(2.0 * var) * nodes
            num = (np.exp(-(z**2)) * weights).sum() / math.sqrt(math.pi)
            assert abs(_gauss_exp_moment(mean, var) - num) < 1e-12

    def test_exact_cate_at_origin(self):
        # gamma family, tau=1, X_t=0: CATE = 0.5 E[exp(-X'^2)] with
        # X' ~ N(0, 0.75), i.e. 0.5 / sqrt(2.5).
        cfg = DgpConfig.make("gamma")
        state = State(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros(1), np.zeros(1))
        val = exact_cate(cfg, state, always_treat(3, 1), never_treat(3, 1))
        np.testing.assert_allclose(val, 0.5 / math.sqrt(2.5))
        np.testing.assert_allclose(val, 0.31623, atol=5e-6)

    def test_exact_cate_agrees_with_monte_carlo(self):
        for kind, tau in [("gamma", 1), ("gamma", 2), ("pi", 3), ("mu", 1)]:
            cfg = DgpConfig.make(kind, n_train=5)
            data = simulate(cfg, seed=5)
            t = cfg.T - 1 - tau
            pa, pb = always_treat(t, tau), never_treat(t, tau)
            for i in range(3):
                h = HistoryView(data.trajectory(i), t)
                mc, se = ground_truth_cate(cfg, h, pa, pb, m=40000, seed=i)
                ex = exact_cate(cfg, State.from_history(h), pa, pb)
                assert abs(mc - float(ex[0])) < 4.0 * se + 1e-4, (kind, tau, i)

    def test_test_set_truth_uses_exact_form(self):
        cfg = DgpConfig.make("gamma", n_train=8)
        data = simulate(cfg, seed=6)
        t = cfg.eval_anchor
        truth = truth_for_test_set(cfg, data, t, always_treat(t, 1), never_treat(t, 1))
        ex = exact_cate(cfg, State.from_dataset(data, t), always_treat(t, 1), never_treat(t, 1))
        np.testing.assert_allclose(truth, ex)

    def test_test_set_truth_mc_fallback(self):
        # The n family has no closed form; MC truth must agree with the
        # per-history MC oracle.
        cfg = DgpConfig.make("n", n_train=3)
        data = simulate(cfg, seed=7)
        t = cfg.eval_anchor
        pa, pb = always_treat(t, 1), never_treat(t, 1)
        truth = truth_for_test_set(cfg, data, t, pa, pb, m=20000, seed=0)
        for i in range(3):
            mc, se = ground_truth_cate(cfg, HistoryView(data.trajectory(i), t), pa, pb,
                                       m=40000, seed=i)
            assert abs(truth[i] - mc) < 5.0 * se + 1e-3


class TestOracleNuisances:
    def _setup(self, kind="gamma", tau=1, n=4):
        cfg = DgpConfig.make(kind, n_train=n)
        data = simulate(cfg, seed=8)
        t = cfg.T - 1 - tau
        plan = always_treat(t, tau)
        return cfg, data, t, oracle_nuisances(cfg, plan, m=4000, seed=0)

    def test_propensity_closed_form(self):
        cfg, data, t, oracle = self._setup()
        st_ = State.from_dataset(data, t)
        p = oracle.propensity(t, st_.x, st_.y_prev, st_.a_prev)
        expect = sigmoid(propensity_logit(cfg, st_.x, st_.y_prev, st_.a_prev))
        np.testing.assert_allclose(p, expect)
        never = oracle_nuisances(cfg, never_treat(t, 1), m=100)
        np.testing.assert_allclose(never.propensity(t, st_.x, st_.y_prev, st_.a_prev), 1.0 - expect)

    def test_response_exact_vs_mc(self):
        for kind, tau in [("gamma", 1), ("pi", 2), ("mu", 1)]:
            cfg, data, t, oracle = self._setup(kind, tau)
            st_ = State.from_dataset(data, t)
            mc, se = oracle.response_mc(t, st_, m=20000)
            ex = oracle.response_exact(t, st_.x, x_prev=st_.x_prev)
            assert (np.abs(mc - ex) < 4.0 * se + 1e-3).all(), (kind, tau)

    def test_response_nested_mc_cross_check(self):
        cfg, data, t, oracle = self._setup("gamma", 1)
        st_ = State.from_dataset(data, t)
        nested, se = oracle.response_nested_mc(st_, m=20000)
        ex = oracle.response_exact(t, st_.x, x_prev=st_.x_prev)
        assert (np.abs(nested - ex) < 4.0 * se + 1e-3).all()

    def test_tail_weight_quadrature_vs_mc(self):
        cfg, data, t, oracle = self._setup("gamma", 1)
        st_ = State.from_dataset(data, t)
        quad = oracle.tail_weight(t, st_.x, st_.y_prev, st_.a_prev)
        mc = oracle._tail_weight_mc(t, st_.x, st_.y_prev, st_.a_prev, m=40000,
                                    x_prev=st_.x_prev)
        assert ((quad > 0) & (quad < 1)).all()
        np.testing.assert_allclose(quad, mc, atol=0.01)

    def test_tail_weight_terminal_step_is_one(self):
        cfg, data, t, oracle = self._setup("gamma", 1)
        st_ = State.from_dataset(data, t + 1)
        np.testing.assert_allclose(
            oracle.tail_weight(t + 1, st_.x, st_.y_prev, st_.a_prev), 1.0)

    def test_omega_bounded(self):
        cfg, data, t, oracle = self._setup("mu", 1)
        st_ = State.from_dataset(data, t)
        om = oracle.omega(t, st_.x, st_.y_prev, st_.a_prev, m=2000, x_prev=st_.x_prev)
        assert ((om >= 0) & (om <= 1)).all()


class TestOutcomeFunctions:
    @settings(max_examples=30, deadline=None)
    @given(a=st.sampled_from([0.0, 1.0]), x=st.floats(-3, 3))
    def test_gamma_outcome_antisymmetric_in_arm(self, a, x):
        cfg = DgpConfig.make("gamma")
        xv = np.array([[x]])
        m1 = outcome_mean(cfg, xv, None, a)
        m0 = outcome_mean(cfg, xv, None, 1.0 - a)
        np.testing.assert_allclose(m1, -m0, atol=1e-12)

    def test_mu_outcome_reads_lagged_covariate(self):
        cfg = DgpConfig.make("mu")
        x_t = np.random.default_rng(0).normal(size=(4, 5))
        xp1 = np.random.default_rng(1).normal(size=(4, 5))
        xp2 = np.random.default_rng(2).normal(size=(4, 5))
        assert not np.allclose(outcome_mean(cfg, x_t, xp1, 1.0),
                               outcome_mean(cfg, x_t, xp2, 1.0))
