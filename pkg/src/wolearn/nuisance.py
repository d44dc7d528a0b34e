"""Nuisance estimation for sequential treatment-effect learners.

For an intervention plan a_{t:t+tau} three nuisance families are fitted on
the nuisance split and later evaluated on held-out data:

  propensities  pi_j(H_j) = P(A_j = a_j | H_j), one classifier per time j
                (fit for the event A_j = 1; arms share the classifier);
  responses     mu_j(H_j) = E[Y_{t+tau} | H_j, A_{j:t+tau} = a_{j:t+tau}],
                fitted backward: the last regression targets the realized
                outcome on the subsample following the plan at t+tau, and
                each earlier stage regresses the next stage's prediction,
                filtering on A_j = a_j;
  tail weights  W_{j+1}(H_j) = E[prod_{k=j+1}^{t+tau} pi_k(H_k) | H_j],
                fitted by regressing realized products of fitted
                propensities on history features (no treatment filtering:
                the expectation runs over the observational law). W at the
                final stage is identically 1.

Propensities are floored at evaluation time (never during fitting) and the
overlap weight is omega_t = pi_t * W_{t+1}.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import backbone
from .core import Dataset, InterventionPlan, ParameterError, feature_matrix

PROPENSITY_FLOOR = 1e-3
WEIGHT_CLAMP = (0.0, 1.0)  # tail weights are probabilities; never divided by
MIN_FIT_UNITS = 10


def _child_seed(seed, tag, j) -> int:
    """Deterministic per-model seed derived from (run seed, family, time)."""
    return int(np.random.SeedSequence((seed, tag, j)).generate_state(1)[0])


class _ConstantModel:
    """Fallback when a fit would be degenerate (single-class labels)."""

    def __init__(self, value: float):
        self.value = float(value)

    def predict(self, x):
        return np.full(np.asarray(x).shape[0], self.value)


@dataclass
class NuisanceEvaluation:
    """Nuisance values on one dataset for one plan. Arrays are indexed
    [unit, step] with step k corresponding to time t + k.

    pi: floored plan propensities; ind: 1{A_{t+k} = a_{t+k}};
    mu: response predictions mu_{t+k}(H_{t+k});
    w_next: tail weights W_{t+k+1}(H_{t+k}) (ones at the final step);
    omega_t: overlap weights pi_t * W_{t+1} at the anchor.
    """

    plan: InterventionPlan
    pi: np.ndarray
    ind: np.ndarray
    mu: np.ndarray
    w_next: np.ndarray

    @property
    def omega_t(self) -> np.ndarray:
        return self.pi[:, 0] * self.w_next[:, 0]


class FittedNuisances:
    """Backbone-fitted nuisances for one plan."""

    def __init__(self, plan, propensity_models, response_models, weight_models, window="full"):
        self.plan = plan
        self.propensity_models = propensity_models  # {j: classifier for A_j = 1}
        self.response_models = response_models  # {j: regressor}
        self.weight_models = weight_models  # {j: regressor for W_{j+1}(H_j)}
        self.window = window

    def evaluate(self, data: Dataset, floor: float = PROPENSITY_FLOOR) -> NuisanceEvaluation:
        t, tau = self.plan.start, self.plan.horizon
        steps = tau + 1
        n = data.n
        pi = np.empty((n, steps))
        ind = np.empty((n, steps))
        mu = np.empty((n, steps))
        w_next = np.ones((n, steps))
        for k in range(steps):
            j = t + k
            feats, _ = feature_matrix(data, j, window=self.window)
            p1 = self.propensity_models[j].predict(feats)
            p_plan = p1 if self.plan.values[k] == 1 else 1.0 - p1
            pi[:, k] = np.clip(p_plan, floor, 1.0) if floor else p_plan
            ind[:, k] = (data.a[:, j] == self.plan.values[k]).astype(float)
            mu[:, k] = self.response_models[j].predict(feats)
            if j in self.weight_models:
                w_next[:, k] = np.clip(
                    self.weight_models[j].predict(feats), WEIGHT_CLAMP[0], WEIGHT_CLAMP[1]
                )
        return NuisanceEvaluation(self.plan, pi, ind, mu, w_next)


def fit_propensity_models(data: Dataset, t: int, tau: int, hp=None, window="full", seed=0):
    """One classifier P(A_j = 1 | H_j) per time j in [t, t+tau]; plans of
    either arm share these models."""
    hp = hp or backbone.Hyperparameters()
    models = {}
    for j in range(t, t + tau + 1):
        feats, _ = feature_matrix(data, j, window=window)
        labels = data.a[:, j].astype(float)
        if labels.min() == labels.max():
            warnings.warn(f"treatment at time {j} is constant; using a saturated propensity")
            models[j] = _ConstantModel(1.0 if labels[0] == 1 else 0.0)
            continue
        models[j] = backbone.fit_classifier(feats, labels, hp=replace(hp, seed=_child_seed(seed, 0xA, j)))
    return models


def fit_response_models(data: Dataset, plan: InterventionPlan, hp=None, window="full", seed=0):
    """Backward recursion of plan-conditional responses. Returns
    ({j: regressor}, provenance log of per-stage subsample sizes)."""
    hp = hp or backbone.Hyperparameters()
    t, tau = plan.start, plan.horizon
    if plan.end >= data.T:
        raise ParameterError("plan extends past the trajectory length")
    models = {}
    log = []
    target = data.y[:, t + tau].copy()
    for j in range(t + tau, t - 1, -1):
        a_j = plan.values[j - t]
        feats, _ = feature_matrix(data, j, window=window)
        sel = data.a[:, j] == a_j
        n_sel = int(sel.sum())
        log.append({"time": j, "arm": a_j, "n_fit": n_sel})
        if n_sel < MIN_FIT_UNITS:
            warnings.warn(f"only {n_sel} units follow the plan at time {j}; using a constant response")
            models[j] = _ConstantModel(target[sel].mean() if n_sel else target.mean())
        else:
            models[j] = backbone.fit_regressor(
                feats[sel], target[sel], hp=replace(hp, seed=_child_seed(seed, 0xB, j))
            )
        if j > t:
            target = models[j].predict(feats)  # next stage regresses this prediction
    return models, log


def fit_weight_models(data: Dataset, plan: InterventionPlan, propensity_models, hp=None,
                      window="full", seed=0):
    """Tail-weight regressors {j: model of W_{j+1}(H_j)} for j < t+tau.

    The target for time j is the realized product of fitted plan
    propensities over k = j+1 .. t+tau; regression against features(H_j)
    recovers its conditional expectation under the observational law.
    """
    hp = hp or backbone.Hyperparameters()
    t, tau = plan.start, plan.horizon
    if tau == 0:
        return {}
    pi_hat = np.empty((data.n, tau + 1))
    for k in range(tau + 1):
        j = t + k
        feats, _ = feature_matrix(data, j, window=window)
        p1 = propensity_models[j].predict(feats)
        pi_hat[:, k] = p1 if plan.values[k] == 1 else 1.0 - p1
    models = {}
    for j in range(t, t + tau):
        tail = np.prod(pi_hat[:, j - t + 1 :], axis=1)
        feats, _ = feature_matrix(data, j, window=window)
        models[j] = backbone.fit_regressor(feats, tail, hp=replace(hp, seed=_child_seed(seed, 0xC, j)))
    return models


def fit_nuisances(data: Dataset, plan: InterventionPlan, hp=None, window="full", seed=0,
                  propensity_models=None) -> FittedNuisances:
    """Fit all three nuisance families for one plan on the given (nuisance)
    split. Pass `propensity_models` to reuse classifiers across arms."""
    t, tau = plan.start, plan.horizon
    if propensity_models is None:
        propensity_models = fit_propensity_models(data, t, tau, hp=hp, window=window, seed=seed)
    response_models, _ = fit_response_models(data, plan, hp=hp, window=window, seed=seed)
    weight_models = fit_weight_models(data, plan, propensity_models, hp=hp, window=window, seed=seed)
    return FittedNuisances(plan, propensity_models, response_models, weight_models, window=window)


class OracleBackedNuisances:
    """Ground-truth nuisances exposed through the FittedNuisances interface;
    for diagnostics that must separate estimator error from nuisance error.

    Optional additive corruptions (arrays broadcastable over units/steps)
    shift each family before flooring, to probe sensitivity:
    `corrupt_pi` perturbs the plan propensity, `corrupt_mu` the responses,
    `corrupt_w` the tail weights.
    """

    def __init__(self, oracle, corrupt_pi=None, corrupt_mu=None, corrupt_w=None):
        self.oracle = oracle  # dgp.OracleNuisanceSet
        self.plan = oracle.plan
        self.corrupt_pi = corrupt_pi
        self.corrupt_mu = corrupt_mu
        self.corrupt_w = corrupt_w

    def evaluate(self, data: Dataset, floor: float = 0.0) -> NuisanceEvaluation:
        from .dgp import State  # local import to keep module layering one-way

        t, tau = self.plan.start, self.plan.horizon
        steps = tau + 1
        n = data.n
        pi = np.empty((n, steps))
        ind = np.empty((n, steps))
        mu = np.empty((n, steps))
        w_next = np.ones((n, steps))
        for k in range(steps):
            j = t + k
            st = State.from_dataset(data, j)
            pi[:, k] = self.oracle.propensity(j, st.x, st.y_prev, st.a_prev)
            ind[:, k] = (data.a[:, j] == self.plan.values[k]).astype(float)
            mu[:, k] = self.oracle.response_exact(j, st.x, x_prev=st.x_prev)
            if k < steps - 1:
                w_next[:, k] = self.oracle.tail_weight(j, st.x, st.y_prev, st.a_prev,
                                                       x_prev=st.x_prev)
        if self.corrupt_pi is not None:
            pi = pi + self.corrupt_pi
        if self.corrupt_mu is not None:
            mu = mu + self.corrupt_mu
        if self.corrupt_w is not None:
            w_next = w_next + self.corrupt_w
        pi = np.clip(pi, max(floor, 1e-12), 1.0)
        return NuisanceEvaluation(self.plan, pi, ind, mu, w_next)
