"""Meta-learners for heterogeneous effects of treatment plans.

All learners target the contrast CATE(h_t) = E[Y_{t+tau}(plan a) -
Y_{t+tau}(plan b) | H_t = h_t] and reduce it to a regression of some
pseudo-outcome on history features:

  wo   overlap-weighted orthogonal learner: split the data, fit nuisances
       on one half, build (xi, rho) on the other, minimize the weighted
       squared error sum rho_i (xi_i - g(H_t,i))^2 / sum rho_i;
  dr   unweighted regression on the doubly-robust contrast gamma^{ab};
  ipw  regression on the inverse-propensity transform;
  ra   distillation of the plug-in response contrast mu_t^a - mu_t^b;
  ha   a single history-adjusted outcome regression on features(H_t) and
       the realized future treatments, differenced at the two plans.

A `Cell` bundles the split, the fitted (or oracle) nuisances, and their
held-out evaluations so that several learners reuse one set of nuisance
fits.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import backbone
from .core import Dataset, InterventionPlan, ParameterError, feature_matrix, split_dataset
from .nuisance import PROPENSITY_FLOOR, fit_nuisances, fit_propensity_models, _child_seed
from .pseudo import PseudoConfig, cate_pseudo, gamma_plan, ipw_transform, risk_linear_term

LEARNERS = ("wo", "dr", "ipw", "ra", "ha")

# The weighted second stage regresses a heavy-tailed pseudo-outcome; a high
# dropout rate shrinks the fit toward the weighted level, which is the
# dominant bias-variance trade under poor overlap. This shrinkage is part of
# the weighted learner's design; baselines are plain regressions with the
# nominal backbone settings.
STAGE2_DROPOUT = 0.9


@dataclass
class Cell:
    """Shared state for training several learners on one dataset/plan pair."""

    data: Dataset
    plan_a: InterventionPlan
    plan_b: InterventionPlan
    nuis_split: Dataset
    stage2: Dataset
    ev_a: object  # NuisanceEvaluation on stage2, floored
    ev_b: object
    ev_a_raw: object  # same, unfloored (for the no-floor ablation)
    ev_b_raw: object
    window: str = "full"

    @property
    def anchor(self) -> int:
        return self.plan_a.start

    @property
    def y_final(self) -> np.ndarray:
        return self.stage2.y[:, self.plan_a.end]

    @property
    def stage2_features(self) -> np.ndarray:
        return feature_matrix(self.stage2, self.anchor, window=self.window)[0]


def prepare_cell(data, plan_a, plan_b, lam=0.5, hp=None, seed=0, window="full",
                 floor=PROPENSITY_FLOOR, nuisances=None) -> Cell:
    """Split the data, fit nuisances for both plans on the nuisance split
    (propensity classifiers shared when the plans cover the same times),
    and evaluate them on the stage-2 split.

    Pass `nuisances = (eval_a, eval_b)` objects with an `.evaluate(data,
    floor)` method (e.g. oracle-backed) to skip fitting; the full dataset
    then serves as the stage-2 split.
    """
    if plan_a.start != plan_b.start or plan_a.horizon != plan_b.horizon:
        raise ParameterError("plans must share anchor and horizon")
    if nuisances is not None:
        na, nb = nuisances
        return Cell(data, plan_a, plan_b, data.subset(np.arange(0)), data,
                    na.evaluate(data, floor=floor), nb.evaluate(data, floor=floor),
                    na.evaluate(data, floor=0.0), nb.evaluate(data, floor=0.0), window)
    nuis_split, stage2 = split_dataset(data, lam, seed)
    assert not set(nuis_split.ids.tolist()) & set(stage2.ids.tolist()), "splits must be disjoint"
    hp = hp or backbone.Hyperparameters()
    prop = fit_propensity_models(nuis_split, plan_a.start, plan_a.horizon,
                                 hp=hp, window=window, seed=seed)
    na = fit_nuisances(nuis_split, plan_a, hp=hp, window=window, seed=seed,
                       propensity_models=prop)
    nb = fit_nuisances(nuis_split, plan_b, hp=hp, window=window, seed=seed,
                       propensity_models=prop)
    return Cell(data, plan_a, plan_b, nuis_split, stage2,
                na.evaluate(stage2, floor=floor), nb.evaluate(stage2, floor=floor),
                na.evaluate(stage2, floor=0.0), nb.evaluate(stage2, floor=0.0), window)


@dataclass
class CateModel:
    """A trained effect model; predicts the plan contrast at the anchor."""

    name: str
    network: object
    plan_a: InterventionPlan
    plan_b: InterventionPlan
    window: str = "full"
    guard_rate: float = 0.0
    plan_feature: bool = False  # ha appends plan treatments to the features

    def predict(self, data: Dataset) -> np.ndarray:
        feats = feature_matrix(data, self.plan_a.start, window=self.window)[0]
        if not self.plan_feature:
            return self.network.predict(feats)
        fa = _with_plan(feats, self.plan_a)
        fb = _with_plan(feats, self.plan_b)
        return self.network.predict(fa) - self.network.predict(fb)


def _with_plan(feats: np.ndarray, plan: InterventionPlan) -> np.ndarray:
    cols = np.tile(np.asarray(plan.values, dtype=float), (feats.shape[0], 1))
    return np.concatenate([feats, cols], axis=1)


def train_wo(cell: Cell, hp=None, pseudo_config: PseudoConfig = PseudoConfig(), seed=0,
             stage2_dropout=STAGE2_DROPOUT) -> CateModel:
    """Second stage of the overlap-weighted orthogonal learner."""
    hp = replace(hp or backbone.Hyperparameters(), dropout=stage2_dropout)
    po = cate_pseudo(cell.ev_a, cell.ev_b, cell.y_final, pseudo_config)
    # Optimize the expanded product form of the weighted risk: its
    # coefficients stay bounded where the ratio target xi does not.
    weights = po.rho
    linear = risk_linear_term(po)
    if pseudo_config.clamp_rho:
        keep = po.rho > 0.0
        weights = np.where(keep, po.rho, 0.0)
        linear = np.where(keep, linear, 0.0)
    net = backbone.fit_weighted_quadratic(cell.stage2_features, weights, linear,
                                          hp=replace(hp, seed=_child_seed(seed, 0x10, 0)))
    return CateModel("wo", net, cell.plan_a, cell.plan_b, cell.window, po.guard_rate)


def train_baseline(cell: Cell, name: str, hp=None, seed=0, floor=True) -> CateModel:
    """Train one of the baseline learners: dr, ipw, ra, or ha. `floor=False`
    uses unfloored propensities (meaningful for ipw)."""
    hp = hp or backbone.Hyperparameters()
    ev_a = cell.ev_a if floor else cell.ev_a_raw
    ev_b = cell.ev_b if floor else cell.ev_b_raw
    dropout = hp.dropout
    if name == "dr":
        target = gamma_plan(ev_a, cell.y_final) - gamma_plan(ev_b, cell.y_final)
    elif name == "ipw":
        target = ipw_transform(ev_a, ev_b, cell.y_final)
    elif name == "ra":
        target = ev_a.mu[:, 0] - ev_b.mu[:, 0]
    elif name == "ha":
        return _train_ha(cell, hp, seed)
    else:
        raise ParameterError(f"unknown learner {name!r}")
    net = backbone.fit_regressor(
        cell.stage2_features, target,
        hp=replace(hp, dropout=dropout, seed=_child_seed(seed, 0x11, LEARNERS.index(name))))
    return CateModel(name, net, cell.plan_a, cell.plan_b, cell.window)


def _train_ha(cell: Cell, hp, seed) -> CateModel:
    # One outcome regression on (history features, realized future
    # treatments) over all units; effects come from differencing the plans.
    t, end = cell.anchor, cell.plan_a.end
    feats = feature_matrix(cell.data, t, window=cell.window)[0]
    feats = np.concatenate([feats, cell.data.a[:, t : end + 1].astype(float)], axis=1)
    net = backbone.fit_regressor(feats, cell.data.y[:, end],
                                 hp=replace(hp, seed=_child_seed(seed, 0x12, 0)))
    return CateModel("ha", net, cell.plan_a, cell.plan_b, cell.window, plan_feature=True)


def train_learner(cell: Cell, name: str, hp=None, pseudo_config=PseudoConfig(),
                  seed=0) -> CateModel:
    if name == "wo":
        return train_wo(cell, hp=hp, pseudo_config=pseudo_config, seed=seed)
    if name == "ipw_nofloor":
        model = train_baseline(cell, "ipw", hp=hp, seed=seed, floor=False)
        model.name = "ipw_nofloor"
        return model
    return train_baseline(cell, name, hp=hp, seed=seed)


def evaluate_rmse(model: CateModel, test_data: Dataset, truth: np.ndarray) -> float:
    pred = model.predict(test_data)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def run_experiment(config, seed=0, learners=LEARNERS, lam=0.5, hp=None,
                   pseudo_config=PseudoConfig(), window="full", m_truth=20000,
                   floor=PROPENSITY_FLOOR):
    """One full cell: simulate train/test sets, fit every learner, score
    against ground truth. Returns {learner: rmse} plus guard-rate info."""
    from . import dgp  # deferred: dgp is a sibling layer, not a dependency

    from .core import always_treat, never_treat

    t, tau = config.eval_anchor, config.tau
    plan_a, plan_b = always_treat(t, tau), never_treat(t, tau)
    train = dgp.simulate(config, seed=seed)
    test = dgp.simulate(config, seed=_child_seed(seed, 0x7E, 0), n=config.n_test)
    truth = dgp.test_set_truth(config, test, t, plan_a, plan_b, m=m_truth,
                               seed=_child_seed(seed, 0x7E, 1))
    cell = prepare_cell(train, plan_a, plan_b, lam=lam, hp=hp, seed=seed, window=window,
                        floor=floor)
    result = {"seed": seed, "rmse": {}, "guard_rate": 0.0}
    for name in learners:
        model = train_learner(cell, name, hp=hp, pseudo_config=pseudo_config, seed=seed)
        result["rmse"][name] = evaluate_rmse(model, test, truth)
        if name == "wo":
            result["guard_rate"] = model.guard_rate
    return result
