"""Synthetic sequential data generators and ground-truth oracles.

Four generator families share one backbone: X_0 ~ N(0,1) per dimension,
X_t = 0.5 X_{t-1} + eps_x, A_t ~ Bernoulli(sigmoid(f_a(H_t))),
Y_t = f_y(A_t, H_t) + eps_y. They differ in f_a and f_y:

  gamma: f_a = g * (0.5 X_t + 0.5 Y_{t-1} - 0.5 (A_{t-1} - 0.5)), g the
         overlap knob; f_y = 0.5 exp(-X_t^2) (A_t - 0.5). d_x = 1.
  pi:    f_a = sin(0.5 X_t + 0.5 Y_{t-1} - 0.5 (A_{t-1} - 0.5)); f_y as gamma.
  mu:    f_a = 0.5 mean_p X_{t,p} + 0.5 Y_{t-1} - 0.5 (A_{t-1} - 0.5);
         f_y = exp(0.5 (A_t - 0.5) mean_p cos(X_{t-1,p}) cos(cos(X_{t-1,p}))).
         Note f_y reads X_{t-1}, not X_t.
  n:     f_a = 3.5 (0.5 mean_p X_{t,p} + 0.5 Y_{t-1} - 0.5 (A_{t-1} - 0.5));
         f_y = 0.5 exp(-(mean_p cos X_{t,p})^2) (A_t - 0.5).

In every family the covariate process is autonomous (treatments never feed
back into X) and Y_{t+tau} depends on the final treatment and the covariate
state only, which admits closed-form effect curves for several families;
the Monte Carlo oracles below stay generic and the closed forms serve as
independent cross-checks and fast test-set truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .core import Dataset, HistoryView, InterventionPlan, ParameterError

SIGMA_Y_DEFAULT = 0.3
# AR(1) X_t = 0.5 X_{t-1} + eps has stationary variance 1 when
# var(eps) = 0.75, matching X_0 ~ N(0,1).
SIGMA_X_DEFAULT = math.sqrt(0.75)

_KIND_DEFAULTS = {
    "gamma": dict(T=5, d_x=1, n_train=4000, tau=1),
    "pi": dict(T=15, d_x=1, n_train=4000, tau=1),
    "mu": dict(T=15, d_x=5, n_train=4000, tau=1),
    "n": dict(T=5, d_x=5, n_train=4000, tau=1),
}


class ConfigError(ParameterError):
    pass


class HorizonError(ParameterError):
    pass


@dataclass(frozen=True)
class DgpConfig:
    kind: str
    T: int
    d_x: int
    n_train: int
    tau: int
    n_test: int = 1000
    gamma: float = 1.0
    sigma_y: float = SIGMA_Y_DEFAULT
    sigma_x: float = SIGMA_X_DEFAULT
    seed: int = 0

    @classmethod
    def make(cls, kind: str, **overrides) -> "DgpConfig":
        if kind not in _KIND_DEFAULTS:
            raise ConfigError(f"unknown DGP kind {kind!r}")
        params = dict(_KIND_DEFAULTS[kind])
        params.update(overrides)
        return cls(kind=kind, **params)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DgpConfig":
        return cls(**d)

    @property
    def eval_anchor(self) -> int:
        """Latest feasible anchor: t + tau is the last time index."""
        return self.T - 1 - self.tau


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def propensity_logit(config: DgpConfig, x_t, y_prev, a_prev):
    """f_a evaluated on state arrays; x_t has trailing dim d_x."""
    lin_x = np.mean(x_t, axis=-1)
    base = 0.5 * lin_x + 0.5 * y_prev - 0.5 * (a_prev - 0.5)
    if config.kind == "gamma":
        return config.gamma * base
    if config.kind == "pi":
        return np.sin(base)
    if config.kind == "mu":
        return base
    if config.kind == "n":
        return 3.5 * base
    raise ConfigError(f"unknown DGP kind {config.kind!r}")


def outcome_mean(config: DgpConfig, x_t, x_prev, a_t):
    """f_y evaluated on state arrays (the noiseless outcome)."""
    if config.kind in ("gamma", "pi"):
        return 0.5 * np.exp(-np.mean(x_t, axis=-1) ** 2) * (a_t - 0.5)
    if config.kind == "mu":
        c = np.mean(np.cos(x_prev) * np.cos(np.cos(x_prev)), axis=-1)
        return np.exp(0.5 * (a_t - 0.5) * c)
    if config.kind == "n":
        return 0.5 * np.exp(-np.mean(np.cos(x_t), axis=-1) ** 2) * (a_t - 0.5)
    raise ConfigError(f"unknown DGP kind {config.kind!r}")


@dataclass
class State:
    """Markov state sufficient to continue any trajectory: arrays with a
    common leading shape."""

    x: np.ndarray
    x_prev: np.ndarray
    y_prev: np.ndarray
    a_prev: np.ndarray

    @classmethod
    def from_history(cls, h: HistoryView):
        tr, t = h.trajectory, h.anchor
        x_prev = tr.covariates[t - 1] if t >= 1 else np.zeros(tr.d_x)
        y_prev = tr.outcomes[t - 1] if t >= 1 else 0.0
        a_prev = tr.treatments[t - 1] if t >= 1 else 0
        return cls(
            x=tr.covariates[t][None, :],
            x_prev=np.asarray(x_prev, dtype=float)[None, :],
            y_prev=np.array([y_prev], dtype=float),
            a_prev=np.array([a_prev], dtype=float),
        )

    @classmethod
    def from_dataset(cls, data: Dataset, anchor: int):
        t = anchor
        zeros = np.zeros((data.n, data.d_x))
        return cls(
            x=data.x[:, t, :],
            x_prev=data.x[:, t - 1, :] if t >= 1 else zeros,
            y_prev=data.y[:, t - 1] if t >= 1 else np.zeros(data.n),
            a_prev=data.a[:, t - 1].astype(float) if t >= 1 else np.zeros(data.n),
        )

    def tile(self, m: int) -> "State":
        return State(
            x=np.repeat(self.x, m, axis=0),
            x_prev=np.repeat(self.x_prev, m, axis=0),
            y_prev=np.repeat(self.y_prev, m),
            a_prev=np.repeat(self.a_prev, m),
        )


def _draw_noise(config: DgpConfig, shape, steps, rng):
    return (
        rng.normal(0.0, config.sigma_x, size=(*shape, steps, config.d_x)),
        rng.normal(0.0, config.sigma_y, size=(*shape, steps)),
        rng.uniform(size=(*shape, steps)),
    )


def rollout(config: DgpConfig, state: State, steps: int, rng=None, forced=None, noise=None):
    """Simulate `steps` consecutive time points starting at the state's
    current time. `forced` is a per-step sequence of 0/1/None (None samples
    the treatment observationally). Returns dict with x, a, y, p1 arrays of
    shape (L, steps[, d_x]) where p1 is P(A=1 | history) at each step.
    """
    L = state.y_prev.shape[0]
    if noise is None:
        noise = _draw_noise(config, (L,), steps, rng)
    eps_x, eps_y, u = noise
    x, x_prev = state.x.copy(), state.x_prev.copy()
    y_prev, a_prev = state.y_prev.copy(), state.a_prev.copy()
    xs = np.empty((L, steps, config.d_x))
    as_ = np.empty((L, steps))
    ys = np.empty((L, steps))
    p1s = np.empty((L, steps))
    for s in range(steps):
        p1 = sigmoid(propensity_logit(config, x, y_prev, a_prev))
        if forced is not None and forced[s] is not None:
            a = np.full(L, float(forced[s]))
        else:
            a = (u[:, s] < p1).astype(float)
        y = outcome_mean(config, x, x_prev, a) + eps_y[:, s]
        xs[:, s], as_[:, s], ys[:, s], p1s[:, s] = x, a, y, p1
        x_prev, x = x, 0.5 * x + eps_x[:, s]
        y_prev, a_prev = y, a
    return {"x": xs, "a": as_, "y": ys, "p1": p1s}


def simulate(config: DgpConfig, seed=None, n=None) -> Dataset:
    """Draw a complete panel of n trajectories under the configured DGP."""
    seed = config.seed if seed is None else seed
    n = config.n_train if n is None else n
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD6B)))
    x0 = rng.normal(size=(n, config.d_x))
    state = State(
        x=x0, x_prev=np.zeros((n, config.d_x)), y_prev=np.zeros(n), a_prev=np.zeros(n)
    )
    out = rollout(config, state, config.T, rng=rng)
    meta = {"generator": config.kind, "seed": int(seed), "config": config.to_dict()}
    return Dataset(out["x"], out["a"].astype(np.int64), out["y"], meta=meta)


def conditional_rollout(config: DgpConfig, h: HistoryView, plan, m: int, seed=0):
    """m simulated futures of (X, A, Y) for times anchor..anchor+tau given
    the history. `plan` is an InterventionPlan (treatments forced) or the
    string "observational"."""
    if m < 1:
        raise ParameterError("m must be >= 1")
    if plan == "observational":
        forced = None
        steps = h.trajectory.T - h.anchor
        raise_if_beyond = False
    else:
        if plan.start != h.anchor:
            raise ParameterError("plan must start at the history anchor")
        steps = plan.horizon + 1
        forced = list(plan.values)
        raise_if_beyond = True
    if h.anchor + steps > h.trajectory.T and raise_if_beyond:
        raise HorizonError("plan extends past the trajectory length")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xA0)))
    state = State.from_history(h).tile(m)
    return rollout(config, state, steps, rng=rng, forced=forced)


def ground_truth_cate(config: DgpConfig, h: HistoryView, plan_a, plan_b, m: int, seed=0):
    """Monte Carlo CATE at one history: mean final-outcome difference over m
    paired rollouts with common random numbers across the two arms."""
    if plan_a.start != plan_b.start or plan_a.horizon != plan_b.horizon:
        raise ParameterError("plans must share anchor and horizon")
    steps = plan_a.horizon + 1
    if h.anchor + steps > h.trajectory.T:
        raise HorizonError("plan extends past the trajectory length")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC7E)))
    state = State.from_history(h).tile(m)
    noise = _draw_noise(config, (m,), steps, rng)
    ya = rollout(config, state, steps, forced=list(plan_a.values), noise=noise)["y"][:, -1]
    yb = rollout(config, state, steps, forced=list(plan_b.values), noise=noise)["y"][:, -1]
    diff = ya - yb
    return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0


def _gauss_exp_moment(mean, var):
    """E[exp(-Z^2)] for Z ~ N(mean, var)."""
    return np.exp(-(mean**2) / (1.0 + 2.0 * var)) / np.sqrt(1.0 + 2.0 * var)


def _ar_moments(x_t, delta: int, sigma_x: float):
    """Mean/variance of X_{t+delta} given X_t under X' = 0.5 X + eps."""
    mean = (0.5**delta) * x_t
    var = sigma_x**2 * sum(0.25**i for i in range(delta))
    return mean, var


def exact_cate(config: DgpConfig, state: State, plan_a: InterventionPlan, plan_b: InterventionPlan):
    """Closed-form CATE for kinds with tractable effect curves, else None.

    Exploits that X is autonomous and Y_{t+tau} reads only the final
    treatment and the covariate state.
    """
    tau = plan_a.horizon
    da = plan_a.values[-1] - plan_b.values[-1]
    if config.kind in ("gamma", "pi"):
        x = np.mean(state.x, axis=-1)
        mean, var = _ar_moments(x, tau, config.sigma_x)
        return 0.5 * _gauss_exp_moment(mean, var) * da
    if config.kind == "mu" and tau == 1:
        c = np.mean(np.cos(state.x) * np.cos(np.cos(state.x)), axis=-1)
        return np.exp(0.25 * da * c) - np.exp(-0.25 * da * c) if da else np.zeros_like(c)
    return None


def test_set_truth(config: DgpConfig, data: Dataset, anchor: int, plan_a, plan_b, m=10000, seed=0):
    """Ground-truth CATE per test trajectory at the anchor. Uses the closed
    form where exact; falls back to vectorized Monte Carlo with common
    random numbers otherwise."""
    state = State.from_dataset(data, anchor)
    exact = exact_cate(config, state, plan_a, plan_b)
    if exact is not None:
        return np.asarray(exact)
    steps = plan_a.horizon + 1
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x717)))
    out = np.empty(data.n)
    chunk = max(1, int(2e6 // m))
    for lo in range(0, data.n, chunk):
        sub = State(
            x=state.x[lo : lo + chunk],
            x_prev=state.x_prev[lo : lo + chunk],
            y_prev=state.y_prev[lo : lo + chunk],
            a_prev=state.a_prev[lo : lo + chunk],
        )
        L = sub.y_prev.shape[0]
        tiled = sub.tile(m)
        noise = _draw_noise(config, (L * m,), steps, rng)
        ya = rollout(config, tiled, steps, forced=list(plan_a.values), noise=noise)["y"][:, -1]
        yb = rollout(config, tiled, steps, forced=list(plan_b.values), noise=noise)["y"][:, -1]
        out[lo : lo + chunk] = (ya - yb).reshape(L, m).mean(axis=1)
    return out


_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(64)


def _gh_expect(fn, mean, sd):
    """E[fn(Z)] for Z ~ N(mean, sd^2), vectorized over mean."""
    z = mean[..., None] + math.sqrt(2.0) * sd * _GH_NODES
    return (fn(z) * _GH_WEIGHTS).sum(axis=-1) / math.sqrt(math.pi)


class OracleNuisanceSet:
    """Ground-truth nuisance evaluators for one intervention plan.

    Propensities are closed form; response and tail-weight evaluators are
    Monte Carlo against the known generator, with closed forms and
    Gauss-Hermite quadrature where the family admits them. All evaluators
    are deterministic given (config, m, seed) and vectorized over states.
    """

    kind = "oracle"

    def __init__(self, config: DgpConfig, plan: InterventionPlan, m: int = 10000, seed: int = 0):
        self.config = config
        self.plan = plan
        self.t = plan.start
        self.tau = plan.horizon
        self.m = m
        self.seed = seed

    def _plan_value(self, j: int) -> int:
        if not self.t <= j <= self.t + self.tau:
            raise ParameterError(f"time index {j} outside plan range")
        return self.plan.values[j - self.t]

    def propensity(self, j: int, x, y_prev, a_prev):
        """pi_j^plan: probability of the plan's treatment at time j."""
        p1 = sigmoid(propensity_logit(self.config, x, y_prev, a_prev))
        return p1 if self._plan_value(j) == 1 else 1.0 - p1

    def response_exact(self, j: int, x, x_prev=None):
        """Closed-form mu_j^plan where the family admits one."""
        cfg, delta = self.config, self.t + self.tau - j
        a_last = self.plan.values[-1]
        if cfg.kind in ("gamma", "pi"):
            mean, var = _ar_moments(np.mean(x, axis=-1), delta, cfg.sigma_x)
            return 0.5 * _gauss_exp_moment(mean, var) * (a_last - 0.5)
        if cfg.kind == "mu" and delta == 0:
            return outcome_mean(cfg, x, x_prev, float(a_last))
        if cfg.kind == "mu" and delta == 1:
            c = np.mean(np.cos(x) * np.cos(np.cos(x)), axis=-1)
            return np.exp(0.5 * (a_last - 0.5) * c)
        if cfg.kind == "n" and delta == 0:
            return outcome_mean(cfg, x, x_prev, float(a_last))
        raise NotImplementedError(f"no closed-form response for kind={cfg.kind}, delta={delta}")

    def response_mc(self, j: int, state: State, m=None, seed_offset=0):
        """mu_j^plan by single-pass forced rollout; returns (mean, se)."""
        m = self.m if m is None else m
        steps = self.t + self.tau - j + 1
        rng = np.random.default_rng(np.random.SeedSequence((self.seed, 0xE5, seed_offset)))
        L = state.y_prev.shape[0]
        forced = list(self.plan.values[j - self.t :])
        yf = rollout(self.config, state.tile(m), steps, rng=rng, forced=forced)["y"][:, -1]
        yf = yf.reshape(L, m)
        return yf.mean(axis=1), yf.std(axis=1, ddof=1) / math.sqrt(m)

    def response_nested_mc(self, state: State, m=None, seed_offset=1):
        """mu_t^plan by the two-stage route: one forced step, then the exact
        next-stage response; cross-check for response_mc (tau = 1 only)."""
        if self.tau != 1:
            raise NotImplementedError("nested oracle implemented for tau = 1")
        m = self.m if m is None else m
        rng = np.random.default_rng(np.random.SeedSequence((self.seed, 0xE6, seed_offset)))
        L = state.y_prev.shape[0]
        one = rollout(self.config, state.tile(m), 2, rng=rng, forced=[self.plan.values[0], None])
        mu_next = self.response_exact(self.t + 1, one["x"][:, 1], x_prev=one["x"][:, 0])
        mu_next = mu_next.reshape(L, m)
        return mu_next.mean(axis=1), mu_next.std(axis=1, ddof=1) / math.sqrt(m)

    def tail_weight(self, j: int, x, y_prev, a_prev, m=None, seed_offset=2, x_prev=None):
        """E[prod_{k=j+1}^{t+tau} pi_k^plan | H_j] evaluated at states.
        `x_prev` matters only for families whose outcome reads the lagged
        covariate (it feeds the first simulated outcome)."""
        cfg, delta = self.config, self.t + self.tau - j
        x = np.asarray(x, dtype=float)
        if delta == 0:
            return np.ones(x.shape[:-1])
        if delta == 1 and cfg.kind in ("gamma", "pi") and cfg.d_x == 1:
            return self._tail_weight_quadrature(j, x, y_prev, a_prev)
        return self._tail_weight_mc(j, x, y_prev, a_prev, m=m, seed_offset=seed_offset,
                                    x_prev=x_prev)

    def _tail_weight_quadrature(self, j, x, y_prev, a_prev):
        # One remaining step: integrate pi_{j+1} over (A_j, eps_y, eps_x).
        # The propensity argument is linear in 0.5 eps_x + 0.5 eps_y, a single
        # Gaussian, so 1-d Gauss-Hermite is effectively exact.
        cfg = self.config
        xs = np.mean(x, axis=-1)
        p1 = sigmoid(propensity_logit(cfg, x, y_prev, a_prev))
        a_next = self._plan_value(j + 1)
        sd = 0.5 * math.sqrt(cfg.sigma_x**2 + cfg.sigma_y**2)
        total = np.zeros_like(xs)
        for a_j, w in ((1.0, p1), (0.0, 1.0 - p1)):
            u_mean = 0.25 * xs + 0.5 * outcome_mean(cfg, x, None, a_j) - 0.5 * (a_j - 0.5)
            if cfg.kind == "gamma":
                fn = lambda u: sigmoid(cfg.gamma * u)
            else:
                fn = lambda u: sigmoid(np.sin(u))
            pnext = _gh_expect(fn, u_mean, sd)
            if a_next == 0:
                pnext = 1.0 - pnext
            total += w * pnext
        return total

    def _tail_weight_mc(self, j, x, y_prev, a_prev, m=None, seed_offset=2, x_prev=None):
        cfg, m = self.config, self.m if m is None else m
        rng = np.random.default_rng(np.random.SeedSequence((self.seed, 0xE7, seed_offset)))
        lead = x.shape[:-1]
        if x_prev is None:
            x_prev = np.zeros((np.prod(lead, dtype=int), cfg.d_x))
        state = State(
            x=x.reshape(-1, cfg.d_x),
            x_prev=np.asarray(x_prev, dtype=float).reshape(-1, cfg.d_x),
            y_prev=np.asarray(y_prev, dtype=float).reshape(-1),
            a_prev=np.asarray(a_prev, dtype=float).reshape(-1),
        )
        steps = self.t + self.tau - j + 1
        out = rollout(cfg, state.tile(m), steps, rng=rng)
        prod = np.ones(state.y_prev.shape[0] * m)
        for s in range(1, steps):
            a_k = self._plan_value(j + s)
            pk = out["p1"][:, s] if a_k == 1 else 1.0 - out["p1"][:, s]
            prod *= pk
        return prod.reshape(*lead, m).mean(axis=-1)

    def omega(self, j: int, x, y_prev, a_prev, m=None, x_prev=None):
        """omega_j^plan(H_j) = pi_j * E[tail product | H_j]."""
        return self.propensity(j, x, y_prev, a_prev) * self.tail_weight(
            j, x, y_prev, a_prev, m=m, x_prev=x_prev)


def oracle_nuisances(config: DgpConfig, plan: InterventionPlan, m: int = 10000, seed: int = 0):
    return OracleNuisanceSet(config, plan, m=m, seed=seed)
