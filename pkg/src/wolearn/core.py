"""Domain types for sequential observational data.

A unit is a trajectory of covariates X_t, binary treatments A_t, and outcomes
Y_t over T time steps. The observed history at time t is
H_t = (Y_{0:t-1}, X_{0:t}, A_{0:t-1}), i.e. the outcome and treatment at the
anchor itself are excluded. Pre-sample lags (Y_{-1}, A_{-1}) are zero
sentinels with mask 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class ParameterError(ValueError):
    """Invalid argument to a library operation."""


@dataclass(frozen=True)
class Trajectory:
    """One unit's complete panel: X (T, d_x), A (T,) in {0,1}, Y (T,)."""

    covariates: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray
    id: int = 0

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        a = np.asarray(self.treatments)
        y = np.asarray(self.outcomes, dtype=float)
        if not (len(x) == len(a) == len(y)) or len(x) < 1:
            raise ParameterError("covariates, treatments, outcomes must share length T >= 1")
        if not np.isin(a, (0, 1)).all():
            raise ParameterError("treatments must be binary")
        if np.isnan(x).any() or np.isnan(y).any():
            raise ParameterError("missing entries are not supported")
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "treatments", a.astype(np.int64))
        object.__setattr__(self, "outcomes", y)

    @property
    def T(self) -> int:
        return len(self.outcomes)

    @property
    def d_x(self) -> int:
        return self.covariates.shape[1]


@dataclass(frozen=True)
class HistoryView:
    """The history H_t of a trajectory at anchor time t."""

    trajectory: Trajectory
    anchor: int

    def __post_init__(self):
        if not 0 <= self.anchor < self.trajectory.T:
            raise IndexError(f"anchor {self.anchor} out of range [0, {self.trajectory.T})")


@dataclass(frozen=True)
class InterventionPlan:
    """A fixed treatment sequence a_{t:t+tau} starting at `start`."""

    start: int
    values: tuple

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        if len(vals) < 1 or any(v not in (0, 1) for v in vals):
            raise ParameterError("plan values must be a non-empty binary sequence")
        object.__setattr__(self, "values", vals)

    @property
    def horizon(self) -> int:
        return len(self.values) - 1

    @property
    def end(self) -> int:
        return self.start + self.horizon

    def complement(self) -> "InterventionPlan":
        return InterventionPlan(self.start, tuple(1 - v for v in self.values))


def always_treat(start: int, tau: int) -> InterventionPlan:
    return InterventionPlan(start, (1,) * (tau + 1))


def never_treat(start: int, tau: int) -> InterventionPlan:
    return InterventionPlan(start, (0,) * (tau + 1))


class Dataset:
    """A panel of trajectories sharing T and d_x, stored stacked for speed.

    x: (n, T, d_x), a: (n, T), y: (n, T), ids: (n,).
    """

    def __init__(self, x, a, y, ids=None, meta=None):
        self.x = np.asarray(x, dtype=float)
        self.a = np.asarray(a, dtype=np.int64)
        self.y = np.asarray(y, dtype=float)
        if self.x.ndim != 3 or self.a.shape != self.x.shape[:2] or self.y.shape != self.a.shape:
            raise ParameterError("x must be (n, T, d_x); a, y must be (n, T)")
        self.ids = np.arange(len(self.y)) if ids is None else np.asarray(ids, dtype=np.int64)
        self.meta = dict(meta or {})

    @classmethod
    def from_trajectories(cls, trajectories, meta=None):
        ts = {tr.T for tr in trajectories}
        ds = {tr.d_x for tr in trajectories}
        if len(ts) != 1 or len(ds) != 1:
            raise ParameterError("all trajectories must share T and d_x")
        return cls(
            np.stack([tr.covariates for tr in trajectories]),
            np.stack([tr.treatments for tr in trajectories]),
            np.stack([tr.outcomes for tr in trajectories]),
            ids=[tr.id for tr in trajectories],
            meta=meta,
        )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def T(self) -> int:
        return self.x.shape[1]

    @property
    def d_x(self) -> int:
        return self.x.shape[2]

    def __len__(self) -> int:
        return self.n

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(self.x[i], self.a[i], self.y[i], id=int(self.ids[i]))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.a[idx], self.y[idx], ids=self.ids[idx], meta=self.meta)

    def to_jsonl(self, path):
        with open(path, "w") as f:
            f.write(json.dumps({"meta": self.meta, "n": self.n, "T": self.T, "d_x": self.d_x}) + "\n")
            for i in range(self.n):
                row = {
                    "id": int(self.ids[i]),
                    "x": self.x[i].tolist(),
                    "a": self.a[i].tolist(),
                    "y": self.y[i].tolist(),
                }
                f.write(json.dumps(row) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "Dataset":
        with open(path) as f:
            header = json.loads(f.readline())
            xs, as_, ys, ids = [], [], [], []
            for line in f:
                row = json.loads(line)
                xs.append(row["x"])
                as_.append(row["a"])
                ys.append(row["y"])
                ids.append(row["id"])
        return cls(np.array(xs), np.array(as_), np.array(ys), ids=ids, meta=header.get("meta", {}))


@dataclass(frozen=True)
class FeatureVector:
    """Flattened history encoding: values with a binary presence mask."""

    values: np.ndarray
    mask: np.ndarray


def feature_dim(window: int, d_x: int) -> int:
    # per step: X_s (d_x), lagged Y_{s-1}, lagged A_{s-1}; plus the anchor index
    return window * (d_x + 2) + 1


def feature_matrix(data: Dataset, anchor: int, window="full"):
    """Featurized histories H_anchor for all units: (values (n, D), mask (D,)).

    Steps s = anchor-window+1 .. anchor, oldest first; each step contributes
    (X_s, Y_{s-1}, A_{s-1}); steps before time 0 are zero with mask 0, as is
    the lag slot at s = 0. The final feature is the anchor index itself.
    """
    T, d_x, n = data.T, data.d_x, data.n
    if not 0 <= anchor < T:
        raise IndexError(f"anchor {anchor} out of range [0, {T})")
    w = T if window == "full" else int(window)
    if w < 1 or w > T:
        raise ParameterError(f"window must be in [1, T={T}]")
    steps = np.arange(anchor - w + 1, anchor + 1)
    valid = steps >= 0
    lag_valid = steps >= 1

    vals = np.zeros((n, w, d_x + 2))
    sv = steps[valid]
    vals[:, valid, :d_x] = data.x[:, sv, :]
    sl = steps[lag_valid]
    vals[:, lag_valid, d_x] = data.y[:, sl - 1]
    vals[:, lag_valid, d_x + 1] = data.a[:, sl - 1]

    mask = np.zeros((w, d_x + 2))
    mask[valid, :d_x] = 1.0
    mask[lag_valid, d_x:] = 1.0

    values = np.concatenate([vals.reshape(n, -1), np.full((n, 1), float(anchor))], axis=1)
    mask_flat = np.concatenate([mask.reshape(-1), [1.0]])
    return values, mask_flat


def featurize_history(h: HistoryView, window="full") -> FeatureVector:
    data = Dataset.from_trajectories([h.trajectory])
    values, mask = feature_matrix(data, h.anchor, window=window)
    return FeatureVector(values=values[0], mask=mask)


def split_dataset(data: Dataset, lam: float, seed: int):
    """Disjoint split by trajectory: (nuisance split, stage-2 split).

    The stage-2 split gets floor(lam * n) units; the permutation is a pure
    function of the seed.
    """
    if not 0.0 < lam < 1.0:
        raise ParameterError("lambda must be in (0, 1)")
    n = data.n
    if n < 2:
        raise ParameterError("need at least 2 trajectories to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_stage2 = int(np.floor(lam * n))
    return data.subset(np.sort(perm[n_stage2:])), data.subset(np.sort(perm[:n_stage2]))
