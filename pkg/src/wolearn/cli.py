"""Command-line harness: simulation, training, sweeps, and verification.

All commands take an experiment spec (JSON file via --spec, individual
fields overridable on the command line; overrides win). A spec pins the
generator configuration, the learner list, an optional sweep axis with its
grid, the seed list, and estimator flags. Sweeps write one CSV row per
(learner, grid value) plus a provenance JSON carrying the exact spec and
its hash; rerunning an identical spec reproduces identical artifacts.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import click
import numpy as np

from . import dgp, verify
from .backbone import Hyperparameters
from .core import ParameterError, always_treat, never_treat
from .learners import LEARNERS, evaluate_rmse, prepare_cell, run_experiment, train_learner
from .nuisance import PROPENSITY_FLOOR
from .pseudo import PseudoConfig, cate_pseudo

# Grids the reference experiments cover; sweep values outside these are
# rejected unless --allow-off-grid is passed.
AXIS_GRIDS = {
    "gamma": tuple(0.5 * k for k in range(1, 14)),
    "tau": (1, 3, 5, 7),
    "d_x": (5, 10, 15, 20, 25, 30, 35),
    "n_train": (2000, 3000, 4000, 5000, 6000, 7000, 8000),
}

SWEEP_COLUMNS = ("learner", "axis_value", "rmse_mean", "rmse_sd",
                 "rel_improv_pct", "guard_rate", "seconds")


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce a run or sweep."""

    kind: str = "gamma"
    dgp: dict = field(default_factory=dict)  # overrides for DgpConfig.make
    learners: tuple = LEARNERS
    axis: str = "none"  # gamma | tau | d_x | n_train | none
    grid: tuple = ()
    seeds: tuple = (0, 1, 2, 3, 4)
    out_dir: str = "runs"
    floor: float = PROPENSITY_FLOOR
    rho_tau0_collapse: bool = False
    clamp_rho: bool = False
    window: str = "full"  # "full" or an integer step count
    lam: float = 0.5
    allow_off_grid: bool = False

    def __post_init__(self):
        object.__setattr__(self, "learners", tuple(self.learners))
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.learners:
            raise ParameterError("learner list must not be empty")
        if self.axis != "none":
            if self.axis not in AXIS_GRIDS:
                raise ParameterError(f"unknown sweep axis {self.axis!r}")
            if not self.grid:
                raise ParameterError("sweep axis set but grid is empty")
            if not self.allow_off_grid:
                bad = [v for v in self.grid if v not in AXIS_GRIDS[self.axis]]
                if bad:
                    raise ParameterError(
                        f"grid values {bad} outside the reference grid for {self.axis!r}; "
                        "pass --allow-off-grid to override")

    @property
    def window_value(self):
        return self.window if self.window == "full" else int(self.window)

    @property
    def pseudo_config(self) -> PseudoConfig:
        return PseudoConfig(rho_tau0_collapse=self.rho_tau0_collapse,
                            clamp_rho=self.clamp_rho)

    def config_for(self, axis_value=None) -> dgp.DgpConfig:
        over = dict(self.dgp)
        if axis_value is not None:
            over[self.axis] = axis_value
        return dgp.DgpConfig.make(self.kind, **over)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _load_spec(spec_path, **overrides) -> ExperimentSpec:
    base = {}
    if spec_path:
        base = json.loads(Path(spec_path).read_text())
    for key, value in overrides.items():
        if value is not None and value != ():
            base[key] = value
    if isinstance(base.get("dgp"), str):
        base["dgp"] = json.loads(base["dgp"])
    return ExperimentSpec(**base)


_SPEC_OPTIONS = [
    click.option("--spec", "spec_path", type=click.Path(exists=True), default=None,
                 help="JSON spec file; command-line flags override its fields."),
    click.option("--kind", default=None, type=click.Choice(["gamma", "pi", "mu", "n"])),
    click.option("--dgp", default=None, help="JSON dict of generator overrides."),
    click.option("--learners", "learners", multiple=True),
    click.option("--axis", default=None,
                 type=click.Choice(["gamma", "tau", "d_x", "n_train", "none"])),
    click.option("--grid", multiple=True, type=float),
    click.option("--seeds", multiple=True, type=int),
    click.option("--out-dir", "out_dir", default=None),
    click.option("--floor", type=float, default=None,
                 help="Two-sided propensity floor applied at evaluation."),
    click.option("--rho-tau0-collapse", "rho_tau0_collapse", is_flag=True, default=None),
    click.option("--clamp-rho", "clamp_rho", is_flag=True, default=None,
                 help="Clamp negative rho weights to zero in the second stage."),
    click.option("--window", default=None,
                 help='History feature window: "full" or a step count.'),
    click.option("--lam", type=float, default=None, help="Stage-2 split fraction."),
    click.option("--allow-off-grid", "allow_off_grid", is_flag=True, default=None),
]


def _with_spec_options(fn):
    for opt in reversed(_SPEC_OPTIONS):
        fn = opt(fn)
    return fn


def _normalize_grid(spec: ExperimentSpec) -> ExperimentSpec:
    if spec.axis in ("tau", "d_x", "n_train"):
        return replace(spec, grid=tuple(int(v) for v in spec.grid))
    return spec


@click.group()
def main():
    """Overlap-weighted orthogonal meta-learning over time."""


@main.command()
@_with_spec_options
@click.option("--n", type=int, default=None, help="Override the number of trajectories.")
@click.option("--seed", type=int, default=0)
def simulate(spec_path, n, seed, **overrides):
    """Draw a synthetic panel and write it as JSONL."""
    spec = _load_spec(spec_path, **overrides)
    config = spec.config_for()
    data = dgp.simulate(config, seed=seed, n=n)
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{spec.kind}_seed{seed}.jsonl"
    data.to_jsonl(path)
    click.echo(f"wrote {data.n} trajectories to {path}")


def _run_cell(spec: ExperimentSpec, axis_value, seed):
    """One (grid value, seed) cell; pure function of its arguments."""
    config = spec.config_for(None if spec.axis == "none" else axis_value)
    t0 = time.time()
    result = run_experiment(config, seed=seed, learners=spec.learners, lam=spec.lam,
                            pseudo_config=spec.pseudo_config, window=spec.window_value,
                            floor=spec.floor)
    result["seconds"] = time.time() - t0
    return result


@main.command()
@_with_spec_options
@click.option("--seed", type=int, default=0)
def run(spec_path, seed, **overrides):
    """Train every learner on one cell and write per-cell artifacts:
    metrics JSON, the pseudo-outcome CSV, and model checkpoints."""
    spec = _load_spec(spec_path, **overrides)
    config = spec.config_for()
    out = Path(spec.out_dir) / f"{spec.kind}_seed{seed}"
    out.mkdir(parents=True, exist_ok=True)

    t = config.eval_anchor
    plan_a, plan_b = always_treat(t, config.tau), never_treat(t, config.tau)
    train = dgp.simulate(config, seed=seed)
    test = dgp.simulate(config, seed=_child_seed_test(seed), n=config.n_test)
    truth = dgp.test_set_truth(config, test, t, plan_a, plan_b, seed=_child_seed_truth(seed))
    cell = prepare_cell(train, plan_a, plan_b, lam=spec.lam, seed=seed,
                        window=spec.window_value, floor=spec.floor)

    po = cate_pseudo(cell.ev_a, cell.ev_b, cell.y_final, spec.pseudo_config)
    po.to_csv(out / "pseudo_outcomes.csv", ids=cell.stage2.ids)

    metrics = []
    for name in spec.learners:
        t0 = time.time()
        model = train_learner(cell, name, pseudo_config=spec.pseudo_config, seed=seed)
        rmse = evaluate_rmse(model, test, truth)
        model.network.save(out / f"model_{name}.npz")
        metrics.append({
            "learner": name, "dgp": spec.kind, "params": config.to_dict(), "seed": seed,
            "rmse": rmse, "guard_rate": model.guard_rate, "wallclock": time.time() - t0,
        })
        click.echo(f"{name}: rmse={rmse:.4f}")
    (out / "metrics.json").write_text(json.dumps(
        {"spec_hash": spec.hash, "spec": spec.to_dict(), "metrics": metrics}, indent=2))
    click.echo(f"artifacts in {out}")


def _child_seed_test(seed):
    return int(np.random.SeedSequence((seed, 0x7E, 0)).generate_state(1)[0])


def _child_seed_truth(seed):
    return int(np.random.SeedSequence((seed, 0x7E, 1)).generate_state(1)[0])


@main.command()
@_with_spec_options
@click.option("--workers", type=int, default=1, help="Worker processes for sweep cells.")
def sweep(spec_path, workers, **overrides):
    """Run the grid x seeds sweep and write the aggregated CSV.

    Results are deterministic per cell and independent of worker count or
    completion order. A failed cell is recorded and skipped, never aborting
    the sweep; the exit code is nonzero if any cell failed."""
    spec = _normalize_grid(_load_spec(spec_path, **overrides))
    if spec.axis == "none":
        raise click.UsageError("sweep requires a sweep axis; use `run` for a single cell")
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cells = [(value, seed) for value in spec.grid for seed in spec.seeds]
    results, failures = {}, []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {(v, s): pool.submit(_run_cell, spec, v, s) for v, s in cells}
            for key, fut in futures.items():
                try:
                    results[key] = fut.result()
                except Exception as exc:  # record, never abort the sweep
                    failures.append({"cell": key, "error": repr(exc)})
    else:
        for key in cells:
            try:
                results[key] = _run_cell(spec, *key)
            except Exception as exc:
                failures.append({"cell": key, "error": repr(exc)})

    rows = _aggregate(spec, results)
    csv_path = out / f"sweep_{spec.axis}_{spec.hash}.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SWEEP_COLUMNS)
        writer.writerows(rows)
    (out / f"sweep_{spec.axis}_{spec.hash}.json").write_text(json.dumps(
        {"spec_hash": spec.hash, "spec": spec.to_dict(), "failures": failures}, indent=2))

    consistent = _check_consistency(csv_path)
    for row in rows:
        click.echo(",".join(str(v) for v in row))
    if failures:
        click.echo(f"{len(failures)} cell(s) failed; see the provenance JSON", err=True)
    if not consistent:
        click.echo("self-consistency check failed on the emitted CSV", err=True)
    raise SystemExit(0 if not failures and consistent else 1)


def _aggregate(spec: ExperimentSpec, results: dict):
    rows = []
    for value in spec.grid:
        per_learner = {}
        for name in spec.learners:
            rmses, guards, secs = [], [], []
            for seed in spec.seeds:
                cell = results.get((value, seed))
                if cell is None:
                    continue
                rmses.append(cell["rmse"][name])
                guards.append(cell["guard_rate"])
                secs.append(cell["seconds"])
            if rmses:
                per_learner[name] = (float(np.mean(rmses)),
                                     float(np.std(rmses, ddof=1)) if len(rmses) > 1 else 0.0,
                                     float(np.mean(guards)), float(np.sum(secs)))
        baselines = {k: v[0] for k, v in per_learner.items() if k != "wo"}
        best_baseline = min(baselines.values()) if baselines else None
        for name, (mean, sd, guard, secs) in per_learner.items():
            rel = ""
            if name == "wo" and best_baseline:
                rel = round(100.0 * (best_baseline - mean) / best_baseline, 2)
            rows.append([name, value, round(mean, 6), round(sd, 6), rel,
                         round(guard, 6), round(secs, 2)])
    return rows


def _check_consistency(csv_path) -> bool:
    """Recompute the relative-improvement column from the CSV's own rows."""
    with open(csv_path) as f:
        rows = list(csv.DictReader(f))
    by_value = {}
    for row in rows:
        by_value.setdefault(row["axis_value"], []).append(row)
    for value_rows in by_value.values():
        baselines = [float(r["rmse_mean"]) for r in value_rows if r["learner"] != "wo"]
        for r in value_rows:
            if r["learner"] == "wo" and r["rel_improv_pct"] and baselines:
                best = min(baselines)
                expect = round(100.0 * (best - float(r["rmse_mean"])) / best, 2)
                if abs(expect - float(r["rel_improv_pct"])) > 0.011:
                    return False
    return True


@main.command("verify")
@click.option("--seed", type=int, default=0)
@click.option("--fast", is_flag=True, default=False, help="Smaller Monte Carlo sizes.")
@click.option("--out-dir", default="runs")
def verify_cmd(seed, fast, out_dir):
    """Run the structural diagnostics and write a JSON report."""
    reports = verify.verify_all(seed=seed, fast=fast)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = [{"name": r.name, "passed": r.passed, "summary": r.summary} for r in reports]
    (out / "verify_report.json").write_text(json.dumps(payload, indent=2))
    width = max(len(r.name) for r in reports)
    for r in reports:
        click.echo(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.summary}")
    raise SystemExit(0 if all(r.passed for r in reports) else 1)


if __name__ == "__main__":
    main()
