"""Parameter sweeps and the built-in experiment grids.

Rows are emitted as CSV with header::

    experiment,policy,metric,axis1,axis1_value,axis2,axis2_value,value,stderr,
    config_hash,seed,sim_seed,residual,converged

``seed`` is the solver seed.  ``residual``/``converged`` describe the value
table behind the dp/separable policies and are empty for policies that need
no table.  The JSON-lines stream carries the same fields, one object per row.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .model import ConfigError, ModelConfig, StorageState
from .policies import compute_per_node_values, make_policy
from .sim import SimConfig, compare, simulate
from .solver import SolverConfig, value_iteration

FIELDS = ("experiment", "policy", "metric", "axis1", "axis1_value", "axis2", "axis2_value",
          "value", "stderr", "config_hash", "seed", "sim_seed", "residual", "converged")
METRICS = ("first_step_cache_prob", "caching_ratio", "mean_discounted_cost",
           "cn_cost", "cost_gap")
AXES = ("num_nodes", "gamma", "request_prob", "node_request_prob", "rho_mean",
        "rho0_mean", "lambda_mean", "lambda_eff_mean")

DEFAULT_GRID = tuple(round(float(x), 6) for x in np.geomspace(1.0, 100.0, 8))
EXPERIMENT_GAMMA = 0.5


@dataclass(frozen=True)
class Scenario:
    """Flat parameter set from which model, solver and simulation configs are built.

    ``lambda_eff_mean`` overrides the mean of every link into the CN (cloud and
    node uplinks); ``rho0_mean`` overrides the CN caching mean.  ``s0``/``r0``
    set the CN's initial storage bit and slot-0 request; regular nodes start
    empty with no slot-0 request when ``r0`` is given.
    """

    num_nodes: int = 0
    gamma: float = EXPERIMENT_GAMMA
    request_prob: float = 0.5
    node_request_prob: float = 0.0
    rho_mean: float = 10.0
    rho0_mean: float | None = None
    lambda_mean: float = 10.0
    lambda_eff_mean: float | None = None
    s0: int = 0
    r0: int | None = None
    num_samples: int = 2000
    epsilon: float | None = None
    max_iterations: int = 10_000
    solver_seed: int = 1
    horizon: int | None = None
    num_trajectories: int = 2000
    sim_seed: int = 2

    def model(self) -> ModelConfig:
        M = int(self.num_nodes)
        lam_in = self.lambda_mean if self.lambda_eff_mean is None else self.lambda_eff_mean
        rho0 = self.rho_mean if self.rho0_mean is None else self.rho0_mean
        return ModelConfig(
            num_nodes=M,
            gamma=self.gamma,
            request_probs=(self.request_prob,) + (self.node_request_prob,) * M,
            rho_means=(rho0,) + (self.rho_mean,) * M,
            lambda_cloud_mean=lam_in,
            lambda_in_means=(lam_in,) * M,
            lambda_out_means=(self.lambda_mean,) * M,
        )

    def solver(self) -> SolverConfig:
        return SolverConfig(self.epsilon, self.max_iterations, self.num_samples, self.solver_seed)

    def sim(self) -> SimConfig:
        n = int(self.num_nodes) + 1
        init = StorageState((bool(self.s0),) + (False,) * (n - 1))
        req = None if self.r0 is None else (bool(self.r0),) + (False,) * (n - 1)
        return SimConfig(self.horizon, self.num_trajectories, init, req, self.sim_seed)


@dataclass(frozen=True)
class SweepSpec:
    name: str
    scenario: Scenario
    axes: tuple[tuple[str, tuple], ...]
    metrics: tuple[str, ...] = ("mean_discounted_cost",)
    policies: tuple[str, ...] = ("dp",)
    # each series reruns the grid with extra overrides, labelled "<name>[<label>]"
    series: tuple[tuple[str, tuple], ...] = ()

    def __post_init__(self):
        if not 1 <= len(self.axes) <= 2:
            raise ConfigError("axes", "a sweep needs one or two axes")
        for axis, grid in self.axes:
            if axis not in AXES:
                raise ConfigError("axes", f"unknown axis {axis!r}; valid: {', '.join(AXES)}")
            if len(grid) == 0:
                raise ConfigError("axes", f"grid for {axis!r} is empty")
        for m in self.metrics:
            if m not in METRICS:
                raise ConfigError("metrics", f"unknown metric {m!r}")
        if not self.policies:
            raise ConfigError("policies", "need at least one policy")

    def to_dict(self) -> dict:
        return {"name": self.name, "scenario": asdict(self.scenario),
                "axes": [[a, list(g)] for a, g in self.axes],
                "metrics": list(self.metrics), "policies": list(self.policies),
                "series": [[label, [list(kv) for kv in ov]] for label, ov in self.series]}

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        try:
            return cls(
                name=d["name"],
                scenario=Scenario(**d.get("scenario", {})),
                axes=tuple((a, tuple(g)) for a, g in d["axes"]),
                metrics=tuple(d.get("metrics", ("mean_discounted_cost",))),
                policies=tuple(d.get("policies", ("dp",))),
                series=tuple((label, tuple(tuple(kv) for kv in ov))
                             for label, ov in d.get("series", ())),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError("sweep", f"malformed sweep spec: {exc}") from None


@dataclass(frozen=True)
class _Job:
    experiment: str
    scenario: Scenario
    policies: tuple[str, ...]
    metrics: tuple[str, ...]
    axis_labels: tuple[tuple[str, object], ...]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _run_job(job: _Job) -> list[dict]:
    sc = job.scenario
    model, solver_cfg, sim_cfg = sc.model(), sc.solver(), sc.sim()
    table = per_node = None
    if "dp" in job.policies:
        table = value_iteration(model, solver_cfg)
    if "separable" in job.policies:
        per_node = compute_per_node_values(model, solver_cfg)
    policies = [make_policy(p, model.gamma, table, per_node) for p in job.policies]
    if len(policies) > 1:
        cmp = compare(model, policies, sim_cfg)
        reports = [cmp.reports[k] for k in cmp.reports]
    else:
        cmp = None
        reports = [simulate(model, policies[0], sim_cfg)]

    axes = list(job.axis_labels) + [("", None)] * (2 - len(job.axis_labels))
    rows = []
    for report in reports:
        uses_table = report.policy in ("dp", "separable") and table is not None
        for metric in job.metrics:
            if metric == "first_step_cache_prob":
                value, err = report.first_step_cache_prob[0], report.first_step_stderr[0]
            elif metric == "caching_ratio":
                value, err = report.caching_ratio[0], report.caching_ratio_stderr[0]
            elif metric == "mean_discounted_cost":
                value, err = report.mean_discounted_cost, report.cost_stderr
            elif metric == "cn_cost":
                value, err = report.mean_discounted_cn_cost, report.cn_cost_stderr
            else:  # cost_gap: paired difference against the first listed policy
                if cmp is None or report is reports[0]:
                    continue
                d = cmp.difference(reports[0].policy, report.policy)
                value, err = d.mean, d.stderr
            rows.append({
                "experiment": job.experiment,
                "policy": report.policy,
                "metric": metric,
                "axis1": axes[0][0], "axis1_value": axes[0][1],
                "axis2": axes[1][0], "axis2_value": axes[1][1],
                "value": value, "stderr": err,
                "config_hash": model.fingerprint(),
                "seed": sc.solver_seed,
                "sim_seed": sc.sim_seed,
                "residual": table.residual if uses_table else None,
                "converged": table.converged if uses_table else None,
            })
    return rows


def _jobs(spec: SweepSpec) -> list[_Job]:
    jobs = []
    series = spec.series or (("", ()),)
    for label, overrides in series:
        base = replace(spec.scenario, **dict(overrides))
        name = f"{spec.name}[{label}]" if label else spec.name
        names = [a for a, _ in spec.axes]
        for point in itertools.product(*(g for _, g in spec.axes)):
            sc = replace(base, **dict(zip(names, point)))
            jobs.append(_Job(name, sc, spec.policies, spec.metrics, tuple(zip(names, point))))
    return jobs


def run_sweep(spec: SweepSpec, workers: int = 1) -> list[dict]:
    """Evaluate every grid point; rows come back in deterministic grid order.

    A grid point whose solve hits ``max_iterations`` still produces rows,
    marked ``converged=false``.
    """
    jobs = _jobs(spec)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    return [row for rows in results for row in rows]


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELDS)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in FIELDS])
    return buf.getvalue()


def rows_to_jsonl(rows: list[dict]) -> str:
    def clean(v):
        if isinstance(v, (np.floating, np.integer, np.bool_)):
            return v.item()
        if isinstance(v, float) and not math.isfinite(v):
            return None
        return v
    return "".join(json.dumps({k: clean(r[k]) for k in FIELDS}) + "\n" for r in rows)


def read_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


def builtin_experiments() -> dict[str, SweepSpec]:
    grid2 = (("lambda_eff_mean", DEFAULT_GRID), ("rho0_mean", DEFAULT_GRID))
    ratio = ("first_step_cache_prob", "caching_ratio")
    specs = {
        "fig1a": SweepSpec("fig1a", Scenario(s0=1, r0=1, request_prob=0.5), grid2, ratio),
        "fig1b": SweepSpec("fig1b", Scenario(s0=0, r0=0, request_prob=0.5), grid2, ratio),
        "fig1c_caption": SweepSpec("fig1c_caption", Scenario(s0=0, r0=0, request_prob=0.05),
                                   grid2, ratio),
        "fig1c_text": SweepSpec("fig1c_text", Scenario(s0=1, r0=1, request_prob=0.05),
                                grid2, ratio),
        "fig1c": SweepSpec("fig1c", Scenario(request_prob=0.05), grid2, ratio,
                           series=(("caption", (("s0", 0), ("r0", 0))),
                                   ("text", (("s0", 1), ("r0", 1))))),
        "fig1d": SweepSpec("fig1d", Scenario(rho0_mean=10.0, request_prob=0.5),
                           (("lambda_eff_mean", DEFAULT_GRID),),
                           ("mean_discounted_cost", "cost_gap"), ("dp", "myopic")),
        "fig1e": SweepSpec("fig1e", Scenario(rho_mean=62.0, node_request_prob=0.0),
                           (("num_nodes", (0, 1, 2, 4)), ("lambda_mean", (40.0, 100.0))),
                           ("mean_discounted_cost", "cn_cost"), ("dp",),
                           series=tuple((f"p_r={p}", (("request_prob", p),))
                                        for p in (0.05, 0.2, 0.5))),
    }
    return specs
