"""Monte Carlo trajectory simulation of caching policies."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    ConfigError,
    ModelConfig,
    StorageState,
    cn_cost_batch,
    feasible_batch,
    step_cost_batch,
)
from .policies import Policy
from .sampling import draw_batch

CSV_HEADER = ("policy,horizon,trajectories,mean_discounted_cost,cost_stderr,"
              "mean_discounted_cn_cost,cn_cost_stderr,cn_caching_ratio,cn_caching_ratio_stderr,"
              "cn_first_step_cache_prob,cn_first_step_stderr,config_hash,seed")


class InfeasibleActionError(RuntimeError):
    def __init__(self, policy: str, slot: int, trajectory: int):
        super().__init__(f"policy {policy!r} returned an infeasible action "
                         f"at slot {slot}, trajectory {trajectory}")
        self.slot = slot
        self.trajectory = trajectory


def default_horizon(gamma: float, tail: float = 1e-6) -> int:
    """Smallest T with gamma**T <= tail."""
    if gamma == 0.0:
        return 1
    return max(1, math.ceil(math.log(tail) / math.log(gamma)))


@dataclass(frozen=True)
class SimConfig:
    horizon: int | None = None          # None -> default_horizon(gamma)
    num_trajectories: int = 2000
    initial_state: StorageState | None = None   # None -> nothing cached
    initial_requests: tuple[bool, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError("horizon", "must be >= 1")
        if self.num_trajectories < 1:
            raise ConfigError("num_trajectories", "must be >= 1")
        if self.seed < 0:
            raise ConfigError("sim_seed", "must be >= 0")


class _Neumaier:
    """Elementwise compensated summation."""

    def __init__(self, n: int):
        self.total = np.zeros(n)
        self.comp = np.zeros(n)

    def add(self, x: np.ndarray) -> None:
        t = self.total + x
        big = np.abs(self.total) >= np.abs(x)
        self.comp += np.where(big, (self.total - t) + x, (x - t) + self.total)
        self.total = t

    def value(self) -> np.ndarray:
        return self.total + self.comp


def _stderr(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


@dataclass(frozen=True, eq=False)
class SimReport:
    policy: str
    horizon: int
    trajectory_count: int
    mean_discounted_cost: float
    cost_stderr: float
    mean_discounted_cn_cost: float
    cn_cost_stderr: float
    caching_ratio: tuple[float, ...]
    caching_ratio_stderr: tuple[float, ...]
    first_step_cache_prob: tuple[float, ...]
    first_step_stderr: tuple[float, ...]
    config_hash: str
    seed: int
    trajectory_costs: np.ndarray = field(repr=False, default=None)
    trajectory_cn_costs: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in self.__dict__.items()
                if k not in ("trajectory_costs", "trajectory_cn_costs")}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def csv_row(self) -> str:
        vals = (self.policy, self.horizon, self.trajectory_count, self.mean_discounted_cost,
                self.cost_stderr, self.mean_discounted_cn_cost, self.cn_cost_stderr,
                self.caching_ratio[0], self.caching_ratio_stderr[0],
                self.first_step_cache_prob[0], self.first_step_stderr[0],
                self.config_hash, self.seed)
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in vals)


def simulate(config: ModelConfig, policy: Policy, sim_cfg: SimConfig) -> SimReport:
    """Run R independent trajectories of T slots under ``policy``.

    Slot t of trajectory j uses draw j of stream t + 1 under ``sim_cfg.seed``,
    so different policies see identical exogenous sequences.
    """
    n = config.num_entities
    R = sim_cfg.num_trajectories
    T = sim_cfg.horizon or default_horizon(config.gamma)
    init = sim_cfg.initial_state or StorageState.empty(n)
    if init.num_entities != n:
        raise ConfigError("initial_state", f"expected {n} entries")
    if sim_cfg.initial_requests is not None and len(sim_cfg.initial_requests) != n:
        raise ConfigError("initial_requests", f"expected {n} entries")

    states = np.tile(np.array(init.bits, dtype=bool), (R, 1))
    total, cn_total = _Neumaier(R), _Neumaier(R)
    cache_counts = np.zeros((R, n))
    first = None
    discount = 1.0
    for t in range(T):
        exo = draw_batch(config, sim_cfg.seed, R, stream=t + 1)
        if t == 0 and sim_cfg.initial_requests is not None:
            exo = exo.with_requests(sim_cfg.initial_requests)
        act = policy.decide_batch(states, exo)
        ok = feasible_batch(states, exo, act)
        if not ok.all():
            raise InfeasibleActionError(policy.name, t, int(np.flatnonzero(~ok)[0]))
        total.add(discount * step_cost_batch(exo, act))
        cn_total.add(discount * cn_cost_batch(exo, act))
        cache_counts += act.cache
        if t == 0:
            first = act.cache.astype(float)
        states = act.cache
        discount *= config.gamma

    costs, cn_costs = total.value(), cn_total.value()
    ratios = cache_counts / T
    p_first = first.mean(axis=0)
    return SimReport(
        policy=policy.name,
        horizon=T,
        trajectory_count=R,
        mean_discounted_cost=math.fsum(costs) / R,
        cost_stderr=_stderr(costs),
        mean_discounted_cn_cost=math.fsum(cn_costs) / R,
        cn_cost_stderr=_stderr(cn_costs),
        caching_ratio=tuple(float(x) for x in ratios.mean(axis=0)),
        caching_ratio_stderr=tuple(_stderr(ratios[:, m]) for m in range(n)),
        first_step_cache_prob=tuple(float(p) for p in p_first),
        first_step_stderr=tuple(math.sqrt(p * (1 - p) / R) for p in p_first),
        config_hash=config.fingerprint(),
        seed=sim_cfg.seed,
        trajectory_costs=costs,
        trajectory_cn_costs=cn_costs,
    )


@dataclass(frozen=True)
class CostDifference:
    baseline: str
    other: str
    mean: float       # mean of other - baseline over paired trajectories
    stderr: float


@dataclass(frozen=True)
class Comparison:
    reports: dict[str, SimReport]
    differences: list[CostDifference]

    def difference(self, baseline: str, other: str) -> CostDifference:
        for d in self.differences:
            if (d.baseline, d.other) == (baseline, other):
                return d
            if (d.baseline, d.other) == (other, baseline):
                return CostDifference(baseline, other, -d.mean, d.stderr)
        raise KeyError((baseline, other))

    def to_dict(self) -> dict:
        return {"reports": {k: r.to_dict() for k, r in self.reports.items()},
                "differences": [d.__dict__ for d in self.differences]}


def paired_difference(a: SimReport, b: SimReport) -> CostDifference:
    d = b.trajectory_costs - a.trajectory_costs
    return CostDifference(a.policy, b.policy, math.fsum(d) / d.size, _stderr(d))


def compare(config: ModelConfig, policies: list[Policy], sim_cfg: SimConfig) -> Comparison:
    """Simulate every policy on the same exogenous draws and pair their costs."""
    if len(policies) < 2:
        raise ValueError("compare needs at least two policies")
    reports: dict[str, SimReport] = {}
    for i, p in enumerate(policies):
        key = p.name if p.name not in reports else f"{p.name}#{i}"
        reports[key] = simulate(config, p, sim_cfg)
    diffs = []
    for (ka, a), (kb, b) in itertools.combinations(reports.items(), 2):
        d = paired_difference(a, b)
        diffs.append(CostDifference(ka, kb, d.mean, d.stderr))
    return Comparison(reports, diffs)
