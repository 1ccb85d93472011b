"""Flat ``key = value`` run configuration files.

Lines starting with ``#`` are comments.  Lists are comma separated; a single
value given for a per-entity list is repeated to the required length::

    gamma = 0.9
    num_nodes = 2
    request_probs = 0.5, 0.2, 0.2
    rho_means = 10
    lambda_cloud_mean = 20
    lambda_in_means = 15
    lambda_out_means = 15
    epsilon = 1e-6
    max_iterations = 5000
    num_samples = 2000
    solver_seed = 1
    horizon = 176
    num_trajectories = 2000
    sim_seed = 2
    initial_state = 0, 0, 0
    initial_requests = 1, 0, 0
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .model import ConfigError, ModelConfig, StorageState
from .sim import SimConfig
from .solver import SolverConfig

REQUIRED = ("gamma", "num_nodes", "request_probs", "rho_means", "lambda_cloud_mean")
OPTIONAL = ("lambda_in_means", "lambda_out_means", "epsilon", "max_iterations",
            "num_samples", "solver_seed", "horizon", "num_trajectories", "sim_seed",
            "initial_state", "initial_requests")
_SECTION = "run"


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    solver: SolverConfig
    sim: SimConfig

    def to_dict(self) -> dict:
        sim = self.sim
        return {
            "model": self.model.to_dict(),
            "solver": {"epsilon": self.solver.epsilon, "max_iterations": self.solver.max_iterations,
                       "num_samples": self.solver.num_samples, "seed": self.solver.seed},
            "sim": {"horizon": sim.horizon, "num_trajectories": sim.num_trajectories,
                    "seed": sim.seed,
                    "initial_state": None if sim.initial_state is None else list(sim.initial_state.bits),
                    "initial_requests": None if sim.initial_requests is None else list(sim.initial_requests)},
        }

    def with_seed(self, seed: int) -> "RunConfig":
        s = self.sim
        return RunConfig(self.model,
                         SolverConfig(self.solver.epsilon, self.solver.max_iterations,
                                      self.solver.num_samples, seed),
                         SimConfig(s.horizon, s.num_trajectories, s.initial_state,
                                   s.initial_requests, seed))


def _number(key: str, text: str, kind=float):
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {kind.__name__}") from None


def _list(key: str, text: str, n: int, kind=float) -> tuple:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if n == 0:
        # no regular nodes: a lone placeholder value is tolerated
        if len(items) > 1:
            raise ConfigError(key, "expected no entries")
        return ()
    values = tuple(_number(key, t, kind) for t in items)
    if len(values) == 1:
        return values * n
    if len(values) != n:
        raise ConfigError(key, f"expected {n} entries (or one to repeat), got {len(values)}")
    return values


def _bits(key: str, text: str, n: int) -> tuple[bool, ...]:
    vals = _list(key, text, n, int)
    if any(v not in (0, 1) for v in vals):
        raise ConfigError(key, "entries must be 0 or 1")
    return tuple(bool(v) for v in vals)


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",))
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError("syntax", str(exc).splitlines()[0]) from None
    raw = dict(parser[_SECTION])
    for key in raw:
        if key not in REQUIRED + OPTIONAL:
            raise ConfigError(key, "unknown key")
    for key in REQUIRED:
        if key not in raw:
            raise ConfigError(key, "missing required key")

    M = _number("num_nodes", raw["num_nodes"], int)
    if M < 0:
        raise ConfigError("num_nodes", "must be >= 0")
    n = M + 1
    model = ModelConfig(
        num_nodes=M,
        gamma=_number("gamma", raw["gamma"]),
        request_probs=_list("request_probs", raw["request_probs"], n),
        rho_means=_list("rho_means", raw["rho_means"], n),
        lambda_cloud_mean=_number("lambda_cloud_mean", raw["lambda_cloud_mean"]),
        lambda_in_means=_list("lambda_in_means", raw.get("lambda_in_means", "0"), M),
        lambda_out_means=_list("lambda_out_means", raw.get("lambda_out_means", "0"), M),
    )
    solver = SolverConfig(
        epsilon=_number("epsilon", raw["epsilon"]) if "epsilon" in raw else None,
        max_iterations=_number("max_iterations", raw.get("max_iterations", "10000"), int),
        num_samples=_number("num_samples", raw.get("num_samples", "2000"), int),
        seed=_number("solver_seed", raw.get("solver_seed", "0"), int),
    )
    sim = SimConfig(
        horizon=_number("horizon", raw["horizon"], int) if "horizon" in raw else None,
        num_trajectories=_number("num_trajectories", raw.get("num_trajectories", "2000"), int),
        initial_state=StorageState(_bits("initial_state", raw["initial_state"], n))
        if "initial_state" in raw else None,
        initial_requests=_bits("initial_requests", raw["initial_requests"], n)
        if "initial_requests" in raw else None,
        seed=_number("sim_seed", raw.get("sim_seed", "0"), int),
    )
    return RunConfig(model, solver, sim)


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("path", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)
