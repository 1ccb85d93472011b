"""Decision policies: DP-optimal, myopic, separable heuristic and fixed baselines.

Each policy only picks the caching vector; fetches are then filled in by
the minimal completion shared with the solver, so every output is feasible
by construction.
"""
from __future__ import annotations

import numpy as np

from .model import Action, Exogenous, ExogenousBatch, InvalidInputError, ModelConfig, StorageState
from .solver import (
    SolverConfig,
    ValueTable,
    caching_vectors,
    cheapest_source,
    complete_actions,
    slot_costs,
    value_iteration,
)

POLICY_NAMES = ("dp", "myopic", "separable", "never", "always")


class Policy:
    name = "policy"

    def cache_batch(self, states: np.ndarray, exo: ExogenousBatch) -> np.ndarray:
        raise NotImplementedError

    def decide_batch(self, states: np.ndarray, exo: ExogenousBatch):
        states = np.asarray(states, dtype=bool)
        return complete_actions(states, exo, self.cache_batch(states, exo))

    def decide(self, state: StorageState, exo: Exogenous) -> Action:
        if state.num_entities != exo.num_entities:
            raise InvalidInputError("dimension mismatch between state and exogenous")
        return self.decide_batch(np.array([state.bits]), ExogenousBatch.from_list([exo]))[0]

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


class DPPolicy(Policy):
    name = "dp"

    def __init__(self, table: ValueTable | np.ndarray, gamma: float):
        self.values = table.values if isinstance(table, ValueTable) else np.asarray(table, float)
        self.gamma = float(gamma)
        self.num_entities = self.values.size.bit_length() - 1

    def cache_batch(self, states, exo):
        if states.shape[1] != self.num_entities:
            raise InvalidInputError("value table dimension does not match the state")
        total = slot_costs(states, exo) + self.gamma * self.values
        return caching_vectors(self.num_entities)[np.argmin(total, axis=1)]


class MyopicPolicy(Policy):
    """Cache where the file is requested or held and caching beats refetching.

    The CN compares against its cheapest inbound price; node m against its
    delivery price.
    """

    name = "myopic"

    def cache_batch(self, states, exo):
        s, r = states, exo.requests
        needs = r[:, 0] | (r[:, 1:] & ~s[:, 1:]).any(axis=1)
        src, _ = cheapest_source(s, exo)
        cache = np.empty_like(s)
        cache[:, 0] = (needs | s[:, 0]) & (exo.rho[:, 0] < src)
        cache[:, 1:] = (r[:, 1:] | s[:, 1:]) & (exo.rho[:, 1:] < exo.lambda_out)
        return cache


class SeparablePolicy(Policy):
    """Independent keep-or-drop test per entity using single-entity values.

    ``per_node`` is an (M+1, 2) array of surrogate values ``(V_m(0), V_m(1))``.
    """

    name = "separable"

    def __init__(self, per_node, gamma: float):
        self.per_node = np.asarray(per_node, dtype=float).reshape(-1, 2)
        self.gamma = float(gamma)

    def cache_batch(self, states, exo):
        s, r = states, exo.requests
        if s.shape[1] != self.per_node.shape[0]:
            raise InvalidInputError("per-node values do not match the state dimension")
        needs = r[:, 0] | (r[:, 1:] & ~s[:, 1:]).any(axis=1)
        cn_has_file = s[:, 0] | needs
        src, _ = cheapest_source(s, exo)
        # price of getting the file onto an entity that will not hold it otherwise
        extra = np.zeros_like(exo.rho)
        extra[:, 0] = np.where(cn_has_file, 0.0, src)
        in_plus = s[:, 1:] | r[:, 1:]
        extra[:, 1:] = np.where(in_plus, 0.0,
                                exo.lambda_out + np.where(cn_has_file, 0.0, src)[:, None])
        gain = self.gamma * (self.per_node[:, 0] - self.per_node[:, 1])
        return exo.rho + extra < gain


class NeverCache(Policy):
    name = "never"

    def cache_batch(self, states, exo):
        return np.zeros_like(states)


class AlwaysCache(Policy):
    name = "always"

    def cache_batch(self, states, exo):
        return np.ones_like(states)


def dp_policy(table: ValueTable | np.ndarray, gamma: float) -> DPPolicy:
    return DPPolicy(table, gamma)


def myopic_policy() -> MyopicPolicy:
    return MyopicPolicy()


def separable_policy(per_node, gamma: float) -> SeparablePolicy:
    return SeparablePolicy(per_node, gamma)


def baseline_policies() -> dict[str, Policy]:
    return {"never": NeverCache(), "always": AlwaysCache()}


def single_entity_config(config: ModelConfig, m: int) -> ModelConfig:
    """Entity m in isolation; a regular node's only fetch link is its delivery link."""
    fetch_mean = config.lambda_cloud_mean if m == 0 else config.lambda_out_means[m - 1]
    return ModelConfig(num_nodes=0, gamma=config.gamma,
                       request_probs=(config.request_probs[m],),
                       rho_means=(config.rho_means[m],),
                       lambda_cloud_mean=fetch_mean,
                       lambda_in_means=(), lambda_out_means=())


def compute_per_node_values(config: ModelConfig, solver_cfg: SolverConfig) -> np.ndarray:
    """(M+1, 2) array of single-entity value tables."""
    return np.array([value_iteration(single_entity_config(config, m), solver_cfg).values
                     for m in range(config.num_entities)])


def make_policy(name: str, gamma: float | None = None, table=None, per_node=None) -> Policy:
    if name == "dp":
        if table is None or gamma is None:
            raise InvalidInputError("the dp policy needs a value table and gamma")
        return DPPolicy(table, gamma)
    if name == "separable":
        if per_node is None or gamma is None:
            raise InvalidInputError("the separable policy needs per-node values and gamma")
        return SeparablePolicy(per_node, gamma)
    if name == "myopic":
        return MyopicPolicy()
    if name in ("never", "always"):
        return baseline_policies()[name]
    raise InvalidInputError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")
