"""Domain types, feasibility, per-slot cost and state transition.

Entity 0 is the central node (CN); entities 1..M are regular nodes.
Storage states are encoded little-endian: bit m of the index is entity m.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_MAX_NODES = 16


class InvalidInputError(ValueError):
    """Raised on dimension mismatches or out-of-range inputs."""


class ConfigError(InvalidInputError):
    """A model/solver/simulation configuration is invalid.

    ``key`` names the offending field so front ends can report it.
    """

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _floats(values) -> tuple[float, ...]:
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class ModelConfig:
    num_nodes: int
    gamma: float
    request_probs: tuple[float, ...]
    rho_means: tuple[float, ...]
    lambda_cloud_mean: float
    lambda_in_means: tuple[float, ...]
    lambda_out_means: tuple[float, ...]
    max_nodes: int = field(default=DEFAULT_MAX_NODES, compare=False)

    def __post_init__(self):
        # normalise sequences to float tuples so instances hash and compare
        for name in ("request_probs", "rho_means", "lambda_in_means", "lambda_out_means"):
            object.__setattr__(self, name, _floats(getattr(self, name)))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "lambda_cloud_mean", float(self.lambda_cloud_mean))
        self.validate()

    def validate(self) -> None:
        m = self.num_nodes
        if not isinstance(m, (int, np.integer)) or m < 0:
            raise ConfigError("num_nodes", f"must be a nonnegative integer, got {m!r}")
        if m > self.max_nodes:
            raise ConfigError("num_nodes", f"{m} exceeds the limit of {self.max_nodes}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma", f"must lie in [0, 1), got {self.gamma}")
        for name, n in (("request_probs", m + 1), ("rho_means", m + 1),
                        ("lambda_in_means", m), ("lambda_out_means", m)):
            if len(getattr(self, name)) != n:
                raise ConfigError(name, f"expected {n} entries, got {len(getattr(self, name))}")
        if any(not 0.0 <= p <= 1.0 for p in self.request_probs):
            raise ConfigError("request_probs", "probabilities must lie in [0, 1]")
        for name in ("rho_means", "lambda_in_means", "lambda_out_means"):
            if any(not (np.isfinite(v) and v >= 0.0) for v in getattr(self, name)):
                raise ConfigError(name, "means must be finite and >= 0")
        if not (np.isfinite(self.lambda_cloud_mean) and self.lambda_cloud_mean >= 0.0):
            raise ConfigError("lambda_cloud_mean", "mean must be finite and >= 0")

    @classmethod
    def uniform(cls, num_nodes: int = 0, gamma: float = 0.9, request_prob: float = 0.5,
                rho_mean: float = 1.0, lambda_mean: float = 1.0,
                node_request_prob: float | None = None, **kw) -> "ModelConfig":
        """Config with one shared price mean per link class.

        ``node_request_prob`` defaults to ``request_prob``.
        """
        p_node = request_prob if node_request_prob is None else node_request_prob
        return cls(
            num_nodes=num_nodes,
            gamma=gamma,
            request_probs=(request_prob,) + (p_node,) * num_nodes,
            rho_means=(rho_mean,) * (num_nodes + 1),
            lambda_cloud_mean=lambda_mean,
            lambda_in_means=(lambda_mean,) * num_nodes,
            lambda_out_means=(lambda_mean,) * num_nodes,
            **kw,
        )

    @property
    def num_entities(self) -> int:
        return self.num_nodes + 1

    @property
    def num_states(self) -> int:
        return 1 << self.num_entities

    @property
    def max_price_mean(self) -> float:
        return max((self.lambda_cloud_mean,) + self.rho_means
                   + self.lambda_in_means + self.lambda_out_means)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("max_nodes")
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class StorageState:
    bits: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(bool(b) for b in self.bits))
        if len(self.bits) == 0:
            raise InvalidInputError("a storage state needs at least the CN bit")

    @property
    def index(self) -> int:
        return sum(1 << m for m, b in enumerate(self.bits) if b)

    @property
    def num_entities(self) -> int:
        return len(self.bits)

    @classmethod
    def from_index(cls, index: int, num_entities: int) -> "StorageState":
        if not 0 <= index < (1 << num_entities):
            raise InvalidInputError(f"state index {index} out of range for {num_entities} entities")
        return cls(tuple(bool((index >> m) & 1) for m in range(num_entities)))

    @classmethod
    def empty(cls, num_entities: int) -> "StorageState":
        return cls((False,) * num_entities)

    @classmethod
    def full(cls, num_entities: int) -> "StorageState":
        return cls((True,) * num_entities)

    def __le__(self, other: "StorageState") -> bool:
        return all(a <= b for a, b in zip(self.bits, other.bits))


@dataclass(frozen=True, eq=False)
class Exogenous:
    """One slot's realisation: requests, caching prices and fetch prices."""

    requests: np.ndarray     # (M+1,) bool
    rho: np.ndarray          # (M+1,)
    lambda_cloud: float
    lambda_in: np.ndarray    # (M,) node m -> CN
    lambda_out: np.ndarray   # (M,) CN -> node m

    def __post_init__(self):
        object.__setattr__(self, "requests", np.asarray(self.requests, dtype=bool).reshape(-1))
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float).reshape(-1))
        object.__setattr__(self, "lambda_in", np.asarray(self.lambda_in, dtype=float).reshape(-1))
        object.__setattr__(self, "lambda_out", np.asarray(self.lambda_out, dtype=float).reshape(-1))
        object.__setattr__(self, "lambda_cloud", float(self.lambda_cloud))
        n = self.requests.size
        if n == 0 or self.rho.size != n or self.lambda_in.size != n - 1 or self.lambda_out.size != n - 1:
            raise InvalidInputError("inconsistent exogenous vector lengths")
        prices = np.concatenate([self.rho, self.lambda_in, self.lambda_out, [self.lambda_cloud]])
        if not np.all(np.isfinite(prices)) or np.any(prices < 0):
            raise InvalidInputError("prices must be finite and >= 0")

    @property
    def num_entities(self) -> int:
        return self.requests.size

    def __eq__(self, other):
        if not isinstance(other, Exogenous):
            return NotImplemented
        return (np.array_equal(self.requests, other.requests)
                and np.array_equal(self.rho, other.rho)
                and self.lambda_cloud == other.lambda_cloud
                and np.array_equal(self.lambda_in, other.lambda_in)
                and np.array_equal(self.lambda_out, other.lambda_out))

    @classmethod
    def quiet(cls, num_entities: int, price: float = 0.0) -> "Exogenous":
        """No requests and every price equal to ``price``."""
        m = num_entities - 1
        return cls(np.zeros(num_entities, bool), np.full(num_entities, price), price,
                   np.full(m, price), np.full(m, price))


@dataclass(frozen=True)
class ExogenousBatch:
    """B realisations stacked along the leading axis."""

    requests: np.ndarray     # (B, M+1) bool
    rho: np.ndarray          # (B, M+1)
    lambda_cloud: np.ndarray # (B,)
    lambda_in: np.ndarray    # (B, M)
    lambda_out: np.ndarray   # (B, M)

    def __len__(self) -> int:
        return self.lambda_cloud.shape[0]

    @property
    def num_entities(self) -> int:
        return self.requests.shape[1]

    def __getitem__(self, i: int) -> Exogenous:
        return Exogenous(self.requests[i], self.rho[i], self.lambda_cloud[i],
                         self.lambda_in[i], self.lambda_out[i])

    def take(self, idx) -> "ExogenousBatch":
        return ExogenousBatch(self.requests[idx], self.rho[idx], self.lambda_cloud[idx],
                              self.lambda_in[idx], self.lambda_out[idx])

    def scaled(self, alpha: float) -> "ExogenousBatch":
        return ExogenousBatch(self.requests, self.rho * alpha, self.lambda_cloud * alpha,
                              self.lambda_in * alpha, self.lambda_out * alpha)

    def with_requests(self, requests) -> "ExogenousBatch":
        req = np.broadcast_to(np.asarray(requests, dtype=bool), self.requests.shape).copy()
        return ExogenousBatch(req, self.rho, self.lambda_cloud, self.lambda_in, self.lambda_out)

    @classmethod
    def from_list(cls, draws: Sequence[Exogenous]) -> "ExogenousBatch":
        if not draws:
            raise InvalidInputError("empty exogenous list")
        return cls(np.stack([d.requests for d in draws]),
                   np.stack([d.rho for d in draws]),
                   np.array([d.lambda_cloud for d in draws]),
                   np.stack([d.lambda_in for d in draws]),
                   np.stack([d.lambda_out for d in draws]))


@dataclass(frozen=True)
class Action:
    w_cloud: bool
    w_in: tuple[bool, ...]
    w_out: tuple[bool, ...]
    cache: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "w_cloud", bool(self.w_cloud))
        for name in ("w_in", "w_out", "cache"):
            object.__setattr__(self, name, tuple(bool(b) for b in getattr(self, name)))
        m = len(self.cache) - 1
        if m < 0 or len(self.w_in) != m or len(self.w_out) != m:
            raise InvalidInputError("inconsistent action vector lengths")

    @property
    def num_entities(self) -> int:
        return len(self.cache)

    @classmethod
    def idle(cls, num_entities: int) -> "Action":
        m = num_entities - 1
        return cls(False, (False,) * m, (False,) * m, (False,) * num_entities)


@dataclass(frozen=True)
class ActionBatch:
    w_cloud: np.ndarray   # (B,) bool
    w_in: np.ndarray      # (B, M) bool
    w_out: np.ndarray     # (B, M) bool
    cache: np.ndarray     # (B, M+1) bool

    def __len__(self) -> int:
        return self.w_cloud.shape[0]

    def __getitem__(self, i: int) -> Action:
        return Action(self.w_cloud[i], self.w_in[i], self.w_out[i], self.cache[i])

    @classmethod
    def from_list(cls, actions: Sequence[Action]) -> "ActionBatch":
        return cls(np.array([a.w_cloud for a in actions], dtype=bool),
                   np.array([a.w_in for a in actions], dtype=bool).reshape(len(actions), -1),
                   np.array([a.w_out for a in actions], dtype=bool).reshape(len(actions), -1),
                   np.array([a.cache for a in actions], dtype=bool))


def state_bits(indices, num_entities: int) -> np.ndarray:
    """Decode state indices into a (..., num_entities) boolean array."""
    idx = np.asarray(indices, dtype=np.int64)
    return ((idx[..., None] >> np.arange(num_entities)) & 1).astype(bool)


def state_index(bits) -> np.ndarray:
    """Encode (..., num_entities) booleans into state indices."""
    b = np.asarray(bits, dtype=np.int64)
    return (b << np.arange(b.shape[-1])).sum(axis=-1)


def _check_dims(state: StorageState, exo: Exogenous, act: Action | None = None) -> None:
    n = state.num_entities
    if exo.num_entities != n or (act is not None and act.num_entities != n):
        raise InvalidInputError(
            f"dimension mismatch: state has {n} entities, exogenous {exo.num_entities}"
            + ("" if act is None else f", action {act.num_entities}"))


def cn_needs(state: StorageState, exo: Exogenous) -> bool:
    """Whether the CN must hold the file this slot to serve requests.

    True for a direct CN request or a forwarded request from a node that
    does not hold the file.
    """
    _check_dims(state, exo)
    s, r = state.bits, exo.requests
    return bool(r[0]) or any(r[m] and not s[m] for m in range(1, len(s)))


def is_feasible(state: StorageState, exo: Exogenous, act: Action) -> bool:
    _check_dims(state, exo, act)
    s, r = state.bits, exo.requests
    M = len(s) - 1
    node_supply = sum(act.w_in[m - 1] and s[m] for m in range(1, M + 1))
    at_cn = s[0] + act.w_cloud + node_supply

    if cn_needs(state, exo) > at_cn:                         # (C2)
        return False
    if act.cache[0] > at_cn:                                 # (C4)
        return False
    for m in range(1, M + 1):
        if act.w_in[m - 1] > s[m]:                           # source must hold the file
            return False
        if r[m] and not s[m] and not act.w_out[m - 1]:       # unserved node request
            return False
        if act.cache[m] > s[m] + act.w_out[m - 1]:           # (C3)
            return False
        others = node_supply - (act.w_in[m - 1] and s[m])
        if act.w_out[m - 1] > s[0] + act.w_cloud + others:   # (C5)
            return False
    return True


def feasible_batch(states: np.ndarray, exo: ExogenousBatch, act: ActionBatch) -> np.ndarray:
    """Vectorised :func:`is_feasible` over B rows; ``states`` is (B, M+1) bool."""
    s = np.asarray(states, dtype=bool)
    if s.shape != exo.requests.shape or act.cache.shape != s.shape:
        raise InvalidInputError("dimension mismatch in feasible_batch")
    sn, rn = s[:, 1:], exo.requests[:, 1:]
    supply_m = act.w_in & sn
    node_supply = supply_m.sum(axis=1)
    at_cn = s[:, 0].astype(int) + act.w_cloud + node_supply
    needs = exo.requests[:, 0] | (rn & ~sn).any(axis=1)
    ok = needs <= at_cn
    ok &= act.cache[:, 0] <= at_cn
    ok &= ~(act.w_in & ~sn).any(axis=1)
    ok &= ~(rn & ~sn & ~act.w_out).any(axis=1)
    ok &= ~(act.cache[:, 1:] & ~sn & ~act.w_out).any(axis=1)
    others = node_supply[:, None] - supply_m
    ok &= ~(act.w_out & ((s[:, :1].astype(int) + act.w_cloud[:, None] + others) == 0)).any(axis=1)
    return ok


def step_cost(exo: Exogenous, act: Action) -> float:
    if exo.num_entities != act.num_entities:
        raise InvalidInputError("dimension mismatch between exogenous and action")
    return (exo.lambda_cloud * act.w_cloud
            + float(np.dot(exo.rho, act.cache))
            + float(np.dot(exo.lambda_in, act.w_in))
            + float(np.dot(exo.lambda_out, act.w_out)))


def step_cost_batch(exo: ExogenousBatch, act: ActionBatch) -> np.ndarray:
    return (exo.lambda_cloud * act.w_cloud
            + (exo.rho * act.cache).sum(axis=1)
            + (exo.lambda_in * act.w_in).sum(axis=1)
            + (exo.lambda_out * act.w_out).sum(axis=1))


def cn_cost_batch(exo: ExogenousBatch, act: ActionBatch) -> np.ndarray:
    """The CN's own share of the slot cost: cloud fetch, CN caching, inbound fetches."""
    return (exo.lambda_cloud * act.w_cloud
            + exo.rho[:, 0] * act.cache[:, 0]
            + (exo.lambda_in * act.w_in).sum(axis=1))


def transition(act: Action) -> StorageState:
    return StorageState(act.cache)
