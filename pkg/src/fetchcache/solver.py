"""Bellman minimisation and sample-average value iteration for the reduced value table."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import (
    Action,
    ActionBatch,
    ConfigError,
    Exogenous,
    ExogenousBatch,
    InvalidInputError,
    ModelConfig,
    StorageState,
    state_bits,
    step_cost,
)
from .sampling import SampleSet, make_sample_set

# precomputed per-state cost matrices are kept only below this size
_COST_CACHE_BYTES = 256 * 2**20


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float | None = None   # None -> 1e-4 * largest price mean
    max_iterations: int = 10_000
    num_samples: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError("epsilon", "must be > 0")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations", "must be >= 1")
        if self.num_samples < 1:
            raise ConfigError("num_samples", "must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed", "must be >= 0")

    def resolved_epsilon(self, config: ModelConfig) -> float:
        if self.epsilon is not None:
            return self.epsilon
        top = config.max_price_mean
        return 1e-4 * top if top > 0 else 1e-12


@dataclass(frozen=True, eq=False)
class ValueTable:
    values: np.ndarray
    config_hash: str = ""
    seed: int = 0
    iterations: int = 0
    residual: float = math.inf
    converged: bool = False
    residuals: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = v.size
        if v.ndim != 1 or n < 2 or n & (n - 1):
            raise InvalidInputError("value table length must be a power of two >= 2")
        object.__setattr__(self, "values", v)

    @property
    def num_entities(self) -> int:
        return self.values.size.bit_length() - 1

    def __getitem__(self, state: StorageState | int) -> float:
        idx = state.index if isinstance(state, StorageState) else int(state)
        return float(self.values[idx])

    def is_monotone(self) -> bool:
        return is_monotone(self.values)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "residuals": list(self.residuals),
            "values": self.values.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "ValueTable":
        return cls(np.array(d["values"], dtype=float), d["config_hash"], int(d["seed"]),
                   int(d["iterations"]), float(d["residual"]), bool(d["converged"]),
                   tuple(d.get("residuals", ())))

    @classmethod
    def from_json(cls, text: str) -> "ValueTable":
        return cls.from_dict(json.loads(text))

    # binary layout, little-endian:
    #   b"VBAR" | u32 version | u32 entities | u32 iterations | u8 converged
    #   | f64 residual | u64 seed | 64 ascii bytes config hash | f64[2^entities] values
    _HEADER = struct.Struct("<4sIIIBdQ64s")

    def to_bytes(self) -> bytes:
        head = self._HEADER.pack(b"VBAR", 1, self.num_entities, self.iterations,
                                 int(self.converged), self.residual, self.seed,
                                 self.config_hash.encode().ljust(64, b"\0"))
        return head + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ValueTable":
        magic, version, ent, iters, conv, resid, seed, fp = cls._HEADER.unpack_from(data)
        if magic != b"VBAR" or version != 1:
            raise InvalidInputError("not a value table file")
        values = np.frombuffer(data, dtype="<f8", offset=cls._HEADER.size, count=1 << ent)
        return cls(values.astype(float), fp.rstrip(b"\0").decode(), seed, iters, resid, bool(conv))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        if path.suffix == ".bin":
            path.write_bytes(self.to_bytes())
        else:
            path.write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ValueTable":
        path = Path(path)
        if path.suffix == ".bin":
            return cls.from_bytes(path.read_bytes())
        return cls.from_json(path.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class BellmanResult:
    action: Action
    cost: float


def is_monotone(values: np.ndarray) -> bool:
    """``values[s] >= values[s']`` whenever s is a bitwise subset of s'."""
    v = np.asarray(values)
    n = v.size.bit_length() - 1
    idx = np.arange(v.size)
    for m in range(n):
        lo = idx[(idx >> m) & 1 == 0]
        if np.any(v[lo] < v[lo | (1 << m)]):
            return False
    return True


def caching_vectors(num_entities: int) -> np.ndarray:
    """All caching vectors, row k being the bits of index k."""
    return state_bits(np.arange(1 << num_entities), num_entities)


def cheapest_source(states: np.ndarray, exo: ExogenousBatch) -> tuple[np.ndarray, np.ndarray]:
    """Cheapest way to bring the file to the CN: (price, source).

    source 0 is the cloud, m >= 1 is node m.  The cloud wins ties, then the
    lowest node index.
    """
    price = np.array(exo.lambda_cloud, dtype=float)
    source = np.zeros(len(exo), dtype=np.int64)
    if exo.lambda_in.shape[1]:
        held = np.where(states[:, 1:], exo.lambda_in, np.inf)
        best = held.argmin(axis=1)
        best_price = held[np.arange(len(exo)), best]
        use_node = best_price < price
        price = np.where(use_node, best_price, price)
        source = np.where(use_node, best + 1, 0)
    return price, source


def slot_costs(states: np.ndarray, exo: ExogenousBatch, caching: np.ndarray | None = None) -> np.ndarray:
    """Step cost of the cheapest feasible completion of every caching vector.

    ``states`` is (B, M+1) bool aligned with the rows of ``exo``; returns a
    (B, K) array for the K rows of ``caching`` (default: all 2^(M+1)).
    """
    s = np.asarray(states, dtype=bool)
    n = s.shape[1]
    if exo.num_entities != n:
        raise InvalidInputError("dimension mismatch between states and exogenous batch")
    A = caching_vectors(n) if caching is None else np.asarray(caching, dtype=bool)
    Af = A.astype(float)
    missing = ~s[:, 1:]
    rn = exo.requests[:, 1:]
    served = rn & missing
    needs = exo.requests[:, 0] | served.any(axis=1)

    # deliveries: forced ones for unserved requests, optional ones for caching at a missing node
    forced = (exo.lambda_out * served).sum(axis=1)
    optional = exo.lambda_out * (missing & ~rn)
    delivery = forced[:, None] + optional @ Af[:, 1:].T

    extra = ((missing.astype(float) @ Af[:, 1:].T) > 0) | (~s[:, :1] & A[None, :, 0])
    fetch = (needs[:, None] | extra) & ~s[:, :1]
    price, _ = cheapest_source(s, exo)
    inbound = np.where(fetch, price[:, None], 0.0)
    return exo.rho @ Af.T + delivery + inbound


def complete_actions(states: np.ndarray, exo: ExogenousBatch, cache: np.ndarray) -> ActionBatch:
    """Minimal fetch decisions that serve all requests and enable ``cache``."""
    s = np.asarray(states, dtype=bool)
    cache = np.asarray(cache, dtype=bool)
    B, n = s.shape
    missing = ~s[:, 1:]
    w_out = missing & (exo.requests[:, 1:] | cache[:, 1:])
    needs = exo.requests[:, 0] | (exo.requests[:, 1:] & missing).any(axis=1)
    fetch = (needs | w_out.any(axis=1) | (cache[:, 0] & ~s[:, 0])) & ~s[:, 0]
    _, source = cheapest_source(s, exo)
    w_cloud = fetch & (source == 0)
    w_in = np.zeros((B, n - 1), dtype=bool)
    rows = np.flatnonzero(fetch & (source > 0))
    w_in[rows, source[rows] - 1] = True
    return ActionBatch(w_cloud, w_in, w_out, cache.copy())


def _as_values(table, num_entities: int) -> np.ndarray:
    v = table.values if isinstance(table, ValueTable) else np.asarray(table, dtype=float)
    if v.shape != (1 << num_entities,):
        raise InvalidInputError(
            f"value table has {v.size} entries, expected {1 << num_entities}")
    return v


def inner_minimize(state: StorageState, exo: Exogenous, table, gamma: float) -> BellmanResult:
    """Exact minimiser of step cost plus discounted value of the next state.

    Ties go to the smallest caching index; fetch-source ties go to the
    cloud, then to the lowest node index.
    """
    n = state.num_entities
    if exo.num_entities != n:
        raise InvalidInputError("dimension mismatch between state and exogenous")
    if not 0.0 <= gamma < 1.0:
        raise InvalidInputError("gamma must lie in [0, 1)")
    v = _as_values(table, n)
    s = np.array([state.bits])
    batch = ExogenousBatch.from_list([exo])
    k = int(np.argmin(slot_costs(s, batch)[0] + gamma * v))
    cache = caching_vectors(n)[k][None, :]
    action = complete_actions(s, batch, cache)[0]
    return BellmanResult(action, step_cost(exo, action) + gamma * float(v[k]))


class BellmanOperator:
    """Sample-average Bellman operator on a fixed sample set.

    ``apply(V)[s] = mean over samples of min_a (c(s, a, theta) + gamma V[a])``.
    """

    def __init__(self, gamma: float, samples: SampleSet | ExogenousBatch):
        self.gamma = float(gamma)
        self.batch = samples.batch if isinstance(samples, SampleSet) else samples
        self.num_entities = self.batch.num_entities
        self.num_states = 1 << self.num_entities
        self._caching = caching_vectors(self.num_entities)
        size = self.num_states ** 2 * len(self.batch) * 8
        self._costs = [self._state_costs(s) for s in range(self.num_states)] \
            if size <= _COST_CACHE_BYTES else None

    def _state_costs(self, s: int) -> np.ndarray:
        bits = np.broadcast_to(self._caching[s], (len(self.batch), self.num_entities))
        return slot_costs(bits, self.batch, self._caching)

    def costs(self, s: int) -> np.ndarray:
        return self._costs[s] if self._costs is not None else self._state_costs(s)

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return self.apply_pair(values, np.zeros_like(values))[0]

    def apply_pair(self, hi: np.ndarray, lo: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """One backup on a double-double table ``hi + lo``.

        The argmin uses the rounded objective; the selected values are then
        summed in double-double arithmetic, so the result carries roughly
        twice the working precision.
        """
        future, future_err = _two_prod(self.gamma, hi)
        future_lo = self.gamma * lo
        n = len(self.batch)
        rows = np.arange(n)
        out_hi, out_lo = np.empty(self.num_states), np.empty(self.num_states)
        for s in range(self.num_states):
            c = self.costs(s)
            k = np.argmin(c + future, axis=1)
            cs, fs = c[rows, k], future[k]
            q, q_err = _two_sum(cs, fs)
            total, rest = _pairwise_sum(q)
            rest += np.sum(q_err + future_err[k] + future_lo[k])
            h = total / n
            p, pe = _two_prod(h, np.float64(n))
            l = ((total - p) - pe + rest) / n
            out_hi[s] = h + l
            out_lo[s] = l - (out_hi[s] - h)
        return out_hi, out_lo


def _two_sum(a, b):
    s = a + b
    z = s - a
    return s, (a - (s - z)) + (b - z)


def _pairwise_sum(x: np.ndarray) -> tuple[float, float]:
    """Sum of x as an unevaluated pair (hi, lo), via a tree of exact additions."""
    hi, lo = np.asarray(x, dtype=float), np.zeros(len(x))
    while hi.size > 1:
        if hi.size % 2:
            hi, lo = np.append(hi, 0.0), np.append(lo, 0.0)
        hi, err = _two_sum(hi[0::2], hi[1::2])
        lo = lo[0::2] + lo[1::2] + err
    h, l = _two_sum(hi[0], lo[0])
    return float(h), float(l)


def _two_prod(a, b):
    """Dekker's exact product: a*b == hi + lo (barring overflow)."""
    hi = a * b
    split = 134217729.0  # 2**27 + 1

    def halves(x):
        t = split * x
        h = t - (t - x)
        return h, x - h

    ah, al = halves(np.float64(a))
    bh, bl = halves(b)
    lo = ((ah * bh - hi) + ah * bl + al * bh) + al * bl
    return hi, lo


def value_iteration(config: ModelConfig, solver_cfg: SolverConfig,
                    samples: SampleSet | None = None, callback=None) -> ValueTable:
    """Synchronous value iteration from the zero table.

    Stops once the sup-norm change drops below epsilon, or after
    ``max_iterations`` sweeps with ``converged=False``.  ``callback``, if
    given, is called with each new table.
    """
    if samples is None:
        samples = make_sample_set(config, solver_cfg.num_samples, solver_cfg.seed)
    elif samples.batch.num_entities != config.num_entities:
        raise InvalidInputError("sample set does not match the model dimension")
    eps = solver_cfg.resolved_epsilon(config)
    op = BellmanOperator(config.gamma, samples)
    v, v_lo = np.zeros(config.num_states), np.zeros(config.num_states)
    residuals: list[float] = []
    converged = False
    for _ in range(solver_cfg.max_iterations):
        nxt, nxt_lo = op.apply_pair(v, v_lo)
        # measured on the double-double tables, not on their rounded parts
        residuals.append(float(np.max(np.abs((nxt - v) + (nxt_lo - v_lo)))))
        v, v_lo = nxt, nxt_lo
        if callback is not None:
            callback(v)
        if residuals[-1] < eps:
            converged = True
            break
    return ValueTable(v, config.fingerprint(), samples.seed, len(residuals),
                      residuals[-1], converged, tuple(residuals))


def bellman_residual(table: ValueTable | np.ndarray, config: ModelConfig,
                     solver_cfg: SolverConfig, samples: SampleSet | None = None) -> float:
    """Sup-norm distance between the table and one more Bellman application."""
    if samples is None:
        samples = make_sample_set(config, solver_cfg.num_samples, solver_cfg.seed)
    v = _as_values(table, config.num_entities)
    return float(np.max(np.abs(BellmanOperator(config.gamma, samples).apply(v) - v)))
