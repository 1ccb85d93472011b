"""Seeded generation of exogenous realisations.

Every draw consumes ``4M + 3`` uniforms from ``[0, 1)``, grouped by entity::

    entity 0:      r_0, rho_0, lambda_cloud
    entity m >= 1: r_m, rho_m, lambda_in_m, lambda_out_m

Requests are ``u < p``; prices are ``2 * mean * u``.  Draws are grouped in
blocks of :data:`BLOCK_SIZE`; the group of entity ``e`` in block ``b`` of
stream ``k`` under seed ``s`` comes from a Philox generator keyed by
``SeedSequence([s, k, b, e])``.  Draw ``i`` therefore never depends on how
many draws are requested or on which worker produces its block, and the
CN's variates are the same for every network size M.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Exogenous, ExogenousBatch, InvalidInputError, ModelConfig

BLOCK_SIZE = 1024

# stream 0 feeds the solver's sample set; simulation slot t uses stream t + 1
SOLVER_STREAM = 0


def variates_per_draw(num_nodes: int) -> int:
    return 4 * num_nodes + 3


def _from_uniforms(config: ModelConfig, u: np.ndarray) -> ExogenousBatch:
    M = config.num_nodes
    cn, nodes = u[:, :3], u[:, 3:].reshape(len(u), M, 4)
    p = np.asarray(config.request_probs)
    requests = np.concatenate([cn[:, :1] < p[0], nodes[:, :, 0] < p[1:]], axis=1)
    rho_means = np.asarray(config.rho_means)
    rho = 2.0 * rho_means * np.concatenate([cn[:, 1:2], nodes[:, :, 1]], axis=1)
    return ExogenousBatch(
        requests=requests,
        rho=rho,
        lambda_cloud=2.0 * config.lambda_cloud_mean * cn[:, 2],
        lambda_in=2.0 * np.asarray(config.lambda_in_means) * nodes[:, :, 2],
        lambda_out=2.0 * np.asarray(config.lambda_out_means) * nodes[:, :, 3],
    )


def sample_exogenous(config: ModelConfig, rng: np.random.Generator) -> Exogenous:
    """One realisation, consuming exactly ``4M + 3`` doubles from ``rng``."""
    u = rng.random(variates_per_draw(config.num_nodes))
    return _from_uniforms(config, u[None, :])[0]


def _block(seed: int, stream: int, block: int, num_nodes: int) -> np.ndarray:
    groups = []
    for e in range(num_nodes + 1):
        ss = np.random.SeedSequence([int(seed), int(stream), int(block), e])
        groups.append(np.random.Generator(np.random.Philox(ss)).random((BLOCK_SIZE, 3 if e == 0 else 4)))
    return np.concatenate(groups, axis=1)


def uniforms(seed: int, n: int, num_nodes: int, start: int = 0, stream: int = 0) -> np.ndarray:
    """Rows ``start .. start+n-1`` of the uniform stream ``(seed, stream)``."""
    if seed < 0:
        raise InvalidInputError("seed must be nonnegative")
    first, last = start // BLOCK_SIZE, (start + n - 1) // BLOCK_SIZE
    rows = np.concatenate([_block(seed, stream, b, num_nodes) for b in range(first, last + 1)])
    offset = start - first * BLOCK_SIZE
    return rows[offset: offset + n]


def draw_batch(config: ModelConfig, seed: int, n: int, start: int = 0,
               stream: int = SOLVER_STREAM) -> ExogenousBatch:
    if n < 1:
        raise InvalidInputError("need at least one draw")
    u = uniforms(seed, n, config.num_nodes, start=start, stream=stream)
    return _from_uniforms(config, u)


@dataclass(frozen=True)
class SampleSet:
    batch: ExogenousBatch
    seed: int
    config_hash: str

    def __len__(self) -> int:
        return len(self.batch)

    @property
    def draws(self) -> list[Exogenous]:
        return [self.batch[i] for i in range(len(self.batch))]

    def matches(self, config: ModelConfig, seed: int | None = None) -> bool:
        return self.config_hash == config.fingerprint() and (seed is None or seed == self.seed)

    def save(self, directory: str | Path) -> Path:
        """Write ``samples-<hash16>-<seed>-<n>.npz``; returns the path."""
        path = Path(directory) / cache_filename(self.config_hash, self.seed, len(self))
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = json.dumps({"seed": self.seed, "config_hash": self.config_hash, "n": len(self)})
        b = self.batch
        np.savez(path, meta=np.array(meta), requests=b.requests, rho=b.rho,
                 lambda_cloud=b.lambda_cloud, lambda_in=b.lambda_in, lambda_out=b.lambda_out)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "SampleSet":
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            batch = ExogenousBatch(z["requests"], z["rho"], z["lambda_cloud"],
                                   z["lambda_in"], z["lambda_out"])
        return cls(batch, meta["seed"], meta["config_hash"])


def cache_filename(config_hash: str, seed: int, n: int) -> str:
    return f"samples-{config_hash[:16]}-{seed}-{n}.npz"


def make_sample_set(config: ModelConfig, n: int, seed: int,
                    cache_dir: str | Path | None = None) -> SampleSet:
    """Deterministic sample set; optionally read through an on-disk cache.

    A cached file is reused only when its stored fingerprint matches the
    config, otherwise it is regenerated and overwritten.
    """
    if n < 1:
        raise InvalidInputError("sample set size must be >= 1")
    fp = config.fingerprint()
    if cache_dir is not None:
        path = Path(cache_dir) / cache_filename(fp, seed, n)
        if path.exists():
            cached = SampleSet.load(path)
            if cached.matches(config, seed) and len(cached) == n:
                return cached
    ss = SampleSet(draw_batch(config, seed, n), int(seed), fp)
    if cache_dir is not None:
        ss.save(cache_dir)
    return ss
