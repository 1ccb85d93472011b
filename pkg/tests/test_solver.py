import numpy as np
import pytest

from conftest import random_exogenous, random_state
from oracles import backward_induction, brute_force_minimize
from fetchcache.model import (
    Exogenous,
    InvalidInputError,
    ModelConfig,
    StorageState,
    is_feasible,
    step_cost,
    transition,
)
from fetchcache.sampling import make_sample_set
from fetchcache.solver import (
    BellmanOperator,
    SolverConfig,
    ValueTable,
    bellman_residual,
    inner_minimize,
    is_monotone,
    value_iteration,
)


def random_table(rng, n, scale=20.0):
    return rng.random(1 << n) * scale


class TestInnerMinimize:
    def test_nothing_to_do(self):
        e = Exogenous([False, False, False], [1, 2, 3], 4, [5, 6], [7, 8])
        res = inner_minimize(StorageState.empty(3), e, np.zeros(8), 0.9)
        assert res.cost == 0
        assert not any(res.action.cache) and not res.action.w_cloud

    def test_single_cn_fetch_without_caching(self):
        e = Exogenous([True], [3.0], 5.0, [], [])
        res = inner_minimize(StorageState.empty(1), e, np.zeros(2), 0.9)
        assert res.action.w_cloud and res.action.cache == (False,)
        assert res.cost == 5

    def test_matches_brute_force_on_fixed_pattern(self, rng):
        s = StorageState((False, True, False))
        for _ in range(20):
            e = random_exogenous(rng, 3)
            e = Exogenous([True, False, True], e.rho, e.lambda_cloud, e.lambda_in, e.lambda_out)
            v = random_table(rng, 3)
            best, argmins = brute_force_minimize(s, e, v, 0.9)
            res = inner_minimize(s, e, v, 0.9)
            assert res.cost == best
            assert res.action in argmins

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_oracle_equivalence(self, rng, n):
        for _ in range(100 if n < 3 else 30):
            s, e = random_state(rng, n), random_exogenous(rng, n, p=float(rng.random()))
            v, g = random_table(rng, n), float(rng.random()) * 0.99
            best, argmins = brute_force_minimize(s, e, v, g)
            res = inner_minimize(s, e, v, g)
            assert res.cost == best
            assert res.action in argmins

    def test_result_invariants(self, rng):
        for _ in range(200):
            s, e = random_state(rng, 3), random_exogenous(rng, 3)
            v = random_table(rng, 3)
            res = inner_minimize(s, e, v, 0.8)
            a = res.action
            assert is_feasible(s, e, a)
            assert res.cost == step_cost(e, a) + 0.8 * v[transition(a).index]
            assert not any(w and held for w, held in zip(a.w_out, s.bits[1:]))
            assert a.w_cloud + sum(a.w_in) <= 1

    def test_tie_break_prefers_no_caching(self):
        e = Exogenous([True, False], [0, 0], 0, [0], [0])
        res = inner_minimize(StorageState.empty(2), e, np.zeros(4), 0.5)
        assert res.action.cache == (False, False)
        assert res.action.w_cloud   # cloud wins source ties

    def test_dimension_checks(self):
        e = Exogenous([True], [1.0], 1.0, [], [])
        with pytest.raises(InvalidInputError):
            inner_minimize(StorageState.empty(2), e, np.zeros(4), 0.5)
        with pytest.raises(InvalidInputError):
            inner_minimize(StorageState.empty(1), e, np.zeros(4), 0.5)


class TestValueIteration:
    def test_zero_prices(self):
        cfg = ModelConfig.uniform(2, rho_mean=0.0, lambda_mean=0.0)
        t = value_iteration(cfg, SolverConfig(num_samples=50))
        assert t.iterations == 1 and t.converged
        assert np.all(t.values == 0)

    def test_myopic_closed_form(self):
        # gamma = 0: fetch only when asked, never cache
        cfg = ModelConfig.uniform(0, gamma=0.0, request_prob=0.5, rho_mean=3.0, lambda_mean=10.0)
        n = 20000
        t = value_iteration(cfg, SolverConfig(num_samples=n, seed=4))
        assert t.values[1] == 0.0
        se = np.sqrt(0.5 * 10**2 * (4 / 3) - 25) / np.sqrt(n)  # sd of r * U[0, 20]
        assert abs(t.values[0] - 5.0) < 3 * se
        assert t.iterations <= 2

    def test_equals_backward_induction(self, m2_config):
        ss = make_sample_set(m2_config, 200, 5)
        t = value_iteration(m2_config, SolverConfig(epsilon=1e-3, num_samples=200, seed=5), samples=ss)
        np.testing.assert_allclose(t.values, backward_induction(ss.batch, 0.9, t.iterations),
                                   rtol=0, atol=1e-10)

    def test_monotone_every_iteration(self, m2_config):
        seen = []
        value_iteration(m2_config, SolverConfig(num_samples=300), callback=lambda v: seen.append(v.copy()))
        assert seen and all(is_monotone(v) for v in seen)

    def test_nonconvergence_flagged(self, m2_config):
        t = value_iteration(m2_config, SolverConfig(epsilon=1e-12, max_iterations=3, num_samples=50))
        assert not t.converged and t.iterations == 3 and t.residual > 1e-12

    def test_gamma_zero_one_step(self, m2_config):
        cfg = ModelConfig(**{**m2_config.to_dict(), "gamma": 0.0})
        seen = []
        t = value_iteration(cfg, SolverConfig(num_samples=100), callback=lambda v: seen.append(v.copy()))
        assert t.iterations == 2
        np.testing.assert_array_equal(seen[0], t.values)

    def test_sample_dimension_checked(self, m2_config):
        ss = make_sample_set(ModelConfig.uniform(1), 10, 1)
        with pytest.raises(InvalidInputError):
            value_iteration(m2_config, SolverConfig(), samples=ss)


class TestResidual:
    def test_converged_table(self, m2_config):
        cfg = SolverConfig(epsilon=1e-9, num_samples=200)
        t = value_iteration(m2_config, cfg)
        assert bellman_residual(t, m2_config, cfg) < 1e-9 * (1 + m2_config.gamma)

    def test_zero_table_not_fixed_point(self, m2_config):
        assert bellman_residual(np.zeros(8), m2_config, SolverConfig(num_samples=100)) > 0

    def test_contraction_of_residual(self, m2_config, rng):
        cfg = SolverConfig(num_samples=100)
        op = BellmanOperator(m2_config.gamma, make_sample_set(m2_config, 100, cfg.seed))
        v = random_table(rng, 3)
        r0 = bellman_residual(v, m2_config, cfg)
        r1 = bellman_residual(op.apply(v), m2_config, cfg)
        assert r1 <= m2_config.gamma * r0 + 1e-12


@pytest.mark.parametrize("M", [0, 1, 2, 3])
def test_operator_is_gamma_contraction(rng, M):
    cfg = ModelConfig.uniform(M, gamma=0.85, rho_mean=4.0, lambda_mean=6.0)
    op = BellmanOperator(cfg.gamma, make_sample_set(cfg, 150, M))
    for _ in range(10):
        u, w = random_table(rng, M + 1, 50), random_table(rng, M + 1, 50)
        lhs = np.max(np.abs(op.apply(u) - op.apply(w)))
        assert lhs <= cfg.gamma * np.max(np.abs(u - w)) + 1e-12


@pytest.mark.parametrize("alpha", [0.5, 3.0])
def test_positive_homogeneity(m2_config, rng, alpha):
    ss = make_sample_set(m2_config, 200, 2)
    scaled = type(ss)(ss.batch.scaled(alpha), ss.seed, ss.config_hash)
    cfg = SolverConfig(max_iterations=40, epsilon=1e-300, num_samples=200)
    base = value_iteration(m2_config, cfg, samples=ss)
    big = value_iteration(m2_config, cfg, samples=scaled)
    np.testing.assert_allclose(big.values, alpha * base.values, rtol=1e-10)
    for i in range(50):
        s = random_state(rng, 3)
        a = inner_minimize(s, ss.batch[i], base, m2_config.gamma).action
        b = inner_minimize(s, scaled.batch[i], big, m2_config.gamma).action
        assert a == b


class TestValueTableIO:
    def make(self):
        return ValueTable(np.array([3.25, 1.0 / 3.0, 2.0, 1e-17]), "ab" * 32, 7, 12, 1.5e-7, True,
                          (1.0, 0.5))

    def test_json_roundtrip(self):
        t = self.make()
        back = ValueTable.from_json(t.to_json())
        np.testing.assert_array_equal(back.values, t.values)
        assert (back.config_hash, back.seed, back.iterations, back.residual, back.converged) == \
            (t.config_hash, t.seed, t.iterations, t.residual, t.converged)

    def test_binary_roundtrip(self, tmp_path):
        t = self.make()
        t.save(tmp_path / "t.bin")
        back = ValueTable.load(tmp_path / "t.bin")
        np.testing.assert_array_equal(back.values, t.values)
        assert (back.config_hash, back.seed, back.iterations, back.residual, back.converged) == \
            (t.config_hash, t.seed, t.iterations, t.residual, t.converged)

    def test_rejects_bad_length(self):
        with pytest.raises(InvalidInputError):
            ValueTable(np.zeros(3))


def test_residual_ratio_contracts_at_large_values():
    # values near 200 with epsilon 2e-5: a plain float64 table would sit at the rounding floor
    cfg = ModelConfig.uniform(2, gamma=0.9, rho_mean=10.0, lambda_mean=20.0, node_request_prob=0.3)
    for seed in range(4):
        t = value_iteration(cfg, SolverConfig(epsilon=1e-6 * cfg.max_price_mean, num_samples=2000,
                                              seed=seed))
        r = np.array(t.residuals)
        assert t.converged and np.max(r[1:] / r[:-1]) <= cfg.gamma + 1e-12


def test_pair_backup_matches_plain_backup(m2_config, rng):
    op = BellmanOperator(m2_config.gamma, make_sample_set(m2_config, 300, 1))
    v = random_table(rng, 3)
    hi, lo = op.apply_pair(v, np.zeros(8))
    np.testing.assert_allclose(hi, op.apply(v), rtol=0, atol=0)
    plain = np.array([(op.costs(s) + m2_config.gamma * v).min(axis=1).mean() for s in range(8)])
    np.testing.assert_allclose(hi, plain, rtol=1e-14)
    assert np.all(np.abs(lo) <= np.spacing(hi))
