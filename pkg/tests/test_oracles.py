import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from factorlab.dynamics import TrainConfig, effective_output, train
from factorlab.linalg import nuclear_norm, numerical_rank
from factorlab.observation import ConnectivityClass, IncompleteMatrix, classify_connectivity, parse_matrix_text
from factorlab.oracles import (HEURISTIC_UPPER_BOUND, ConvexSolverConfig, OracleError, glrl,
                               min_nuclear_norm_bipartite_blocks, min_nuclear_norm_general, min_rank_search,
                               nuclear_norm_oracle, rank1_completion_feasible, single_entry_rank_drop_value)
from factorlab.scenarios import SCENARIOS, generate_random_instance, get_scenario

M1 = parse_matrix_text("1 2 *\n3 * *\n* * 5\n")
M2 = parse_matrix_text("1 2 *\n3 4 *\n* * 5\n")
M3 = parse_matrix_text("1 2 *\n3 4 *\n6 * 5\n")
FIG4 = parse_matrix_text("1 * 3\n* 5 *\n3 * 9\n")
FULL = IncompleteMatrix([[1.0, 2], [3, 4]], np.ones((2, 2)))


def diag_instance(v):
    d = len(v)
    return IncompleteMatrix(np.diag(v), np.eye(d, dtype=bool))


def direct_min_nuclear(m, starts=4, seed=0):
    """Derivative-free minimization of the nuclear norm over the free entries."""
    free = ~m.mask
    rng = np.random.default_rng(seed)

    def f(x):
        w = m.values.copy()
        w[free] = x
        return nuclear_norm(w)

    best = np.inf
    for _ in range(starts):
        res = minimize(f, rng.standard_normal(int(free.sum())), method="Powell",
                       options={"xtol": 1e-10, "ftol": 1e-12, "maxiter": 20000})
        best = min(best, res.fun)
    return best


class TestNuclearNorm:
    def test_diagonal_example(self):
        res = min_nuclear_norm_general(diag_instance([2.0, -3.0]))
        assert res.objective == pytest.approx(5, abs=1e-6)
        np.testing.assert_allclose(res.completion, np.diag([2, -3]), atol=1e-6)

    def test_random_diagonals(self, rng):
        for _ in range(100):
            d = int(rng.integers(1, 7))
            v = rng.uniform(0.1, 3, d) * rng.choice([-1, 1], d)
            assert min_nuclear_norm_general(diag_instance(v)).objective == pytest.approx(np.abs(v).sum(), abs=1e-4)

    def test_m2(self):
        target = np.sqrt(34) + 5
        assert min_nuclear_norm_general(M2).objective == pytest.approx(target, abs=1e-4)
        assert min_nuclear_norm_bipartite_blocks(M2).objective == pytest.approx(target, abs=1e-12)

    def test_fully_observed(self):
        assert min_nuclear_norm_general(FULL).objective == pytest.approx(np.sqrt(34), abs=1e-8)

    @pytest.mark.parametrize("text", ["1 2 *\n3 * *\n* * 5\n", "1 2 *\n3 4 *\n6 * 5\n", "1 2\n3 *\n"])
    def test_matches_direct_minimization(self, text):
        m = parse_matrix_text(text)
        res = min_nuclear_norm_general(m)
        assert res.certified and m.consistent(res.completion)
        direct = direct_min_nuclear(m)
        assert res.objective <= direct + 1e-6
        assert res.objective >= direct - 1e-4

    def test_result_invariants(self):
        for s in SCENARIOS.values():
            m = s.instance()
            res = nuclear_norm_oracle(m)
            assert m.consistent(res.completion, 1e-8)
            assert abs(res.objective - nuclear_norm(res.completion)) <= 1e-6

    def test_non_convergence_reported(self):
        res = min_nuclear_norm_general(M1, ConvexSolverConfig(max_iterations=3))
        assert not res.certified and res.certificate["iterations"] == 3
        assert np.isfinite(res.certificate["last_gap"])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ConvexSolverConfig(step_size=0)

    def test_block_examples(self):
        two = IncompleteMatrix([[2.0, 0], [0, -3]], np.eye(2))
        assert min_nuclear_norm_bipartite_blocks(two).objective == pytest.approx(5)
        assert min_nuclear_norm_bipartite_blocks(FULL).objective == pytest.approx(np.sqrt(34))
        with pytest.raises(OracleError):
            min_nuclear_norm_bipartite_blocks(M1)

    def test_block_agreement_on_complete_bipartite_scenarios(self):
        for s in SCENARIOS.values():
            m = s.instance()
            if classify_connectivity(m) is ConnectivityClass.DISCONNECTED_COMPLETE_BIPARTITE:
                gen = min_nuclear_norm_general(m).objective
                blk = min_nuclear_norm_bipartite_blocks(m).objective
                assert abs(gen - blk) <= 1e-4 * blk


class TestRankOne:
    def test_examples(self):
        ok, w = rank1_completion_feasible(IncompleteMatrix([[1.0, 2], [2, 4]], np.ones((2, 2))))
        assert ok
        np.testing.assert_allclose(w, [[1, 2], [2, 4]])
        ok, w = rank1_completion_feasible(IncompleteMatrix([[1.0, 2], [2, 5]], np.ones((2, 2))))
        assert not ok and w is None

    def test_m1_witness(self):
        ok, w = rank1_completion_feasible(M1)
        assert ok and numerical_rank(w) == 1 and M1.consistent(w)

    @given(st.integers(1, 6), st.integers(0, 2 ** 31), st.floats(0.1, 0.9))
    def test_soundness_on_rank_one_truth(self, d, seed, density):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0.5, 2, d) * rng.choice([-1, 1], d)
        y = rng.uniform(0.5, 2, d) * rng.choice([-1, 1], d)
        mask = rng.random((d, d)) < density
        mask[0, 0] = True
        m = IncompleteMatrix(np.outer(x, y), mask)
        ok, w = rank1_completion_feasible(m)
        assert ok and numerical_rank(w) == 1 and m.consistent(w, 1e-8)

    def test_detects_cycle_inconsistency(self, rng):
        for _ in range(20):
            x, y = rng.uniform(0.5, 2, 3), rng.uniform(0.5, 2, 3)
            vals = np.outer(x, y)
            vals[1, 1] *= 1.01
            assert not rank1_completion_feasible(IncompleteMatrix(vals, np.ones((3, 3))))[0]

    def test_sign_inconsistency(self):
        assert not rank1_completion_feasible(IncompleteMatrix([[1.0, 1], [1, -1]], np.ones((2, 2))))[0]


class TestMinRank:
    def test_examples(self):
        assert min_rank_search(M3).objective == 2
        assert min_rank_search(M3).method == HEURISTIC_UPPER_BOUND
        res = min_rank_search(M1)
        assert res.objective == 1 and res.certified
        full3 = IncompleteMatrix(np.random.default_rng(1).standard_normal((3, 3)), np.ones((3, 3)))
        assert min_rank_search(full3).objective == 3

    def test_witness_fits(self):
        for m in (M1, M2, M3, FIG4):
            res = min_rank_search(m)
            assert m.consistent(res.completion, 1e-5)
            assert res.rank == res.objective

    def test_sandwich_and_full_observation(self, rng):
        for _ in range(15):
            d = int(rng.integers(2, 5))
            r = int(rng.integers(1, d))
            m = generate_random_instance(d, r, int(rng.integers(1, d * d + 1)), int(rng.integers(1 << 30)))
            res = min_rank_search(m)
            lower = 1 if not rank1_completion_feasible(m)[0] else 0
            assert lower <= res.objective <= d
            x, y = rng.standard_normal((d, r)), rng.standard_normal((d, r))
            full = IncompleteMatrix(x @ y.T, np.ones((d, d)))
            assert min_rank_search(full).objective == numerical_rank(full.values) == r


class TestGlrl:
    def test_fig4(self):
        res, stages = glrl(FIG4)
        np.testing.assert_allclose(res.completion, [[1, 0, 3], [0, 5, 0], [3, 0, 9]], atol=1e-6)
        assert res.objective == 2 and len(stages) == 2

    def test_stage_losses_decrease(self):
        for m in (M3, FIG4, M2):
            res, _ = glrl(m)
            losses = res.certificate["stage_losses"]
            assert all(b < a for a, b in zip(losses, losses[1:]))
            assert res.certificate["stages_converged"]

    def test_full_rank_one(self, rng):
        m = IncompleteMatrix(np.outer(rng.standard_normal(3), rng.standard_normal(3)), np.ones((3, 3)))
        res, stages = glrl(m)
        assert len(stages) == 1 and res.certificate["final_loss"] < 1e-10

    def test_matches_training_on_m3_small_init(self):
        res, _ = glrl(M3)
        final, _ = train(M3, TrainConfig(init_variance=1e-24))
        assert np.abs(effective_output(final, M3) - res.completion).max() <= 1e-3

    def test_training_gap_shrinks_with_init(self):
        res, _ = glrl(M3)
        gaps = [np.abs(train(M3, TrainConfig(init_variance=v))[0].w - res.completion).max()
                for v in (1e-8, 1e-16, 1e-24)]
        assert gaps[0] > gaps[1] > gaps[2]


class TestMisc:
    def test_json(self):
        obj = nuclear_norm_oracle(M2).to_json()
        assert set(obj) >= {"method", "objective", "rank", "nuclear_norm", "certified", "completion"}
        assert obj["rank"] == 3

    def test_rank_drop_value(self):
        assert single_entry_rank_drop_value(get_scenario("staircase").instance()) == pytest.approx(9)
        assert single_entry_rank_drop_value(parse_matrix_text("1 2\n3 *\n")) == pytest.approx(6)
        with pytest.raises(OracleError):
            single_entry_rank_drop_value(M3)
