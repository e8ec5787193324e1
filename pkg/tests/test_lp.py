"""The splitting LP solver, its KKT handle, batching, and the exact backend."""

import numpy as np
import pytest
import scipy.sparse as sp

from neuromip.lp import (
    AdmmConfig,
    AdmmState,
    BoundOverride,
    CgConvergenceError,
    LpProblem,
    admm_solve,
    admm_solve_batch,
    admm_step,
    benchmark_batch,
    factorize,
    solve_lp_exact,
    speedup_factor,
    warm_state_from_solution,
)
from oracles import lp_to_onesided, vertex_enumeration_lp


def random_feasible_lp(seed, n=8, m=5, box=(0.0, 1.0)):
    """A bounded LP whose row intervals straddle a known interior point."""
    rng = np.random.default_rng(seed)
    A = sp.csr_matrix(rng.normal(size=(m, n)))
    x0 = rng.uniform(box[0], box[1], n)
    act = A @ x0
    return LpProblem(
        c=rng.normal(size=n), A=A,
        b_l=act - rng.uniform(0.1, 1.0, m), b_u=act + rng.uniform(0.1, 1.0, m),
        l=np.full(n, box[0]), u=np.full(n, box[1]))


def one_var_row_lp():
    # min -x  s.t.  x <= 1.5 (row),  0 <= x <= 2; optimum x = 1.5
    return LpProblem(c=[-1.0], A=sp.csr_matrix([[1.0]]), b_l=[-np.inf],
                     b_u=[1.5], l=[0.0], u=[2.0])


class TestKktFactor:
    def test_one_by_one_system_by_hand(self):
        # A = [2] gives [[1,2],[2,-1]]; r = (1,0) solves to (0.2, 0.4)
        prob = LpProblem(c=[0.0], A=sp.csr_matrix([[2.0]]), b_l=[0.0],
                         b_u=[0.0], l=[0.0], u=[1.0])
        factor = factorize(prob)
        np.testing.assert_allclose(factor.solve([1.0, 0.0]), [0.2, 0.4],
                                   atol=1e-12)

    def test_zero_rows_reduce_to_identity(self):
        prob = LpProblem(c=[0.0, 0.0], A=sp.csr_matrix((0, 2)), b_l=[],
                         b_u=[], l=[0, 0], u=[1, 1])
        factor = factorize(prob)
        r = np.array([3.0, -4.0])
        np.testing.assert_array_equal(factor.solve(r), r)

    @pytest.mark.parametrize("mode", ["direct", "indirect_cg"])
    def test_matches_dense_reference(self, mode):
        rng = np.random.default_rng(7)
        m, n = 10, 8
        A = rng.normal(size=(m, n))
        prob = LpProblem(c=np.zeros(n), A=sp.csr_matrix(A),
                         b_l=np.zeros(m), b_u=np.zeros(m),
                         l=np.zeros(n), u=np.ones(n))
        factor = factorize(prob, AdmmConfig(mode=mode, cg_tol=1e-14))
        K = np.block([[np.eye(n), A.T], [A, -np.eye(m)]])
        r = rng.normal(size=n + m)
        ref = np.linalg.solve(K, r)
        got = factor.solve(r)
        assert np.max(np.abs(got - ref)) / np.max(np.abs(ref)) <= 1e-8

    def test_cg_nonconvergence_raises(self):
        rng = np.random.default_rng(1)
        A = rng.normal(size=(30, 40))
        prob = LpProblem(c=np.zeros(40), A=sp.csr_matrix(A),
                         b_l=np.zeros(30), b_u=np.zeros(30),
                         l=np.zeros(40), u=np.ones(40))
        factor = factorize(prob, AdmmConfig(mode="indirect_cg", cg_tol=1e-14,
                                            cg_max_iters=2))
        with pytest.raises(CgConvergenceError):
            factor.solve(rng.normal(size=70))


class TestAdmmStep:
    def test_optimal_triple_is_fixed_point(self):
        # min -x, x in [0,2], row x <= 1.5: optimum x = 1.5 with row dual 1
        # (from stationarity -1 + mu = 0), giving lam_x = 0, lam_y = -1.
        prob = one_var_row_lp()
        state = AdmmState(x=np.array([1.5]), y=np.array([1.5]),
                          x_tilde=np.array([1.5]), y_tilde=np.array([1.5]),
                          lam_x=np.array([0.0]), lam_y=np.array([-1.0]))
        config = AdmmConfig()
        factor = factorize(prob, config)
        new, primal, dual = admm_step(prob, state, config, factor)
        assert primal <= 1e-10 and dual <= 1e-10
        np.testing.assert_allclose(new.x_tilde, [1.5], atol=1e-10)
        np.testing.assert_allclose(new.lam_y, [-1.0], atol=1e-10)

    def test_oracle_duals_reproduce_the_fixed_point(self):
        prob = one_var_row_lp()
        sol = solve_lp_exact(prob)
        state = warm_state_from_solution(prob, sol.x, row_duals=sol.row_duals)
        np.testing.assert_allclose(state.lam_y, [-1.0], atol=1e-9)
        config = AdmmConfig()
        _, primal, dual = admm_step(prob, state, config, factorize(prob, config))
        assert primal <= 1e-10 and dual <= 1e-10

    def test_all_zero_problem_stays_zero(self):
        prob = LpProblem(c=[0.0], A=sp.csr_matrix([[0.0]]),
                         b_l=[-np.inf], b_u=[np.inf],
                         l=[-np.inf], u=[np.inf])
        z = np.zeros(1)
        state = AdmmState(z.copy(), z.copy(), z.copy(), z.copy(), z.copy(),
                          z.copy())
        config = AdmmConfig()
        new, primal, dual = admm_step(prob, state, config,
                                      factorize(prob, config))
        assert primal == 0.0 and dual == 0.0
        np.testing.assert_array_equal(new.x, [0.0])

    def test_single_iterate_on_box_lp_by_hand(self):
        # min -x over [0,1], no rows, cold start at 0:
        # recenter r = 0, KKT gives x = r - c = 1, projection keeps 1.
        prob = LpProblem(c=[-1.0], A=sp.csr_matrix((0, 1)), b_l=[], b_u=[],
                         l=[0.0], u=[1.0])
        config = AdmmConfig(max_iters=1)
        sol = admm_solve(prob, config)
        np.testing.assert_allclose(sol.x, [1.0], atol=1e-12)


class TestAdmmSolve:
    def test_one_var_row_lp_reaches_optimum(self):
        sol = admm_solve(one_var_row_lp(),
                         AdmmConfig(max_iters=2000, eps_primal=1e-6,
                                    eps_dual=1e-6))
        assert sol.status == "converged"
        assert sol.iterations <= 2000
        assert sol.objective == pytest.approx(-1.5, abs=1e-3)

    def test_warm_start_at_optimum_converges_fast(self):
        prob = random_feasible_lp(11)
        exact = solve_lp_exact(prob)
        warm = warm_state_from_solution(prob, exact.x,
                                        row_duals=exact.row_duals)
        sol = admm_solve(prob, AdmmConfig(max_iters=100), warm=warm)
        assert sol.status == "converged"
        assert sol.iterations <= 5

    def test_zero_objective_reports_zero(self):
        prob = random_feasible_lp(3)
        prob.c = np.zeros(prob.n)
        sol = admm_solve(prob, AdmmConfig(max_iters=500))
        assert sol.objective == 0.0

    def test_box_only_problem_clips_to_active_bounds(self):
        prob = LpProblem(c=[1.0, -2.0, 0.5], A=sp.csr_matrix((0, 3)),
                         b_l=[], b_u=[], l=[-1.0, -1.0, -1.0],
                         u=[2.0, 2.0, 2.0])
        sol = admm_solve(prob, AdmmConfig(max_iters=500, eps_primal=1e-8,
                                          eps_dual=1e-8))
        np.testing.assert_allclose(sol.x, [-1.0, 2.0, -1.0], atol=1e-6)

    def test_projected_iterate_is_always_bound_feasible(self):
        prob = random_feasible_lp(5)
        sol = admm_solve(prob, AdmmConfig(max_iters=3))
        assert np.all(sol.x >= prob.l) and np.all(sol.x <= prob.u)

    def test_empty_box_rejected(self):
        prob = one_var_row_lp()
        prob.l[0] = 3.0
        with pytest.raises(ValueError, match="l > u"):
            admm_solve(prob)

    def test_matches_exact_backend_on_random_lps(self):
        config = AdmmConfig(max_iters=5000, eps_primal=1e-7, eps_dual=1e-7)
        for seed in range(8):
            prob = random_feasible_lp(seed, n=10, m=6)
            exact = solve_lp_exact(prob)
            sol = admm_solve(prob, config)
            rel = abs(sol.objective - exact.objective) / max(1.0, abs(exact.objective))
            assert rel <= 1e-3, f"seed {seed}: {sol.objective} vs {exact.objective}"


class TestBatch:
    def test_batch_of_one_identical_to_single(self):
        prob = random_feasible_lp(2)
        ov = BoundOverride(0, 0.0, 0.0)
        config = AdmmConfig(max_iters=200)
        [b] = admm_solve_batch(prob, [ov], config)
        s = admm_solve(prob.with_bounds(0, 0.0, 0.0), config)
        assert np.array_equal(b.x, s.x)
        assert b.objective == s.objective
        assert b.iterations == s.iterations

    def test_up_down_pair_matches_sequential_exactly(self):
        prob = random_feasible_lp(4)
        config = AdmmConfig(max_iters=150)
        overrides = [BoundOverride(1, 1.0, 1.0), BoundOverride(1, 0.0, 0.0)]
        batch = admm_solve_batch(prob, overrides, config)
        for ov, b in zip(overrides, batch):
            s = admm_solve(prob.with_bounds(ov.index, ov.lb, ov.ub), config)
            assert b.objective == s.objective
            assert np.array_equal(b.x, s.x)

    def test_64_variants_bitwise_identical(self):
        rng = np.random.default_rng(9)
        prob = random_feasible_lp(9, n=40, m=30)
        config = AdmmConfig(max_iters=120)
        overrides = []
        for _ in range(64):
            i = int(rng.integers(prob.n))
            fixed = float(rng.integers(2))
            overrides.append(BoundOverride(i, fixed, fixed))
        batch = admm_solve_batch(prob, overrides, config)
        worst = 0.0
        for ov, b in zip(overrides, batch):
            s = admm_solve(prob.with_bounds(ov.index, ov.lb, ov.ub), config)
            worst = max(worst, abs(b.objective - s.objective))
            assert np.array_equal(b.x, s.x)
            assert b.iterations == s.iterations
            assert b.status == s.status
        assert worst == 0.0

    def test_shared_warm_start_broadcasts(self):
        prob = random_feasible_lp(13)
        exact = solve_lp_exact(prob)
        warm = warm_state_from_solution(prob, exact.x,
                                        row_duals=exact.row_duals)
        config = AdmmConfig(max_iters=80)
        overrides = [BoundOverride(0, 1.0, 1.0), BoundOverride(2, 0.0, 0.0)]
        batch = admm_solve_batch(prob, overrides, config, warm=warm)
        for ov, b in zip(overrides, batch):
            s = admm_solve(prob.with_bounds(ov.index, ov.lb, ov.ub), config,
                           warm=warm)
            assert np.array_equal(b.x, s.x)

    def test_empty_batch(self):
        assert admm_solve_batch(random_feasible_lp(1), [], AdmmConfig()) == []


class TestSpeedup:
    def test_formula(self):
        assert speedup_factor(10, 1.0, 2.0) == 5.0

    def test_single_variant_reduces_to_ratio(self):
        assert speedup_factor(1, 0.5, 2.0) == 0.25

    def test_zero_batch_time_rejected(self):
        with pytest.raises(ValueError):
            speedup_factor(4, 1.0, 0.0)

    def test_benchmark_reports_positive_speedup(self):
        prob = random_feasible_lp(21, n=40, m=30)
        overrides = [BoundOverride(i % prob.n, 0.0, 0.0) for i in range(16)]
        bench = benchmark_batch(prob, overrides, AdmmConfig(max_iters=60))
        assert bench.n_variants == 16
        assert bench.speedup > 0
        assert bench.t_batch_seconds > 0


class TestExactBackend:
    def test_one_var_geometry(self):
        sol = solve_lp_exact(one_var_row_lp())
        assert sol.status == "converged"
        np.testing.assert_allclose(sol.x, [1.5])
        assert sol.objective == pytest.approx(-1.5)

    def test_empty_box_rejected(self):
        prob = one_var_row_lp()
        prob.l[0] = 5.0
        with pytest.raises(ValueError, match="l > u"):
            solve_lp_exact(prob)

    def test_infeasible_status(self):
        prob = LpProblem(c=[1.0], A=sp.csr_matrix([[1.0]]), b_l=[2.0],
                         b_u=[np.inf], l=[0.0], u=[1.0])
        assert solve_lp_exact(prob).status == "infeasible"

    def test_unbounded_status(self):
        prob = LpProblem(c=[-1.0], A=sp.csr_matrix((0, 1)), b_l=[], b_u=[],
                         l=[0.0], u=[np.inf])
        assert solve_lp_exact(prob).status == "unbounded"

    def test_matches_vertex_enumeration(self):
        for seed in range(5):
            prob = random_feasible_lp(seed + 40, n=6, m=6)
            G, h = lp_to_onesided(prob)
            ref, _ = vertex_enumeration_lp(prob.c, G, h)
            sol = solve_lp_exact(prob)
            assert sol.objective == pytest.approx(ref, abs=1e-7)
