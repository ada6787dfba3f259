import numpy as np
import pytest

import velsurf as vs
from velsurf.solver import dual_objective

from conftest import random_instance


FIVE_POINTS = np.array([
    [0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [1.5, 1.0],
])
FIVE_TARGETS = np.array([0.1, 0.6, 0.2, -0.3, 0.4])


def _predict(pts, beta, bias, kernel, queries):
    return kernel.matrix(queries, pts) @ beta + bias


class TestSolveEpsilonSvr:
    def test_constant_targets_zero_solution(self):
        pts = np.column_stack([np.arange(4.0), np.zeros(4)])
        cfg = vs.SolverConfig(C=1.0, epsilon=0.01)
        sol = vs.solve_epsilon_svr(pts, np.full(4, 2.5), vs.RbfKernel(gamma=0.3), cfg)
        np.testing.assert_array_equal(sol.beta, np.zeros(4))
        assert sol.bias == pytest.approx(2.5, abs=1e-15)
        assert sol.objective == 0.0
        assert sol.converged

    def test_single_point_inside_tube(self):
        cfg = vs.SolverConfig(C=1.0, epsilon=0.1)
        sol = vs.solve_epsilon_svr(np.zeros((1, 2)), np.array([0.7]), vs.RbfKernel(gamma=0.3), cfg)
        np.testing.assert_array_equal(sol.beta, [0.0])
        assert sol.bias == pytest.approx(0.7, abs=1e-15)

    def test_five_point_instance_matches_reference(self):
        cfg = vs.SolverConfig(C=1.0, epsilon=0.01, tolerance=1e-8)
        k = vs.RbfKernel(gamma=0.5)
        smo = vs.solve_epsilon_svr(FIVE_POINTS, FIVE_TARGETS, k, cfg)
        ref = vs.solve_qp_reference(FIVE_POINTS, FIVE_TARGETS, k, cfg)
        assert abs(smo.objective - ref.objective) <= 1e-6

    def test_epsilon_larger_than_range_gives_flat_model(self):
        cfg = vs.SolverConfig(C=2.0, epsilon=1.5)
        y = np.array([0.1, 0.9, 0.4])
        sol = vs.solve_epsilon_svr(np.eye(3, 2), y, vs.RbfKernel(gamma=1.0), cfg)
        np.testing.assert_array_equal(sol.beta, np.zeros(3))
        # any bias inside every tube is feasible; ours must be as well
        assert y.max() - 1.5 <= sol.bias <= y.min() + 1.5

    def test_empty_input_rejected(self):
        cfg = vs.SolverConfig(C=1.0, epsilon=0.1)
        with pytest.raises(vs.DataError):
            vs.solve_epsilon_svr(np.empty((0, 2)), np.empty(0), vs.RbfKernel(gamma=1.0), cfg)

    def test_non_finite_target_rejected(self):
        cfg = vs.SolverConfig(C=1.0, epsilon=0.1)
        with pytest.raises(vs.DataError):
            vs.solve_epsilon_svr(np.zeros((2, 2)), np.array([0.0, np.nan]),
                                 vs.RbfKernel(gamma=1.0), cfg)

    def test_max_iterations_flags_non_convergence(self):
        x, y, k, c, eps = random_instance(3)
        cfg = vs.SolverConfig(C=c, epsilon=0.0001, max_iterations=1)
        sol = vs.solve_epsilon_svr(x, y, k, cfg)
        assert not sol.converged
        assert sol.iterations == 1


class TestSolutionInvariants:
    @pytest.mark.parametrize("seed", range(6))
    def test_feasibility_box_and_sum(self, seed):
        x, y, k, c, eps = random_instance(seed)
        cfg = vs.SolverConfig(C=c, epsilon=eps)
        sol = vs.solve_epsilon_svr(x, y, k, cfg)
        assert np.abs(sol.beta).max() <= c
        assert abs(sol.beta.sum()) <= 1e-9 * len(y) * c

    @pytest.mark.parametrize("seed", range(6))
    def test_objective_trace_monotone(self, seed):
        x, y, k, c, eps = random_instance(seed)
        sol = vs.solve_epsilon_svr(x, y, k, vs.SolverConfig(C=c, epsilon=eps))
        assert np.all(np.diff(sol.objective_trace) >= -1e-9)

    def test_feasible_at_every_iteration(self):
        # determinism makes iteration prefixes reproducible: running with
        # max_iterations=k replays the first k pair updates exactly
        x, y, k, c, eps = random_instance(11, n_max=12)
        full = vs.solve_epsilon_svr(x, y, k, vs.SolverConfig(C=c, epsilon=eps))
        for k_iter in range(1, min(full.iterations, 25) + 1):
            cfg = vs.SolverConfig(C=c, epsilon=eps, max_iterations=k_iter)
            partial = vs.solve_epsilon_svr(x, y, k, cfg)
            assert np.abs(partial.beta).max() <= c
            assert abs(partial.beta.sum()) <= 1e-9 * len(y) * c

    def test_deterministic_bit_for_bit(self):
        x, y, k, c, eps = random_instance(21)
        cfg = vs.SolverConfig(C=c, epsilon=eps)
        a = vs.solve_epsilon_svr(x, y, k, cfg)
        b = vs.solve_epsilon_svr(x, y, k, cfg)
        assert a.beta.tobytes() == b.beta.tobytes()
        assert a.bias == b.bias
        assert a.objective == b.objective
        assert a.iterations == b.iterations

    def test_interior_points_respect_residual_bound(self):
        x, y, k, c, eps = random_instance(31)
        cfg = vs.SolverConfig(C=c, epsilon=eps)
        sol = vs.solve_epsilon_svr(x, y, k, cfg)
        pred = _predict(x, sol.beta, sol.bias, k, x)
        resid = np.abs(pred - y)
        free = np.abs(sol.beta) < c
        assert np.all(resid[free] <= eps + cfg.tolerance)

    def test_points_inside_tube_have_zero_coefficient(self):
        x, y, k, c, eps = random_instance(41)
        eps = max(eps, 0.02)
        cfg = vs.SolverConfig(C=c, epsilon=eps)
        sol = vs.solve_epsilon_svr(x, y, k, cfg)
        pred = _predict(x, sol.beta, sol.bias, k, x)
        strictly_inside = np.abs(pred - y) < eps - cfg.tolerance
        assert np.all(sol.beta[strictly_inside] == 0.0)


class TestKktViolation:
    def test_converged_solution_within_tolerance(self):
        x, y, k, c, eps = random_instance(51)
        cfg = vs.SolverConfig(C=c, epsilon=eps)
        sol = vs.solve_epsilon_svr(x, y, k, cfg)
        assert sol.converged
        assert vs.kkt_violation(sol, x, y, k, cfg) <= cfg.tolerance

    def test_all_zero_beta_on_spread_targets_violates(self):
        pts = np.column_stack([np.arange(4.0), np.zeros(4)])
        y = np.array([0.0, 1.0, 0.0, 1.0])
        cfg = vs.SolverConfig(C=1.0, epsilon=0.01)
        fake = vs.DualSolution(beta=np.zeros(4), bias=0.5, objective=0.0,
                               iterations=0, converged=False,
                               objective_trace=np.zeros(1))
        assert vs.kkt_violation(fake, pts, y, vs.RbfKernel(gamma=0.5), cfg) > cfg.tolerance

    def test_reference_output_is_nearly_optimal(self):
        x, y, k, c, eps = random_instance(61)
        cfg = vs.SolverConfig(C=c, epsilon=eps)
        ref = vs.solve_qp_reference(x, y, k, cfg)
        assert vs.kkt_violation(ref, x, y, k, cfg) <= 1e-6


class TestReferenceSolver:
    def test_rejects_large_instances(self):
        cfg = vs.SolverConfig(C=1.0, epsilon=0.01)
        x = np.zeros((201, 2))
        with pytest.raises(vs.NumericalError, match="capped at 200"):
            vs.solve_qp_reference(x, np.zeros(201), vs.RbfKernel(gamma=1.0), cfg)

    def test_constant_targets(self):
        cfg = vs.SolverConfig(C=1.0, epsilon=0.01)
        pts = np.column_stack([np.arange(5.0), np.zeros(5)])
        ref = vs.solve_qp_reference(pts, np.full(5, -1.2), vs.RbfKernel(gamma=0.3), cfg)
        np.testing.assert_allclose(ref.beta, np.zeros(5), atol=1e-10)
        assert ref.bias == pytest.approx(-1.2, abs=1e-9)

    def test_epsilon_covers_range(self):
        cfg = vs.SolverConfig(C=1.0, epsilon=2.0)
        pts = np.column_stack([np.arange(3.0), np.zeros(3)])
        y = np.array([0.0, 0.5, 1.0])
        ref = vs.solve_qp_reference(pts, y, vs.RbfKernel(gamma=0.3), cfg)
        np.testing.assert_allclose(ref.beta, np.zeros(3), atol=1e-10)
        assert dual_objective(ref.beta, np.zeros(3), y, 2.0) == pytest.approx(0.0, abs=1e-12)

    def test_predictions_match_smo(self):
        x, y, k, c, eps = random_instance(71)
        cfg = vs.SolverConfig(C=c, epsilon=eps, tolerance=1e-8)
        smo = vs.solve_epsilon_svr(x, y, k, cfg)
        ref = vs.solve_qp_reference(x, y, k, cfg)
        rng = np.random.default_rng(0)
        queries = rng.uniform(-2, 2, size=(25, 2))
        p1 = _predict(x, smo.beta, smo.bias, k, queries)
        p2 = _predict(x, ref.beta, ref.bias, k, queries)
        assert np.abs(p1 - p2).max() <= 1e-4


class TestSolverConfig:
    def test_validation(self):
        with pytest.raises(vs.DataError):
            vs.SolverConfig(C=0.0, epsilon=0.1)
        with pytest.raises(vs.DataError):
            vs.SolverConfig(C=1.0, epsilon=-0.1)
        with pytest.raises(vs.DataError):
            vs.SolverConfig(C=1.0, epsilon=0.1, tolerance=0.0)
