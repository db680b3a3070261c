import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spillnet import (DegenerateCovariate, LassoProblem, PanelData,
                      RankWarning, lambda_max, post_lasso_refit,
                      regime_adaptive_weights, select_lambda, solve_lasso)


def kkt_violation(problem, solution):
    """Largest violation of the stationarity conditions, on the lambda scale."""
    x, y = problem.design, problem.response
    n = x.shape[0]
    r = y - x @ solution.coefficients
    grad = -(x.T @ r) / n
    worst = 0.0
    for k in range(x.shape[1]):
        bound = problem.penalty_level * problem.weights[k]
        c = solution.coefficients[k]
        if problem.weights[k] == 0.0 or abs(c) > 1e-12:
            target = bound * np.sign(c) if problem.weights[k] > 0 else 0.0
            worst = max(worst, abs(grad[k] + target) if c != 0 or bound == 0
                        else abs(abs(grad[k]) - bound))
        else:
            worst = max(worst, max(abs(grad[k]) - bound, 0.0))
    return worst


class TestSolveLasso:
    def test_unpenalized_limit_matches_ols(self, rng):
        x = rng.normal(size=(6, 6))
        y = rng.normal(size=6)
        sol = solve_lasso(LassoProblem(x, y, 0.0, np.ones(6)))
        assert np.allclose(sol.coefficients, np.linalg.solve(x, y), atol=1e-8)

    def test_full_shrinkage_at_lambda_max(self, rng):
        x = rng.normal(size=(20, 5))
        y = rng.normal(size=20)
        w = np.ones(5)
        top = lambda_max(x, y, w)
        for lam in (top, 2 * top):
            sol = solve_lasso(LassoProblem(x, y, lam, w))
            assert np.all(sol.coefficients == 0.0)

    def test_hand_example(self):
        # x=(1,-1), y=(2,-2), lambda=0.5: the stationarity condition
        # x'(y-xc)/2 = lambda * sign(c) gives 2 - c = 0.5, so c = 1.5
        sol = solve_lasso(LassoProblem(np.array([[1.0], [-1.0]]),
                                       np.array([2.0, -2.0]), 0.5, np.ones(1)))
        assert abs(sol.coefficients[0] - 1.5) < 1e-8

    def test_zero_variance_column_forced_to_zero(self, rng):
        x = rng.normal(size=(10, 3))
        x[:, 1] = 0.0
        sol = solve_lasso(LassoProblem(x, rng.normal(size=10), 0.05, np.ones(3)))
        assert sol.coefficients[1] == 0.0

    def test_unconverged_flag(self, rng):
        x = rng.normal(size=(30, 10))
        y = rng.normal(size=30)
        sol = solve_lasso(LassoProblem(x, y, 0.01, np.ones(10),
                                       tol=0.0, max_iter=2))
        assert not sol.converged

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_kkt_holds(self, seed):
        r = np.random.default_rng(seed)
        n, p = int(r.integers(3, 30)), int(r.integers(1, 30))
        x = r.normal(size=(n, p))
        y = r.normal(size=n)
        w = r.uniform(0.2, 2.0, size=p)
        w[r.random(p) < 0.15] = 0.0
        lam = float(r.uniform(0.01, 0.5))
        prob = LassoProblem(x, y, lam, w, tol=1e-12)
        sol = solve_lasso(prob)
        if sol.converged:
            assert kkt_violation(prob, sol) < 1e-5

    def test_column_permutation_invariance(self, rng):
        x = rng.normal(size=(25, 6))
        y = rng.normal(size=25)
        w = rng.uniform(0.5, 1.5, size=6)
        perm = rng.permutation(6)
        base = solve_lasso(LassoProblem(x, y, 0.1, w, tol=1e-12))
        permuted = solve_lasso(LassoProblem(x[:, perm], y, 0.1, w[perm], tol=1e-12))
        assert np.allclose(base.coefficients[perm], permuted.coefficients, atol=1e-6)

    def test_column_scaling_leaves_fit_invariant(self, rng):
        x = rng.normal(size=(25, 4))
        y = rng.normal(size=25)
        w = np.ones(4)
        c = 3.7
        # scale the column down by c and its weight down by c: the penalty
        # (w/c)*|coef*c| is unchanged, so fitted values must agree
        x2, w2 = x.copy(), w.copy()
        x2[:, 2] /= c
        w2[2] /= c
        s1 = solve_lasso(LassoProblem(x, y, 0.1, w, tol=1e-13))
        s2 = solve_lasso(LassoProblem(x2, y, 0.1, w2, tol=1e-13))
        assert np.allclose(x @ s1.coefficients, x2 @ s2.coefficients, atol=1e-6)

    def test_warm_start_does_not_change_solution(self, rng):
        x = rng.normal(size=(30, 8))
        y = rng.normal(size=30)
        prob = LassoProblem(x, y, 0.08, np.ones(8), tol=1e-13)
        cold = solve_lasso(prob)
        warm = solve_lasso(prob, warm_start=rng.normal(size=8))
        assert np.allclose(cold.coefficients, warm.coefficients, atol=1e-6)


class TestRegimeAdaptiveWeights:
    def make_panel(self, xrow, t):
        x = np.tile(xrow, (2, 1)).astype(float)
        return PanelData(np.zeros((2, t)), x, np.zeros((2, t)))

    def test_unit_second_moment(self):
        panel = self.make_panel(np.ones(8), 8)
        pre, post = regime_adaptive_weights(panel, 4)
        assert np.allclose(pre, 1.0) and np.allclose(post, 1.0)

    def test_constant_two(self):
        panel = self.make_panel(np.full(4, 2.0), 4)
        pre, post = regime_adaptive_weights(panel, 2)
        assert np.allclose(pre, 0.5) and np.allclose(post, 0.5)

    def test_direct_formula(self):
        x = np.tile([1.0, 2.0, 3.0, 1.0], (2, 1))
        panel = PanelData(np.zeros((2, 4)), x, np.zeros((2, 4)))
        pre, _post = regime_adaptive_weights(panel, 3)
        assert np.allclose(pre, (14.0 / 3.0) ** -0.5)

    def test_degenerate_regime(self):
        x = np.tile([0.0, 0.0, 1.0, 1.0], (2, 1))
        panel = PanelData(np.zeros((2, 4)), x, np.zeros((2, 4)))
        with pytest.raises(DegenerateCovariate):
            regime_adaptive_weights(panel, 2)


class TestSelectLambda:
    def test_pure_noise_selects_largest(self, rng):
        x = rng.normal(size=(60, 5))
        y = rng.normal(size=60)
        sel = select_lambda(x, y, np.ones(5))
        assert sel.lambda_ == sel.lambdas[0]
        assert sel.solution.active_set.size == 0

    def test_strong_signal_selects_true_support(self, rng):
        x = rng.normal(size=(80, 5))
        y = 10.0 * x[:, 2] + 0.01 * rng.normal(size=80)
        sel = select_lambda(x, y, np.ones(5))
        assert list(sel.solution.active_set) == [2]

    def test_singleton_grid(self, rng):
        x = rng.normal(size=(20, 3))
        y = rng.normal(size=20)
        sel = select_lambda(x, y, np.ones(3), grid=np.array([0.25]))
        assert sel.lambda_ == 0.25


class TestPostLassoRefit:
    def test_full_support_square(self, rng):
        x = rng.normal(size=(5, 5))
        y = rng.normal(size=5)
        coef = post_lasso_refit(x, y, np.arange(5))
        assert np.allclose(coef, np.linalg.solve(x, y), atol=1e-8)

    def test_empty_support(self, rng):
        y = rng.normal(size=8)
        coef = post_lasso_refit(rng.normal(size=(8, 3)), y, np.array([], dtype=int))
        assert np.all(coef == 0.0)

    def test_orthogonal_design_restriction(self):
        x = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        y = np.array([2.0, 4.0, 1.0, 1.0])
        coef = post_lasso_refit(x, y, np.array([0]))
        assert np.allclose(coef, [3.0, 0.0])

    def test_rank_deficient_warns(self, rng):
        x = rng.normal(size=(10, 3))
        x[:, 2] = x[:, 0] + x[:, 1]
        with pytest.warns(RankWarning):
            coef = post_lasso_refit(x, rng.normal(size=10), np.arange(3))
        assert coef[2] == 0.0
