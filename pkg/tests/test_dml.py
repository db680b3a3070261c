import numpy as np
import pytest

from spillnet import (DegenerateResidual, PanelData, cross_fit_delta,
                      full_context, neyman_delta, per_unit_deltas,
                      regime_context, window_context)
from spillnet.dml import (DesignContext, NuisanceFit, SelectedSupport,
                          cross_fit_scores, double_lasso_select,
                          post_double_fit)

from conftest import random_panel


def make_context(rng, n=2, t=8, p=3):
    """Free-standing context with random control columns and fold halves."""
    return DesignContext(
        periods=tuple(range(1, t + 1)),
        xcols=rng.normal(size=(t, p)),
        y=rng.normal(size=(n, t)),
        z=rng.normal(size=(n, t)),
        main_pos=np.arange(t // 2),
        aux_pos=np.arange(t // 2, t),
    )


class TestContexts:
    def test_full_context_regime_balanced_folds(self, rng):
        panel = random_panel(rng, 3, 12)
        ctx = full_context(panel, 4)
        # main fold takes the leading half of each regime
        assert tuple(ctx.main_pos) == (0, 1, 4, 5, 6, 7)
        assert tuple(ctx.aux_pos) == (2, 3, 8, 9, 10, 11)
        assert ctx.xcols.shape == (12, 6)

    def test_window_context_halves(self, rng):
        panel = random_panel(rng, 3, 12)
        ctx = window_context(panel, range(3, 10))  # 7 periods
        assert tuple(ctx.main_pos) == (0, 1, 2, 3)
        assert tuple(ctx.aux_pos) == (4, 5, 6)
        assert np.array_equal(ctx.xcols, panel.x[:, 2:9].T)

    def test_regime_context_periods(self, rng):
        panel = random_panel(rng, 3, 12)
        pre = regime_context(panel, 5, "pre")
        post = regime_context(panel, 5, "post")
        assert pre.periods == tuple(range(1, 6))
        assert post.periods == tuple(range(6, 13))


class TestDoubleLassoSelect:
    def test_planted_coefficient_is_selected(self, rng):
        panel = random_panel(rng, 3, 40)
        z = np.vstack([panel.x[0] + 0.05 * rng.normal(size=40)] * 3)
        panel = PanelData(panel.y, panel.x, z)
        ctx = full_context(panel, 20)
        sup = double_lasso_select(ctx, ctx.aux_pos)
        for i in range(3):
            # z tracks unit 0's x in both regimes
            assert {0, 3} <= set(sup.s_hat_v[i])

    def test_noise_covariates_rarely_selected(self, rng):
        hits = total = 0
        for _ in range(25):
            panel = random_panel(rng, 3, 100)  # z independent of everything
            ctx = full_context(panel, 50)
            sup = double_lasso_select(ctx, ctx.aux_pos)
            hits += sum(len(s) for s in sup.s_hat_v)
            total += 3 * ctx.xcols.shape[1]
        assert hits / total < 0.1

    def test_union_law(self):
        sup = SelectedSupport(s_hat_v=[[0, 2], [1]], s_hat_g=[[2, 3], []])
        assert sup.s_hat == [[0, 2, 3], [1]]


class TestPostDoubleFit:
    def test_oracle_support_refit_recovers_truth(self, rng):
        t, p = 60, 4
        x = rng.normal(size=(t, p))
        nu0 = np.array([1.0, -2.0, 0.0, 0.0])
        g0 = np.array([0.5, 0.0, 3.0, 0.0])
        z = (x @ nu0 + 1e-4 * rng.normal(size=t))[None, :].repeat(2, axis=0)
        y = (x @ g0 + 1e-4 * rng.normal(size=t))[None, :].repeat(2, axis=0)
        ctx = DesignContext(tuple(range(1, t + 1)), x, y, z,
                            np.arange(t // 2), np.arange(t // 2, t))
        sup = SelectedSupport(s_hat_v=[[0, 1], [0, 1]], s_hat_g=[[0, 2], [0, 2]])
        fit = post_double_fit(ctx, ctx.aux_pos, sup)
        assert np.allclose(fit.nu, nu0, atol=1e-3)
        assert np.allclose(fit.gamma, g0, atol=1e-3)

    def test_empty_support_gives_fold_means(self, rng):
        ctx = make_context(rng)
        sup = SelectedSupport(s_hat_v=[[], []], s_hat_g=[[], []])
        fit = post_double_fit(ctx, ctx.aux_pos, sup)
        assert np.all(fit.nu == 0) and np.all(fit.gamma == 0)
        assert np.allclose(fit.eta, ctx.z[:, ctx.aux_pos].mean(axis=1))
        assert np.allclose(fit.alpha, ctx.y[:, ctx.aux_pos].mean(axis=1))

    def test_per_unit_independence(self, rng):
        ctx = make_context(rng)
        sup = SelectedSupport(s_hat_v=[[0], [1]], s_hat_g=[[2], [0]])
        fit1 = post_double_fit(ctx, ctx.aux_pos, sup)
        y2 = ctx.y.copy()
        z2 = ctx.z.copy()
        y2[1] += 7.0
        z2[1] *= -3.0
        ctx2 = DesignContext(ctx.periods, ctx.xcols, y2, z2,
                             ctx.main_pos, ctx.aux_pos)
        fit2 = post_double_fit(ctx2, ctx2.aux_pos, sup)
        assert np.array_equal(fit1.nu[0], fit2.nu[0])
        assert np.array_equal(fit1.gamma[0], fit2.gamma[0])
        assert fit1.eta[0] == fit2.eta[0] and fit1.alpha[0] == fit2.alpha[0]


def zero_nuisance(n, p):
    return NuisanceFit(nu=np.zeros((n, p)), gamma=np.zeros((n, p)),
                       eta=np.zeros(n), alpha=np.zeros(n),
                       support=[[] for _ in range(n)])


def scalar_loop_delta(ctx, eval_pos, fit):
    """Literal double sum of the orthogonal score, one observation at a time."""
    num = den = 0.0
    for i in range(ctx.y.shape[0]):
        for pos in eval_pos:
            xrow = ctx.xcols[pos]
            e = ctx.z[i, pos] - fit.eta[i] - float(xrow @ fit.nu[i])
            r = ctx.y[i, pos] - fit.alpha[i] - float(xrow @ fit.gamma[i])
            num += e * r
            den += e * e
    return num / den


class TestNeymanDelta:
    def test_hand_example(self):
        # single unit, two eval periods: z-residual (1,-1), y-residual (2,-2)
        ctx = DesignContext((1, 2, 3, 4), np.zeros((4, 2)),
                            y=np.array([[0.0, 0.0, 2.0, -2.0]]),
                            z=np.array([[0.0, 0.0, 1.0, -1.0]]),
                            main_pos=np.array([2, 3]), aux_pos=np.array([0, 1]))
        fit = zero_nuisance(1, 2)
        assert neyman_delta(ctx, ctx.main_pos, fit) == pytest.approx(2.0)

    def test_matches_scalar_loop_oracle(self, rng):
        for _ in range(5):
            panel = random_panel(rng, 2, 8)
            ctx = full_context(panel, 4)
            sup = double_lasso_select(ctx, ctx.aux_pos)
            fit = post_double_fit(ctx, ctx.aux_pos, sup)
            d = neyman_delta(ctx, ctx.main_pos, fit)
            assert d == pytest.approx(scalar_loop_delta(ctx, ctx.main_pos, fit),
                                      abs=1e-12)

    def test_exact_nuisance_noiseless_recovers_delta(self, rng):
        t, p, d0 = 12, 3, -0.7
        x = rng.normal(size=(t, p))
        nu0 = np.array([1.0, 0.0, -1.0])
        g_net = np.array([0.5, 2.0, 0.0])
        z = (x @ nu0 + rng.normal(size=t))[None, :]
        z = np.vstack([z, z + rng.normal(size=t)])
        y = z * d0 + (x @ g_net)[None, :]
        ctx = DesignContext(tuple(range(1, t + 1)), x, y, z,
                            np.arange(6), np.arange(6, 12))
        fit = NuisanceFit(nu=np.vstack([nu0, nu0]),
                          gamma=np.vstack([g_net + d0 * nu0, g_net + d0 * nu0]),
                          eta=np.zeros(2),
                          alpha=np.array([0.0, 0.0]), support=[[0, 1, 2]] * 2)
        # y - alpha - x'(gamma) = d0 * e when gamma absorbs d0*nu0... the score
        # is exactly zero at d0 only if the y-residual equals d0 times the
        # z-residual, which the construction above enforces up to intercepts
        e = z - (x @ nu0)[None, :]
        r = y - (x @ (g_net + d0 * nu0))[None, :]
        assert np.allclose(r, d0 * e)
        assert neyman_delta(ctx, ctx.main_pos, fit) == pytest.approx(d0, abs=1e-12)

    def test_zero_denominator_raises(self):
        ctx = DesignContext((1, 2, 3, 4), np.zeros((4, 1)),
                            y=np.array([[1.0, 2.0, 3.0, 4.0]]),
                            z=np.zeros((1, 4)),
                            main_pos=np.array([0, 1]), aux_pos=np.array([2, 3]))
        with pytest.raises(DegenerateResidual):
            neyman_delta(ctx, ctx.main_pos, zero_nuisance(1, 1))

    def test_orthogonality_directional_derivative(self, rng):
        # OLS nuisances on the eval fold make both residuals orthogonal to the
        # design there, so perturbing nu has no first-order effect on delta
        t, p, n = 16, 3, 2
        x = rng.normal(size=(t, p))
        y = rng.normal(size=(n, t))
        z = rng.normal(size=(n, t))
        eval_pos = np.arange(t)
        nu = np.vstack([np.linalg.lstsq(x, z[i], rcond=None)[0] for i in range(n)])
        gam = np.vstack([np.linalg.lstsq(x, y[i], rcond=None)[0] for i in range(n)])
        base = NuisanceFit(nu=nu, gamma=gam, eta=np.zeros(n), alpha=np.zeros(n),
                           support=[list(range(p))] * n)
        ctx = DesignContext(tuple(range(1, t + 1)), x, y, z,
                            eval_pos, np.arange(0))
        h = rng.normal(size=(n, p))
        eps = 1e-6
        deltas = []
        for sign in (+1, -1):
            pert = NuisanceFit(nu=nu + sign * eps * h, gamma=gam,
                               eta=np.zeros(n), alpha=np.zeros(n),
                               support=base.support)
            deltas.append(neyman_delta(ctx, eval_pos, pert))
        slope = (deltas[0] - deltas[1]) / (2 * eps)
        assert abs(slope) <= 1e-2 * np.linalg.norm(h)


class TestCrossFitDelta:
    def test_average_identity_and_se_positive(self, rng):
        panel = random_panel(rng, 3, 24)
        fit = cross_fit_delta(full_context(panel, 8))
        assert fit.delta == (fit.delta_m + fit.delta_a) / 2.0
        assert fit.std_error > 0

    def test_fold_exchangeability(self, rng):
        panel = random_panel(rng, 3, 24)
        ctx = full_context(panel, 8)
        swapped = DesignContext(ctx.periods, ctx.xcols, ctx.y, ctx.z,
                                main_pos=ctx.aux_pos, aux_pos=ctx.main_pos)
        f1 = cross_fit_delta(ctx)
        f2 = cross_fit_delta(swapped)
        assert f1.delta_m == f2.delta_a and f1.delta_a == f2.delta_m
        assert f1.delta == f2.delta

    def test_noiseless_private_effect_is_exact(self, rng):
        panel = random_panel(rng, 3, 24)
        y = 1.5 * panel.z  # no spillover signal at all
        pn = PanelData(y, panel.x, panel.z)
        fit = cross_fit_delta(full_context(pn, 8))
        assert fit.delta == pytest.approx(1.5, abs=1e-8)
        assert fit.std_error < 1e-6

    def test_scaling_rules(self, rng):
        panel = random_panel(rng, 3, 24)
        c = 4.0
        base = cross_fit_delta(full_context(panel, 8))
        z_scaled = cross_fit_delta(full_context(
            PanelData(panel.y, panel.x, c * panel.z), 8))
        y_scaled = cross_fit_delta(full_context(
            PanelData(c * panel.y, panel.x, panel.z), 8))
        assert z_scaled.delta == pytest.approx(base.delta / c, rel=1e-6)
        assert y_scaled.delta == pytest.approx(base.delta * c, rel=1e-6)


class TestPerUnitDeltas:
    def test_noiseless_homogeneous(self, rng):
        panel = random_panel(rng, 3, 24)
        pn = PanelData(-0.4 * panel.z, panel.x, panel.z)
        d = per_unit_deltas(full_context(pn, 8))
        assert np.allclose(d, -0.4, atol=1e-8)

    def test_matches_pooled_when_single_unit_dominates(self, rng):
        panel = random_panel(rng, 2, 24)
        ctx = full_context(panel, 8)
        scores = cross_fit_scores(ctx)
        d = per_unit_deltas(ctx, scores=scores)
        for i in range(2):
            expected = 0.5 * (scores.num_m[i] / scores.den_m[i]
                              + scores.num_a[i] / scores.den_a[i])
            assert d[i] == pytest.approx(expected, abs=1e-15)

    def test_degenerate_unit_raises(self, rng):
        panel = random_panel(rng, 2, 24)
        z = panel.z.copy()
        z[1] = 0.0
        pn = PanelData(panel.y, panel.x, z)
        with pytest.raises(DegenerateResidual):
            per_unit_deltas(full_context(pn, 8))
