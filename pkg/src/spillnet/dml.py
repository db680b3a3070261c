"""Cross-fitted private-effect estimation via post-double-Lasso.

On the auxiliary fold the private covariate z and the outcome y are each
regressed on the regime-indexed spillover design by adaptive Lasso; the
union of the two selected supports is refit by OLS.  The private effect is
then the closed-form solution of the orthogonal score on the main fold,
and fold roles are swapped and averaged.

Adaptive weights are built in two passes: a conservative pass whose
penalty loadings depend only on the covariates and the response scale,
then a refined pass with heteroscedasticity-consistent loadings based on
first-pass residuals.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateResidual, RankWarning, RegimeTooShort
from .lasso import DEFAULT_MAX_ITER, DEFAULT_TOL, post_lasso_refit, select_lambda
from .panel import PanelData, build_regime_design, split_regimes


@dataclass
class DmlConfig:
    n_lambdas: int = 50
    min_ratio: float = 1e-3
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    # printed-form switch: refined loading as square-of-sum instead of
    # sum-of-squares (vanishes under exogeneity; kept for comparison only)
    refined_weight_square_of_sum: bool = False


@dataclass
class SelectedSupport:
    """Per-unit selected index sets from the two fold regressions."""

    s_hat_v: list  # z-regression supports
    s_hat_g: list  # y-regression supports

    @property
    def s_hat(self) -> list:
        return [sorted(set(v) | set(g)) for v, g in zip(self.s_hat_v, self.s_hat_g)]


@dataclass
class NuisanceFit:
    """Post-Lasso OLS refits of both fold regressions, per unit."""

    nu: np.ndarray  # N x p, zeros outside the support
    gamma: np.ndarray  # N x p
    eta: np.ndarray  # N intercepts of the z-regression
    alpha: np.ndarray  # N intercepts of the y-regression
    support: list


@dataclass
class DMLFit:
    delta: float
    delta_m: float
    delta_a: float
    std_error: float
    e_second_moment: float
    u_second_moment: float
    per_unit_support_sizes: list
    per_unit_delta: np.ndarray | None = field(default=None, repr=False)

    def to_json(self) -> str:
        return json.dumps({
            "delta": self.delta,
            "delta_m": self.delta_m,
            "delta_a": self.delta_a,
            "std_error": self.std_error,
            "per_unit_support_sizes": list(self.per_unit_support_sizes),
        }, indent=2)


@dataclass
class DesignContext:
    """Observation window and control design shared by the DML routines.

    ``periods`` are 1-based panel periods in window order; ``xcols`` holds
    the control columns (common across units) restricted to the window.
    ``main_pos``/``aux_pos`` index into the window.
    """

    periods: tuple
    xcols: np.ndarray  # T_win x p
    y: np.ndarray  # N x T_win
    z: np.ndarray  # N x T_win
    main_pos: np.ndarray
    aux_pos: np.ndarray


def full_context(panel: PanelData, b: int) -> DesignContext:
    """Both regimes, regime-split control columns, regime-balanced folds."""
    split = split_regimes(panel.n_periods, b)
    design = build_regime_design(panel, b, split_z=False)
    periods = tuple(range(1, panel.n_periods + 1))
    pos = {t: k for k, t in enumerate(periods)}
    return DesignContext(
        periods=periods,
        xcols=design.x_block,
        y=panel.y,
        z=panel.z,
        main_pos=np.array([pos[t] for t in split.main_indices]),
        aux_pos=np.array([pos[t] for t in split.aux_indices]),
    )


def window_context(panel: PanelData, periods) -> DesignContext:
    """A contiguous window with unsplit controls; folds are window halves."""
    periods = tuple(periods)
    if len(periods) < 4:
        raise RegimeTooShort(f"window of {len(periods)} periods cannot host two folds of >= 2")
    idx = np.array([t - 1 for t in periods])
    cut = (len(periods) + 1) // 2
    return DesignContext(
        periods=periods,
        xcols=panel.x[:, idx].T,
        y=panel.y[:, idx],
        z=panel.z[:, idx],
        main_pos=np.arange(cut),
        aux_pos=np.arange(cut, len(periods)),
    )


def regime_context(panel: PanelData, b: int, regime: str) -> DesignContext:
    """One regime only; controls reduce to the plain covariate columns."""
    rng = range(1, b + 1) if regime == "pre" else range(b + 1, panel.n_periods + 1)
    return window_context(panel, rng)


def _conservative_weights(xc: np.ndarray, resp_c: np.ndarray) -> np.ndarray:
    nfold = xc.shape[0]
    var_resp = float(resp_c @ resp_c) / nfold
    return np.sqrt(np.einsum("tj,tj->j", xc, xc) * var_resp / nfold)


def _refined_weights(xc: np.ndarray, resid: np.ndarray, square_of_sum: bool) -> np.ndarray:
    nfold = xc.shape[0]
    if square_of_sum:
        return np.abs(xc.T @ resid) / np.sqrt(nfold)
    return np.sqrt(np.einsum("tj,t,tj,t->j", xc, resid, xc, resid) / nfold)


def _guard_weights(w: np.ndarray) -> np.ndarray:
    top = w.max() if w.size else 0.0
    if top <= 0:
        return np.ones_like(w)
    return np.maximum(w, 1e-10 * top)


def _select_one(xc, resp_c, config: DmlConfig):
    """Two-pass adaptive-Lasso selection for one response; returns the support."""
    w1 = _guard_weights(_conservative_weights(xc, resp_c))
    sel1 = select_lambda(xc, resp_c, w1, tol=config.tol, max_iter=config.max_iter,
                         n_lambdas=config.n_lambdas, min_ratio=config.min_ratio)
    resid = resp_c - xc @ sel1.solution.coefficients
    w2 = _guard_weights(_refined_weights(xc, resid, config.refined_weight_square_of_sum))
    sel2 = select_lambda(xc, resp_c, w2, tol=config.tol, max_iter=config.max_iter,
                         n_lambdas=config.n_lambdas, min_ratio=config.min_ratio)
    return sorted(int(k) for k in sel2.solution.active_set)


def _fold_slices(ctx: DesignContext, fold_pos: np.ndarray):
    xf = ctx.xcols[fold_pos]
    xbar = xf.mean(axis=0)
    return xf - xbar, xbar


def double_lasso_select(ctx: DesignContext, fold_pos: np.ndarray,
                        config: DmlConfig | None = None) -> SelectedSupport:
    """Run the two fold regressions per unit and return both supports."""
    config = config or DmlConfig()
    xc, _ = _fold_slices(ctx, fold_pos)
    s_v, s_g = [], []
    for i in range(ctx.y.shape[0]):
        zf = ctx.z[i, fold_pos]
        yf = ctx.y[i, fold_pos]
        s_v.append(_select_one(xc, zf - zf.mean(), config))
        s_g.append(_select_one(xc, yf - yf.mean(), config))
    return SelectedSupport(s_hat_v=s_v, s_hat_g=s_g)


def post_double_fit(ctx: DesignContext, fold_pos: np.ndarray,
                    support: SelectedSupport) -> NuisanceFit:
    """OLS refit of both regressions on the union support, with intercepts."""
    n = ctx.y.shape[0]
    p = ctx.xcols.shape[1]
    xc, xbar = _fold_slices(ctx, fold_pos)
    nu = np.zeros((n, p))
    gamma = np.zeros((n, p))
    eta = np.zeros(n)
    alpha = np.zeros(n)
    union = support.s_hat
    for i in range(n):
        s = union[i]
        zf = ctx.z[i, fold_pos]
        yf = ctx.y[i, fold_pos]
        with warnings.catch_warnings():
            # short folds routinely make the restricted design rank deficient;
            # the pseudoinverse refit handles that without user action
            warnings.simplefilter("ignore", RankWarning)
            nu[i] = post_lasso_refit(xc, zf - zf.mean(), s)
            gamma[i] = post_lasso_refit(xc, yf - yf.mean(), s)
        eta[i] = zf.mean() - xbar @ nu[i]
        alpha[i] = yf.mean() - xbar @ gamma[i]
    return NuisanceFit(nu=nu, gamma=gamma, eta=eta, alpha=alpha, support=union)


def _score_pieces(ctx: DesignContext, eval_pos: np.ndarray, nuisance: NuisanceFit):
    """Per-unit score numerators/denominators and residuals on the eval fold."""
    xe = ctx.xcols[eval_pos]
    e = ctx.z[:, eval_pos] - nuisance.eta[:, None] - nuisance.nu @ xe.T
    r = ctx.y[:, eval_pos] - nuisance.alpha[:, None] - nuisance.gamma @ xe.T
    num = np.einsum("it,it->i", e, r)
    den = np.einsum("it,it->i", e, e)
    return num, den, e, r


def neyman_delta(ctx: DesignContext, eval_pos: np.ndarray, nuisance: NuisanceFit) -> float:
    """Closed-form orthogonal-score ratio, pooled over units and eval periods."""
    num, den, _, _ = _score_pieces(ctx, eval_pos, nuisance)
    if den.sum() <= 0:
        raise DegenerateResidual("partialled-out private covariate has zero variation")
    return float(num.sum() / den.sum())


@dataclass
class CrossFitScores:
    """Both fold directions of the orthogonal score, kept per unit."""

    num_m: np.ndarray  # per-unit numerator, evaluated on the main fold
    den_m: np.ndarray
    num_a: np.ndarray  # evaluated on the aux fold
    den_a: np.ndarray
    e_resid: np.ndarray  # N x T_win residuals, cross-fitted
    y_resid: np.ndarray
    support_sizes: list

    def pooled(self, units=None):
        """delta_m, delta_a over a unit subset (all units by default)."""
        sel = slice(None) if units is None else np.asarray(units, dtype=int)
        dm_den = self.den_m[sel].sum()
        da_den = self.den_a[sel].sum()
        if dm_den <= 0 or da_den <= 0:
            raise DegenerateResidual("zero score denominator on a fold")
        return self.num_m[sel].sum() / dm_den, self.num_a[sel].sum() / da_den


def cross_fit_scores(ctx: DesignContext, config: DmlConfig | None = None) -> CrossFitScores:
    config = config or DmlConfig()
    sup_a = double_lasso_select(ctx, ctx.aux_pos, config)
    fit_a = post_double_fit(ctx, ctx.aux_pos, sup_a)
    num_m, den_m, e_m, r_m = _score_pieces(ctx, ctx.main_pos, fit_a)
    sup_m = double_lasso_select(ctx, ctx.main_pos, config)
    fit_m = post_double_fit(ctx, ctx.main_pos, sup_m)
    num_a, den_a, e_a, r_a = _score_pieces(ctx, ctx.aux_pos, fit_m)
    n, t_win = ctx.y.shape
    e = np.zeros((n, t_win))
    r = np.zeros((n, t_win))
    e[:, ctx.main_pos] = e_m
    e[:, ctx.aux_pos] = e_a
    r[:, ctx.main_pos] = r_m
    r[:, ctx.aux_pos] = r_a
    sizes = [len(s) for s in fit_a.support]
    return CrossFitScores(num_m=num_m, den_m=den_m, num_a=num_a, den_a=den_a,
                          e_resid=e, y_resid=r, support_sizes=sizes)


def _sandwich_se(scores: CrossFitScores, delta: float, n_obs: int) -> float:
    e2 = scores.e_resid ** 2
    u = scores.y_resid - delta * scores.e_resid
    mean_e2 = e2.mean()
    if mean_e2 <= 0:
        raise DegenerateResidual("zero residual second moment")
    v_hat = (u ** 2 * e2).mean() / mean_e2 ** 2
    return float(np.sqrt(v_hat / n_obs))


def _jackknife_se(scores: CrossFitScores) -> float:
    """Delete-one-unit jackknife standard error of the pooled estimate.

    Each unit's nuisance regressions are fit from that unit's own time
    series, so estimation noise in the fitted nuisances is independent
    across units but shared by every observation of a unit.  Resampling at
    the unit level therefore picks up both the score variance and the
    nuisance-noise contribution, which an observation-level plug-in
    variance understates in short panels.
    """
    n = scores.num_m.shape[0]
    loo = np.empty(n)
    for i in range(n):
        keep = [j for j in range(n) if j != i]
        dm, da = scores.pooled(keep)
        loo[i] = 0.5 * (dm + da)
    return float(np.sqrt((n - 1) / n * ((loo - loo.mean()) ** 2).sum()))


def cross_fit_delta(ctx: DesignContext, config: DmlConfig | None = None,
                    scores: CrossFitScores | None = None) -> DMLFit:
    """Pooled cross-fitted private effect with a jackknife standard error."""
    if scores is None:
        scores = cross_fit_scores(ctx, config)
    delta_m, delta_a = scores.pooled()
    delta = (delta_m + delta_a) / 2.0
    se = _jackknife_se(scores)
    return DMLFit(delta=float(delta), delta_m=float(delta_m), delta_a=float(delta_a),
                  std_error=se,
                  e_second_moment=float((scores.e_resid ** 2).mean()),
                  u_second_moment=float(((scores.y_resid - delta * scores.e_resid) ** 2).mean()),
                  per_unit_support_sizes=scores.support_sizes)


def per_unit_deltas(ctx: DesignContext, config: DmlConfig | None = None,
                    scores: CrossFitScores | None = None) -> np.ndarray:
    """Unit-level cross-fitted private effects (time sums only)."""
    if scores is None:
        scores = cross_fit_scores(ctx, config)
    n = scores.num_m.shape[0]
    out = np.empty(n)
    for i in range(n):
        if scores.den_m[i] <= 0 or scores.den_a[i] <= 0:
            raise DegenerateResidual(f"zero score denominator for unit {i}")
        out[i] = 0.5 * (scores.num_m[i] / scores.den_m[i]
                        + scores.num_a[i] / scores.den_a[i])
    return out


def per_unit_delta(ctx: DesignContext, i: int, config: DmlConfig | None = None) -> float:
    return float(per_unit_deltas(ctx, config)[i])


def group_deltas(scores: CrossFitScores, membership) -> dict:
    """Pooled cross-fitted delta per group of units."""
    membership = np.asarray(membership)
    out = {}
    for g in sorted(set(int(v) for v in membership)):
        units = np.flatnonzero(membership == g)
        dm, da = scores.pooled(units)
        out[g] = float((dm + da) / 2.0)
    return out
