"""Break-type diagnosis by information criterion and latent-group selection.

Four break specifications are supported: no break, break in the spillover
matrix only, break in the private effect only, and break in both.  Each is
fully re-estimated (breakpoint included, where applicable) and scored by
IC = log(mean squared residual) + n_p * ln(NT)/(NT).

Group heterogeneity in the private effect is handled by sorting per-unit
cross-fitted estimates and binary-segmenting them into G groups, with G
chosen by the same criterion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .break_detect import PenaltyConfig, candidate_grid, estimate_break
from .dml import (DmlConfig, cross_fit_delta, cross_fit_scores, full_context,
                  group_deltas, per_unit_deltas, regime_context, window_context)
from .errors import TooManyGroups
from .lasso import LassoProblem, solve_lasso
from .panel import PanelData
from .spillover import (PrivateEffect, SpilloverNetworks, estimate_spillover,
                        estimate_static_network)

VARIANTS = ("none", "gamma_only", "delta_only", "both")

_DELTA_PARAMS = {"none": 1, "gamma_only": 1, "delta_only": 2, "both": 2}


@dataclass(frozen=True)
class BreakTypeSpec:
    variant: str
    n_breaks: int

    def __post_init__(self):
        if (self.variant == "none") != (self.n_breaks == 0):
            raise ValueError("variant 'none' iff n_breaks == 0")


@dataclass(frozen=True)
class ICResult:
    q_hat: float
    n_p: int
    value: float


@dataclass
class GroupStructure:
    n_groups: int
    membership: np.ndarray  # per-unit labels in 1..G, ascending in group mean
    group_deltas: dict | None = None


def count_parameters(variant: str, n_units: int, n_groups: int = 1) -> int:
    """Parameter count of a break specification at full design dimension."""
    gamma = n_units ** 2 * (2 if variant in ("gamma_only", "both") else 1)
    return gamma + n_units + _DELTA_PARAMS[variant] * n_groups


def information_criterion(q_hat: float, n_p: int, n_units: int, n_periods: int) -> ICResult:
    nt = n_units * n_periods
    value = math.log(q_hat) + n_p * math.log(nt) / nt
    return ICResult(q_hat=float(q_hat), n_p=int(n_p), value=float(value))


@dataclass
class FittedSpec:
    """A fully estimated model under one break specification."""

    spec: BreakTypeSpec
    breakpoint: int | None
    private: PrivateEffect
    networks: SpilloverNetworks | None  # regime-split variants
    static_network: np.ndarray | None  # no-gamma-break variants
    residuals: np.ndarray
    ic: ICResult
    dml_std_error: float | None = None
    extras: dict = field(default_factory=dict)


def model_residuals(panel: PanelData, gamma_of_t, private: PrivateEffect,
                    b: int | None) -> np.ndarray:
    """Within-demeaned residuals of a fitted model.

    ``gamma_of_t`` maps a 0-based period index to the applicable N x N
    spillover matrix.  Demeaning the raw residual per unit recovers the
    fixed-effect estimate implicitly.
    """
    n, t = panel.n_units, panel.n_periods
    fitted = np.empty((n, t))
    for k in range(t):
        fitted[:, k] = gamma_of_t(k) @ panel.x[:, k]
    fitted += private.contribution(panel, b if b is not None else t)
    resid = panel.y - fitted
    return resid - resid.mean(axis=1, keepdims=True)


def _q_hat(resid: np.ndarray) -> float:
    return float(np.mean(resid ** 2))


def _estimate_break_delta_only(panel: PanelData, trim: float, pcfg: PenaltyConfig):
    """Breakpoint profile when only the private effect shifts.

    The spillover design is breakpoint-invariant here; only the regime-split
    z columns move with b.  One penalty level is BIC-selected at the grid
    midpoint, as in the main profile search.
    """
    n, t = panel.n_units, panel.n_periods
    grid = candidate_grid(t, trim)
    yc = panel.y - panel.y.mean(axis=1, keepdims=True)
    xc = panel.x.T - panel.x.T.mean(axis=0, keepdims=True)
    m2 = np.mean(panel.x ** 2, axis=1)
    weights = np.concatenate([1.0 / np.sqrt(np.maximum(m2, 1e-300)), [0.0, 0.0]])

    def unit_design(b):
        pre = np.arange(t) < b
        z_pre = np.where(pre[None, :], panel.z, 0.0)
        z_post = np.where(pre[None, :], 0.0, panel.z)
        z_pre = z_pre - z_pre.mean(axis=1, keepdims=True)
        z_post = z_post - z_post.mean(axis=1, keepdims=True)
        return z_pre, z_post

    # penalty level: pooled BIC at the midpoint candidate
    b_mid = min(max(math.ceil(t / 2), grid[0]), grid[-1])
    z_pre, z_post = unit_design(b_mid)
    from .lasso import default_lambda_grid  # local import to avoid cycle noise
    top = 0.0
    for i in range(n):
        di = np.hstack([xc, z_pre[i, :, None], z_post[i, :, None]])
        top = max(top, default_lambda_grid(di, yc[i], weights, 1)[0])
    lam_grid = np.geomspace(max(top, 1e-12), pcfg.min_ratio * max(top, 1e-12), pcfg.n_lambdas)
    total_bic = np.zeros(pcfg.n_lambdas)
    for i in range(n):
        di = np.hstack([xc, z_pre[i, :, None], z_post[i, :, None]])
        warm = None
        for k, lam in enumerate(lam_grid):
            sol = solve_lasso(LassoProblem(di, yc[i], lam, weights, pcfg.tol, pcfg.max_iter),
                              warm_start=warm)
            warm = sol.coefficients
            total_bic[k] += t * np.log(max(sol.rss / t, 1e-300)) \
                + sol.active_set.size * np.log(t)
    lam = float(lam_grid[int(np.argmin(total_bic))])

    best_b, best_v, best_beta = None, np.inf, None
    warm = None
    profile = {}
    for b in grid:
        z_pre, z_post = unit_design(b)
        betas = np.empty((n, n + 2))
        v = 0.0
        for i in range(n):
            di = np.hstack([xc, z_pre[i, :, None], z_post[i, :, None]])
            sol = solve_lasso(LassoProblem(di, yc[i], lam, weights, pcfg.tol, pcfg.max_iter),
                              warm_start=None if warm is None else warm[i])
            betas[i] = sol.coefficients
            v += sol.rss / t + 2.0 * lam * float(weights @ np.abs(sol.coefficients))
        v /= n
        profile[b] = v
        warm = betas
        if v < best_v:
            best_b, best_v, best_beta = b, v, betas
    # refinement: unpenalized criterion at fixed coefficients
    best_ref, best_crit = None, np.inf
    for b in grid:
        z_pre, z_post = unit_design(b)
        rss = 0.0
        for i in range(n):
            di = np.hstack([xc, z_pre[i, :, None], z_post[i, :, None]])
            r = yc[i] - di @ best_beta[i]
            rss += r @ r
        crit = rss / (n * t)
        if crit < best_crit:  # ascending grid: ties keep the smallest b
            best_ref, best_crit = b, crit
    return best_ref, profile


def fit_break_spec(panel: PanelData, variant: str, trim: float = 0.15,
                   pcfg: PenaltyConfig | None = None,
                   dml_cfg: DmlConfig | None = None,
                   count_nonzero: bool = False) -> FittedSpec:
    """Estimate the full model under one break specification and score it."""
    pcfg = pcfg or PenaltyConfig()
    dml_cfg = dml_cfg or DmlConfig()
    n, t = panel.n_units, panel.n_periods

    if variant == "none":
        ctx = window_context(panel, range(1, t + 1))
        fit = cross_fit_delta(ctx, dml_cfg)
        private = PrivateEffect("constant", fit.delta)
        gamma = estimate_static_network(panel, panel.y - private.contribution(panel, t),
                                        dml_cfg)
        resid = model_residuals(panel, lambda k: gamma, private, None)
        b = None
        networks, static = None, gamma
        se = fit.std_error
        nz = np.count_nonzero(gamma)
    elif variant == "gamma_only":
        est = estimate_break(panel, trim, pcfg, split_z=False)
        b = est.b_refined
        ctx = full_context(panel, b)
        fit = cross_fit_delta(ctx, dml_cfg)
        private = PrivateEffect("constant", fit.delta)
        networks = estimate_spillover(panel, b, private, dml_cfg)
        resid = model_residuals(
            panel, lambda k: networks.gamma_pre if k < b else networks.gamma_post,
            private, b)
        static = None
        se = fit.std_error
        nz = np.count_nonzero(networks.gamma_pre) + np.count_nonzero(networks.gamma_post)
    elif variant == "delta_only":
        b, _profile = _estimate_break_delta_only(panel, trim, pcfg)
        fit_pre = cross_fit_delta(regime_context(panel, b, "pre"), dml_cfg)
        fit_post = cross_fit_delta(regime_context(panel, b, "post"), dml_cfg)
        private = PrivateEffect("regime_split", (fit_pre.delta, fit_post.delta))
        gamma = estimate_static_network(panel, panel.y - private.contribution(panel, b),
                                        dml_cfg)
        resid = model_residuals(panel, lambda k: gamma, private, b)
        networks, static = None, gamma
        se = None
        nz = np.count_nonzero(gamma)
    elif variant == "both":
        est = estimate_break(panel, trim, pcfg, split_z=True)
        b = est.b_refined
        fit_pre = cross_fit_delta(regime_context(panel, b, "pre"), dml_cfg)
        fit_post = cross_fit_delta(regime_context(panel, b, "post"), dml_cfg)
        private = PrivateEffect("regime_split", (fit_pre.delta, fit_post.delta))
        networks = estimate_spillover(panel, b, private, dml_cfg)
        resid = model_residuals(
            panel, lambda k: networks.gamma_pre if k < b else networks.gamma_post,
            private, b)
        static = None
        se = None
        nz = np.count_nonzero(networks.gamma_pre) + np.count_nonzero(networks.gamma_post)
    else:
        raise ValueError(f"unknown break variant {variant!r}")

    if count_nonzero:
        n_p = int(nz) + n + _DELTA_PARAMS[variant]
    else:
        n_p = count_parameters(variant, n)
    ic = information_criterion(_q_hat(resid), n_p, n, t)
    spec = BreakTypeSpec(variant=variant, n_breaks=0 if variant == "none" else 1)
    return FittedSpec(spec=spec, breakpoint=b, private=private, networks=networks,
                      static_network=static, residuals=resid, ic=ic, dml_std_error=se)


def _score_spec(variant: str, panel: PanelData, b, private, networks, static,
                resid, se, count_nonzero: bool) -> FittedSpec:
    n, t = panel.n_units, panel.n_periods
    if count_nonzero:
        if networks is not None:
            nz = np.count_nonzero(networks.gamma_pre) + np.count_nonzero(networks.gamma_post)
        else:
            nz = np.count_nonzero(static)
        n_p = int(nz) + n + _DELTA_PARAMS[variant]
    else:
        n_p = count_parameters(variant, n)
    ic = information_criterion(_q_hat(resid), n_p, n, t)
    spec = BreakTypeSpec(variant=variant, n_breaks=0 if variant == "none" else 1)
    return FittedSpec(spec=spec, breakpoint=b, private=private, networks=networks,
                      static_network=static, residuals=resid, ic=ic, dml_std_error=se)


def _fit_split_pair(panel: PanelData, trim: float, pcfg: PenaltyConfig,
                    dml_cfg: DmlConfig, count_nonzero: bool) -> dict:
    """Jointly estimate the two regime-split spillover specifications.

    The breakpoint and the spillover matrices are estimated once, under the
    more general private-effect treatment (regime split), and shared by both
    specifications.  Their criterion values then differ only through the
    private-effect structure, so the comparison is not clouded by support
    jitter between two independently selected network estimates.
    """
    est = estimate_break(panel, trim, pcfg, split_z=True)
    b = est.b_refined
    fit_pre = cross_fit_delta(regime_context(panel, b, "pre"), dml_cfg)
    fit_post = cross_fit_delta(regime_context(panel, b, "post"), dml_cfg)
    split_priv = PrivateEffect("regime_split", (fit_pre.delta, fit_post.delta))
    networks = estimate_spillover(panel, b, split_priv, dml_cfg)

    def gamma_of(k):
        return networks.gamma_pre if k < b else networks.gamma_post

    resid_both = model_residuals(panel, gamma_of, split_priv, b)
    # Constant-delta counterpart: the residual criterion is quadratic in the
    # constant, so its best value given the shared split fit is the centered-z
    # second-moment weighted combination of the two regime estimates.  Reusing
    # the same regime fits (rather than running a third, independent pooled
    # fit) keeps the pair comparison free of run-to-run estimation jitter.
    zc = panel.z - panel.z.mean(axis=1, keepdims=True)
    w_pre = float(np.sum(zc[:, :b] ** 2))
    w_post = float(np.sum(zc[:, b:] ** 2))
    w_tot = w_pre + w_post
    delta_const = (w_pre * fit_pre.delta + w_post * fit_post.delta) / w_tot
    se_const = float(np.sqrt((w_pre * fit_pre.std_error) ** 2
                             + (w_post * fit_post.std_error) ** 2) / w_tot)
    const_priv = PrivateEffect("constant", delta_const)
    resid_gamma = model_residuals(panel, gamma_of, const_priv, b)
    return {
        "gamma_only": _score_spec("gamma_only", panel, b, const_priv, networks,
                                  None, resid_gamma, se_const,
                                  count_nonzero),
        "both": _score_spec("both", panel, b, split_priv, networks, None,
                            resid_both, None, count_nonzero),
    }


def _fit_static_pair(panel: PanelData, trim: float, pcfg: PenaltyConfig,
                     dml_cfg: DmlConfig, count_nonzero: bool) -> dict:
    """Jointly estimate the two constant-spillover specifications.

    Mirrors the regime-split pair: one static network is estimated under the
    regime-split private effect and shared between the no-break and
    private-effect-break specifications.
    """
    t = panel.n_periods
    b, _profile = _estimate_break_delta_only(panel, trim, pcfg)
    fit_pre = cross_fit_delta(regime_context(panel, b, "pre"), dml_cfg)
    fit_post = cross_fit_delta(regime_context(panel, b, "post"), dml_cfg)
    split_priv = PrivateEffect("regime_split", (fit_pre.delta, fit_post.delta))
    gamma = estimate_static_network(panel, panel.y - split_priv.contribution(panel, b),
                                    dml_cfg)
    resid_delta = model_residuals(panel, lambda k: gamma, split_priv, b)
    fit_const = cross_fit_delta(window_context(panel, range(1, t + 1)), dml_cfg)
    const_priv = PrivateEffect("constant", fit_const.delta)
    resid_none = model_residuals(panel, lambda k: gamma, const_priv, None)
    return {
        "none": _score_spec("none", panel, None, const_priv, None, gamma,
                            resid_none, fit_const.std_error, count_nonzero),
        "delta_only": _score_spec("delta_only", panel, b, split_priv, None,
                                  gamma, resid_delta, None, count_nonzero),
    }


def select_break_type(panel: PanelData, candidates=VARIANTS, trim: float = 0.15,
                      pcfg: PenaltyConfig | None = None,
                      dml_cfg: DmlConfig | None = None,
                      count_nonzero: bool = True):
    """Fit every candidate specification and return the IC-minimizing one.

    Candidates that share a spillover structure (regime-split or constant
    network) are estimated jointly so their comparison isolates the
    private-effect break.  ``count_nonzero`` scores each specification by its
    selected parameters rather than the full design dimension, which keeps
    the penalty comparable across sparse fits of very different dimension.

    Returns (chosen FittedSpec, {variant: FittedSpec}).  Ties break toward
    fewer parameters.
    """
    pcfg = pcfg or PenaltyConfig()
    dml_cfg = dml_cfg or DmlConfig()
    fits = {}
    if "gamma_only" in candidates or "both" in candidates:
        fits.update(_fit_split_pair(panel, trim, pcfg, dml_cfg, count_nonzero))
    if "none" in candidates or "delta_only" in candidates:
        fits.update(_fit_static_pair(panel, trim, pcfg, dml_cfg, count_nonzero))
    fits = {v: fits[v] for v in candidates}
    chosen = min(fits.values(), key=lambda f: (f.ic.value, f.ic.n_p))
    return chosen, fits


def sbsa_cluster(deltas, n_groups: int) -> GroupStructure:
    """Sorted binary segmentation of per-unit estimates into G groups.

    Units are sorted by their estimate; the group whose best internal split
    most reduces the total within-group sum of squares is split, repeatedly,
    until G groups remain.  Labels are 1..G in ascending group mean.
    """
    deltas = np.asarray(deltas, dtype=float)
    n = deltas.size
    if n_groups > n:
        raise TooManyGroups(f"G={n_groups} exceeds N={n}")
    if n_groups < 1:
        raise ValueError("need at least one group")
    order = np.argsort(deltas, kind="stable")
    sorted_d = deltas[order]

    def wgss(lo, hi):  # within sum of squares of sorted_d[lo:hi]
        seg = sorted_d[lo:hi]
        return float(((seg - seg.mean()) ** 2).sum())

    segments = [(0, n)]
    while len(segments) < n_groups:
        best = None  # (gain, seg_index, cut)
        for si, (lo, hi) in enumerate(segments):
            if hi - lo < 2:
                continue
            base = wgss(lo, hi)
            for cut in range(lo + 1, hi):
                gain = base - wgss(lo, cut) - wgss(cut, hi)
                if best is None or gain > best[0] + 1e-15:
                    best = (gain, si, cut)
        if best is None:
            raise TooManyGroups("not enough distinct units left to split")
        _, si, cut = best
        lo, hi = segments.pop(si)
        segments.extend([(lo, cut), (cut, hi)])
        segments.sort()
    membership = np.empty(n, dtype=int)
    for label, (lo, hi) in enumerate(sorted(segments), start=1):
        membership[order[lo:hi]] = label
    return GroupStructure(n_groups=n_groups, membership=membership)


def select_num_groups(panel: PanelData, b: int, g_max: int,
                      dml_cfg: DmlConfig | None = None):
    """Choose the number of private-effect groups by the information criterion.

    For each G: cluster the per-unit cross-fitted estimates, pool the score
    per group, refit the spillover networks under the grouped private
    effect, and score the model with G private-effect parameters.
    """
    dml_cfg = dml_cfg or DmlConfig()
    n, t = panel.n_units, panel.n_periods
    if g_max > n:
        raise TooManyGroups(f"G_max={g_max} exceeds N={n}")
    ctx = full_context(panel, b)
    scores = cross_fit_scores(ctx, dml_cfg)
    unit_deltas = per_unit_deltas(ctx, dml_cfg, scores)
    results = []
    for g in range(1, g_max + 1):
        structure = sbsa_cluster(unit_deltas, g)
        gdel = group_deltas(scores, structure.membership)
        structure.group_deltas = gdel
        private = PrivateEffect("grouped", gdel, membership=structure.membership)
        networks = estimate_spillover(panel, b, private, dml_cfg)
        resid = model_residuals(
            panel, lambda k: networks.gamma_pre if k < b else networks.gamma_post,
            private, b)
        ic = information_criterion(_q_hat(resid), count_parameters("gamma_only", n, g), n, t)
        results.append((g, structure, ic))
    best = min(results, key=lambda r: (r[2].value, r[0]))
    return best[0], best[1], [(g, ic) for g, _s, ic in results], unit_deltas
