"""Weighted L1 least squares by cyclic coordinate descent.

The solver minimizes

    (1/(2n)) * ||y - X c||^2  +  lam * sum_k phi_k |c_k|

so the stationarity condition for an active coordinate is
|x_k' r| / n = lam * phi_k.  A weight of zero leaves the coordinate
unpenalized; the private-effect column is handled this way.  Tuning is by
BIC over a descending lambda grid with chained warm starts.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DegenerateCovariate, RankWarning

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 10_000


@dataclass
class LassoProblem:
    design: np.ndarray
    response: np.ndarray
    penalty_level: float
    weights: np.ndarray
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    def __post_init__(self):
        self.design = np.asarray(self.design, dtype=float)
        self.response = np.asarray(self.response, dtype=float).ravel()
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        n, p = self.design.shape
        if n < 1 or p < 1 or self.response.shape[0] != n or self.weights.shape[0] != p:
            raise ValueError("inconsistent problem dimensions")
        if self.penalty_level < 0:
            raise ValueError("penalty_level must be >= 0")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise ValueError("weights must be finite and >= 0")


@dataclass
class LassoSolution:
    coefficients: np.ndarray
    active_set: np.ndarray
    objective_value: float
    iterations: int
    converged: bool

    @property
    def rss(self) -> float:
        return self._rss

    _rss: float = field(default=0.0, repr=False)


@njit(cache=True)
def _cd_sweeps(x, y, thresh, col_norms, coef, max_iter, tol):
    """Cyclic coordinate descent; returns (sweeps, converged, half_rss_n)."""
    n, p = x.shape
    r = y - x @ coef
    obj = 0.5 / n * (r @ r)
    for k in range(p):
        obj += thresh[k] / n * abs(coef[k])
    sweeps = 0
    converged = False
    while sweeps < max_iter:
        sweeps += 1
        for k in range(p):
            nk = col_norms[k]
            if nk <= 0.0:
                continue
            old = coef[k]
            rho = x[:, k] @ r + nk * old
            if thresh[k] > 0.0:
                if rho > thresh[k]:
                    new = (rho - thresh[k]) / nk
                elif rho < -thresh[k]:
                    new = (rho + thresh[k]) / nk
                else:
                    new = 0.0
            else:
                new = rho / nk
            if new != old:
                d = new - old
                for m in range(n):
                    r[m] -= d * x[m, k]
                coef[k] = new
        new_obj = 0.5 / n * (r @ r)
        for k in range(p):
            new_obj += thresh[k] / n * abs(coef[k])
        if obj - new_obj <= tol * max(abs(obj), 1.0):
            obj = new_obj
            converged = True
            break
        obj = new_obj
    return sweeps, converged, obj


def solve_lasso(problem: LassoProblem, warm_start: np.ndarray | None = None) -> LassoSolution:
    """Minimize the weighted-L1 objective by cyclic coordinate descent.

    Zero-variance penalized columns are forced to zero.  Exceeding the
    iteration cap returns converged=False rather than raising.
    """
    x = np.asfortranarray(problem.design)
    y = problem.response
    n, p = x.shape
    col_norms = np.einsum("ij,ij->j", x, x)
    thresh = n * problem.penalty_level * problem.weights
    coef = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=float)
    dead = col_norms <= 0.0
    coef[dead] = 0.0
    if np.all(thresh == 0.0):
        # unpenalized limit: plain least squares is exact
        coef, *_ = np.linalg.lstsq(x, y, rcond=None)
        coef[dead] = 0.0
        r = y - x @ coef
        return LassoSolution(
            coefficients=coef,
            active_set=np.flatnonzero(coef),
            objective_value=0.5 / n * float(r @ r),
            iterations=0,
            converged=True,
            _rss=float(r @ r),
        )
    sweeps, converged, obj = _cd_sweeps(x, y, thresh, col_norms, coef,
                                        problem.max_iter, problem.tol)
    r = y - x @ coef
    return LassoSolution(
        coefficients=coef,
        active_set=np.flatnonzero(coef),
        objective_value=obj,
        iterations=sweeps,
        converged=converged,
        _rss=float(r @ r),
    )


def lambda_max(design: np.ndarray, response: np.ndarray, weights: np.ndarray) -> float:
    """Smallest penalty level that zeroes every penalized coefficient.

    Unpenalized columns (weight 0) are projected out first.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    n = x.shape[0]
    free = w == 0
    r = y
    if free.any():
        xf = x[:, free]
        beta, *_ = np.linalg.lstsq(xf, y, rcond=None)
        r = y - xf @ beta
    lam = 0.0
    for k in np.flatnonzero(~free):
        nk = x[:, k] @ x[:, k]
        if nk > 0:
            lam = max(lam, abs(x[:, k] @ r) / (n * w[k]))
    return lam


def default_lambda_grid(design, response, weights, n_lambdas: int = 50,
                        min_ratio: float = 1e-3) -> np.ndarray:
    """Log-spaced descending grid from lambda_max down to min_ratio * lambda_max."""
    top = lambda_max(design, response, weights)
    if top <= 0:
        top = 1e-12
    return np.geomspace(top, min_ratio * top, n_lambdas)


@dataclass
class LambdaSelection:
    lambda_: float
    solution: LassoSolution
    lambdas: np.ndarray
    bics: np.ndarray
    solutions: list


def select_lambda(design, response, weights, grid=None, *, tol: float = DEFAULT_TOL,
                  max_iter: int = DEFAULT_MAX_ITER, n_lambdas: int = 50,
                  min_ratio: float = 1e-3) -> LambdaSelection:
    """Choose the BIC-minimizing penalty level along a descending grid.

    BIC(lam) = n log(RSS/n) + df log(n) with df the active-set size; ties
    break toward the larger (sparser) lambda.  Solutions are warm-started
    down the path.
    """
    if grid is None:
        grid = default_lambda_grid(design, response, weights, n_lambdas, min_ratio)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    if np.any(np.diff(grid) > 0):
        raise ValueError("lambda grid must be sorted descending")
    n = np.asarray(design).shape[0]
    warm = None
    sols, bics = [], []
    for lam in grid:
        sol = solve_lasso(LassoProblem(design, response, lam, weights, tol, max_iter),
                          warm_start=warm)
        warm = sol.coefficients
        df = sol.active_set.size
        rss_n = max(sol.rss / n, 1e-300)
        bics.append(n * np.log(rss_n) + df * np.log(n))
        sols.append(sol)
    bics = np.asarray(bics)
    best = int(np.argmin(bics))  # argmin returns the first minimum: larger lambda wins ties
    return LambdaSelection(float(grid[best]), sols[best], grid, bics, sols)


def regime_adaptive_weights(panel, b: int):
    """Per-covariate adaptive weights, one vector per regime.

    phi_pre[j] = (sum_{t<=b} x_jt^2 / b)^{-1/2} and analogously post-break;
    the weight depends on j only, so one N-vector per regime serves all units.
    """
    t = panel.n_periods
    if not 1 <= b <= t - 1:
        raise DegenerateCovariate(-1, "invalid breakpoint for weights")
    m_pre = np.mean(panel.x[:, :b] ** 2, axis=1)
    m_post = np.mean(panel.x[:, b:] ** 2, axis=1)
    for j in np.flatnonzero(m_pre == 0):
        raise DegenerateCovariate(int(j), "pre")
    for j in np.flatnonzero(m_post == 0):
        raise DegenerateCovariate(int(j), "post")
    return 1.0 / np.sqrt(m_pre), 1.0 / np.sqrt(m_post)


def post_lasso_refit(design, response, support) -> np.ndarray:
    """OLS on the support columns, zeros elsewhere.

    A rank-deficient restricted design drops trailing collinear columns and
    emits a RankWarning.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float).ravel()
    p = x.shape[1]
    support = np.asarray(sorted(support), dtype=int)
    coef = np.zeros(p)
    if support.size == 0:
        return coef
    keep = list(support)
    xs = x[:, keep]
    rank = np.linalg.matrix_rank(xs)
    if rank < len(keep):
        warnings.warn("restricted design is rank deficient; dropping trailing collinear columns",
                      RankWarning, stacklevel=2)
        while len(keep) > 1 and np.linalg.matrix_rank(x[:, keep]) < len(keep):
            keep.pop()
        xs = x[:, keep]
    beta, *_ = np.linalg.lstsq(xs, y, rcond=None)
    coef[keep] = beta
    return coef
