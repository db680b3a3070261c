"""Final recovery of the pre- and post-break spillover matrices.

After the private effect has been estimated, its contribution is removed
from the outcome and each unit's row of the two networks is re-estimated
by adaptive Lasso with a per-unit BIC penalty, followed by a post-Lasso
OLS refit on the active set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dml import DmlConfig
from .lasso import post_lasso_refit, regime_adaptive_weights, select_lambda
from .panel import PanelData, build_regime_design

ZERO_TOL = 1e-10  # refit coefficients below this are treated as structural zeros


@dataclass
class PrivateEffect:
    """Private-effect estimate in one of the three supported modes."""

    mode: str  # constant | regime_split | grouped
    delta: object  # scalar, (delta_pre, delta_post), or {group: delta}
    membership: np.ndarray | None = None  # required for grouped mode

    def contribution(self, panel: PanelData, b: int) -> np.ndarray:
        """N x T matrix of z times the applicable private effect."""
        if self.mode == "constant":
            return float(self.delta) * panel.z
        if self.mode == "regime_split":
            d_pre, d_post = self.delta
            dvec = np.where(np.arange(panel.n_periods) < b, float(d_pre), float(d_post))
            return panel.z * dvec[None, :]
        if self.mode == "grouped":
            if self.membership is None:
                raise ValueError("grouped mode requires a membership vector")
            dvec = np.array([float(self.delta[int(g)]) for g in self.membership])
            return panel.z * dvec[:, None]
        raise ValueError(f"unknown private-effect mode {self.mode!r}")


@dataclass
class SpilloverNetworks:
    gamma_pre: np.ndarray  # N x N, row i = effects onto unit i
    gamma_post: np.ndarray

    @property
    def support_pre(self) -> np.ndarray:
        return self.gamma_pre != 0

    @property
    def support_post(self) -> np.ndarray:
        return self.gamma_post != 0


def fit_unit_network_row(design_c: np.ndarray, resp_c: np.ndarray, weights: np.ndarray,
                         config: DmlConfig) -> np.ndarray:
    """BIC-tuned adaptive Lasso followed by post-Lasso OLS; tiny values zeroed."""
    sel = select_lambda(design_c, resp_c, weights, tol=config.tol,
                        max_iter=config.max_iter, n_lambdas=config.n_lambdas,
                        min_ratio=config.min_ratio)
    coef = post_lasso_refit(design_c, resp_c, sel.solution.active_set)
    coef[np.abs(coef) < ZERO_TOL] = 0.0
    return coef


def estimate_spillover(panel: PanelData, b: int, private: PrivateEffect,
                       config: DmlConfig | None = None) -> SpilloverNetworks:
    """Row-by-row post-Lasso regression of the partial outcome on X(b)."""
    config = config or DmlConfig()
    n = panel.n_units
    ytilde = panel.y - private.contribution(panel, b)
    ytilde = ytilde - ytilde.mean(axis=1, keepdims=True)
    design = build_regime_design(panel, b, split_z=False)
    xc = design.x_block - design.x_block.mean(axis=0, keepdims=True)
    phi_pre, phi_post = regime_adaptive_weights(panel, b)
    weights = np.concatenate([phi_pre, phi_post])
    gamma_pre = np.empty((n, n))
    gamma_post = np.empty((n, n))
    for i in range(n):
        coef = fit_unit_network_row(xc, ytilde[i], weights, config)
        gamma_pre[i] = coef[:n]
        gamma_post[i] = coef[n:]
    return SpilloverNetworks(gamma_pre=gamma_pre, gamma_post=gamma_post)


def estimate_static_network(panel: PanelData, partial_outcome: np.ndarray,
                            config: DmlConfig | None = None) -> np.ndarray:
    """Single no-break network: rows of the partial outcome on the plain covariates."""
    config = config or DmlConfig()
    n, t = panel.n_units, panel.n_periods
    xc = panel.x.T - panel.x.T.mean(axis=0, keepdims=True)
    m2 = np.mean(panel.x ** 2, axis=1)
    weights = 1.0 / np.sqrt(np.maximum(m2, 1e-300))
    yc = partial_outcome - partial_outcome.mean(axis=1, keepdims=True)
    gamma = np.empty((n, n))
    for i in range(n):
        gamma[i] = fit_unit_network_row(xc, yc[i], weights, config)
    return gamma


def network_density(net: SpilloverNetworks, regime: str) -> float:
    """Fraction of nonzero off-diagonal entries in one regime's matrix."""
    g = net.gamma_pre if regime == "pre" else net.gamma_post
    n = g.shape[0]
    off = ~np.eye(n, dtype=bool)
    return float(np.count_nonzero(g[off]) / (n * (n - 1)))


def write_network_csv(gamma: np.ndarray, unit_labels, path) -> None:
    """Matrix CSV with unit labels as header columns."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(unit_labels))
        for row in gamma:
            writer.writerow([repr(float(v)) for v in row])


def write_edge_list(net: SpilloverNetworks, unit_labels, path) -> None:
    """Long-format edge list `src,dst,regime,weight` over nonzero entries."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst", "regime", "weight"])
        for regime, g in (("pre", net.gamma_pre), ("post", net.gamma_post)):
            for i in range(g.shape[0]):
                for j in range(g.shape[1]):
                    if g[i, j] != 0:
                        writer.writerow([unit_labels[j], unit_labels[i], regime, repr(float(g[i, j]))])
