"""Data-generating processes, accuracy metrics, and the replication harness.

DGP naming follows the two-digit scheme used in the study design: the
first digit picks the error process (1 = i.i.d. normal, 2 = AR(1) with
coefficient 0.6), the second the break type (1 = spillover only,
2 = private only, 3 = both).  Networks are either Erdos-Renyi with edge
probability 0.25 or continuous with regime-specific sparsity.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .break_detect import PenaltyConfig
from .dml import DmlConfig
from .model_select import VARIANTS, FittedSpec, fit_break_spec, select_break_type
from .panel import PanelData
from .spillover import SpilloverNetworks

AR_COEF = 0.6
ER_PROB = 0.25
CONT_SPARSITY = (0.7, 0.5)  # proportion of zeros pre / post break
CONT_COEF_MEAN = 1.0
CONT_COEF_VAR = 0.5
DELTA_PRE = 1.5
DELTA_POST = -1.5


@dataclass(frozen=True)
class DgpConfig:
    n_units: int = 15
    n_periods: int = 100
    network_kind: str = "erdos_renyi"  # or "continuous"
    error_kind: str = "iid"  # or "ar1"
    break_kind: str = "gamma_only"  # gamma_only | delta_only | both
    seed: int = 0
    er_prob: float = ER_PROB
    cont_sparsity: tuple = CONT_SPARSITY
    cont_coef_mean: float = CONT_COEF_MEAN
    cont_coef_var: float = CONT_COEF_VAR
    delta_values: tuple | None = None  # derived from break_kind when None

    @property
    def b_true(self) -> int:
        return self.n_periods // 3

    @property
    def deltas(self) -> tuple:
        if self.delta_values is not None:
            return self.delta_values
        if self.break_kind == "gamma_only":
            return (DELTA_PRE, DELTA_PRE)
        return (DELTA_PRE, DELTA_POST)

    @property
    def dgp_code(self) -> str:
        err = {"iid": "1", "ar1": "2"}[self.error_kind]
        brk = {"gamma_only": "1", "delta_only": "2", "both": "3"}[self.break_kind]
        return f"{err}.{brk}"


def config_from_code(code: str, network: str = "erdos_renyi", n: int = 15,
                     t: int = 100, seed: int = 0) -> DgpConfig:
    """Build a DgpConfig from a code like '1.1' or '2.3'."""
    err_d, brk_d = code.split(".")
    error_kind = {"1": "iid", "2": "ar1"}[err_d]
    break_kind = {"1": "gamma_only", "2": "delta_only", "3": "both"}[brk_d]
    return DgpConfig(n_units=n, n_periods=t, network_kind=network,
                     error_kind=error_kind, break_kind=break_kind, seed=seed)


@dataclass(frozen=True)
class GroundTruth:
    gamma_pre: np.ndarray
    gamma_post: np.ndarray
    delta_pre: float
    delta_post: float
    b_true: int
    u: np.ndarray


def _draw_network(rng: np.random.Generator, config: DgpConfig, regime: int) -> np.ndarray:
    n = config.n_units
    if config.network_kind == "erdos_renyi":
        return (rng.random((n, n)) < config.er_prob).astype(float)
    if config.network_kind == "continuous":
        sparsity = config.cont_sparsity[regime]
        mask = rng.random((n, n)) >= sparsity
        values = rng.normal(config.cont_coef_mean, np.sqrt(config.cont_coef_var), (n, n))
        return np.where(mask, values, 0.0)
    raise ValueError(f"unknown network kind {config.network_kind!r}")


def gen_dgp(config: DgpConfig, rng: np.random.Generator | None = None):
    """Generate one panel draw and its ground truth.

    Draw order (fixed for reproducibility): x, z-noise, pre-break network,
    post-break network (skipped for delta-only breaks), errors.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n, t = config.n_units, config.n_periods
    b0 = config.b_true
    x = rng.normal(size=(n, t))
    z = x.mean(axis=1, keepdims=True) + rng.normal(size=(n, t))
    gamma_pre = _draw_network(rng, config, 0)
    if config.break_kind == "delta_only":
        gamma_post = gamma_pre
    else:
        gamma_post = _draw_network(rng, config, 1)
    if config.error_kind == "iid":
        u = rng.normal(size=(n, t))
    elif config.error_kind == "ar1":
        u = np.empty((n, t))
        u[:, 0] = rng.normal(size=n) / np.sqrt(1.0 - AR_COEF ** 2)
        eps = rng.normal(size=(n, t - 1))
        for k in range(1, t):
            u[:, k] = AR_COEF * u[:, k - 1] + eps[:, k - 1]
    else:
        raise ValueError(f"unknown error kind {config.error_kind!r}")
    d_pre, d_post = config.deltas
    y = np.empty((n, t))
    for k in range(t):
        if k < b0:
            y[:, k] = gamma_pre @ x[:, k] + d_pre * z[:, k]
        else:
            y[:, k] = gamma_post @ x[:, k] + d_post * z[:, k]
    y += u
    panel = PanelData(y, x, z)
    truth = GroundTruth(gamma_pre=gamma_pre, gamma_post=gamma_post,
                        delta_pre=d_pre, delta_post=d_post, b_true=b0, u=u)
    return panel, truth


def hausdorff_ratio(b_est: int, b_true: int, t: int) -> float:
    """Absolute breakpoint error as a percentage of the sample length."""
    return 100.0 * abs(b_est - b_true) / t


def _regime_metrics(est: np.ndarray, truth: np.ndarray) -> dict:
    n = est.shape[0]
    off = ~np.eye(n, dtype=bool)
    e, g = est[off], truth[off]
    zeros = g == 0
    nonzeros = ~zeros
    z_to_z = float(np.mean(e[zeros] == 0)) if zeros.any() else 1.0
    nz_to_nz = float(np.mean(e[nonzeros] != 0)) if nonzeros.any() else 1.0
    mse = float(np.sum((e - g) ** 2) / (n * (n - 1)))
    return {"prop_z_to_z": z_to_z, "prop_nz_to_nz": nz_to_nz,
            "rmse": float(np.sqrt(mse)), "mse": mse}


def network_metrics(est: SpilloverNetworks, truth: GroundTruth) -> dict:
    """Off-diagonal support-recovery proportions and RMSE, per regime."""
    return {"pre": _regime_metrics(est.gamma_pre, truth.gamma_pre),
            "post": _regime_metrics(est.gamma_post, truth.gamma_post)}


@dataclass
class ReplicationOptions:
    trim: float = 0.15
    with_ic: bool = False
    n_jobs: int = 1
    pcfg: PenaltyConfig = field(default_factory=PenaltyConfig)
    dml_cfg: DmlConfig = field(default_factory=DmlConfig)


@dataclass
class ReplicationReport:
    config: DgpConfig
    n_reps: int
    n_failed: int
    rows: list
    failures: list
    aggregates: dict

    def to_json(self) -> str:
        return json.dumps({
            "dgp": self.config.dgp_code,
            "network": self.config.network_kind,
            "n_units": self.config.n_units,
            "n_periods": self.config.n_periods,
            "seed": self.config.seed,
            "n_reps": self.n_reps,
            "n_failed": self.n_failed,
            "aggregates": self.aggregates,
            "failures": self.failures,
        }, indent=2, sort_keys=True)

    def write_rows_csv(self, path) -> None:
        if not self.rows:
            return
        cols = list(self.rows[0].keys())
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in self.rows:
                writer.writerow([row.get(c, "") for c in cols])


def _fitted_delta_by_regime(fit: FittedSpec):
    if fit.private.mode == "constant":
        return float(fit.private.delta), float(fit.private.delta)
    if fit.private.mode == "regime_split":
        return float(fit.private.delta[0]), float(fit.private.delta[1])
    raise ValueError("replication pipeline produced an unexpected private-effect mode")


def _fitted_networks(fit: FittedSpec) -> SpilloverNetworks:
    if fit.networks is not None:
        return fit.networks
    return SpilloverNetworks(gamma_pre=fit.static_network, gamma_post=fit.static_network)


def run_one_replication(config: DgpConfig, seed_seq: np.random.SeedSequence,
                        options: ReplicationOptions) -> dict:
    """Generate, estimate under the matching break specification, and score."""
    rng = np.random.default_rng(seed_seq)
    panel, truth = gen_dgp(config, rng)
    fit = fit_break_spec(panel, config.break_kind, options.trim, options.pcfg,
                         options.dml_cfg)
    nets = _fitted_networks(fit)
    metrics = network_metrics(nets, truth)
    d_pre, d_post = _fitted_delta_by_regime(fit)
    row = {
        "seed": int(seed_seq.entropy) if isinstance(seed_seq.entropy, int) else str(seed_seq.entropy),
        "b_true": truth.b_true,
        "b_tilde": fit.breakpoint,
        "hd_ratio": hausdorff_ratio(fit.breakpoint, truth.b_true, config.n_periods),
        "delta_pre": d_pre,
        "delta_post": d_post,
        "delta_true_pre": truth.delta_pre,
        "delta_true_post": truth.delta_post,
        "std_error": fit.dml_std_error,
    }
    if fit.dml_std_error is not None and fit.private.mode == "constant":
        half = 1.96 * fit.dml_std_error
        row["covered"] = int(abs(d_pre - truth.delta_pre) <= half)
    for regime in ("pre", "post"):
        for key, val in metrics[regime].items():
            row[f"{key}_{regime}"] = val
    if options.with_ic:
        chosen, fits = select_break_type(panel, VARIANTS, options.trim,
                                         options.pcfg, options.dml_cfg)
        row["ic_selected"] = chosen.spec.variant
        for variant, f in fits.items():
            row[f"ic_{variant}"] = f.ic.value
    return row


def _aggregate(config: DgpConfig, rows: list) -> dict:
    if not rows:
        return {}
    arr = lambda key: np.array([r[key] for r in rows if r.get(key) is not None], dtype=float)
    agg = {
        "hd_ratio_mean": float(arr("hd_ratio").mean()),
        "p_exact_break": float(np.mean(arr("hd_ratio") == 0.0)),
    }
    for regime in ("pre", "post"):
        for key in ("prop_z_to_z", "prop_nz_to_nz", "rmse", "mse"):
            agg[f"{key}_{regime}_mean"] = float(arr(f"{key}_{regime}").mean())
        d = arr(f"delta_{regime}")
        d0 = arr(f"delta_true_{regime}")
        agg[f"bias_delta_{regime}"] = float((d - d0).mean())
        agg[f"rmse_delta_{regime}"] = float(np.sqrt(((d - d0) ** 2).mean()))
    cov = arr("covered")
    if cov.size:
        agg["coverage_95"] = float(cov.mean())
    if any("ic_selected" in r for r in rows):
        counts = {v: 0 for v in VARIANTS}
        for r in rows:
            if "ic_selected" in r:
                counts[r["ic_selected"]] += 1
        total = sum(counts.values())
        agg["ic_selection_freq"] = {v: c / total for v, c in counts.items()}
    return agg


def run_replications(config: DgpConfig, n_reps: int,
                     options: ReplicationOptions | None = None) -> ReplicationReport:
    """Run the full pipeline over independent replications and aggregate.

    Child seeds are spawned ahead of scheduling, so results are identical
    for any worker count.  Failed replications are recorded and excluded
    from the aggregates.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    options = options or ReplicationOptions()
    children = np.random.SeedSequence(config.seed).spawn(n_reps)

    def job(k):
        try:
            row = run_one_replication(config, children[k], options)
            row["rep"] = k
            return k, row, None
        except Exception as exc:  # noqa: BLE001 - harness records and continues
            return k, None, f"{type(exc).__name__}: {exc}"

    if options.n_jobs != 1:
        from joblib import Parallel, delayed
        outcomes = Parallel(n_jobs=options.n_jobs)(delayed(job)(k) for k in range(n_reps))
    else:
        outcomes = [job(k) for k in range(n_reps)]
    rows, failures = [], []
    for k, row, err in sorted(outcomes, key=lambda o: o[0]):
        if err is None:
            rows.append(row)
        else:
            failures.append({"rep": k, "reason": err})
    return ReplicationReport(config=config, n_reps=n_reps, n_failed=len(failures),
                             rows=rows, failures=failures,
                             aggregates=_aggregate(config, rows))
