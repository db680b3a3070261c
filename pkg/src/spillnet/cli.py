"""Batch command-line front end.

Four subcommands cover the full workflow: ``estimate`` runs the complete
pipeline on a panel CSV, ``simulate`` runs the Monte Carlo harness,
``select`` emits information-criterion tables for break type and group
count, and ``reproduce`` re-creates the simulation-study tables at desk
scale.  Every run writes a ``manifest.json`` (resolved configuration plus
library versions and seed) sufficient to reproduce its outputs.

Options resolve in three layers: built-in defaults, then a flat key-value
config file (``--config``), then explicit flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .break_detect import PenaltyConfig, estimate_break, write_profile_csv
from .dml import DmlConfig, cross_fit_delta, full_context
from .errors import SpillnetError
from .model_select import select_break_type, select_num_groups
from .panel import load_csv
from .simulate import (DgpConfig, ReplicationOptions, config_from_code,
                       run_replications)
from .spillover import (PrivateEffect, estimate_spillover, write_edge_list,
                        write_network_csv)

_NETWORK_NAMES = {"er": "erdos_renyi", "erdos_renyi": "erdos_renyi",
                  "cont": "continuous", "continuous": "continuous"}

_TABLE_METRICS = {
    1: ("hd_ratio_mean", "p_exact_break"),
    2: ("prop_nz_to_nz_pre", "prop_nz_to_nz_post", "prop_z_to_z_pre",
        "prop_z_to_z_post", "rmse_pre", "rmse_post"),
    3: ("prop_nz_to_nz_pre", "prop_nz_to_nz_post", "prop_z_to_z_pre",
        "prop_z_to_z_post", "rmse_pre", "rmse_post"),
    4: ("bias_delta_pre", "rmse_delta_pre", "bias_delta_post",
        "rmse_delta_post"),
    5: ("ic_selection_freq",),
}


def read_config_file(path) -> dict:
    """Parse a flat ``key = value`` config file (comments start with #)."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpillnetError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if len(val) >= 2 and val[0] == val[-1] and val[0] in "'\"":
            values[key] = val[1:-1]
        else:
            try:
                values[key] = json.loads(val)
            except json.JSONDecodeError:
                values[key] = val
    return values


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge defaults, config-file values, and explicit flags."""
    cfg = {}
    if getattr(args, "config", None):
        cfg = read_config_file(args.config)
        unknown = set(cfg) - set(defaults)
        if unknown:
            raise SpillnetError(f"unknown config keys: {sorted(unknown)}")
    resolved = dict(defaults)
    resolved.update(cfg)
    for key in defaults:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            resolved[key] = flag_val
    return resolved


def _write_manifest(outdir: Path, command: str, resolved: dict) -> None:
    import numba
    manifest = {
        "command": command,
        "config": {k: v for k, v in sorted(resolved.items())},
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "numba": numba.__version__,
            "spillnet": __version__,
        },
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n",
                                          encoding="utf-8")


def _outdir(resolved: dict) -> Path:
    out = Path(resolved["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _penalty_config(resolved: dict) -> PenaltyConfig:
    return PenaltyConfig(n_lambdas=int(resolved["n_lambdas"]),
                         min_ratio=float(resolved["min_ratio"]))


ESTIMATE_DEFAULTS = {"trim": 0.15, "n_lambdas": 50, "min_ratio": 1e-3,
                     "output_dir": ".", "threads": 1, "seed": 0}


def cmd_estimate(args: argparse.Namespace) -> int:
    resolved = _resolve(args, ESTIMATE_DEFAULTS)
    path = Path(args.input)
    if not path.exists():
        raise OSError(f"input file not found: {path}")
    panel = load_csv(path)
    est = estimate_break(panel, float(resolved["trim"]), _penalty_config(resolved))
    b = est.b_refined
    fit = cross_fit_delta(full_context(panel, b))
    private = PrivateEffect("constant", fit.delta)
    networks = estimate_spillover(panel, b, private)
    out = _outdir(resolved)
    (out / "break_estimate.json").write_text(json.dumps({
        "b_preliminary": est.b_preliminary,
        "b_refined": est.b_refined,
        "lambda": est.lambda_,
        "trim": float(resolved["trim"]),
        "warnings": list(est.warnings),
    }, indent=2) + "\n", encoding="utf-8")
    (out / "dml_fit.json").write_text(fit.to_json() + "\n", encoding="utf-8")
    write_network_csv(networks.gamma_pre, panel.unit_labels, out / "gamma_B.csv")
    write_network_csv(networks.gamma_post, panel.unit_labels, out / "gamma_A.csv")
    write_edge_list(networks, panel.unit_labels, out / "edges.csv")
    write_profile_csv(est, out / "profile.csv")
    _write_manifest(out, "estimate", {**resolved, "input": str(path)})
    return 0


SIMULATE_DEFAULTS = {"dgp": "1.1", "network": "er", "n": 15, "t": 100,
                     "reps": 100, "seed": 0, "trim": 0.15, "with_ic": False,
                     "output_dir": ".", "threads": 1}


def cmd_simulate(args: argparse.Namespace) -> int:
    resolved = _resolve(args, SIMULATE_DEFAULTS)
    if int(resolved["reps"]) < 1:
        raise SpillnetError(f"need at least one replication, got {resolved['reps']}")
    network = _NETWORK_NAMES.get(str(resolved["network"]))
    if network is None:
        raise SpillnetError(f"unknown network kind {resolved['network']!r}")
    config = config_from_code(str(resolved["dgp"]), network=network,
                              n=int(resolved["n"]), t=int(resolved["t"]),
                              seed=int(resolved["seed"]))
    options = ReplicationOptions(trim=float(resolved["trim"]),
                                 with_ic=bool(resolved["with_ic"]),
                                 n_jobs=int(resolved["threads"]))
    report = run_replications(config, int(resolved["reps"]), options)
    out = _outdir(resolved)
    report.write_rows_csv(out / "replications.csv")
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    _write_manifest(out, "simulate", resolved)
    return 0


SELECT_DEFAULTS = {"trim": 0.15, "n_lambdas": 50, "min_ratio": 1e-3,
                   "gmax": 3, "output_dir": ".", "threads": 1, "seed": 0}


def cmd_select(args: argparse.Namespace) -> int:
    resolved = _resolve(args, SELECT_DEFAULTS)
    path = Path(args.input)
    if not path.exists():
        raise OSError(f"input file not found: {path}")
    panel = load_csv(path)
    chosen, fits = select_break_type(panel, trim=float(resolved["trim"]),
                                     pcfg=_penalty_config(resolved))
    out = _outdir(resolved)
    with open(out / "ic_breaks.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["spec", "n_p", "Q_hat", "IC"])
        for variant, f in fits.items():
            writer.writerow([variant, f.ic.n_p, repr(f.ic.q_hat), repr(f.ic.value)])
    b = chosen.breakpoint
    if b is None:  # group scan needs a split; fall back to the general fit
        b = fits["both"].breakpoint if "both" in fits else panel.n_periods // 2
    g_best, structure, g_results, _deltas = select_num_groups(
        panel, b, int(resolved["gmax"]))
    with open(out / "ic_groups.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["G", "n_p", "Q_hat", "IC"])
        for g, ic in g_results:
            writer.writerow([g, ic.n_p, repr(ic.q_hat), repr(ic.value)])
    (out / "selection.json").write_text(json.dumps({
        "variant": chosen.spec.variant,
        "n_breaks": chosen.spec.n_breaks,
        "breakpoint": chosen.breakpoint,
        "n_groups": g_best,
        "membership": [int(g) for g in structure.membership],
    }, indent=2) + "\n", encoding="utf-8")
    _write_manifest(out, "select", {**resolved, "input": str(path)})
    return 0


REPRODUCE_DEFAULTS = {"reps": 20, "n": 15, "seed": 0, "network": "er",
                      "periods": "50,100", "output_dir": ".", "threads": 1}

_TABLE_CODES = {
    1: ("1.1", "1.2", "1.3", "2.1", "2.2", "2.3"),
    2: ("1.1", "1.2", "1.3"),
    3: ("1.1", "1.2", "1.3"),
    4: ("1.1", "1.2", "1.3"),
    5: ("1.1", "1.2", "1.3"),
}


def cmd_reproduce(args: argparse.Namespace) -> int:
    resolved = _resolve(args, REPRODUCE_DEFAULTS)
    table = int(args.table)
    if table not in _TABLE_METRICS:
        raise SpillnetError(f"no such table: {table}")
    network = "continuous" if table == 3 else _NETWORK_NAMES.get(str(resolved["network"]))
    if network is None:
        raise SpillnetError(f"unknown network kind {resolved['network']!r}")
    periods = [int(p) for p in str(resolved["periods"]).split(",")]
    out = _outdir(resolved)
    rows = []
    lines = [f"Table {table} (desk scale: {resolved['reps']} replications, "
             f"N={resolved['n']}, {network} network)"]
    for code in _TABLE_CODES[table]:
        for t in periods:
            config = config_from_code(code, network=network,
                                      n=int(resolved["n"]), t=t,
                                      seed=int(resolved["seed"]))
            options = ReplicationOptions(with_ic=(table == 5),
                                         n_jobs=int(resolved["threads"]))
            report = run_replications(config, int(resolved["reps"]), options)
            for metric in _TABLE_METRICS[table]:
                value = report.aggregates.get(metric)
                if isinstance(value, dict):  # selection frequencies
                    for variant, freq in value.items():
                        rows.append([table, code, network, resolved["n"], t,
                                     f"freq_{variant}", repr(freq)])
                        lines.append(f"  DGP {code} T={t} freq_{variant}: {freq:.3f}")
                elif value is not None:
                    rows.append([table, code, network, resolved["n"], t,
                                 metric, repr(value)])
                    lines.append(f"  DGP {code} T={t} {metric}: {value:.4f}")
    with open(out / f"table{table}.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["table", "dgp", "network", "n", "t", "metric", "value"])
        writer.writerows(rows)
    text = "\n".join(lines) + "\n"
    (out / f"table{table}.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    _write_manifest(out, "reproduce", {**resolved, "table": table})
    return 0


def _add_common(sub: argparse.ArgumentParser, defaults: dict) -> None:
    sub.add_argument("--config", help="flat key = value config file; flags override it")
    sub.add_argument("--output-dir", dest="output_dir", metavar="DIR",
                     help=f"where outputs are written (default {defaults['output_dir']})")
    sub.add_argument("--threads", type=int,
                     help=f"worker count for parallel stages (default {defaults['threads']})")
    sub.add_argument("--seed", type=int,
                     help=f"master random seed (default {defaults['seed']})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spillnet",
        description="Spillover networks with a structural break: estimation, "
                    "simulation, and model selection.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_est = sub.add_parser("estimate", help="full pipeline on a panel CSV")
    p_est.add_argument("input", help="long-format CSV with header unit,time,y,x,z")
    p_est.add_argument("--trim", type=float,
                       help=f"candidate-grid trim fraction (default {ESTIMATE_DEFAULTS['trim']})")
    p_est.add_argument("--n-lambdas", dest="n_lambdas", type=int,
                       help=f"penalty grid size (default {ESTIMATE_DEFAULTS['n_lambdas']})")
    p_est.add_argument("--min-ratio", dest="min_ratio", type=float,
                       help=f"smallest/largest penalty ratio (default {ESTIMATE_DEFAULTS['min_ratio']})")
    _add_common(p_est, ESTIMATE_DEFAULTS)
    p_est.set_defaults(func=cmd_estimate)

    p_sim = sub.add_parser("simulate", help="Monte Carlo replication harness")
    p_sim.add_argument("--dgp", help="design code, e.g. 1.1 (default 1.1)")
    p_sim.add_argument("--network", choices=sorted(_NETWORK_NAMES),
                       help="er (Erdos-Renyi) or cont (continuous); default er")
    p_sim.add_argument("--n", type=int, help=f"units (default {SIMULATE_DEFAULTS['n']})")
    p_sim.add_argument("--t", type=int, help=f"periods (default {SIMULATE_DEFAULTS['t']})")
    p_sim.add_argument("--reps", type=int,
                       help=f"replications (default {SIMULATE_DEFAULTS['reps']})")
    p_sim.add_argument("--trim", type=float,
                       help=f"trim fraction (default {SIMULATE_DEFAULTS['trim']})")
    p_sim.add_argument("--with-ic", dest="with_ic", action="store_const", const=True,
                       help="also run break-type selection each replication")
    _add_common(p_sim, SIMULATE_DEFAULTS)
    p_sim.set_defaults(func=cmd_simulate)

    p_sel = sub.add_parser("select", help="break-type and group-count selection")
    p_sel.add_argument("input", help="long-format CSV with header unit,time,y,x,z")
    p_sel.add_argument("--trim", type=float,
                       help=f"trim fraction (default {SELECT_DEFAULTS['trim']})")
    p_sel.add_argument("--n-lambdas", dest="n_lambdas", type=int,
                       help=f"penalty grid size (default {SELECT_DEFAULTS['n_lambdas']})")
    p_sel.add_argument("--min-ratio", dest="min_ratio", type=float,
                       help=f"smallest/largest penalty ratio (default {SELECT_DEFAULTS['min_ratio']})")
    p_sel.add_argument("--gmax", type=int,
                       help=f"largest group count scanned (default {SELECT_DEFAULTS['gmax']})")
    _add_common(p_sel, SELECT_DEFAULTS)
    p_sel.set_defaults(func=cmd_select)

    p_rep = sub.add_parser("reproduce", help="re-create a simulation table at desk scale")
    p_rep.add_argument("--table", required=True, type=int, choices=range(1, 6),
                       help="which simulation table to reproduce")
    p_rep.add_argument("--reps", type=int,
                       help=f"replications per cell (default {REPRODUCE_DEFAULTS['reps']})")
    p_rep.add_argument("--n", type=int, help=f"units (default {REPRODUCE_DEFAULTS['n']})")
    p_rep.add_argument("--network", choices=sorted(_NETWORK_NAMES),
                       help="network kind for tables 1/2/4/5 (table 3 is always continuous)")
    p_rep.add_argument("--periods", help="comma-separated T values (default 50,100)")
    _add_common(p_rep, REPRODUCE_DEFAULTS)
    p_rep.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SpillnetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
