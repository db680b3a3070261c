"""Balanced N x T panel container, regime-indexed designs, and CSV ingestion.

A panel holds three aligned matrices: the outcome ``y``, the spillover
covariate ``x`` (every unit's x may enter every other unit's outcome
equation), and the private covariate ``z`` (enters only the own equation).
Unit fixed effects are removed by within-unit demeaning rather than dummy
variables; for a balanced panel the two are numerically equivalent.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BalancedPanelError, InvalidBreakpoint, ParseError, RegimeTooShort


@dataclass(frozen=True)
class PanelData:
    """Immutable balanced panel of outcome, spillover and private covariates.

    All three matrices are N x T with units on rows.  ``unit_labels`` keeps
    the original identifiers (strings allowed) in row order.
    """

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    unit_labels: tuple = None
    time_labels: tuple = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if y.ndim != 2 or y.shape != x.shape or y.shape != z.shape:
            raise ValueError("y, x, z must share an identical N x T shape")
        for name, m in (("y", y), ("x", x), ("z", z)):
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} contains non-finite values")
        n, t = y.shape
        if n < 2 or t < 2:
            raise ValueError(f"need N >= 2 and T >= 2, got N={n}, T={t}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        if self.unit_labels is None:
            object.__setattr__(self, "unit_labels", tuple(range(n)))
        if self.time_labels is None:
            object.__setattr__(self, "time_labels", tuple(range(1, t + 1)))
        for m in (y, x, z):
            m.setflags(write=False)

    @property
    def n_units(self) -> int:
        return self.y.shape[0]

    @property
    def n_periods(self) -> int:
        return self.y.shape[1]

    def unit_index_map(self) -> dict:
        """Mapping from original unit label to row index."""
        return {lab: i for i, lab in enumerate(self.unit_labels)}

    def write_unit_map(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({str(k): v for k, v in self.unit_index_map().items()}, fh, indent=2)


@dataclass(frozen=True)
class RegimeDesign:
    """Regime-indexed design for one candidate breakpoint.

    Column layout per row (i, t): positions 0..N-1 hold x_jt for t <= b,
    positions N..2N-1 hold x_jt for t > b, followed by the z column(s).
    The x block is identical across units; only the z column varies.
    """

    breakpoint: int
    split_z: bool
    n_units: int
    n_periods: int
    x_block: np.ndarray = field(repr=False)  # T x 2N
    z_cols: np.ndarray = field(repr=False)  # N x T x (1 or 2)

    @property
    def regressor_count(self) -> int:
        return 2 * self.n_units + (2 if self.split_z else 1)

    def unit_design(self, i: int) -> np.ndarray:
        """Full T x p design matrix for unit i."""
        return np.hstack([self.x_block, self.z_cols[i]])

    def row(self, i: int, t: int) -> np.ndarray:
        """Design row for unit i at period t (t is 1-based)."""
        return self.unit_design(i)[t - 1]


@dataclass(frozen=True)
class SampleSplit:
    """Partition of {1..T} into main and auxiliary periods, regime by regime."""

    main_indices: tuple
    aux_indices: tuple

    def swapped(self) -> "SampleSplit":
        return SampleSplit(self.aux_indices, self.main_indices)


def load_csv(path) -> PanelData:
    """Read a long-format CSV ``unit,time,y,x,z`` into a PanelData.

    Units are ordered by first appearance, times sorted ascending.  Any
    missing cell of the unit x time grid raises BalancedPanelError; a
    non-numeric y/x/z field raises ParseError with the 1-based data row.
    """
    records = {}
    units, times = [], set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:5]] != ["unit", "time", "y", "x", "z"]:
            raise ParseError(0, "expected header 'unit,time,y,x,z'")
        for rownum, rec in enumerate(reader, start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) < 5:
                raise ParseError(rownum, f"row {rownum} has {len(rec)} fields, expected 5")
            unit = rec[0].strip()
            try:
                time = float(rec[1])
                time = int(time) if time == int(time) else time
                vals = tuple(float(rec[k]) for k in (2, 3, 4))
            except ValueError:
                raise ParseError(rownum, f"non-numeric field on row {rownum}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(rownum, f"non-finite value on row {rownum}")
            if unit not in records:
                units.append(unit)
                records[unit] = {}
            records[unit][time] = vals
            times.add(time)
    times = sorted(times)
    if not units:
        raise ParseError(0, "empty file")
    for unit in units:
        for time in times:
            if time not in records[unit]:
                raise BalancedPanelError(unit, time)
    n, t = len(units), len(times)
    y = np.empty((n, t))
    x = np.empty((n, t))
    z = np.empty((n, t))
    for i, unit in enumerate(units):
        for k, time in enumerate(times):
            y[i, k], x[i, k], z[i, k] = records[unit][time]
    return PanelData(y, x, z, unit_labels=tuple(units), time_labels=tuple(times))


def demean_within(panel: PanelData) -> PanelData:
    """Subtract each unit's full-sample mean from y, x and z."""

    def dm(m):
        return m - m.mean(axis=1, keepdims=True)

    return PanelData(dm(panel.y), dm(panel.x), dm(panel.z),
                     unit_labels=panel.unit_labels, time_labels=panel.time_labels)


def build_regime_design(panel: PanelData, b: int, split_z: bool = False) -> RegimeDesign:
    """Construct the regime-indexed design W_it(b) for every unit.

    Row (i, t) carries x_jt in position j for t <= b, in position N+j for
    t > b, and zeros in the inactive block; z is appended once, or twice
    regime-indexed when ``split_z`` is set.
    """
    n, t = panel.n_units, panel.n_periods
    if not 1 <= b <= t - 1:
        raise InvalidBreakpoint(f"breakpoint {b} outside [1, {t - 1}]")
    pre = np.arange(t) < b  # 0-based period index; t <= b means index < b
    xt = panel.x.T  # T x N
    x_block = np.zeros((t, 2 * n))
    x_block[pre, :n] = xt[pre]
    x_block[~pre, n:] = xt[~pre]
    if split_z:
        z_cols = np.zeros((n, t, 2))
        z_cols[:, pre, 0] = panel.z[:, pre]
        z_cols[:, ~pre, 1] = panel.z[:, ~pre]
    else:
        z_cols = panel.z[:, :, None].copy()
    return RegimeDesign(breakpoint=b, split_z=split_z, n_units=n, n_periods=t,
                        x_block=x_block, z_cols=z_cols)


def split_regimes(t: int, b: int) -> SampleSplit:
    """Split each regime into main/auxiliary halves of contiguous periods.

    The first ceil(len/2) periods of each regime go to the main sample, the
    remainder to the auxiliary sample.
    """
    if not 1 <= b <= t - 1:
        raise InvalidBreakpoint(f"breakpoint {b} outside [1, {t - 1}]")
    main, aux = [], []
    for lo, hi in ((1, b), (b + 1, t)):
        length = hi - lo + 1
        if length < 2:
            raise RegimeTooShort(f"regime [{lo}, {hi}] has {length} period(s), need >= 2")
        cut = lo + (length + 1) // 2
        main.extend(range(lo, cut))
        aux.extend(range(cut, hi + 1))
    return SampleSplit(tuple(main), tuple(aux))
