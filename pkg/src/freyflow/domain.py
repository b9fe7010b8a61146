"""Freyberg-style computational domain: grid, active mask, stresses.

The default layout reconstructs the classic headwater-catchment testbed:
a 40 x 20 grid of 250 m cells with 706 active cells, no-flow boundaries
on three sides, a Robin (head-dependent) southern boundary, a north-south
river, and seven pumping wells. The stress magnitudes are documented
defaults, overridable through the configuration dict.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidGeometryError, StressCellOutsideMaskError

YEAR_SECONDS = 365.25 * 86400.0
MONTH_SECONDS = YEAR_SECONDS / 12.0

N_MONTHS = 24
N_PERIODS = 25


@dataclass(frozen=True)
class GridSpec:
    n_x1: int = 40
    n_x2: int = 20
    d_x1: float = 250.0
    d_x2: float = 250.0
    origin: tuple[float, float] = (0.0, 0.0)

    @property
    def n_cells(self) -> int:
        return self.n_x1 * self.n_x2

    @property
    def cell_area(self) -> float:
        return self.d_x1 * self.d_x2


@dataclass(frozen=True)
class ActiveMask:
    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @property
    def n_active(self) -> int:
        return int(self.mask.sum())

    def __getitem__(self, idx):
        return self.mask[idx]


@dataclass(frozen=True)
class StressPeriod:
    duration: float  # seconds
    recharge_rate: float  # m/s, uniform over active cells
    well_rates: tuple[float, ...]  # m^3/s per well, negative = extraction
    river_stage: float  # m


@dataclass(frozen=True)
class StressSchedule:
    periods: tuple[StressPeriod, ...]
    well_cells: tuple[tuple[int, int], ...]
    river_cells: tuple[tuple[int, int], ...]
    robin_cells: tuple[tuple[int, int], ...]
    robin_conductance: float  # m^2/s per boundary cell
    robin_external_head: float  # m
    river_bed_conductance: float  # m^2/s per river cell

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    @property
    def total_time(self) -> float:
        return sum(p.duration for p in self.periods)


@dataclass(frozen=True)
class Domain:
    grid: GridSpec
    mask: ActiveMask
    schedule: StressSchedule
    specific_yield: float = 0.1


# Inactive blobs of the default mask: (j, i_start, i_stop) half-open ranges.
# 94 inactive cells total, leaving 706 active out of 800.
_INACTIVE_RANGES = (
    (0, 0, 10), (0, 15, 25), (0, 30, 40),
    (1, 0, 6), (1, 18, 24), (1, 34, 40),
    (2, 19, 22),
    (18, 0, 4), (18, 12, 15), (18, 32, 40),
    (19, 0, 8), (19, 12, 20), (19, 28, 40),
)

_RIVER_COLUMN = 14

_DEFAULT_WELL_CELLS = ((8, 6), (12, 12), (15, 16), (20, 7), (26, 11), (30, 16), (33, 5))
_DEFAULT_WELL_RATES_Y1 = (-0.015, -0.0125, -0.010, -0.008, -0.020, -0.006, -0.0175)
_DEFAULT_WELL_RATES_Y2 = (-0.018, -0.015, -0.012, -0.010, -0.020, -0.008, -0.020)


def default_mask(n_x1: int = 40, n_x2: int = 20) -> np.ndarray:
    mask = np.ones((n_x1, n_x2), dtype=bool)
    for j, i0, i1 in _INACTIVE_RANGES:
        mask[i0:i1, j] = False
    return mask


def load_mask_text(source) -> np.ndarray:
    """Read an active mask from a plain-text grid of 0/1 characters.

    ``source`` is a path or a string; rows of the file are x1 rows.
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        try:
            with open(source) as fh:
                text = fh.read()
        except (OSError, ValueError):
            text = str(source)
    rows = [line.split() if " " in line else list(line.strip())
            for line in text.strip().splitlines() if line.strip()]
    return np.array([[c == "1" for c in row] for row in rows], dtype=bool)


def save_mask_text(mask: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        for row in np.asarray(mask, dtype=int):
            fh.write("".join(str(v) for v in row) + "\n")


def default_config() -> dict:
    """Full default configuration for the Freyberg testbed.

    Stress magnitudes are plausible defaults for this class of problem,
    not published values; every entry can be overridden.
    """
    monthly_recharge = [
        3e-9 + 2e-9 * np.sin(2.0 * np.pi * m / 12.0) for m in range(N_MONTHS)
    ]
    return {
        "grid": {"n_x1": 40, "n_x2": 20, "d_x1": 250.0, "d_x2": 250.0,
                 "origin": [0.0, 0.0]},
        "specific_yield": 0.1,
        "initial_period_years": 10.0,
        "recharge": {"initial": 3e-9, "monthly": monthly_recharge},
        "wells": {
            "cells": [list(c) for c in _DEFAULT_WELL_CELLS],
            "rates_year1": list(_DEFAULT_WELL_RATES_Y1),
            "rates_year2": list(_DEFAULT_WELL_RATES_Y2),
        },
        "river": {"column": _RIVER_COLUMN, "stage": 15.0,
                  "bed_conductance": 2e-3},
        "robin": {"conductance": 2e-3, "external_head": 16.0},
    }


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def build_freyberg_domain(config: dict | None = None) -> Domain:
    """Build a validated Domain; with no overrides, the default Freyberg layout."""
    cfg = _merge(default_config(), config or {})

    g = cfg["grid"]
    if min(g["n_x1"], g["n_x2"]) < 1 or min(g["d_x1"], g["d_x2"]) <= 0:
        raise InvalidGeometryError(f"non-positive grid geometry: {g}")
    grid = GridSpec(int(g["n_x1"]), int(g["n_x2"]), float(g["d_x1"]),
                    float(g["d_x2"]), tuple(g["origin"]))

    if "mask" in cfg:
        mask_arr = np.asarray(cfg["mask"], dtype=bool)
    else:
        mask_arr = default_mask(grid.n_x1, grid.n_x2)
    if mask_arr.shape != (grid.n_x1, grid.n_x2):
        raise InvalidGeometryError(
            f"mask shape {mask_arr.shape} does not match grid "
            f"({grid.n_x1}, {grid.n_x2})")
    mask = ActiveMask(mask_arr)

    well_cells = tuple(tuple(c) for c in cfg["wells"]["cells"])
    river_col = cfg["river"]["column"]
    river_cells = tuple((i, river_col) for i in range(grid.n_x1)
                        if mask_arr[i, river_col])
    south = grid.n_x1 - 1
    robin_cells = tuple((south, j) for j in range(grid.n_x2)
                        if mask_arr[south, j])

    for name, cells in (("well", well_cells), ("river", river_cells),
                        ("robin", robin_cells)):
        for (i, j) in cells:
            if not (0 <= i < grid.n_x1 and 0 <= j < grid.n_x2):
                raise StressCellOutsideMaskError(
                    f"{name} cell ({i}, {j}) outside grid")
            if not mask_arr[i, j]:
                raise StressCellOutsideMaskError(
                    f"{name} cell ({i}, {j}) lies on an inactive cell")

    rates_y1 = tuple(cfg["wells"]["rates_year1"])
    rates_y2 = tuple(cfg["wells"]["rates_year2"])
    n_wells = len(well_cells)
    if len(rates_y1) != n_wells or len(rates_y2) != n_wells:
        raise InvalidGeometryError("well rate lists must match well count")

    stage = float(cfg["river"]["stage"])
    monthly = list(cfg["recharge"]["monthly"])
    if len(monthly) != N_MONTHS:
        raise InvalidGeometryError(f"expected {N_MONTHS} monthly recharge rates")

    periods = [StressPeriod(
        duration=float(cfg["initial_period_years"]) * YEAR_SECONDS,
        recharge_rate=float(cfg["recharge"]["initial"]),
        well_rates=(0.0,) * n_wells,
        river_stage=stage,
    )]
    for m in range(N_MONTHS):
        rates = rates_y1 if m < 12 else rates_y2
        periods.append(StressPeriod(MONTH_SECONDS, float(monthly[m]),
                                    rates, stage))

    schedule = StressSchedule(
        periods=tuple(periods),
        well_cells=well_cells,
        river_cells=river_cells,
        robin_cells=robin_cells,
        robin_conductance=float(cfg["robin"]["conductance"]),
        robin_external_head=float(cfg["robin"]["external_head"]),
        river_bed_conductance=float(cfg["river"]["bed_conductance"]),
    )
    domain = Domain(grid=grid, mask=mask, schedule=schedule,
                    specific_yield=float(cfg["specific_yield"]))
    violations = validate_domain(domain)
    if violations:
        raise InvalidGeometryError("; ".join(violations))
    return domain


def cell_centers(domain: Domain) -> tuple[np.ndarray, np.ndarray]:
    """Cell-center coordinate arrays of shape (n_x1, n_x2), meters."""
    g = domain.grid
    x1 = g.origin[0] + (np.arange(g.n_x1) + 0.5) * g.d_x1
    x2 = g.origin[1] + (np.arange(g.n_x2) + 0.5) * g.d_x2
    return np.meshgrid(x1, x2, indexing="ij")


def validate_domain(domain: Domain) -> list[str]:
    """Return a list of invariant violations; empty iff the domain is valid."""
    out = []
    g = domain.grid
    if g.d_x1 <= 0 or g.d_x2 <= 0:
        out.append(f"grid cell sizes must be positive, got {g.d_x1}, {g.d_x2}")
    if domain.mask.mask.shape != (g.n_x1, g.n_x2):
        out.append("mask shape does not match grid")
    if not 0.0 < domain.specific_yield < 1.0:
        out.append(f"specific yield must lie in (0, 1), got {domain.specific_yield}")
    sched = domain.schedule
    if sched.n_periods != N_PERIODS:
        out.append(f"schedule must have {N_PERIODS} periods, got {sched.n_periods}")
    for p_idx, p in enumerate(sched.periods):
        if p.duration <= 0:
            out.append(f"schedule period {p_idx} has non-positive duration")
        if len(p.well_rates) != len(sched.well_cells):
            out.append(f"schedule period {p_idx} well rates mismatch well cells")
    for name, cells in (("well", sched.well_cells), ("river", sched.river_cells),
                        ("robin", sched.robin_cells)):
        for (i, j) in cells:
            if not (0 <= i < g.n_x1 and 0 <= j < g.n_x2 and domain.mask[i, j]):
                out.append(f"{name} cell ({i}, {j}) is not an active cell")
    return out


def active_index_map(domain: Domain) -> tuple[np.ndarray, np.ndarray]:
    """(rows, cols) index arrays of active cells in a fixed scan order."""
    return np.nonzero(domain.mask.mask)
