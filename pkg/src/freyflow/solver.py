"""Finite-volume solver for depth-averaged unconfined (Boussinesq) flow.

Solves S_y dh/dt = div(K h grad h) + recharge + sources on the active cells
of a rectangular grid. Face conductances use the harmonic mean of K times
a saturated thickness taken either upstream (stable default) or as the
face average (second-order, used by the analytic oracle tests). Time
stepping is backward Euler with Picard linearization per step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .domain import Domain, N_MONTHS, active_index_map
from .exceptions import ConvergenceError
from .geostat import (
    CovarianceModel,
    INACTIVE_SENTINEL,
    _cholesky_factor,
    sample_log_conductivity,
)

# Extraction ramps down linearly once a cell's saturated thickness drops
# below this value, emulating reduced well yield in drying cells.
WELL_DRY_RAMP = 0.5  # meters


@dataclass(frozen=True)
class SolverConfig:
    picard_tol: float = 1e-6  # max head change per sweep, meters
    picard_max_iter: int = 200
    dt_initial_steady: float = 1e7  # pseudo-time fallback step, seconds
    upstream_weighting: bool = True
    linear_solver_tol: float = 1e-10
    damping: float = 0.7
    n_substeps: int = 1  # backward-Euler substeps per stress period

    def __post_init__(self):
        if self.picard_tol <= 0 or self.linear_solver_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.picard_max_iter < 1:
            raise ValueError("picard_max_iter must be >= 1")


@dataclass
class FluxBudget:
    """Per-period volumetric budget, cubic meters."""

    periods: list = field(default_factory=list)

    def add_period(self, **terms):
        self.periods.append(dict(terms))

    @staticmethod
    def _gross_inflow(p):
        return (p["recharge_in"] + p["river_in"] + p["robin_in"]
                + p["well_in"])

    def max_relative_residual(self) -> float:
        worst = 0.0
        for p in self.periods:
            gross = self._gross_inflow(p)
            if gross > 0:
                worst = max(worst, p["residual"] / gross)
        return worst


def intercell_conductance(k_a, k_b, h_a, h_b, width, distance,
                          upstream=True):
    """Discrete face coefficient for the K*h flux term, m^2/s.

    Harmonic-mean conductivity across the face times the saturated
    thickness (upstream head, or face average), times width/distance.
    A non-positive thickness clamps the face to zero (dry face).
    """
    k_harm = 2.0 * k_a * k_b / (k_a + k_b)
    if upstream:
        thickness = np.maximum(h_a, h_b)
    else:
        thickness = 0.5 * (h_a + h_b)
    thickness = np.maximum(thickness, 0.0)
    return k_harm * thickness * (width / distance)


class _Discretization:
    """Active-cell numbering and face topology for one domain."""

    def __init__(self, domain: Domain):
        self.domain = domain
        g = domain.grid
        self.rows, self.cols = active_index_map(domain)
        self.n = self.rows.size
        index = np.full((g.n_x1, g.n_x2), -1, dtype=int)
        index[self.rows, self.cols] = np.arange(self.n)
        self.index = index
        self.cell_area = g.cell_area

        faces = []
        mask = domain.mask.mask
        for i in range(g.n_x1):
            for j in range(g.n_x2):
                if not mask[i, j]:
                    continue
                if i + 1 < g.n_x1 and mask[i + 1, j]:
                    faces.append((index[i, j], index[i + 1, j],
                                  g.d_x2 / g.d_x1))
                if j + 1 < g.n_x2 and mask[i, j + 1]:
                    faces.append((index[i, j], index[i, j + 1],
                                  g.d_x1 / g.d_x2))
        f = np.array(faces, dtype=float)
        self.face_a = f[:, 0].astype(int)
        self.face_b = f[:, 1].astype(int)
        self.face_geom = f[:, 2]  # width / distance

        sched = domain.schedule
        self.well_idx = np.array([index[i, j] for i, j in sched.well_cells],
                                 dtype=int)
        self.river_idx = np.array([index[i, j] for i, j in sched.river_cells],
                                  dtype=int)
        self.robin_idx = np.array([index[i, j] for i, j in sched.robin_cells],
                                  dtype=int)

    def scatter(self, values: np.ndarray) -> np.ndarray:
        g = self.domain.grid
        out = np.full((g.n_x1, g.n_x2), INACTIVE_SENTINEL)
        out[self.rows, self.cols] = values
        return out

    def gather(self, field_2d: np.ndarray) -> np.ndarray:
        return np.asarray(field_2d)[self.rows, self.cols]


def _assemble(disc: _Discretization, k_act, h_it, period, cfg,
              dt=None, h_prev=None):
    """Linearized system A h = b at the iterate ``h_it``.

    Returns (A, b, parts); ``parts`` holds per-mechanism linear flux terms
    (coef, const, cell index) so the budget can be evaluated exactly on
    the solved heads: flux = const - coef * h.
    """
    n = disc.n
    sched = disc.domain.schedule
    area = disc.cell_area

    c_face = intercell_conductance(
        k_act[disc.face_a], k_act[disc.face_b],
        h_it[disc.face_a], h_it[disc.face_b],
        width=disc.face_geom, distance=1.0,
        upstream=cfg.upstream_weighting)

    rows = np.concatenate([disc.face_a, disc.face_b, disc.face_a, disc.face_b])
    cols = np.concatenate([disc.face_a, disc.face_b, disc.face_b, disc.face_a])
    vals = np.concatenate([c_face, c_face, -c_face, -c_face])

    diag_extra = np.zeros(n)
    b = np.zeros(n)
    parts = {}

    b += period.recharge_rate * area
    parts["recharge"] = (np.zeros(n), period.recharge_rate * area
                         * np.ones(n), np.arange(n))

    wet = h_it > 0.0

    def head_dependent(idx, conductance, external):
        coef = np.full(idx.size, conductance)
        const = conductance * external * np.ones(idx.size)
        dry = ~wet[idx]
        # Dry cell: keep any inflow as a fixed source, drop the head term.
        coef[dry] = 0.0
        const[dry] = np.maximum(conductance * external, 0.0) if external > 0 else 0.0
        return coef, const

    riv_coef, riv_const = head_dependent(
        disc.river_idx, sched.river_bed_conductance, period.river_stage)
    np.add.at(diag_extra, disc.river_idx, riv_coef)
    np.add.at(b, disc.river_idx, riv_const)
    parts["river"] = (riv_coef, riv_const, disc.river_idx)

    rob_coef, rob_const = head_dependent(
        disc.robin_idx, sched.robin_conductance, sched.robin_external_head)
    np.add.at(diag_extra, disc.robin_idx, rob_coef)
    np.add.at(b, disc.robin_idx, rob_const)
    parts["robin"] = (rob_coef, rob_const, disc.robin_idx)

    q = np.array(period.well_rates, dtype=float)
    ramp = np.clip(h_it[disc.well_idx] / WELL_DRY_RAMP, 0.0, 1.0)
    q_eff = np.where(q < 0, q * ramp, q)
    np.add.at(b, disc.well_idx, q_eff)
    parts["wells"] = (np.zeros(disc.well_idx.size), q_eff, disc.well_idx)

    if dt is not None:
        storage = disc.domain.specific_yield * area / dt
        diag_extra += storage
        b += storage * h_prev

    rows = np.concatenate([rows, np.arange(n)])
    cols = np.concatenate([cols, np.arange(n)])
    vals = np.concatenate([vals, diag_extra])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return A, b, parts


def _picard(disc, k_act, h0_act, period, cfg, dt=None, h_prev=None,
            label="steady"):
    """Damped Picard iteration; returns (h, parts, iterations)."""
    h_it = h0_act.copy()
    for it in range(1, cfg.picard_max_iter + 1):
        A, b, parts = _assemble(disc, k_act, h_it, period, cfg,
                                dt=dt, h_prev=h_prev)
        h_new = spla.spsolve(A, b)
        change = float(np.max(np.abs(h_new - h_it)))
        if change < cfg.picard_tol:
            return h_new, parts, it
        h_it = h_it + cfg.damping * (h_new - h_it)
    raise ConvergenceError(
        f"Picard did not converge ({label}): {cfg.picard_max_iter} "
        f"iterations, final change {change:.3e} m",
        iterations=cfg.picard_max_iter, final_change=change)


def solve_steady(domain: Domain, k_field: np.ndarray, recharge0: float,
                 cfg: SolverConfig | None = None) -> np.ndarray:
    """Steady head under the initial-period stresses and given recharge.

    Falls back to pseudo-transient continuation (growing steps from
    ``dt_initial_steady``) if plain Picard stalls.
    """
    cfg = cfg or SolverConfig()
    disc = _Discretization(domain)
    k_act = disc.gather(k_field)
    if np.any(k_act <= 0):
        raise ValueError("conductivity must be positive on active cells")
    p0 = domain.schedule.periods[0]
    period = type(p0)(duration=p0.duration, recharge_rate=recharge0,
                      well_rates=p0.well_rates, river_stage=p0.river_stage)
    h_start = np.full(disc.n, domain.schedule.robin_external_head)
    try:
        h, _, _ = _picard(disc, k_act, h_start, period, cfg)
    except ConvergenceError:
        h = _pseudo_transient(disc, k_act, h_start, period, cfg)
    return disc.scatter(h)


def _pseudo_transient(disc, k_act, h_start, period, cfg):
    h = h_start.copy()
    dt = cfg.dt_initial_steady
    for _ in range(60):
        h_next, _, _ = _picard(disc, k_act, h, period, cfg, dt=dt, h_prev=h,
                               label="pseudo-transient")
        if np.max(np.abs(h_next - h)) < cfg.picard_tol:
            return h_next
        h = h_next
        dt *= 2.0
    raise ConvergenceError(
        "pseudo-transient continuation failed to reach steady state",
        iterations=60)


def solve_transient(domain: Domain, k_field: np.ndarray, h0: np.ndarray,
                    cfg: SolverConfig | None = None):
    """March the 24 monthly periods from h0; returns (StateField, FluxBudget).

    The long initial period is represented by h0 itself and produces no
    snapshot; one snapshot is emitted at the end of each monthly period.
    """
    cfg = cfg or SolverConfig()
    disc = _Discretization(domain)
    k_act = disc.gather(k_field)
    if np.any(k_act <= 0):
        raise ValueError("conductivity must be positive on active cells")
    h = disc.gather(h0)
    g = domain.grid
    snapshots = np.full((N_MONTHS, g.n_x1, g.n_x2), INACTIVE_SENTINEL)
    budget = FluxBudget()

    for p_idx, period in enumerate(domain.schedule.periods[1:], start=1):
        dt = period.duration / cfg.n_substeps
        terms = {key: 0.0 for key in
                 ("recharge_in", "well_in", "well_out", "river_in",
                  "river_out", "robin_in", "robin_out", "storage_change",
                  "residual")}
        h_period_start = h.copy()
        for _ in range(cfg.n_substeps):
            try:
                h_new, parts, _ = _picard(disc, k_act, h, period, cfg,
                                          dt=dt, h_prev=h,
                                          label=f"period {p_idx}")
            except ConvergenceError as err:
                err.step = p_idx
                raise
            _accumulate_budget(terms, parts, h_new, dt)
            storage = domain.specific_yield * disc.cell_area * (h_new - h)
            terms["storage_change"] += float(storage.sum())
            h = h_new
        inflow = (terms["recharge_in"] + terms["river_in"]
                  + terms["robin_in"] + terms["well_in"])
        outflow = terms["well_out"] + terms["river_out"] + terms["robin_out"]
        terms["residual"] = abs(inflow - outflow - terms["storage_change"])
        del h_period_start
        budget.add_period(**terms)
        snapshots[p_idx - 1] = disc.scatter(h)

    return snapshots, budget


def _accumulate_budget(terms, parts, h, dt):
    for name, key_in, key_out in (("wells", "well_in", "well_out"),
                                  ("river", "river_in", "river_out"),
                                  ("robin", "robin_in", "robin_out")):
        coef, const, idx = parts[name]
        flux = const - coef * h[idx]  # m^3/s into the cell
        terms[key_in] += float(flux[flux > 0].sum()) * dt
        terms[key_out] += float(-flux[flux < 0].sum()) * dt
    coef, const, idx = parts["recharge"]
    terms["recharge_in"] += float((const - coef * h[idx]).sum()) * dt


def simulate_pair(domain: Domain, cov: CovarianceModel, seed: int,
                  cfg: SolverConfig | None = None, chol=None):
    """Sample a y field and solve the full schedule; pure per seed."""
    cfg = cfg or SolverConfig()
    if chol is None:
        chol = _cholesky_factor(domain, cov)
    y = sample_log_conductivity(domain, cov, seed, chol=chol)
    k_field = np.where(domain.mask.mask, np.exp(y), 1.0)
    try:
        h0 = solve_steady(domain, k_field,
                          domain.schedule.periods[0].recharge_rate, cfg)
        h, _ = solve_transient(domain, k_field, h0, cfg)
    except ConvergenceError as err:
        raise ConvergenceError(f"seed {seed}: {err}",
                               iterations=err.iterations,
                               final_change=err.final_change,
                               step=err.step) from err
    return y, h
