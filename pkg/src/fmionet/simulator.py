"""Toy two-phase (CO2/brine) radial reservoir simulator.

Solves component mass conservation dM/dt = -div(F_adv) + q with advective
Darcy fluxes u_p = -k (grad P_p - rho_p g) k_rp / mu_p, immiscible phases
(no molecular diffusion), and P_gas = P_water + P_c. Time stepping is IMPES:
an implicit pressure solve on the summed volumetric balance (with a small
total compressibility), then explicit saturation transport with automatic
CFL sub-stepping. Geometry is a closed radially-symmetric cylinder wedge of
log-spaced rings; the far-field ring sits orders of magnitude beyond any
plume so the closed outer boundary approximates an open reservoir.

Phase properties come from documented rough fits of (P_init, T); relative
permeabilities are Corey curves and capillary pressure is a van Genuchten
shape with the sampled scaling exponent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .records import DEPTH_M, FieldMaps, SampleRecord, ScalarParams, apply_mask, build_mask
from .schedule import SnapshotSchedule

MD_TO_M2 = 9.869233e-16
G = 9.81                       # m/s^2
DAY_S = 86400.0
BAR = 1e5                      # Pa
TOTAL_COMPRESSIBILITY = 4.5e-10   # 1/Pa, rock + brine
CAPILLARY_ENTRY_PA = 1.0e4
MAX_DSAT_PER_SUBSTEP = 0.05


class SimulationError(RuntimeError):
    pass


@dataclass
class GridSpec:
    nz: int = 32
    nr: int = 64
    depth: float = DEPTH_M       # m, vertical extent of the property maps
    r_well: float = 50.0         # m, inner radius
    r_outer: float = 5.0e5       # m, far-field closed boundary

    @property
    def cell_height(self) -> float:
        return self.depth / self.nz

    def radial_edges(self) -> np.ndarray:
        return self.r_well * (self.r_outer / self.r_well) ** (np.arange(self.nr + 1) / self.nr)


def brine_density(p_init_bar: float, temp_c: float) -> float:
    return 1030.0


def brine_viscosity(p_init_bar: float, temp_c: float) -> float:
    return float(np.clip(1.0e-3 * np.exp(-0.015 * (temp_c - 35.0)), 1.2e-4, 1.5e-3))


def co2_density(p_init_bar: float, temp_c: float) -> float:
    rho = 700.0 - 2.5 * (temp_c - 35.0) + 0.8 * (p_init_bar - 100.0)
    return float(np.clip(rho, 150.0, 900.0))


def co2_viscosity(p_init_bar: float, temp_c: float) -> float:
    mu = (4.5 + 0.025 * (p_init_bar - 100.0) - 0.01 * (temp_c - 35.0)) * 1e-5
    return float(np.clip(mu, 2.0e-5, 1.2e-4))


def corey_krw(sw: np.ndarray, s_wi: float) -> np.ndarray:
    se = np.clip((sw - s_wi) / (1.0 - s_wi), 0.0, 1.0)
    return se ** 4


def corey_krg(sw: np.ndarray, s_wi: float) -> np.ndarray:
    se = np.clip((sw - s_wi) / (1.0 - s_wi), 0.0, 1.0)
    return (1.0 - se) ** 2


def capillary_pressure(sw: np.ndarray, s_wi: float, lam: float) -> np.ndarray:
    """van Genuchten shape: Pe * (Se^(-1/lam) - 1)^(1-lam), Pa.

    Clipped at low effective saturation where the curve diverges.
    """
    se = np.clip((sw - s_wi) / (1.0 - s_wi), 0.05, 1.0)
    pc = CAPILLARY_ENTRY_PA * (se ** (-1.0 / lam) - 1.0) ** (1.0 - lam)
    return np.minimum(pc, 5.0 * CAPILLARY_ENTRY_PA)


class _Case:
    """Assembled per-case arrays on the active (n_act, nr) grid."""

    def __init__(self, fields: FieldMaps, scalars: ScalarParams, grid: GridSpec):
        scalars.validate()
        self.grid = grid
        self.scalars = scalars
        mask_rows = build_mask(fields.thickness, grid.nz, grid.cell_height)[:, 0]
        self.n_act = int(mask_rows.sum())
        if self.n_act < 1:
            raise SimulationError("no active rows for thickness "
                                  f"{fields.thickness} at nz={grid.nz}")
        act = slice(0, self.n_act)
        self.kx = fields.kx[act] * MD_TO_M2
        self.ky = fields.ky[act] * MD_TO_M2
        self.phi = np.maximum(fields.phi[act], 1e-3)
        if np.any(self.kx <= 0) or np.any(self.phi <= 0):
            raise SimulationError("nonpositive permeability or porosity in active region")

        re = grid.radial_edges()
        self.rc = (re[1:] - re[:-1]) / np.log(re[1:] / re[:-1])   # log-mean radius
        dz = grid.cell_height
        self.z = (np.arange(self.n_act) + 0.5) * dz               # depth below top, +down
        area = np.pi * (re[1:] ** 2 - re[:-1] ** 2)               # horizontal cell area
        self.vol = area[None, :] * dz
        self.pore_vol = self.phi * self.vol

        # radial transmissibility (n_act, nr-1): two-segment harmonic average
        seg_a = np.log(re[1:-1] / self.rc[:-1]) / self.kx[:, :-1]
        seg_b = np.log(self.rc[1:] / re[1:-1]) / self.kx[:, 1:]
        self.t_r = 2.0 * np.pi * dz / (seg_a + seg_b)
        # vertical transmissibility (n_act-1, nr): harmonic in ky
        if self.n_act > 1:
            kv = 2.0 / (1.0 / self.ky[:-1] + 1.0 / self.ky[1:])
            self.t_z = area[None, :] * kv / dz
        else:
            self.t_z = np.zeros((0, grid.nr))

        # fluid properties, constant per case
        self.rho_w = brine_density(scalars.p_init, scalars.temperature)
        self.mu_w = brine_viscosity(scalars.p_init, scalars.temperature)
        self.rho_g = co2_density(scalars.p_init, scalars.temperature)
        self.mu_g = co2_viscosity(scalars.p_init, scalars.temperature)

        # hydrostatic initial pressure (Pa)
        self.p_init = scalars.p_init * BAR + self.rho_w * G * self.z[:, None] \
            + np.zeros((self.n_act, grid.nr))

        # injection source: innermost column, perforated rows, split by kx
        rows = np.where((self.z >= scalars.perf_top) & (self.z <= scalars.perf_bottom))[0]
        if rows.size == 0:
            mid = 0.5 * (scalars.perf_top + scalars.perf_bottom)
            rows = np.array([int(np.clip(mid / dz, 0, self.n_act - 1))])
        rows = rows[rows < self.n_act]
        if rows.size == 0:
            rows = np.array([self.n_act - 1])
        mass_rate = scalars.q * 1e9 / (365.0 * DAY_S)             # kg/s
        self.q_gas_total = mass_rate / self.rho_g                 # m^3/s
        weights = self.kx[rows, 0]
        weights = weights / weights.sum()
        self.q_gas = np.zeros((self.n_act, grid.nr))
        self.q_gas[rows, 0] = self.q_gas_total * weights
        self.perf_rows = rows


def _phase_fluxes(case: _Case, p: np.ndarray, sw: np.ndarray):
    """Upwinded volumetric phase fluxes across radial and vertical faces."""
    sc = case.scalars
    krw = corey_krw(sw, sc.s_wi)
    krg = corey_krg(sw, sc.s_wi)
    pc = capillary_pressure(sw, sc.s_wi, sc.lam)
    lam_w = krw / case.mu_w
    lam_g = krg / case.mu_g
    pg = p + pc

    def face_flux(t_face, pot_a, pot_b, lam, axis):
        dpot = pot_a - pot_b
        if axis == 0:
            lam_up = np.where(dpot >= 0, lam[:-1, :], lam[1:, :])
        else:
            lam_up = np.where(dpot >= 0, lam[:, :-1], lam[:, 1:])
        return t_face * lam_up * dpot

    # radial faces: depth identical, no gravity term
    fw_r = face_flux(case.t_r, p[:, :-1], p[:, 1:], lam_w, axis=1)
    fg_r = face_flux(case.t_r, pg[:, :-1], pg[:, 1:], lam_g, axis=1)
    # vertical faces between row i (shallow) and i+1 (deep); z grows downward
    if case.n_act > 1:
        dz = case.z[1:] - case.z[:-1]
        grav_w = case.rho_w * G * dz[:, None]
        grav_g = case.rho_g * G * dz[:, None]
        fw_z = face_flux(case.t_z, p[:-1, :] + grav_w, p[1:, :], lam_w, axis=0)
        fg_z = face_flux(case.t_z, pg[:-1, :] + grav_g, pg[1:, :], lam_g, axis=0)
    else:
        fw_z = np.zeros((0, p.shape[1]))
        fg_z = fw_z
    return fw_r, fg_r, fw_z, fg_z


CFL_SAFETY = 0.7
SECANT_DS_FLOOR = 0.10      # saturation-difference floor in wave-speed secants


def _gas_transport_fluxes(case: _Case, sw: np.ndarray, ft_r: np.ndarray,
                          ft_z: np.ndarray):
    """Gas face fluxes for fixed total fluxes, plus per-face wave speeds.

    Fractional-flow advection plus gravity/capillary segregation with
    counter-current upwinding. Wave speeds are flux secants in saturation,
    so steady saturated regions stop constraining the time step.
    """
    sc = case.scalars
    lam_w = corey_krw(sw, sc.s_wi) / case.mu_w
    lam_g = corey_krg(sw, sc.s_wi) / case.mu_g
    frac_cell = lam_g / (lam_g + lam_w + 1e-30)
    pc = capillary_pressure(sw, sc.s_wi, sc.lam)
    eps = 1e-30

    def along(arr, axis, side):
        if axis == 1:
            return arr[:, :-1] if side == 0 else arr[:, 1:]
        return arr[:-1, :] if side == 0 else arr[1:, :]

    def gas_flux(t_face, ft, drive, axis):
        ds = np.maximum(np.abs(along(sw, axis, 0) - along(sw, axis, 1)), SECANT_DS_FLOOR)
        # advective part, upwinded by the total-flux direction
        lw_up = np.where(ft >= 0, along(lam_w, axis, 0), along(lam_w, axis, 1))
        lg_up = np.where(ft >= 0, along(lam_g, axis, 0), along(lam_g, axis, 1))
        frac = lg_up / (lg_up + lw_up + eps)
        dfrac = np.abs(along(frac_cell, axis, 0) - along(frac_cell, axis, 1))
        # segregation part: gas upwinded by the driving sign, water counter
        lg_seg = np.where(drive >= 0, along(lam_g, axis, 0), along(lam_g, axis, 1))
        lw_seg = np.where(drive >= 0, along(lam_w, axis, 1), along(lam_w, axis, 0))
        mob = lg_seg * lw_seg / (lg_seg + lw_seg + eps)
        seg = t_face * mob * drive
        wave = np.abs(ft) * dfrac / ds + 2.0 * np.abs(seg) / ds
        return frac * ft + seg, wave

    drive_r = pc[:, :-1] - pc[:, 1:]
    fg_r, wave_r = gas_flux(case.t_r, ft_r, drive_r, axis=1)
    if case.n_act > 1:
        dz = (case.z[1:] - case.z[:-1])[:, None]
        # gas potential minus water potential across the vertical face; the
        # gas phase is lighter so buoyancy drives it toward smaller depth
        drive_z = (pc[:-1] - pc[1:]) + (case.rho_g - case.rho_w) * G * dz
        fg_z, wave_z = gas_flux(case.t_z, ft_z, drive_z, axis=0)
    else:
        fg_z = np.zeros((0, sw.shape[1]))
        wave_z = fg_z
    return fg_r, fg_z, wave_r, wave_z


def _divergence(f_r: np.ndarray, f_z: np.ndarray, shape) -> np.ndarray:
    div = np.zeros(shape)
    div[:, :-1] += f_r
    div[:, 1:] -= f_r
    if f_z.shape[0]:
        div[:-1, :] += f_z
        div[1:, :] -= f_z
    return div


def _face_abs_sum(f_r: np.ndarray, f_z: np.ndarray, shape) -> np.ndarray:
    """Per-cell sum of |flux| over incident faces (for CFL wave speeds)."""
    den = np.zeros(shape)
    a = np.abs(f_r)
    den[:, :-1] += a
    den[:, 1:] += a
    if f_z.shape[0]:
        a = np.abs(f_z)
        den[:-1, :] += a
        den[1:, :] += a
    return den


def _pressure_solve(case: _Case, p_old: np.ndarray, sw: np.ndarray, dt: float) -> np.ndarray:
    """Implicit solve of the summed (total) volumetric balance."""
    n, m = p_old.shape
    sc = case.scalars
    krw = corey_krw(sw, sc.s_wi)
    krg = corey_krg(sw, sc.s_wi)
    pc = capillary_pressure(sw, sc.s_wi, sc.lam)
    lam_w = krw / case.mu_w
    lam_g = krg / case.mu_g

    # upwind mobilities by previous-step phase potentials
    pg_old = p_old + pc
    dw_r = p_old[:, :-1] - p_old[:, 1:]
    dg_r = pg_old[:, :-1] - pg_old[:, 1:]
    tw_r = case.t_r * np.where(dw_r >= 0, lam_w[:, :-1], lam_w[:, 1:])
    tg_r = case.t_r * np.where(dg_r >= 0, lam_g[:, :-1], lam_g[:, 1:])
    if n > 1:
        dz = (case.z[1:] - case.z[:-1])[:, None]
        dw_z = p_old[:-1] + case.rho_w * G * dz - p_old[1:]
        dg_z = pg_old[:-1] + case.rho_g * G * dz - pg_old[1:]
        tw_z = case.t_z * np.where(dw_z >= 0, lam_w[:-1], lam_w[1:])
        tg_z = case.t_z * np.where(dg_z >= 0, lam_g[:-1], lam_g[1:])
    else:
        tw_z = np.zeros((0, m))
        tg_z = tw_z

    tt_r = tw_r + tg_r
    tt_z = tw_z + tg_z
    acc = case.pore_vol * TOTAL_COMPRESSIBILITY / dt

    idx = np.arange(n * m).reshape(n, m)
    diag = acc.ravel().copy()
    rows, cols, vals = [idx.ravel()], [idx.ravel()], [diag]

    def couple(t_face, ia, ib):
        ia = ia.ravel()
        ib = ib.ravel()
        t = t_face.ravel()
        rows.append(ia); cols.append(ib); vals.append(-t)
        rows.append(ib); cols.append(ia); vals.append(-t)
        add = np.zeros(n * m)
        np.add.at(add, ia, t)
        np.add.at(add, ib, t)
        rows.append(np.arange(n * m)); cols.append(np.arange(n * m)); vals.append(add)

    couple(tt_r, idx[:, :-1], idx[:, 1:])
    if n > 1:
        couple(tt_z, idx[:-1, :], idx[1:, :])

    # RHS: accumulation, sources, and the lagged (constant-in-P) parts of the
    # face fluxes: capillary and gravity drives, distributed antisymmetrically
    rhs = acc * p_old + case.q_gas
    flux = tg_r * (pc[:, :-1] - pc[:, 1:])
    rhs[:, :-1] -= flux
    rhs[:, 1:] += flux
    if n > 1:
        dz = (case.z[1:] - case.z[:-1])[:, None]
        fz = tw_z * (case.rho_w * G * dz) + tg_z * (case.rho_g * G * dz + pc[:-1] - pc[1:])
        rhs[:-1, :] -= fz
        rhs[1:, :] += fz

    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n * m, n * m))
    try:
        p_new = spla.spsolve(mat, rhs.ravel())
    except Exception as exc:  # singular matrix and friends
        raise SimulationError(f"pressure solve failed: {exc}") from exc
    if not np.isfinite(p_new).all():
        raise SimulationError("pressure solve returned non-finite values "
                              f"(dt={dt:.3e}s, max |rhs|={np.abs(rhs).max():.3e})")
    return p_new.reshape(n, m)


def simulate_case(fields: FieldMaps, scalars: ScalarParams,
                  schedule: SnapshotSchedule, grid: GridSpec | None = None,
                  dt_initial_days: float = 0.25, dt_growth: float = 1.4,
                  collect_audit: bool = False):
    """Run one case and sample SG / dP at the schedule times.

    Returns a validated SampleRecord (plus an audit dict when requested).
    """
    grid = grid or GridSpec()
    case = _Case(fields, scalars, grid)
    n, m = case.n_act, grid.nr

    sw = np.ones((n, m))
    p = case.p_init.copy()
    t_now = 0.0
    injected = 0.0
    clipped_volume = 0.0

    snap_times = np.asarray(schedule.times_days, dtype=np.float64) * DAY_S
    sg_snaps = np.zeros((len(snap_times), grid.nz, m), dtype=np.float32)
    dp_snaps = np.zeros((len(snap_times), grid.nz, m), dtype=np.float32)
    audit = {"times_days": [], "injected_m3": [], "in_place_m3": [], "substeps": 0}

    stationary = case.q_gas_total == 0.0
    s_max = 1.0 - scalars.s_wi          # gas bound: water below S_wi is immobile
    s_band = 0.02                        # tolerated overshoot before re-solving
    dt_floor = 0.05 * DAY_S

    def store(i):
        sg_snaps[i, :n] = (1.0 - sw).astype(np.float32)
        dp = np.maximum(p - case.p_init, 0.0) / BAR
        dp_snaps[i, :n] = dp.astype(np.float32)

    def advance(p_new, sw_start, dt):
        """Integrate transport against frozen total fluxes for up to dt.

        Stops early when a cell drifts into the overshoot band above the
        physical gas bound (the stale fluxes need refreshing). Nothing is
        discarded, so gas volume stays exactly conserved. Returns
        (sw_end, injected_volume, substeps, consumed_time).
        """
        fw_r, fg_r, fw_z, fg_z = _phase_fluxes(case, p_new, sw_start)
        ft_r = fw_r + fg_r
        ft_z = fw_z + fg_z
        sw_cur = sw_start
        added = 0.0
        steps = 0
        remaining = dt
        while remaining > 1e-12:
            fgt_r, fgt_z, wave_r, wave_z = _gas_transport_fluxes(case, sw_cur, ft_r, ft_z)
            rate = (-_divergence(fgt_r, fgt_z, (n, m)) + case.q_gas) / case.pore_vol
            wave = _face_abs_sum(wave_r, wave_z, (n, m))
            dt_wave = CFL_SAFETY * (case.pore_vol / np.maximum(wave, 1e-30)).min()
            max_rate = np.abs(rate).max()
            dt_rate = np.inf if max_rate == 0 else MAX_DSAT_PER_SUBSTEP / max_rate
            # keep cells below the bound from crossing it in one substep;
            # cells inside the band only drift by what the stale flux forces
            sg_cur = 1.0 - sw_cur
            up = (rate > 0) & (sg_cur < s_max - 1e-6)
            dn = (rate < 0) & (sg_cur > 1e-6)
            dt_bound = np.inf
            if up.any():
                dt_bound = ((s_max - sg_cur[up]) / rate[up]).min()
            if dn.any():
                dt_bound = min(dt_bound, (sg_cur[dn] / -rate[dn]).min())
            stable = min(dt_wave, dt_rate)
            dt_sub = min(remaining, max(min(stable, dt_bound), 1e-4 * stable))
            sg_new = np.maximum(sg_cur + dt_sub * rate, 0.0)
            sw_cur = 1.0 - sg_new
            added += case.q_gas_total * dt_sub
            remaining -= dt_sub
            steps += 1
            if (sg_new > s_max + s_band).any():
                break  # refresh the pressure field before continuing
        return sw_cur, added, steps, dt - remaining

    dt_macro = dt_initial_days * DAY_S
    for i_snap, t_target in enumerate(snap_times):
        while t_now < t_target - 1e-9:
            dt = min(dt_macro, t_target - t_now)
            if stationary:
                t_now += dt
                dt_macro = min(dt_macro * dt_growth, 400 * DAY_S)
                continue
            p = _pressure_solve(case, p, sw, dt)
            sw, added, steps, consumed = advance(p, sw, dt)
            injected += added
            audit["substeps"] += steps
            t_now += consumed
            if consumed < dt * 0.999:
                # interrupted by bound overshoot: keep pressure steps short
                dt_macro = max(min(dt_macro, 4.0 * consumed), dt_floor)
            else:
                dt_macro = min(dt_macro * dt_growth, 400 * DAY_S)
        store(i_snap)
        if collect_audit:
            audit["times_days"].append(t_now / DAY_S)
            audit["injected_m3"].append(injected)
            audit["in_place_m3"].append(float(((1.0 - sw) * case.pore_vol).sum()))

    mask = build_mask(fields.thickness, grid.nz, grid.cell_height, nr=m)
    fields_masked = FieldMaps(kx=fields.kx.copy(), ky=fields.ky.copy(),
                              phi=fields.phi.copy(), thickness=fields.thickness)
    apply_mask(fields_masked, mask)
    record = SampleRecord(fields=fields_masked, scalars=scalars, mask=mask,
                          sg=sg_snaps, dp=dp_snaps,
                          times_days=tuple(schedule.times_days))
    record.validate()
    if collect_audit:
        audit["clipped_m3"] = clipped_volume
        return record, audit
    return record


def plume_radius(record: SampleRecord, grid: GridSpec, snap_index: int,
                 threshold: float = 0.01) -> float:
    """Outermost log-mean radius with SG above threshold at perforation depth."""
    sc = record.scalars
    dz = grid.cell_height
    z = (np.arange(grid.nz) + 0.5) * dz
    rows = np.where((z >= sc.perf_top) & (z <= sc.perf_bottom) & record.mask[:, 0])[0]
    if rows.size == 0:
        rows = np.array([0])
    sg = record.sg[snap_index][rows]
    hit = np.where((sg > threshold).any(axis=0))[0]
    if hit.size == 0:
        return 0.0
    re = grid.radial_edges()
    rc = (re[1:] - re[:-1]) / np.log(re[1:] / re[:-1])
    return float(rc[hit.max()])
