"""Seeded experiments with declared tolerances, reports and replayable manifests.

Object-level functions (``exp_*``) take solver inputs directly. Campaigns
(``CAMPAIGNS``) take a materialized config dict, sweep seeds or parameters,
and return a single :class:`Report`.
"""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, io
from .characteristics import (FlowMap, check_sign_preservation, flow_backward, flow_forward, flow_jacobian,
                              flow_stability)
from .coefficients import ConstantB, FluxCoefficients, make_family
from .kernels import backend_name
from .kinetic import (DefectMeasure, KineticGrid, TestFunction, bv_xi, defect_measures, kinetic_function,
                      singular_moment, weak_form_residual, ws1_seminorm)
from .paths import (DrivingPath, RoughLift, brownian_path, chen_defect, derive_seed, dyadic_refine,
                    level2_signature, levy_area, rough_metric)
from .solver import SolverConfig, Trajectory, energy_ledger, solve, solve_batch, stable_quantity
from .torus import ScalarField, TorusGrid, VelocityGrid


# ------------------------------------------------------------------ report

class Report:
    """Assertions, tables and digests of one experiment run."""

    def __init__(self, experiment: str, params: dict | None = None, tolerances: dict | None = None):
        self.experiment = experiment
        self.params = dict(params or {})
        self.tolerances = dict(tolerances or {})
        self.assertions: list[dict] = []
        self.tables: dict[str, dict] = {}
        self.info: dict = {}
        self.digests: dict[str, str] = {}
        self.wall_clock = 0.0

    def check(self, aid: str, passed: bool, value=None, bound=None, note: str = "") -> bool:
        self.assertions.append({"id": aid, "passed": bool(passed), "value": _jsonable(value),
                                "bound": _jsonable(bound), "note": note})
        return bool(passed)

    def table(self, name: str, header, rows) -> None:
        self.tables[name] = {"header": list(header), "rows": [[_jsonable(v) for v in r] for r in rows]}

    def digest(self, name: str, *arrays) -> None:
        self.digests[name] = io.digest(*arrays)

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions)

    @property
    def failures(self) -> list[str]:
        return [a["id"] for a in self.assertions if not a["passed"]]

    def merge(self, other: "Report", prefix: str) -> None:
        for a in other.assertions:
            self.assertions.append(dict(a, id=f"{prefix}/{a['id']}"))
        for k, v in other.tables.items():
            self.tables[f"{prefix}/{k}"] = v
        for k, v in other.digests.items():
            self.digests[f"{prefix}/{k}"] = v
        if other.info:
            self.info[prefix] = other.info

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "params": _jsonable(self.params),
                "tolerances": _jsonable(self.tolerances), "assertions": self.assertions,
                "passed": self.passed, "failures": self.failures, "tables": self.tables,
                "info": _jsonable(self.info), "digests": self.digests, "wall_clock": self.wall_clock}


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if np.isfinite(f) else repr(f)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def fan_out(fn, items, threads: int = 1) -> list:
    """Map ``fn`` over ``items`` in order, on worker processes when threads > 1."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def l1(a, b=None) -> float:
    v = np.asarray(a) if b is None else np.asarray(a) - np.asarray(b)
    return float(np.mean(np.abs(v)))


def _decreasing(seq, slack: float) -> bool:
    return all(seq[i + 1] <= (1 + slack) * seq[i] for i in range(len(seq) - 1))


# -------------------------------------------------------- object-level runs

def transport_stiffness(coeffs: FluxCoefficients, path: DrivingPath, config: SolverConfig) -> float:
    """1 + kappa sup|b| sup|zdot|, the factor scaling the contraction tolerance."""
    faces = config.grid.coords().reshape(-1, config.grid.dim)
    bsup = float(np.max(coeffs.b_sup(faces))) if faces.size else 0.0
    return 1.0 + config.kappa * bsup * path.zdot_max()


def exp_contraction(u0a, u0b, path: DrivingPath, config: SolverConfig, coeffs: FluxCoefficients,
                    c_tol: float = 5.0, stiffness: float | None = None) -> Report:
    """L1 distance of two solves sharing one driver against the initial distance."""
    a = np.asarray(getattr(u0a, "values", u0a))
    b = np.asarray(getattr(u0b, "values", u0b))
    stiff = transport_stiffness(coeffs, path, config) if stiffness is None else float(stiffness)
    tra, trb = solve_batch([a, b], path, config, coeffs, record_defects=False)
    return contraction_report(tra, trb, path, config, c_tol, stiff)


def contraction_report(tra: Trajectory, trb: Trajectory, path, config, c_tol, stiff) -> Report:
    dists = np.array([l1(x, y) for x, y in zip(tra.states, trb.states)])
    d0 = dists[0]
    dt = float(tra.diag["dt"].max()) if tra.steps else 0.0
    tol = c_tol * (config.grid.spacing + dt) * config.T * stiff
    rep = Report("contraction", {"dx": config.grid.spacing, "dt_max": dt, "stiffness": stiff, "T": config.T},
                 {"c_tol": c_tol, "tol": tol})
    nonneg = tra.states[0].min() >= 0 and trb.states[0].min() >= 0
    bound = d0 * (1 + tol)
    rep.info["margin"] = float(np.max(dists) / d0 - 1.0) if d0 > 0 else float(np.max(dists))
    rep.info["d0"] = float(d0)
    rep.info["nonnegative"] = bool(nonneg)
    rep.table("distance", ["t", "l1_distance", "bound"], [(t, d, bound) for t, d in zip(tra.times, dists)])
    rep.digest("distance", tra.times, dists)
    if nonneg:
        rep.check("contraction", bool(np.max(dists) <= bound), float(np.max(dists)), bound)
    else:
        rep.info["signed_contraction_holds"] = bool(np.max(dists) <= bound)
    if np.all(tra.states[0] >= trb.states[0]):
        gap = float(np.min(tra.states - trb.states))
        rep.check("ordering", gap >= -1e-13 * max(1.0, float(np.abs(tra.states).max())), gap, 0.0)
    if d0 == 0.0:
        rep.check("determinism", bool(np.all(dists == 0.0)), float(np.max(dists)), 0.0)
    return rep


def exp_mass(u0, path: DrivingPath, config: SolverConfig, coeffs: FluxCoefficients,
             tol: float = 1e-10, min_tol: float = 1e-10, control: bool = True) -> Report:
    """Mass equality for nonnegative data; L1 inequality for signed data; kappa = 0 control."""
    v = np.asarray(getattr(u0, "values", u0))
    t0 = time.perf_counter()
    tr = solve(v, path, config, coeffs, record_defects=False)
    elapsed = time.perf_counter() - t0
    vol = config.grid.cell_volume
    mass = tr.states.reshape(len(tr.times), -1).sum(axis=1) * vol
    m0 = mass[0]
    rep = Report("mass", {"m": config.m, "kappa": config.kappa, "points": config.grid.points_per_dim},
                 {"mass_rel": tol, "min_u": min_tol})
    rep.info["runtime"] = elapsed
    rep.info["steps"] = tr.steps
    rep.table("mass", ["t", "mass", "min_u", "l1"],
              [(t, m, float(s.min()), l1(s)) for t, m, s in zip(tr.times, mass, tr.states)])
    rep.digest("final", tr.states[-1])
    if v.min() >= 0:
        rel = float(np.max(np.abs(mass - m0)) / abs(m0)) if m0 != 0 else float(np.max(np.abs(mass)))
        rep.check("mass_equality", rel <= tol, rel, tol)
        mn = float(tr.states.min())
        rep.check("nonnegativity", mn >= -min_tol, mn, -min_tol)
    else:
        norms = np.array([l1(s) for s in tr.states])
        rep.check("l1_inequality", bool(np.all(norms <= norms[0] + tol)), float(norms.max() - norms[0]), tol)
    if control and config.kappa != 0.0:
        ctrl = solve(v, path, config.with_(kappa=0.0), coeffs, record_defects=False, M=tr.M)
        mc = ctrl.states.reshape(len(ctrl.times), -1).sum(axis=1) * vol
        scale = max(abs(m0), l1(v), 1e-300)  # signed data can have zero mass
        gap = float(np.max(np.abs(mc - mass[: len(mc)])) / scale) if len(mc) == len(mass) else np.inf
        rep.check("noise_moves_no_mass", gap <= tol, gap, tol)
    return rep


def exp_cocycle(u0, path: DrivingPath, s: float, t: float, config: SolverConfig, coeffs: FluxCoefficients,
                aligned: bool | None = None, tol_aligned: float = 1e-12, c_misaligned: float = 5.0) -> Report:
    """Restart from u(s) on [s, t] against a fresh solve on [0, t - s] with the shifted driver."""
    if not (0 <= s <= t <= path.T):
        raise ValueError("need 0 <= s <= t <= T")
    is_knot = s == 0 or bool(np.any(path.times == s))
    if aligned is None:
        aligned = is_knot
    if aligned and not is_knot:
        raise ValueError("misaligned snapshot grids: s is not a knot of the driver")
    v = np.asarray(getattr(u0, "values", u0))
    rep = Report("cocycle", {"s": s, "t": t, "aligned": aligned},
                 {"aligned": tol_aligned, "c_misaligned": c_misaligned})
    if s == 0:
        a = solve(v, path, config.with_(T=t, snapshots=()), coeffs, record_defects=False)
        b = solve(v, path.shifted(0.0), config.with_(T=t, snapshots=()), coeffs, record_defects=False, M=a.M)
        gap = l1(a.states[-1], b.states[-1])
        rep.check("identical_runs", gap == 0.0, gap, 0.0)
        rep.digest("final", a.states[-1])
        return rep
    full = solve(v, path, config.with_(T=t, snapshots=(s,), land_on_snapshots=aligned), coeffs,
                 record_defects=False)
    ks = int(np.flatnonzero(np.abs(full.times - s) < 1e-15)[0])
    us = full.states[ks]
    shifted = solve(us, path.shifted(s), config.with_(T=t - s, snapshots=()), coeffs, record_defects=False,
                    M=full.M)
    gap = l1(full.states[-1], shifted.states[-1])
    dt = float(full.diag["dt"].max())
    rep.info.update(gap=gap, dt_max=dt, steps=full.steps)
    rep.digest("final", full.states[-1], shifted.states[-1])
    if aligned:
        restart = solve(us, path, config.with_(T=t, snapshots=()), coeffs, t_start=s, record_defects=False,
                        M=full.M)
        gr = l1(full.states[-1], restart.states[-1])
        rep.check("restart_gap", gr <= tol_aligned, gr, tol_aligned)
        rep.check("shift_gap", gap <= tol_aligned, gap, tol_aligned)
    else:
        rep.check("shift_gap", gap <= c_misaligned * dt, gap, c_misaligned * dt)
    return rep


def exp_driver_continuity(u0, base_path: DrivingPath, levels, alpha: float, config: SolverConfig,
                          coeffs: FluxCoefficients, slack: float = 0.1, n_interior: int = 1,
                          seed: int = 0) -> Report:
    """Consecutive rough distances of dyadic interpolants and solution gaps to the finest level."""
    levels = list(levels)
    if any(levels[i + 1] < levels[i] for i in range(len(levels) - 1)):
        raise ValueError("levels must be nondecreasing")
    v = np.asarray(getattr(u0, "values", u0))
    paths = [dyadic_refine(base_path, k) for k in levels]
    lifts = [RoughLift(p) for p in paths]
    d_cons = [rough_metric(lifts[i], lifts[i + 1], alpha, n_interior=n_interior, seed=seed)
              for i in range(len(levels) - 1)]
    d_ref = [rough_metric(lifts[i], lifts[-1], alpha, n_interior=n_interior, seed=seed)
             for i in range(len(levels) - 1)]
    trajs = [solve(v, p, config, coeffs, record_defects=False) for p in paths]
    ref = trajs[-1]
    gaps = [max(l1(x, y) for x, y in zip(tr.states, ref.states)) for tr in trajs[:-1]]
    rep = Report("noise-cts", {"levels": levels, "alpha": alpha}, {"slack": slack})
    rep.table("gaps", ["level", "d_alpha_next", "d_alpha_finest", "solution_gap"],
              [(k, a, b, g) for k, a, b, g in zip(levels[:-1], d_cons, d_ref, gaps)])
    rep.digest("gaps", np.array(d_cons), np.array(gaps))
    rep.check("d_alpha_consecutive_decreasing", _decreasing(d_cons, slack), d_cons, slack)
    rep.check("solution_gaps_decreasing", _decreasing(gaps, slack), gaps, slack)
    rep.info["d_alpha_to_finest_decreasing"] = _decreasing(d_ref, slack)
    return rep


def exp_vanishing_regularization(u0, path: DrivingPath, eta_list, config: SolverConfig, coeffs: FluxCoefficients,
                                 uniformity: float = 2.0, slack: float = 0.0) -> Report:
    """Cauchy trend in L1_tx along a decreasing viscosity sweep, with stable-estimate uniformity."""
    v = np.asarray(getattr(u0, "values", u0))
    trajs = [solve(v, path, config.with_(eta=float(e)), coeffs) for e in eta_list]
    M = trajs[0].M
    tw = np.diff(trajs[0].times)

    def l1tx(a: Trajectory, b: Trajectory) -> float:
        d = np.array([l1(x, y) for x, y in zip(a.states, b.states)])
        return float(np.sum(0.5 * (d[1:] + d[:-1]) * tw))

    gaps = [l1tx(trajs[i], trajs[i + 1]) for i in range(len(trajs) - 1)]
    stable = [stable_quantity(tr) for tr in trajs]
    pmass = [float(np.sum(tr.diag["dt"] * tr.diag["p"])) for tr in trajs]
    rep = Report("vanishing-reg", {"eta_list": list(eta_list), "M": M}, {"uniformity": uniformity, "slack": slack})
    rep.table("sweep", ["eta", "stable_quantity", "p_mass", "gap_to_next"],
              [(e, sq, pm, g) for e, sq, pm, g in zip(eta_list, stable, pmass, gaps + [0.0])])
    rep.digest("sweep", np.array(stable), np.array(pmass), np.array(gaps))
    if len(gaps) > 1:
        rep.check("cauchy_trend", _decreasing(gaps, slack), gaps, slack)
    ratio = max(stable) / min(stable)
    rep.check("stable_uniformity", ratio < uniformity, ratio, uniformity)
    decr = sorted(range(len(eta_list)), key=lambda i: -eta_list[i])
    rep.check("p_mass_decreasing_with_eta", all(pmass[decr[i + 1]] <= pmass[decr[i]] for i in range(len(decr) - 1)),
              pmass, None)
    return rep


def exp_energy_ledger(u0_spec, path: DrivingPath, config: SolverConfig, coeffs: FluxCoefficients,
                      points=(128, 256, 512), tol: float = 1e-3, factor: float = 2.0) -> Report:
    """Discrete energy identity residual under grid refinement."""
    res = []
    for n in points:
        g = TorusGrid(config.grid.dim, int(n))
        u = cfgmod.build_data(u0_spec, g) if isinstance(u0_spec, dict) else u0_spec(g)
        tr = solve(u, path, config.with_(grid=g), coeffs)
        res.append(energy_ledger(tr))
    rep = Report("energy", {"points": list(points)}, {"residual": tol, "halving_factor": factor})
    rep.table("ledger", ["points", "residual"], list(zip(points, res)))
    rep.digest("ledger", np.array(res))
    rep.check("residual_coarsest", res[0] <= tol, res[0], tol)
    rep.check("halving", all(res[i + 1] <= res[i] / factor for i in range(len(res) - 1)), res, factor)
    return rep


def exp_weak_form(u0_spec, path: DrivingPath, config: SolverConfig, coeffs: FluxCoefficients,
                  rho0: TestFunction, points=(32, 64, 128), slack: float = 0.2) -> Report:
    """weak_form_residual under simultaneous refinement of x, xi, snapshots and flow steps."""
    res = []
    for n in points:
        g = TorusGrid(config.grid.dim, int(n))
        u = cfgmod.build_data(u0_spec, g) if isinstance(u0_spec, dict) else u0_spec(g)
        snaps = tuple(np.linspace(0, config.T, n // 2 + 1)[1:-1])
        tr = solve(u, path, config.with_(grid=g, snapshots=snaps, land_on_snapshots=True), coeffs)
        flow_dt = 0.25 * min(float(np.min(np.diff(path.times))), g.spacing)
        res.append(weak_form_residual(tr, rho0, 0.0, config.T, path, coeffs, n_xi=n, flow_dt=flow_dt))
    rep = Report("weak-form", {"points": list(points), "m": config.m, "kappa": config.kappa}, {"slack": slack})
    rep.table("residual", ["points", "residual"], list(zip(points, res)))
    rep.digest("residual", np.array(res))
    rep.check("decreasing", _decreasing(res, slack), res, slack)
    return rep


def exp_flow_stability(coeffs: FluxCoefficients, alpha: float, n_pairs: int, seed, base_path: DrivingPath | None = None,
                       levels=range(1, 9), n_points: int = 8, flow_dt: float = 1e-3, factor: float = 2.0,
                       B: float = 1.7, rel: float = 0.01, n_interior: int = 1) -> Report:
    """Calibrate C on half the driver pairs; check flow distance <= factor C d_alpha on the rest."""
    rng = np.random.default_rng(seed)
    levels = list(levels)
    if base_path is None:
        base_path = brownian_path(derive_seed(int(seed) if np.isscalar(seed) else 0, 7), 1.0, 2 ** max(levels) + 1)
    cand = [(a, b) for i, a in enumerate(levels) for b in levels[i + 1:]]
    if n_pairs > len(cand):
        raise ValueError(f"only {len(cand)} distinct level pairs available")
    pick = [cand[i] for i in rng.permutation(len(cand))[:n_pairs]]
    pts = (rng.uniform(0, 1, (n_points, coeffs.d)), rng.uniform(-2, 2, n_points))
    rows = []
    for a, b in pick:
        fs = flow_stability(dyadic_refine(base_path, a), dyadic_refine(base_path, b), alpha, coeffs, pts,
                            dt=flow_dt, n_interior=n_interior, seed=int(rng.integers(2**31)))
        rows.append((a, b, fs.flow_distance, fs.metric, fs.flow_distance / fs.metric if fs.metric > 0 else 0.0))
    half = len(rows) // 2
    C = max(r[4] for r in rows[:half]) if half else 0.0
    rep = Report("flow-stability", {"alpha": alpha, "n_pairs": n_pairs, "levels": levels},
                 {"factor": factor, "constant_b_rel": rel})
    rep.table("pairs", ["level_a", "level_b", "flow_distance", "d_alpha", "ratio", "role"],
              [r + ("calibration" if i < half else "holdout",) for i, r in enumerate(rows)])
    rep.digest("pairs", np.array([r[2:5] for r in rows]))
    rep.info["C"] = C
    held = rows[half:]
    npass = sum(r[2] <= factor * C * r[3] for r in held)
    rep.check("holdout", npass == len(held), npass, len(held))
    # constant-b control: X = x - B z, so the flow distance is |B| times the level-1 distance
    cb = ConstantB(np.full((coeffs.d, base_path.dims), B))
    a, b = pick[0]
    fs = flow_stability(dyadic_refine(base_path, a), dyadic_refine(base_path, b), alpha, cb, pts, dt=flow_dt,
                        n_interior=n_interior, seed=0)
    Cb = fs.flow_distance / fs.level1
    rep.info["constant_b_C"] = Cb
    rep.check("constant_b_law", abs(Cb - abs(B)) <= rel * abs(B), Cb, abs(B))
    return rep


def exp_characteristics(coeffs: FluxCoefficients, path: DrivingPath, n_samples: int = 1000, seed=0,
                        flow_dt: float = 1e-3, xi_range: float = 3.0, inverse_tol: float = 1e-8,
                        det_tol: float = 1e-5, control: str | None = "broken_vanishing") -> Report:
    """Inverse composition, Jacobian determinant and sign preservation of the characteristic flow."""
    rng = np.random.default_rng(seed)
    d = coeffs.d
    x = rng.uniform(0, 1, (n_samples, d))
    xi = rng.uniform(-xi_range, xi_range, n_samples)
    t0, t1 = path.t0, path.T
    fw = flow_forward((x, xi), t0, t1, path, coeffs, flow_dt)
    bw = flow_backward(fw, t0, t1, path, coeffs, flow_dt)
    inv = float(max(np.abs(bw.x_unwrapped - x).max(), np.abs(bw.xi - xi).max()))
    J = flow_jacobian((x, xi), t0, t1, path, coeffs, flow_dt)
    det = float(np.abs(np.linalg.det(J) - 1).max())
    sp = check_sign_preservation((x, xi), t0, t1, path, coeffs, flow_dt)
    rep = Report("characteristics", {"n_samples": n_samples, "flow_dt": flow_dt, "T": t1 - t0},
                 {"inverse": inverse_tol, "det": det_tol})
    rep.check("inverse_composition", inv <= inverse_tol, inv, inverse_tol)
    rep.check("jacobian_determinant", det <= det_tol, det, det_tol)
    rep.check("sign_preservation", sp["violations"] == 0, sp["violations"], 0)
    rep.digest("forward", fw.x_unwrapped, fw.xi)
    if control:
        bad = make_family(control, d=d, n=coeffs.n, validate=False)
        spb = check_sign_preservation((x, xi), t0, t1, path, bad, flow_dt)
        rep.check("negative_control_detected", spb["violations"] > 0, spb["violations"], 0,
                  note=f"{control} must produce sign violations")
    return rep


def exp_signature(path: DrivingPath | None = None, tol: float = 1e-12) -> Report:
    """Levy area of the L-path, Chen multiplicativity and reversal cancellation."""
    rep = Report("signature", {}, {"chen": tol, "reversal": tol})
    L = DrivingPath([0.0, 1.0, 2.0], [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    A = float(levy_area(level2_signature(L, 0.0, 2.0))[0, 1])
    rep.check("l_path_area", A == 0.5, A, 0.5)
    p = path if path is not None else brownian_path(derive_seed(0, 11), 1.0, 33, dims=2)
    if p.dims < 2:
        p = DrivingPath(p.times, np.hstack([p.values, np.sin(np.pi * p.times)[:, None]]))
    s, u, t = p.t0, p.t0 + 0.37 * (p.T - p.t0), p.T
    chen = chen_defect(p, s, u, t)
    rep.check("chen", chen <= tol, chen, tol)
    r = p.reversed(p.T)
    both = DrivingPath(np.concatenate([p.times, p.T + r.times[1:]]), np.vstack([p.values, r.values[1:]]))
    S = level2_signature(both, both.t0, both.T)
    rev = float(np.abs(S).max())
    inc = float(np.abs(both(both.T) - both(both.t0)).max())
    rep.check("reversal_cancellation", max(rev, inc) <= tol, max(rev, inc), tol)
    rep.digest("signature", level2_signature(p, s, t))
    return rep


def indicator_ws1_exact(a: float, b: float, s: float) -> float:
    """Closed-form [1_(a,b)]_{W^{s,1}(0,1)}, the double integral over (0,1)^2."""
    L = b - a

    def J(r):
        return r ** (1 - s)

    # 2 int_a^b int_{(0,1)\(a,b)} |x-y|^(-1-s) dx dy
    #   = (2/s) int_a^b [(y-a)^(-s) - y^(-s) + (b-y)^(-s) - (1-y)^(-s)] dy
    val = (2 * J(L) - (J(b) - J(a)) - (J(1 - a) - J(1 - b))) / (1 - s)
    return 2.0 * val / s


def exp_regularity(m: float = 0.5, s: float = 0.5, points=(64, 128, 256), ws1_rel: float = 0.02,
                   growth: float = 10.0, dt_rel: float = 0.1, T: float = 0.001, eta: float = 0.01,
                   gamma: float = -1.0) -> Report:
    """BV in xi of constants, W^{s,1} of an indicator, and the gamma-moment of the defect measures."""
    rep = Report("regularity", {"m": m, "s": s, "points": list(points), "T": T, "eta": eta, "gamma": gamma},
                 {"ws1_rel": ws1_rel, "growth": growth, "dt_rel": dt_rel})
    # BV of constant columns
    errs = []
    for c in (0.0, 0.75, -1.25, 2.0):
        g = TorusGrid(1, 16)
        vg = VelocityGrid(-2.5, 2.5, 20)
        kg = kinetic_function(ScalarField(g, np.full(16, c)), vg)
        want = (2.0 if c != 0 else 0.0) + abs(c)
        errs.append(float(np.abs(bv_xi(kg) - want).max()))
    rep.check("bv_constants_exact", max(errs) == 0.0, max(errs), 0.0)
    # W^{s,1} of an indicator on (0, 1)
    n = 512
    f = np.zeros(n)
    f[n // 4: n // 2] = 1.0
    est = ws1_seminorm(f, 1.0 / n, s, 1.0, periodic=False)
    ex = indicator_ws1_exact(0.25, 0.5, s)
    rel = abs(est - ex) / ex
    rep.check("indicator_ws1", rel <= ws1_rel, rel, ws1_rel)
    # singular moments
    coeffs = make_family("separable_sine")
    path = DrivingPath.constant(1, T)
    base = SolverConfig(m=m, eta=eta, T=T, kappa=0.0, M=4.0)

    def moment(spec, n, safety):
        g = TorusGrid(1, n)
        u = cfgmod.build_data(spec, g)
        snaps = tuple(np.linspace(0, T, 9)[1:-1])
        tr = solve(u, path, base.with_(grid=g, cfl_safety=safety, snapshots=snaps), coeffs)
        p, q = defect_measures(tr)
        return singular_moment([p, q], gamma)

    pos = {"kind": "sine", "mean": 1.0, "amp": 0.5}
    signed = {"kind": "triangle", "mean": 0.0, "amp": 1.0}
    n0 = points[0]
    a1, c1 = moment(pos, n0, 0.45)
    a2, c2 = moment(pos, n0, 0.225)
    drel = abs(a1 - a2) / abs(a1)
    rep.check("moment_finite_nonnegative", bool(np.isfinite(a1) and c1 == 0), a1, None)
    rep.check("moment_dt_stable", drel <= dt_rel, drel, dt_rel)
    vals = [moment(signed, n, 0.45) for n in points]
    rep.table("signed_moment", ["points", "moment", "clipped"], [(n, v, c) for n, (v, c) in zip(points, vals)])
    g_ratio = vals[-1][0] / vals[0][0]
    rep.info["positive_moment_by_points"] = [moment(pos, n, 0.45)[0] for n in points]
    rep.check("signed_moment_growth", g_ratio >= growth, g_ratio, growth)
    rep.digest("moments", np.array([a1, a2] + [v for v, _ in vals]))
    return rep


# ---------------------------------------------------------------- campaigns

CONTRACTION_PAIRS = [
    [{"kind": "sine", "mean": 1.0, "amp": 0.5}, {"kind": "cosine", "mean": 1.0, "amp": 0.5}],
    [{"kind": "bump", "mean": 0.5, "amp": 1.0, "center": 0.3, "width": 0.1},
     {"kind": "bump", "mean": 0.5, "amp": 1.0, "center": 0.6, "width": 0.15}],
    [{"kind": "sine", "mean": 1.8, "amp": 0.3}, {"kind": "cosine", "mean": 1.0, "amp": 0.5, "freq": 2}],
]


def _solver_and_inputs(cfg):
    return cfgmod.build_solver_config(cfg), cfgmod.build_coefficients(cfg)


def _contraction_task(args):
    cfg, i, m, n_base, ex, tol = args
    cfgmod_cfg = dict(cfg, grid=dict(cfg["grid"], points=n_base), m=m)
    scfg, coeffs = _solver_and_inputs(cfgmod_cfg)
    path = cfgmod.build_path(cfg, counter=(1, i))
    levels = {}
    for lev, factor in enumerate((1, ex["refine_factor"])):
        g = TorusGrid(scfg.grid.dim, n_base * factor)
        sc = scfg.with_(grid=g)
        u0s = []
        for a, b in ex["pairs"]:
            u0s += [cfgmod.build_data(a, g).values, cfgmod.build_data(b, g).values]
        stiff = transport_stiffness(coeffs, path, sc) if ex["stiffness"] is None else ex["stiffness"]
        trs = solve_batch(u0s, path, sc, coeffs, record_defects=False)
        levels[lev] = [contraction_report(trs[2 * k], trs[2 * k + 1], path, sc, tol["c_tol"], stiff)
                       for k in range(len(ex["pairs"]))]
    return levels


def campaign_contraction(cfg: dict, threads: int = 1) -> Report:
    ex = cfgmod.experiment_params(cfg, {"pairs": CONTRACTION_PAIRS, "n_drivers": 10, "m_list": [0.5, 1.0, 2.0],
                                        "refine_factor": 2, "stiffness": None})
    tol = cfgmod.tolerances(cfg, {"c_tol": 5.0, "shrink": 1.5, "margin_floor": 1e-13})
    rep = Report("contraction", ex, tol)
    tasks = [(cfg, i, m, cfg["grid"]["points"], ex, tol) for i in range(ex["n_drivers"]) for m in ex["m_list"]]
    results = fan_out(_contraction_task, tasks, threads)
    rows = []
    for (c, i, m, *_), lv in zip(tasks, results):
        for k, (rc, rf) in enumerate(zip(lv[0], lv[1])):
            tag = f"driver{i}/m{m}/pair{k}"
            rep.merge(rc, f"{tag}/coarse")
            rep.merge(rf, f"{tag}/fine")
            mc = max(rc.info["margin"], 0.0)
            mf = max(rf.info["margin"], 0.0)
            ok = mc <= tol["margin_floor"] or mf <= mc / tol["shrink"]
            rep.check(f"{tag}/margin_shrinks", ok, [mc, mf], tol["shrink"],
                      note="coarse margin at floor" if mc <= tol["margin_floor"] else "")
            rows.append((i, m, k, rc.info["d0"], rc.info["margin"], rf.info["margin"]))
    rep.table("summary", ["driver", "m", "pair", "d0", "margin_coarse", "margin_fine"], rows)
    return rep


def campaign_mass(cfg: dict, threads: int = 1) -> Report:
    ex = cfgmod.experiment_params(cfg, {"m_list": [cfg["m"]], "kappa_list": [cfg["kappa"]], "control": True})
    tol = cfgmod.tolerances(cfg, {"mass_rel": 1e-10, "min_u": 1e-10, "runtime": 30.0})
    rep = Report("mass", ex, tol)
    path = cfgmod.build_path(cfg, counter=(2, 0))
    coeffs = cfgmod.build_coefficients(cfg)
    for m in ex["m_list"]:
        for k in ex["kappa_list"]:
            sc = cfgmod.build_solver_config(cfg, m=float(m), kappa=float(k))
            u0 = cfgmod.build_data(cfg["data"], sc.grid)
            r = exp_mass(u0, path, sc, coeffs, tol["mass_rel"], tol["min_u"], ex["control"])
            r.check("runtime", r.info["runtime"] < tol["runtime"], r.info["runtime"], tol["runtime"])
            rep.merge(r, f"m{m}/kappa{k}")
    return rep


def campaign_cocycle(cfg: dict, threads: int = 1) -> Report:
    ex = cfgmod.experiment_params(cfg, {"s_knot": 4, "t": None, "s_inside": None, "safety_list": [0.4, 0.1, 0.025]})
    tol = cfgmod.tolerances(cfg, {"aligned": 1e-12, "c_misaligned": 5.0})
    sc, coeffs = _solver_and_inputs(cfg)
    path = cfgmod.build_path(cfg, counter=(3, 0))
    u0 = cfgmod.build_data(cfg["data"], sc.grid)
    t = float(ex["t"]) if ex["t"] is not None else sc.T
    s_knot = float(path.times[int(ex["s_knot"])])
    s_in = float(ex["s_inside"]) if ex["s_inside"] is not None else 0.5 * (path.times[1] + path.times[2]) + 1.234567e-7
    rep = Report("cocycle", dict(ex, s_knot_time=s_knot, s_inside_time=s_in, t=t), tol)
    rep.merge(exp_cocycle(u0, path, 0.0, t, sc, coeffs, tol_aligned=tol["aligned"]), "s0")
    rep.merge(exp_cocycle(u0, path, s_knot, t, sc, coeffs, True, tol["aligned"]), "aligned")
    gaps = []
    for k, sf in enumerate(ex["safety_list"]):
        r = exp_cocycle(u0, path, s_in, t, sc.with_(cfl_safety=float(sf)), coeffs, False, tol["aligned"],
                        tol["c_misaligned"])
        gaps.append(r.info["gap"])
        rep.merge(r, f"misaligned{k}")
    rep.check("misaligned_decreasing_with_dt", _decreasing(gaps, 0.0), gaps, None)
    return rep


def _continuity_task(args):
    cfg, i, ex, tol = args
    sc, coeffs = _solver_and_inputs(cfg)
    base = brownian_path(derive_seed(cfg["seed"], 4, i), sc.T, 2 ** int(ex["base_level"]) + 1)
    u0 = cfgmod.build_data(cfg["data"], sc.grid)
    return exp_driver_continuity(u0, base, ex["levels"], ex["alpha"], sc, coeffs, tol["slack"])


def campaign_noise_cts(cfg: dict, threads: int = 1) -> Report:
    ex = cfgmod.experiment_params(cfg, {"levels": [3, 4, 5, 6, 7, 8], "n_samples": 5, "alpha": 0.4,
                                        "base_level": 10})
    tol = cfgmod.tolerances(cfg, {"slack": 0.1})
    rep = Report("noise-cts", ex, tol)
    res = fan_out(_continuity_task, [(cfg, i, ex, tol) for i in range(ex["n_samples"])], threads)
    for i, r in enumerate(res):
        rep.merge(r, f"sample{i}")
    return rep


def campaign_vanishing(cfg: dict, threads: int = 1) -> Report:
    ex = cfgmod.experiment_params(cfg, {"eta_list": [1e-1, 3e-2, 1e-2, 3e-3]})
    tol = cfgmod.tolerances(cfg, {"uniformity": 2.0, "slack": 0.0})
    sc, coeffs = _solver_and_inputs(cfg)
    path = cfgmod.build_path(cfg, counter=(5, 0))
    u0 = cfgmod.build_data(cfg["data"], sc.grid)
    rep = Report("vanishing-reg", ex, tol)
    rep.merge(exp_vanishing_regularization(u0, path, ex["eta_list"], sc, coeffs, tol["uniformity"], tol["slack"]),
              "sweep")
    return rep


def campaign_flow_stability(cfg: dict, threads: int = 1) -> Report:
    ex = cfgmod.experiment_params(cfg, {"alpha": 0.4, "n_pairs": 20, "levels": list(range(1, 9)), "n_points": 8,
                                        "flow_dt": 1e-3, "B": 1.7, "T": 1.0})
    tol = cfgmod.tolerances(cfg, {"factor": 2.0, "constant_b_rel": 0.01})
    coeffs = cfgmod.build_coefficients(cfg)
    base = brownian_path(derive_seed(cfg["seed"], 6, 0), float(ex["T"]), 2 ** max(ex["levels"]) + 1,
                         dims=coeffs.n)
    rep = Report("flow-stability", ex, tol)
    rep.merge(exp_flow_stability(coeffs, ex["alpha"], ex["n_pairs"], derive_seed(cfg["seed"], 6, 1), base,
                                 ex["levels"], ex["n_points"], ex["flow_dt"], tol["factor"], ex["B"],
                                 tol["constant_b_rel"]), "campaign")
    return rep


def campaign_characteristics(cfg: dict, threads: int = 1) -> Report:
    ex = cfgmod.experiment_params(cfg, {"n_samples": 1000, "flow_dt": 1e-4, "xi_range": 3.0,
                                        "control": "broken_vanishing", "trajectory_points": 4})
    tol = cfgmod.tolerances(cfg, {"inverse": 1e-8, "det": 1e-5})
    coeffs = cfgmod.build_coefficients(cfg)
    path = cfgmod.build_path(cfg, counter=(7, 0))
    if coeffs.n != path.dims:
        raise cfgmod.ConfigError("config error at path/dims: must equal coefficients/n")
    rep = Report("characteristics", ex, tol)
    rep.merge(exp_characteristics(coeffs, path, ex["n_samples"], derive_seed(cfg["seed"], 7, 1), ex["flow_dt"],
                                  ex["xi_range"], tol["inverse"], tol["det"], ex["control"]), "flow")
    return rep


def campaign_signature(cfg: dict, threads: int = 1) -> Report:
    cfgmod.experiment_params(cfg, {})
    tol = cfgmod.tolerances(cfg, {"chen": 1e-12})
    p = cfgmod.build_path(cfg, counter=(8, 0))
    rep = Report("signature", {}, tol)
    rep.merge(exp_signature(p, tol["chen"]), "signature")
    return rep


def campaign_solve(cfg: dict, threads: int = 1) -> Report:
    cfgmod.experiment_params(cfg, {})
    tol = cfgmod.tolerances(cfg, {"mass_rel": 1e-10})
    sc, coeffs = _solver_and_inputs(cfg)
    path = cfgmod.build_path(cfg, counter=(0, 0))
    u0 = cfgmod.build_data(cfg["data"], sc.grid)
    tr = solve(u0, path, sc, coeffs)
    rep = Report("solve", {"steps": tr.steps, "M": tr.M}, tol)
    vol = sc.grid.cell_volume
    mass = tr.states.reshape(len(tr.times), -1).sum(axis=1) * vol
    rep.table("snapshots", ["t", "mass", "l1", "l2sq", "min", "max"],
              [(t, m, l1(s), float(np.sum(s * s) * vol), float(s.min()), float(s.max()))
               for t, m, s in zip(tr.times, mass, tr.states)])
    rep.info["energy_ledger"] = energy_ledger(tr)
    rep.info["stable_quantity"] = stable_quantity(tr)
    rep.check("finite", bool(np.all(np.isfinite(tr.states))), None, None)
    if u0.values.min() >= 0:
        rel = float(np.max(np.abs(mass - mass[0])) / abs(mass[0])) if mass[0] else 0.0
        rep.check("mass", rel <= tol["mass_rel"], rel, tol["mass_rel"])
    rep.digest("states", tr.times, tr.states)
    rep._trajectory = tr  # picked up by the CLI for field output
    return rep


def campaign_analyze(cfg: dict, threads: int = 1) -> Report:
    ex = cfgmod.experiment_params(cfg, {"checks": ["energy", "weak_form", "regularity"],
                                        "energy_points": [128, 256, 512], "weak_form_points": [32, 64, 128],
                                        "test_center": 1.2, "test_radius": 0.7, "test_phase": 0.13,
                                        "s": 0.5, "moment_m": 0.5, "moment_points": [64, 128, 256],
                                        "moment_T": 0.001})
    tol = cfgmod.tolerances(cfg, {"energy_residual": 1e-3, "energy_factor": 2.0, "weak_form_slack": 0.2,
                                  "ws1_rel": 0.02, "growth": 10.0, "dt_rel": 0.1})
    sc, coeffs = _solver_and_inputs(cfg)
    rep = Report("analyze", ex, tol)
    if "energy" in ex["checks"]:
        path = cfgmod.build_path(cfg, counter=(9, 0))
        rep.merge(exp_energy_ledger(cfg["data"], path, sc, coeffs, ex["energy_points"], tol["energy_residual"],
                                    tol["energy_factor"]), "energy")
    if "weak_form" in ex["checks"]:
        path = cfgmod.build_path(cfg, counter=(9, 1))
        rho = TestFunction.bump(ex["test_center"], ex["test_radius"], phase=ex["test_phase"])
        rep.merge(exp_weak_form(cfg["data"], path, sc, coeffs, rho, ex["weak_form_points"], tol["weak_form_slack"]),
                  "weak_form")
    if "regularity" in ex["checks"]:
        rep.merge(exp_regularity(ex["moment_m"], ex["s"], ex["moment_points"], tol["ws1_rel"], tol["growth"],
                                 tol["dt_rel"], ex["moment_T"], sc.eta), "regularity")
    return rep


CAMPAIGNS = {
    "solve": campaign_solve,
    "characteristics": campaign_characteristics,
    "signature": campaign_signature,
    "contraction": campaign_contraction,
    "mass": campaign_mass,
    "cocycle": campaign_cocycle,
    "noise-cts": campaign_noise_cts,
    "vanishing-reg": campaign_vanishing,
    "flow-stability": campaign_flow_stability,
    "analyze": campaign_analyze,
}


def run(name: str, cfg: dict, threads: int = 1) -> Report:
    if name not in CAMPAIGNS:
        raise KeyError(f"unknown experiment {name!r}")
    t0 = time.perf_counter()
    rep = CAMPAIGNS[name](cfg, threads)
    rep.wall_clock = time.perf_counter() - t0
    return rep


def manifest(name: str, cfg: dict, rep: Report) -> dict:
    return {"experiment": name, "version": __version__, "backend": backend_name(), "config": cfg,
            "seeds": {"master": cfg["seed"]},
            "grid": {"dim": cfg["grid"]["dim"], "points": cfg["grid"]["points"]},
            "driver": cfg["path"], "tolerances": rep.tolerances, "digests": rep.digests,
            "wall_clock": rep.wall_clock,
            "assertions": {a["id"]: a["passed"] for a in rep.assertions}, "passed": rep.passed}


def write_run(out_dir, name: str, cfg: dict, rep: Report) -> dict:
    """Manifest, report, per-table CSV and .dat series, and an index entry, all under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = manifest(name, cfg, rep)
    (out / "manifest.json").write_text(json.dumps(_jsonable(man), indent=2, sort_keys=True))
    (out / "report.json").write_text(json.dumps(_jsonable(rep.to_dict()), indent=2, sort_keys=True))
    dats = []
    for tname, tab in rep.tables.items():
        stem = tname.replace("/", "__")
        io.write_rows_csv(out / f"{stem}.csv", tab["header"], tab["rows"])
        rows = tab["rows"]
        if rows and len(tab["header"]) >= 2 and all(isinstance(r[0], (int, float)) and isinstance(r[1], (int, float))
                                                    for r in rows):
            io.write_dat(out / f"{stem}.dat", [r[0] for r in rows], [r[1] for r in rows],
                         f"{tab['header'][0]} {tab['header'][1]}")
            dats.append(f"{stem}.dat")
    (out / "plot.py").write_text(_plot_stub(dats))
    index = out / "index.json"
    entries = json.loads(index.read_text()) if index.exists() else []
    entries.append({"experiment": name, "manifest": "manifest.json", "digests": rep.digests, "passed": rep.passed})
    index.write_text(json.dumps(entries, indent=2))
    return man


def _plot_stub(dats) -> str:
    lines = ['"""Plot the .dat series written next to this file (requires matplotlib)."""',
             "import numpy as np", "import matplotlib.pyplot as plt", "", f"FILES = {dats!r}", "",
             "for name in FILES:",
             "    data = np.loadtxt(name, ndmin=2)",
             "    plt.figure()",
             "    plt.plot(data[:, 0], data[:, 1], marker='o')",
             "    plt.title(name)",
             "    plt.savefig(name.replace('.dat', '.png'))", ""]
    return "\n".join(lines)


def replay(manifest_path, threads: int = 1) -> tuple[bool, dict]:
    """Re-run a manifest and compare digests. Returns (all match, {name: (old, new)} mismatches)."""
    man = json.loads(Path(manifest_path).read_text())
    cfg = cfgmod.parse_config(man["config"])
    rep = run(man["experiment"], cfg, threads)
    bad = {k: (v, rep.digests.get(k)) for k, v in man["digests"].items() if rep.digests.get(k) != v}
    extra = set(rep.digests) - set(man["digests"])
    for k in extra:
        bad[k] = (None, rep.digests[k])
    return not bad, bad


def default_threads() -> int:
    return int(os.environ.get("ROUGHPME_THREADS", "1"))
