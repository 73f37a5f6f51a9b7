"""Explicit finite-volume solver for the regularised equation

    du/dt = Lap phi^{M,delta}(u) + eta Lap u + kappa div(A(x, u) zdot)

on the unit torus. Forward Euler in time; diffusion through flux differences
of phi^{M,delta}(u) + eta u; transport through a Lax-Friedrichs flux whose
speed sup_xi |b| * |zdot| is independent of the state. Under the CFL bound of
:func:`cfl_dt` the update is monotone, conservative and therefore
L1-contractive. Steps never straddle a path knot, so zdot is the exact slope.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import kernels
from .coefficients import FluxCoefficients
from .paths import DrivingPath
from .torus import ScalarField, TorusGrid, signed_power

DT_FLOOR = 1e-12
N_QUAD = 129


class SolverError(RuntimeError):
    pass


# ------------------------------------------------------------ nonlinearity

@lru_cache(maxsize=32)
def mollifier_rule(delta: float):
    """Simpson rule on [-delta, delta] against the bump exp(-1/(1-y^2)).

    Returns (offsets, weights, derivative weights, second moment). Weights sum
    to one exactly; derivative weights are scaled so that affine functions
    are differentiated exactly.
    """
    y = np.linspace(-1.0, 1.0, N_QUAD)
    simp = np.ones(N_QUAD)
    simp[1:-1:2] = 4.0
    simp[2:-1:2] = 2.0
    inner = np.abs(y) < 1.0
    rho = np.zeros(N_QUAD)
    drho = np.zeros(N_QUAD)
    yi = y[inner]
    rho[inner] = np.exp(-1.0 / (1.0 - yi**2))
    drho[inner] = rho[inner] * (-2.0 * yi / (1.0 - yi**2) ** 2)
    w = simp * rho
    w /= w.sum()
    w = 0.5 * (w + w[::-1])
    offs = delta * y
    offs = 0.5 * (offs - offs[::-1])
    # phi^{M,delta}' = phi^M * (rho_delta)'; rho_delta'(y) = rho'(y/delta)/delta^2
    dw = simp * drho
    dw = 0.5 * (dw - dw[::-1])
    dw /= -np.sum(dw * offs)
    mu2 = float(np.sum(w * offs**2))
    for arr in (offs, w, dw):
        arr.flags.writeable = False
    return offs, w, dw, mu2


def phi_M(xi, M: float, m: float):
    """Truncated signed power: xi^[m] for |xi| <= M, xi M^(m-1) beyond."""
    if M < 1:
        raise ValueError("truncation level M must be >= 1")
    xi = np.asarray(xi, dtype=np.float64)
    a = np.abs(xi)
    return np.where(a <= M, signed_power(xi, m), xi * M ** (m - 1.0))


def phi_M_delta(xi, M: float, delta: float, m: float, derivative: bool = False):
    """phi^M convolved with the mollifier of half-width delta (Simpson, 129 nodes)."""
    if not (delta > 0):
        raise ValueError("delta must be positive")
    if M < 1:
        raise ValueError("truncation level M must be >= 1")
    offs, w, dw, mu2 = mollifier_rule(float(delta))
    phi, dphi = kernels.phi_apply(np.asarray(xi, dtype=np.float64), float(M), float(m), offs, w, dw, mu2)
    if np.ndim(xi) == 0:
        phi, dphi = float(phi), float(dphi)
    return (phi, dphi) if derivative else phi


def psi_M(xi, M: float, m: float):
    """Antiderivative of phi^M with psi^M(0) = 0 (C^1 across |xi| = M)."""
    if M < 1:
        raise ValueError("truncation level M must be >= 1")
    xi = np.asarray(xi, dtype=np.float64)
    a = np.abs(xi)
    inside = a ** (m + 1) / (m + 1)
    outside = 0.5 * xi**2 * M ** (m - 1) + M ** (m + 1) / (m + 1) - 0.5 * M ** (m + 1)
    return np.where(a <= M, inside, outside)


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class SolverConfig:
    m: float = 2.0
    eta: float = 0.01
    M: float | None = None  # None: 8 max|u0|, at least 1
    delta: float = 1e-3
    grid: TorusGrid = field(default_factory=lambda: TorusGrid(1, 128))
    dt_policy: str = "cfl"
    cfl_safety: float = 0.45
    dt: float | None = None  # used when dt_policy == "fixed"
    T: float = 0.05
    kappa: float = 0.5
    snapshots: tuple = ()  # extra snapshot times; t_start and T are always kept
    land_on_snapshots: bool = True

    def __post_init__(self):
        if not (self.m > 0):
            raise ValueError("diffusion exponent must be positive")
        if not (0 <= self.eta < 1):
            raise ValueError("viscosity eta must lie in [0, 1)")
        if self.M is not None and self.M < 1:
            raise ValueError("truncation level M must be >= 1")
        if not (0 < self.delta <= 1):
            raise ValueError("mollification width delta must lie in (0, 1]")
        if self.dt_policy not in ("cfl", "fixed"):
            raise ValueError("dt_policy must be 'cfl' or 'fixed'")
        if not (0 < self.cfl_safety < 1):
            raise ValueError("CFL safety must lie in (0, 1)")
        if self.dt_policy == "fixed" and not (self.dt and self.dt > 0):
            raise ValueError("fixed dt policy needs dt > 0")
        if not (self.T > 0):
            raise ValueError("horizon T must be positive")

    def resolve_M(self, u0max: float) -> float:
        return float(self.M) if self.M is not None else max(1.0, 8.0 * float(u0max))

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = {"dim": self.grid.dim, "points": self.grid.points_per_dim}
        d["snapshots"] = list(self.snapshots)
        return d


# -------------------------------------------------------------- trajectory

@dataclass
class Trajectory:
    grid: TorusGrid
    times: np.ndarray  # snapshot times
    states: np.ndarray  # (S,) + grid.shape
    diag: dict  # per-step arrays
    M: float
    config: SolverConfig
    t_start: float = 0.0

    @property
    def steps(self) -> int:
        return int(self.diag["dt"].size)

    def field(self, k: int) -> ScalarField:
        return ScalarField(self.grid, self.states[k])

    @property
    def initial(self) -> ScalarField:
        return self.field(0)

    @property
    def final(self) -> ScalarField:
        return self.field(-1)

    def at(self, t: float) -> ScalarField:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-12:
            raise KeyError(f"no snapshot at t = {t}")
        return self.field(k)


# ------------------------------------------------------------------ solver

class _Operator:
    """Precomputed geometry for one (grid, coefficients, config) triple."""

    def __init__(self, grid: TorusGrid, coeffs: FluxCoefficients, config: SolverConfig, M: float):
        if coeffs.d != grid.dim:
            raise ValueError(f"coefficients are for d = {coeffs.d}, grid has d = {grid.dim}")
        self.grid, self.coeffs, self.cfg, self.M = grid, coeffs, config, M
        self.offs, self.w, self.dw, self.mu2 = mollifier_rule(float(config.delta))
        self.faces = [grid.face_coords(ax) for ax in range(grid.dim)]
        # sup over xi of |b_{axis, j}| at every face, shape grid.shape + (n,)
        self.bsup = [coeffs.b_sup(self.faces[ax])[..., ax, :] for ax in range(grid.dim)]
        self.bsup_max = max(float(b.max()) for b in self.bsup) if grid.dim else 0.0

    def phi(self, u):
        return kernels.phi_apply(u, self.M, self.cfg.m, self.offs, self.w, self.dw, self.mu2)

    def phi_slope_bound(self, u, dphi) -> float:
        """Upper bound of phi' over the convex hull of the states at every node."""
        s = float(dphi.max())
        lo, hi = float(u.min()), float(u.max())
        m = self.cfg.m
        if m < 1 and lo <= 0.0 <= hi:
            s = max(s, float(self.phi(np.zeros(1))[1][0]))
        if max(abs(lo), abs(hi)) + self.cfg.delta > self.M:
            s = max(s, max(m, 1.0) * self.M ** (m - 1.0))
        return s

    def transport_speed(self, zd):
        k = self.cfg.kappa
        return [k * (b @ np.abs(zd)) for b in self.bsup]

    def cfl(self, u, dphi, zd) -> float:
        g = self.grid
        dx = g.spacing
        s = self.phi_slope_bound(u, dphi)
        diff = self.cfg.cfl_safety * dx * dx / (2 * g.dim * (s + self.cfg.eta)) if s + self.cfg.eta > 0 else np.inf
        amax = self.cfg.kappa * self.bsup_max * float(np.abs(zd).sum())
        trans = self.cfg.cfl_safety * dx / (2 * g.dim * amax) if amax > 0 else np.inf
        return min(diff, trans)

    def rhs(self, u, phi, zd):
        """u has shape (B,) + grid.shape. Returns rhs, dissipation, work."""
        cfg = self.cfg
        F = phi + cfg.eta * u
        k = cfg.kappa
        alphas = self.transport_speed(zd)
        if self.grid.dim == 1:
            uR = np.roll(u, -1, axis=1)
            xf = self.faces[0]
            if k == 0.0:
                fL = fR = np.zeros_like(u)
            else:
                fL = k * (self.coeffs.a(np.broadcast_to(xf, u.shape + (1,)), u)[..., 0, :] @ zd)
                fR = k * (self.coeffs.a(np.broadcast_to(xf, u.shape + (1,)), uR)[..., 0, :] @ zd)
            al = np.broadcast_to(alphas[0], u.shape)
            return kernels.rhs_1d(u, F, fL, fR, np.ascontiguousarray(al), self.grid.spacing)
        fs = []
        for ax in range(2):
            uR = np.roll(u, -1, axis=ax + 1)
            xf = np.broadcast_to(self.faces[ax], u.shape + (2,))
            if k == 0.0:
                fL = fR = np.zeros_like(u)
            else:
                fL = k * (self.coeffs.a(xf, u)[..., ax, :] @ zd)
                fR = k * (self.coeffs.a(xf, uR)[..., ax, :] @ zd)
            fs += [fL, fR, np.ascontiguousarray(np.broadcast_to(alphas[ax], u.shape))]
        return kernels.rhs_2d(u, F, *fs, self.grid.spacing)


def _defect_totals(u, m, eta, grid):
    """Per-member totals of eta |grad u|^2 and 4m/(m+1)^2 |grad u^[(m+1)/2]|^2 (centred differences)."""
    h = grid.spacing
    vol = grid.cell_volume
    w = signed_power(u, 0.5 * (m + 1.0))
    p = np.zeros(u.shape[0])
    q = np.zeros(u.shape[0])
    axes = tuple(range(1, u.ndim))
    for ax in axes:
        gu = (np.roll(u, -1, axis=ax) - np.roll(u, 1, axis=ax)) / (2 * h)
        gw = (np.roll(w, -1, axis=ax) - np.roll(w, 1, axis=ax)) / (2 * h)
        p += eta * np.sum(gu * gu, axis=axes) * vol
        q += 4 * m / (m + 1) ** 2 * np.sum(gw * gw, axis=axes) * vol
    return p, q


def cfl_dt(u, config: SolverConfig, zdot_max, coeffs: FluxCoefficients, M: float | None = None) -> float:
    """CFL step: safety * min(dx^2 / (2d (max phi' + eta)), dx / (2d kappa sup|b| |zdot|))."""
    vals = u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=np.float64)
    M = config.resolve_M(np.abs(vals).max()) if M is None else M
    op = _Operator(config.grid, coeffs, config, M)
    zd = np.atleast_1d(np.asarray(zdot_max, dtype=np.float64))
    if zd.size != coeffs.n:
        zd = np.full(coeffs.n, float(np.max(np.abs(zd))))
    _, dphi = op.phi(vals)
    dt = op.cfl(vals, dphi, zd)
    if dt < DT_FLOOR:
        raise SolverError(f"CFL step {dt:.3e} below floor {DT_FLOOR:g}")
    return dt


def step(u, t: float, dt: float, path: DrivingPath, config: SolverConfig, coeffs: FluxCoefficients,
         M: float | None = None):
    """One forward-Euler step of length dt from t. ``dt`` must not cross a knot."""
    single = isinstance(u, ScalarField)
    vals = u.values if single else np.asarray(u, dtype=np.float64)
    M = config.resolve_M(np.abs(vals).max()) if M is None else M
    op = _Operator(config.grid, coeffs, config, M)
    U = vals[None] if single or vals.shape == config.grid.shape else vals
    zd = path.slope_at(t + 0.5 * dt)
    phi, _ = op.phi(U)
    r, _, _ = op.rhs(U, phi, zd)
    out = U + dt * r
    if not np.all(np.isfinite(out)):
        raise SolverError(f"non-finite state after step at t = {t:.6g}, dt = {dt:.3e}")
    if single:
        return ScalarField(config.grid, out[0])
    return out[0] if vals.shape == config.grid.shape else out


def solve_batch(u0s, path: DrivingPath, config: SolverConfig, coeffs: FluxCoefficients,
                t_start: float = 0.0, record_defects: bool = True, M: float | None = None) -> list[Trajectory]:
    """Solve several initial data in lockstep with a common step sequence.

    All members see the same dt and the same zdot, so a pair solve applies
    the identical discrete operator to both states.
    """
    grid = config.grid
    U = np.stack([np.asarray(u.values if isinstance(u, ScalarField) else u, dtype=np.float64).reshape(grid.shape)
                  for u in u0s])
    T = float(config.T)
    if not (t_start < T):
        raise ValueError("t_start must precede the horizon T")
    if t_start < path.t0 - 1e-12 or T > path.T + 1e-12:
        raise ValueError(f"path domain [{path.t0}, {path.T}] does not cover [{t_start}, {T}]")
    M = config.resolve_M(np.abs(U).max()) if M is None else float(M)
    op = _Operator(grid, coeffs, config, M)
    snaps = np.array(sorted({float(s) for s in config.snapshots if t_start < s < T}))
    if config.snapshots and np.any((np.asarray(config.snapshots) < t_start) | (np.asarray(config.snapshots) > T)):
        raise ValueError("snapshot times must lie in [t_start, T]")
    knots = path.times[(path.times > t_start) & (path.times < T)]
    stops = np.unique(np.concatenate([knots, snaps if config.land_on_snapshots else [], [T]]))
    rec_t = [t_start]
    rec_u = [U.copy()]
    diag = {k: [] for k in ("t", "dt", "mass", "l2sq", "diss", "work", "p", "q")}
    vol = grid.cell_volume
    axes = tuple(range(1, U.ndim))
    t = float(t_start)
    si = 0  # next stop index
    pending = list(snaps) if not config.land_on_snapshots else []
    while t < T:
        while stops[si] <= t:
            si += 1
        target = float(stops[si])
        zd = path.slope_at(0.5 * (t + target))
        phi, dphi = op.phi(U)
        if config.dt_policy == "fixed":
            dt_c = float(config.dt)
        else:
            dt_c = op.cfl(U, dphi, zd)
            if dt_c < DT_FLOOR:
                raise SolverError(f"CFL step {dt_c:.3e} below floor at t = {t:.6g} (max|u| = {np.abs(U).max():.3e})")
        if t + dt_c >= target:
            dt = target - t
            t_new = target
        else:
            dt = dt_c
            t_new = t + dt
        r, diss, work = op.rhs(U, phi, zd)
        diag["t"].append(t)
        diag["dt"].append(dt)
        diag["mass"].append(np.sum(U, axis=axes) * vol)
        diag["l2sq"].append(np.sum(U * U, axis=axes) * vol)
        diag["diss"].append(diss)
        diag["work"].append(work)
        if record_defects:
            p, q = _defect_totals(U, config.m, config.eta, grid)
            diag["p"].append(p)
            diag["q"].append(q)
        U_new = U + dt * r
        if not np.all(np.isfinite(U_new)):
            raise SolverError(f"non-finite state at t = {t:.6g} (dt = {dt:.3e}, CFL step {dt_c:.3e})")
        while pending and pending[0] <= t_new:
            s = pending.pop(0)
            if s == t_new:
                rec_t.append(s)
                rec_u.append(U_new.copy())
            else:
                th = (s - t) / dt
                rec_t.append(s)
                rec_u.append((1 - th) * U + th * U_new)
        U = U_new
        t = t_new
        if config.land_on_snapshots and t in snaps:
            rec_t.append(t)
            rec_u.append(U.copy())
    if rec_t[-1] != T:
        rec_t.append(T)
        rec_u.append(U.copy())
    times = np.array(rec_t)
    states = np.stack(rec_u, axis=1)  # (B, S, ...)
    out = []
    for b in range(U.shape[0]):
        d = {"t": np.array(diag["t"]), "dt": np.array(diag["dt"])}
        for key in ("mass", "l2sq", "diss", "work", "p", "q"):
            d[key] = np.array([v[b] for v in diag[key]]) if diag[key] else np.zeros(0)
        out.append(Trajectory(grid, times, states[b], d, M, config, float(t_start)))
    return out


def solve(u0, path: DrivingPath, config: SolverConfig, coeffs: FluxCoefficients, t_start: float = 0.0,
          record_defects: bool = True, M: float | None = None) -> Trajectory:
    """Solve from ``t_start`` to ``config.T``; snapshots at t_start, config.snapshots and T."""
    return solve_batch([u0], path, config, coeffs, t_start, record_defects, M)[0]


def energy_ledger(traj: Trajectory) -> float:
    """Normalised residual of  1/2|u_T|^2 - 1/2|u_0|^2 + int D dt - int W dt.

    D is the discrete dissipation sum (F_R - F_L)(u_R - u_L)/dx^2 and W the
    transport work <u, div G>, both recorded per step. The residual of the
    forward-Euler ledger is sum dt^2 |rhs|^2 / 2, i.e. first order in dt.
    """
    e0 = 0.5 * float(np.sum(traj.states[0] ** 2) * traj.grid.cell_volume)
    eT = 0.5 * float(np.sum(traj.states[-1] ** 2) * traj.grid.cell_volume)
    if e0 == 0.0:
        return 0.0 if eT == 0.0 else float("inf")
    dt = traj.diag["dt"]
    bal = eT - e0 + float(np.sum(dt * traj.diag["diss"])) - float(np.sum(dt * traj.diag["work"]))
    return abs(bal) / e0


def stable_quantity(traj: Trajectory) -> float:
    """sup_t |u(t)|_2^2 plus the total mass of p + q (left Riemann sum over steps)."""
    l2 = np.concatenate([traj.diag["l2sq"], [float(np.sum(traj.states[-1] ** 2) * traj.grid.cell_volume)]])
    dt = traj.diag["dt"]
    return float(l2.max() + np.sum(dt * (traj.diag["p"] + traj.diag["q"])))
