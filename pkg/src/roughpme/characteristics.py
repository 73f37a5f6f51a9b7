"""Forward and backward characteristics of the kinetic transport.

    dX/dt = -b(X, Xi) zdot,     dXi/dt = c(X, Xi) . zdot

driven by piecewise-linear paths, so zdot is constant between knots. The
integrator is classical RK4 with equal sub-steps inside each knot interval;
it never steps across a knot. All routines are vectorised over points.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .coefficients import FluxCoefficients
from .paths import DrivingPath, RoughLift, metric_sample_times, rough_metric


class FlowError(RuntimeError):
    pass


@dataclass
class FlowPoint:
    """A batch of phase-space points. ``x`` is wrapped into [0,1)^d."""

    x: np.ndarray
    xi: np.ndarray
    x_unwrapped: np.ndarray | None = None

    @classmethod
    def make(cls, x, xi, d: int | None = None) -> "FlowPoint":
        xi = np.atleast_1d(np.asarray(xi, dtype=np.float64))
        x = np.asarray(x, dtype=np.float64)
        if d is None:
            d = 1 if x.ndim <= 1 else x.shape[-1]
        x = x.reshape(xi.shape + (d,)) if x.size == xi.size * d else x
        return cls(np.mod(x, 1.0), xi, x.copy())

    @property
    def winding(self) -> np.ndarray:
        u = self.x if self.x_unwrapped is None else self.x_unwrapped
        return np.floor(u).astype(np.int64)


def _as_arrays(p, d):
    if isinstance(p, FlowPoint):
        x = p.x if p.x_unwrapped is None else p.x_unwrapped
        return np.array(x, dtype=np.float64), np.array(p.xi, dtype=np.float64)
    x, xi = p
    xi = np.atleast_1d(np.asarray(xi, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    if x.shape != xi.shape + (d,):
        x = x.reshape(xi.shape + (d,))
    return x.copy(), xi.copy()


def _velocity(coeffs, X, Xi, zd):
    b = coeffs.b(X, Xi)  # (P, d, n)
    c = coeffs.c(X, Xi)  # (P, n)
    return -(b @ zd), c @ zd


def _tangent(coeffs, X, Xi, zd):
    """Matrix of the variational system, shape (P, d+1, d+1)."""
    P = Xi.shape[0]
    d = coeffs.d
    M = np.empty((P, d + 1, d + 1))
    M[:, :d, :d] = -np.einsum("pijk,j->pik", coeffs.db_dx(X, Xi), zd)
    M[:, :d, d] = -(coeffs.db_dxi(X, Xi) @ zd)
    M[:, d, :d] = np.einsum("pjk,j->pk", coeffs.dc_dx(X, Xi), zd)
    M[:, d, d] = coeffs.dc_dxi(X, Xi) @ zd
    return M


def _rk4_interval(coeffs, X, Xi, J, zd, span, nsub):
    h = span / nsub
    for _ in range(nsub):
        if J is None:
            k1x, k1k = _velocity(coeffs, X, Xi, zd)
            k2x, k2k = _velocity(coeffs, X + 0.5 * h * k1x, Xi + 0.5 * h * k1k, zd)
            k3x, k3k = _velocity(coeffs, X + 0.5 * h * k2x, Xi + 0.5 * h * k2k, zd)
            k4x, k4k = _velocity(coeffs, X + h * k3x, Xi + h * k3k, zd)
        else:
            k1x, k1k = _velocity(coeffs, X, Xi, zd)
            K1 = _tangent(coeffs, X, Xi, zd) @ J
            X2, Xi2 = X + 0.5 * h * k1x, Xi + 0.5 * h * k1k
            k2x, k2k = _velocity(coeffs, X2, Xi2, zd)
            K2 = _tangent(coeffs, X2, Xi2, zd) @ (J + 0.5 * h * K1)
            X3, Xi3 = X + 0.5 * h * k2x, Xi + 0.5 * h * k2k
            k3x, k3k = _velocity(coeffs, X3, Xi3, zd)
            K3 = _tangent(coeffs, X3, Xi3, zd) @ (J + 0.5 * h * K2)
            X4, Xi4 = X + h * k3x, Xi + h * k3k
            k4x, k4k = _velocity(coeffs, X4, Xi4, zd)
            K4 = _tangent(coeffs, X4, Xi4, zd) @ (J + h * K3)
            J = J + (h / 6.0) * (K1 + 2 * K2 + 2 * K3 + K4)
        X = X + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        Xi = Xi + (h / 6.0) * (k1k + 2 * k2k + 2 * k3k + k4k)
    return X, Xi, J


def integrate(x, xi, path: DrivingPath, coeffs: FluxCoefficients, t0: float, t1: float,
              dt: float, out_times=None, jacobian: bool = False):
    """Integrate the characteristic ODE from t0 to t1 >= t0.

    Returns ``(X, Xi, J)`` at t1, or, when ``out_times`` is given, arrays
    stacked over those times (shape ``(len(out_times), P, ...)``). ``x`` is
    not wrapped.
    """
    if not (dt > 0) or dt < 1e-14:
        raise FlowError(f"step size underflow: dt = {dt!r}")
    if t1 < t0:
        raise ValueError("integrate needs t1 >= t0; use flow_backward for reversed time")
    if t0 < path.t0 - 1e-12 or t1 > path.T + 1e-12:
        raise ValueError(f"[{t0}, {t1}] exceeds the path domain [{path.t0}, {path.T}]")
    X = np.array(x, dtype=np.float64)
    Xi = np.array(xi, dtype=np.float64)
    P = Xi.shape[0]
    J = np.broadcast_to(np.eye(coeffs.d + 1), (P, coeffs.d + 1, coeffs.d + 1)).copy() if jacobian else None
    want = None if out_times is None else np.asarray(out_times, dtype=np.float64)
    if want is not None and (np.any(want < t0) or np.any(want > t1)):
        raise ValueError("out_times must lie in [t0, t1]")
    knots = path.times[(path.times > t0) & (path.times < t1)]
    extra = want[(want > t0) & (want < t1)] if want is not None else np.empty(0)
    breaks = np.unique(np.concatenate([[t0], knots, extra, [t1]]))
    recX, recXi, recJ = {}, {}, {}
    want_set = set() if want is None else set(want.tolist())

    def record(t):
        recX[t] = X.copy()
        recXi[t] = Xi.copy()
        if jacobian:
            recJ[t] = J.copy()

    if t0 in want_set or want is None:
        record(breaks[0])
    for a, b in zip(breaks[:-1], breaks[1:]):
        span = b - a
        if span <= 0:
            continue
        zd = path.slope_at(0.5 * (a + b))
        nsub = max(1, int(np.ceil(span / dt - 1e-9)))
        X, Xi, J = _rk4_interval(coeffs, X, Xi, J, zd, span, nsub)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Xi))):
            raise FlowError(f"non-finite characteristic state at t = {b:.6g}")
        if want is not None and b in want_set:
            record(b)
    if want is None:
        return X, Xi, J
    outX = np.stack([recX[t] for t in want])
    outXi = np.stack([recXi[t] for t in want])
    outJ = np.stack([recJ[t] for t in want]) if jacobian else None
    return outX, outXi, outJ


def flow_forward(p, t0: float, t1: float, path: DrivingPath, coeffs: FluxCoefficients, dt: float) -> FlowPoint:
    x, xi = _as_arrays(p, coeffs.d)
    X, Xi, _ = integrate(x, xi, path, coeffs, t0, t1, dt)
    return FlowPoint(np.mod(X, 1.0), Xi, X)


def flow_backward(p, t0: float, t: float, path: DrivingPath, coeffs: FluxCoefficients, dt: float) -> FlowPoint:
    """Inverse characteristic: the state at ``t0`` of the trajectory through ``p`` at time ``t``.

    Integrates the same ODE driven by the reversed path r -> z(t - r) for
    r in [0, t - t0].
    """
    if t < t0:
        raise ValueError("flow_backward needs t >= t0")
    x, xi = _as_arrays(p, coeffs.d)
    if t == t0:
        return FlowPoint(np.mod(x, 1.0), xi, x)
    rev = path.reversed(t, t0)
    X, Xi, _ = integrate(x, xi, rev, coeffs, 0.0, rev.T, dt)
    return FlowPoint(np.mod(X, 1.0), Xi, X)


def flow_jacobian(p, t0: float, t1: float, path: DrivingPath, coeffs: FluxCoefficients, dt: float,
                  backward: bool = False) -> np.ndarray:
    """d(X, Xi)/d(x, xi) by the variational equations, shape (P, d+1, d+1)."""
    x, xi = _as_arrays(p, coeffs.d)
    if t1 == t0:
        return np.broadcast_to(np.eye(coeffs.d + 1), (xi.size, coeffs.d + 1, coeffs.d + 1)).copy()
    if backward:
        rev = path.reversed(t1, t0)
        _, _, J = integrate(x, xi, rev, coeffs, 0.0, rev.T, dt, jacobian=True)
    else:
        _, _, J = integrate(x, xi, path, coeffs, t0, t1, dt, jacobian=True)
    return J


class FlowMap:
    """Callable (x, xi) -> (X, Xi) for a fixed time window and direction.

    ``direction="backward"`` maps a point at ``t1`` to its preimage at ``t0``.
    """

    def __init__(self, path: DrivingPath, coeffs: FluxCoefficients, t0: float, t1: float,
                 dt: float = 1e-3, direction: str = "forward"):
        if direction not in ("forward", "backward"):
            raise ValueError("direction must be 'forward' or 'backward'")
        self.path, self.coeffs, self.t0, self.t1 = path, coeffs, float(t0), float(t1)
        self.dt, self.direction = float(dt), direction

    @classmethod
    def identity(cls, d: int = 1) -> "FlowMap":
        from .coefficients import ConstantB

        return cls(DrivingPath.constant(1), ConstantB(np.zeros((d, 1))), 0.0, 0.0)

    def __call__(self, x, xi):
        xi = np.asarray(xi, dtype=np.float64)
        shape = xi.shape
        d = self.coeffs.d
        xf = np.asarray(x, dtype=np.float64).reshape(-1, d)
        kf = xi.reshape(-1)
        fn = flow_forward if self.direction == "forward" else flow_backward
        if self.t1 == self.t0:
            return xf.reshape(shape + (d,)).copy(), kf.reshape(shape).copy()
        fp = fn((xf, kf), self.t0, self.t1, self.path, self.coeffs, self.dt)
        return fp.x_unwrapped.reshape(shape + (d,)), fp.xi.reshape(shape)

    def jacobian(self, x, xi):
        xi = np.asarray(xi, dtype=np.float64)
        d = self.coeffs.d
        J = flow_jacobian((np.asarray(x).reshape(-1, d), xi.reshape(-1)), self.t0, self.t1, self.path,
                          self.coeffs, self.dt, backward=self.direction == "backward")
        return J.reshape(xi.shape + (d + 1, d + 1))


# ------------------------------------------------------------------ checks

def inverse_error(p, t0, t1, path, coeffs, dt) -> float:
    """max |backward(forward(p)) - p| over the batch (x unwrapped)."""
    x, xi = _as_arrays(p, coeffs.d)
    fw = flow_forward((x, xi), t0, t1, path, coeffs, dt)
    bw = flow_backward((fw.x_unwrapped, fw.xi), t0, t1, path, coeffs, dt)
    return float(max(np.max(np.abs(bw.x_unwrapped - x)), np.max(np.abs(bw.xi - xi))))


def check_sign_preservation(samples, t0, t1, path: DrivingPath, coeffs: FluxCoefficients, dt: float = 1e-3) -> dict:
    """Check sgn(Xi) = sgn(xi) at every knot in [t0, t1] and at t1."""
    x, xi = _as_arrays(samples, coeffs.d)
    knots = path.times[(path.times > t0) & (path.times < t1)]
    times = np.concatenate([knots, [t1]])
    _, Xi, _ = integrate(x, xi, path, coeffs, t0, t1, dt, out_times=times)
    bad = np.sign(Xi) != np.sign(xi)[None, :]
    n_bad = int(np.any(bad, axis=0).sum())
    first = None
    if n_bad:
        ti, pi = np.argwhere(bad)[0]
        first = {"index": int(pi), "x": x[pi].tolist(), "xi": float(xi[pi]), "t": float(times[ti]),
                 "Xi": float(Xi[ti, pi])}
    return {"samples": int(xi.size), "violations": n_bad, "first_violation": first, "ok": n_bad == 0}


def velocity_comparability(samples, T: float, path: DrivingPath, coeffs: FluxCoefficients,
                           dt: float = 1e-3, n_times: int = 8) -> tuple[float, float]:
    """Empirical (min, max) of |Pi| / |xi| for the backward flow from t to 0, t in (0, T]."""
    x, xi = _as_arrays(samples, coeffs.d)
    keep = xi != 0
    x, xi = x[keep], xi[keep]
    lo, hi = np.inf, 0.0
    for t in np.linspace(T / n_times, T, n_times):
        bw = flow_backward((x, xi), 0.0, t, path, coeffs, dt)
        r = np.abs(bw.xi) / np.abs(xi)
        lo, hi = min(lo, float(r.min())), max(hi, float(r.max()))
    return lo, hi


@dataclass
class FlowStability:
    flow_distance: float
    metric: float
    level1: float
    level2: float


def flow_holder_distance(trajA, trajB, times, alpha: float, chunk: int = 128) -> float:
    """Hölder-in-time distance between two trajectory stacks of shape (K, P, m)."""
    E = np.asarray(trajA) - np.asarray(trajB)
    t = np.asarray(times)
    best = 0.0
    K = t.size
    for i0 in range(0, K - 1, chunk):
        i1 = min(K - 1, i0 + chunk)
        dt = t[None, i0 + 1:] - t[i0:i1, None]
        mask = dt > 0
        diff = E[None, i0 + 1:] - E[i0:i1, None]
        nrm = np.linalg.norm(diff, axis=-1).max(axis=-1)
        r = np.where(mask, nrm / np.where(mask, dt, 1.0) ** alpha, 0.0)
        best = max(best, float(r.max()))
    return best


def flow_stability(pathA: DrivingPath, pathB: DrivingPath, alpha: float, coeffs: FluxCoefficients,
                   sample_points, dt: float = 1e-3, n_interior: int = 1, seed: int = 0) -> FlowStability:
    """Hölder-in-time distance of the two flow maps next to the rough distance of the drivers.

    Both quantities are evaluated on the same sample-time set.
    """
    if abs(pathA.t0 - pathB.t0) > 1e-12 or abs(pathA.T - pathB.T) > 1e-12:
        raise ValueError("both paths must live on the same interval")
    times = metric_sample_times([pathA, pathB], n_interior, seed)
    x, xi = _as_arrays(sample_points, coeffs.d)
    XA, KA, _ = integrate(x, xi, pathA, coeffs, pathA.t0, pathA.T, dt, out_times=times)
    XB, KB, _ = integrate(x, xi, pathB, coeffs, pathB.t0, pathB.T, dt, out_times=times)
    SA = np.concatenate([XA, KA[..., None]], axis=-1)
    SB = np.concatenate([XB, KB[..., None]], axis=-1)
    dist = flow_holder_distance(SA, SB, times, alpha)
    d, l1, l2 = rough_metric(RoughLift(pathA), RoughLift(pathB), alpha, times=times, components=True)
    return FlowStability(dist, d, l1, l2)


def lipschitz_rate(coeffs: FluxCoefficients, xi_range: float, n: int = 4096, seed: int = 0) -> float:
    """Sampled sup of the operator norm of the per-unit-zdot tangent matrices."""
    rng = np.random.default_rng(seed)
    x = rng.random((n, coeffs.d))
    xi = rng.uniform(-xi_range, xi_range, n)
    best = 0.0
    for j in range(coeffs.n):
        e = np.zeros(coeffs.n)
        e[j] = 1.0
        best = max(best, float(np.linalg.norm(_tangent(coeffs, x, xi, e), ord=2, axis=(1, 2)).max()))
    return best


def write_trajectory_csv(path_out, path: DrivingPath, coeffs: FluxCoefficients, x0, xi0, t0, t1,
                         dt: float = 1e-3, times=None) -> dict:
    """Dump one trajectory as CSV (t, x..., xi); x is unwrapped. Returns final winding."""
    if times is None:
        times = np.unique(np.concatenate([[t0], path.times[(path.times > t0) & (path.times < t1)], [t1]]))
    x = np.asarray(x0, dtype=np.float64).reshape(1, coeffs.d)
    xi = np.array([float(xi0)])
    X, Xi, _ = integrate(x, xi, path, coeffs, t0, t1, dt, out_times=times)
    with open(path_out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{k + 1}" for k in range(coeffs.d)] + ["xi"])
        for k, t in enumerate(times):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in X[k, 0]] + [repr(float(Xi[k, 0]))])
    return {"winding": np.floor(X[-1, 0]).astype(int).tolist(), "final_x": X[-1, 0].tolist(),
            "final_xi": float(Xi[-1, 0])}
