"""Driving paths: generation, dyadic approximation, Hölder norms, level-2 lifts."""
from __future__ import annotations

import csv
from functools import lru_cache

import numpy as np


def derive_seed(master: int, *counter: int) -> np.random.SeedSequence:
    """Counter-based child seed: the same (master, counter) always gives the same stream.

    Adding new counters never perturbs existing ones.
    """
    return np.random.SeedSequence(int(master), spawn_key=tuple(int(c) for c in counter))


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class DrivingPath:
    """Piecewise-linear path in R^n with knots ``times`` and values ``values``."""

    __slots__ = ("times", "values")

    def __init__(self, times, values):
        t = np.array(times, dtype=np.float64)
        v = np.array(values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a path needs at least two knots")
        if v.shape[0] != t.size:
            raise ValueError("one value row per knot is required")
        if np.any(np.diff(t) <= 0):
            raise ValueError("knot times must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValueError("path must be finite")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __setattr__(self, name, value):
        raise AttributeError("DrivingPath is immutable")

    def __repr__(self):
        return f"DrivingPath(dims={self.dims}, knots={self.times.size}, T={self.T:g})"

    @property
    def dims(self) -> int:
        return self.values.shape[1]

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        out = np.empty(t.shape + (self.dims,))
        for j in range(self.dims):
            out[..., j] = np.interp(t, self.times, self.values[:, j])
        return out

    def slopes(self) -> np.ndarray:
        return np.diff(self.values, axis=0) / np.diff(self.times)[:, None]

    def segment(self, t: float) -> int:
        """Index k of the segment [t_k, t_{k+1}) containing t (last segment for t = T)."""
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(k, 0), self.times.size - 2)

    def slope_at(self, t: float) -> np.ndarray:
        k = self.segment(t)
        return (self.values[k + 1] - self.values[k]) / (self.times[k + 1] - self.times[k])

    def next_knot(self, t: float) -> float:
        k = int(np.searchsorted(self.times, t, side="right"))
        return float(self.times[min(k, self.times.size - 1)])

    def zdot_max(self) -> float:
        return float(np.max(np.abs(self.slopes())))

    def restrict(self, a: float, b: float) -> "DrivingPath":
        inner = self.times[(self.times > a) & (self.times < b)]
        t = np.concatenate([[a], inner, [b]])
        return DrivingPath(t, self(t))

    def shifted(self, s: float) -> "DrivingPath":
        """The path r -> z(r + s) on [0, T - s]."""
        if not (self.t0 <= s < self.T):
            raise ValueError("shift must lie in [t0, T)")
        inner = self.times[self.times > s]
        t = np.concatenate([[s], inner])
        return DrivingPath(t - s, self(t))

    def reversed(self, t_end: float, t_start: float | None = None) -> "DrivingPath":
        """The path r -> z(t_end - r) on [0, t_end - t_start]."""
        t_start = self.t0 if t_start is None else t_start
        if not (self.t0 <= t_start < t_end <= self.T):
            raise ValueError("need t0 <= t_start < t_end <= T")
        inner = self.times[(self.times > t_start) & (self.times < t_end)]
        t = np.concatenate([[t_start], inner, [t_end]])
        tr = (t_end - t)[::-1]
        tr[0] = 0.0
        return DrivingPath(tr, self(t)[::-1])

    def scaled(self, lam: float) -> "DrivingPath":
        return DrivingPath(self.times, lam * self.values)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"z{j + 1}" for j in range(self.dims)])
            for t, row in zip(self.times, self.values):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "DrivingPath":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:])

    @classmethod
    def linear(cls, velocity, T: float = 1.0, n_knots: int = 2) -> "DrivingPath":
        v = np.atleast_1d(np.asarray(velocity, dtype=np.float64))
        t = np.linspace(0.0, T, n_knots)
        return cls(t, t[:, None] * v[None, :])

    @classmethod
    def constant(cls, dims: int = 1, T: float = 1.0, value=0.0) -> "DrivingPath":
        return cls([0.0, T], np.full((2, dims), value, dtype=np.float64))


# ------------------------------------------------------------------ drivers

def brownian_path(seed, T: float, n_knots: int, dims: int = 1) -> DrivingPath:
    """Brownian motion sampled at ``n_knots`` equally spaced times on [0, T]."""
    if n_knots < 2:
        raise ValueError("n_knots must be at least 2")
    rng = _rng(seed)
    t = np.linspace(0.0, T, n_knots)
    inc = rng.standard_normal((n_knots - 1, dims)) * np.sqrt(np.diff(t))[:, None]
    vals = np.vstack([np.zeros((1, dims)), np.cumsum(inc, axis=0)])
    return DrivingPath(t, vals)


FBM_MAX_KNOTS = 2**14


@lru_cache(maxsize=16)
def _fbm_factor(hurst: float, T: float, n_knots: int) -> np.ndarray:
    t = np.linspace(0.0, T, n_knots)[1:]
    th = t ** (2 * hurst)
    cov = 0.5 * (th[:, None] + th[None, :] - np.abs(t[:, None] - t[None, :]) ** (2 * hurst))
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        lam = np.linalg.eigvalsh(cov)
        raise ValueError(
            f"fBm covariance is not numerically positive definite (H={hurst}, n_knots={n_knots}, "
            f"min eigenvalue {lam.min():.3e}, condition ~{lam.max() / max(abs(lam.min()), 1e-300):.3e})"
        ) from None
    L.flags.writeable = False
    return L


def fbm_path(seed, hurst: float, T: float, n_knots: int, dims: int = 1) -> DrivingPath:
    """Fractional Brownian motion with exact covariance (Cholesky factorisation)."""
    if not (0.0 < hurst < 1.0):
        raise ValueError("Hurst parameter must lie in (0, 1)")
    if n_knots < 2:
        raise ValueError("n_knots must be at least 2")
    if n_knots > FBM_MAX_KNOTS:
        raise ValueError(f"exact fBm sampling is limited to {FBM_MAX_KNOTS} knots")
    L = _fbm_factor(float(hurst), float(T), int(n_knots))
    rng = _rng(seed)
    g = rng.standard_normal((n_knots - 1, dims))
    vals = np.vstack([np.zeros((1, dims)), L @ g])
    return DrivingPath(np.linspace(0.0, T, n_knots), vals)


def dyadic_refine(path: DrivingPath, k: int) -> DrivingPath:
    """Piecewise-linear interpolant of ``path`` at 2^k + 1 equally spaced times."""
    if k < 0:
        raise ValueError("level must be nonnegative")
    t = np.linspace(path.t0, path.T, 2**k + 1)
    return DrivingPath(t, path(t))


# ------------------------------------------------------------ Hölder norms

def _refined_times(times: np.ndarray, per_segment: int) -> np.ndarray:
    if per_segment <= 0:
        return np.asarray(times, dtype=np.float64)
    frac = np.arange(1, per_segment + 1) / (per_segment + 1)
    inner = times[:-1, None] + np.diff(times)[:, None] * frac[None, :]
    return np.sort(np.concatenate([times, inner.ravel()]))


def _pair_max(t: np.ndarray, vals: np.ndarray, alpha: float, chunk: int = 512) -> float:
    best = 0.0
    n = t.size
    for i0 in range(0, n, chunk):
        i1 = min(n, i0 + chunk)
        dt = t[None, :] - t[i0:i1, None]
        dz = np.linalg.norm(vals[None, :, :] - vals[i0:i1, None, :], axis=-1)
        mask = dt > 0
        if np.any(mask):
            best = max(best, float(np.max(dz[mask] / dt[mask] ** alpha)))
    return best


def holder_norm(path: DrivingPath, alpha: float, interior: int = 4) -> float:
    """max |z_t - z_s| / |t - s|^alpha over knots plus ``interior`` points per segment."""
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    t = _refined_times(path.times, interior)
    return _pair_max(t, path(t), alpha)


# --------------------------------------------------------------- signatures

class RoughLift:
    """Level-1 and level-2 signature increments of a piecewise-linear path.

    Prefix sums S(0, t_k) are stored per knot. Increments between arbitrary
    times follow from Chen's relation
    S(s,t) = S(0,t) - S(0,s) - Z_s (x) (Z_t - Z_s).
    """

    def __init__(self, base: DrivingPath):
        self.base = base
        Z = base.values - base.values[0]
        d = np.diff(base.values, axis=0)
        S = np.zeros((base.times.size, base.dims, base.dims))
        step = Z[:-1, :, None] * d[:, None, :] + 0.5 * d[:, :, None] * d[:, None, :]
        S[1:] = np.cumsum(step, axis=0)
        self._Z = Z
        self._S = S

    @property
    def dims(self) -> int:
        return self.base.dims

    def _prefix(self, t):
        t = np.asarray(t, dtype=np.float64)
        k = np.clip(np.searchsorted(self.base.times, t, side="right") - 1, 0, self.base.times.size - 2)
        Zt = self.base(t) - self.base.values[0]
        delta = Zt - self._Z[k]
        S = self._S[k] + self._Z[k][..., :, None] * delta[..., None, :] + 0.5 * delta[..., :, None] * delta[..., None, :]
        return Zt, S

    def increments(self, s, t):
        """(level-1, level-2) increments for arrays of times s <= t."""
        Zs, Ss = self._prefix(s)
        Zt, St = self._prefix(t)
        dZ = Zt - Zs
        S2 = St - Ss - Zs[..., :, None] * dZ[..., None, :]
        return dZ, S2

    def level2(self, s, t):
        return self.increments(s, t)[1]


def level2_signature(path: DrivingPath, s: float, t: float) -> np.ndarray:
    """Level-2 signature over [s, t] by segment-wise Chen composition.

    A straight piece with increment D contributes D (x) D / 2, and pieces are
    concatenated with S <- S + X (x) D + D (x) D / 2 where X is the running
    level-1 increment.
    """
    if not (path.t0 <= s <= t <= path.T):
        raise ValueError("need t0 <= s <= t <= T")
    inner = path.times[(path.times > s) & (path.times < t)]
    pts = path(np.concatenate([[s], inner, [t]]))
    n = path.dims
    S = np.zeros((n, n))
    X = np.zeros(n)
    for k in range(pts.shape[0] - 1):
        D = pts[k + 1] - pts[k]
        S = S + np.outer(X, D) + 0.5 * np.outer(D, D)
        X = X + D
    return S


def levy_area(S2: np.ndarray) -> np.ndarray:
    """Antisymmetric part of a level-2 tensor."""
    return 0.5 * (S2 - np.swapaxes(S2, -1, -2))


def chen_defect(path: DrivingPath, s: float, u: float, t: float) -> float:
    """|S(s,t) - (S(s,u) + S(u,t) + dz_{s,u} (x) dz_{u,t})| in the Frobenius norm."""
    zs, zu, zt = path(np.array([s, u, t]))
    lhs = level2_signature(path, s, t)
    rhs = level2_signature(path, s, u) + level2_signature(path, u, t) + np.outer(zu - zs, zt - zu)
    return float(np.linalg.norm(lhs - rhs))


# ------------------------------------------------------------- rough metric

def metric_sample_times(paths, n_interior: int = 1, seed: int = 0) -> np.ndarray:
    """Union of the knots of ``paths`` plus ``n_interior`` seeded random points per segment."""
    t = np.unique(np.concatenate([p.times for p in paths]))
    if n_interior > 0:
        rng = np.random.default_rng(seed)
        u = rng.random((t.size - 1, n_interior))
        inner = t[:-1, None] + np.diff(t)[:, None] * u
        t = np.unique(np.concatenate([t, inner.ravel()]))
    return t


def rough_metric(liftA: RoughLift, liftB: RoughLift, alpha: float, times=None,
                 n_interior: int = 1, seed: int = 0, components: bool = False, chunk: int = 256):
    """Inhomogeneous alpha-Hölder rough distance between two level-2 lifts.

    d = max over sampled pairs s < t of
    max(|dA - dB| / |t-s|^alpha, |SA - SB|_F / |t-s|^(2 alpha)),
    where the level-2 part enters only for alpha <= 1/2. With
    ``components=True`` returns (d, level1, level2).
    """
    if liftA.dims != liftB.dims:
        raise ValueError(f"mismatched dims: {liftA.dims} vs {liftB.dims}")
    if not (1.0 / 3.0 < alpha <= 1.0):
        raise ValueError("alpha must lie in (1/3, 1]")
    if times is None:
        times = metric_sample_times([liftA.base, liftB.base], n_interior, seed)
    t = np.asarray(times, dtype=np.float64)
    ZA, SA = liftA._prefix(t)
    ZB, SB = liftB._prefix(t)
    use2 = alpha <= 0.5
    l1 = 0.0
    l2 = 0.0
    n = t.size
    for i0 in range(0, n, chunk):
        i1 = min(n, i0 + chunk)
        j = slice(i0 + 1, n)
        if i0 + 1 >= n:
            break
        dt = t[None, j] - t[i0:i1, None]
        mask = dt > 0
        dA = ZA[None, j] - ZA[i0:i1, None]
        dB = ZB[None, j] - ZB[i0:i1, None]
        e1 = np.linalg.norm(dA - dB, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = np.where(mask, e1 / np.where(mask, dt, 1.0) ** alpha, 0.0)
        l1 = max(l1, float(r1.max()))
        if use2:
            S2A = SA[None, j] - SA[i0:i1, None] - ZA[i0:i1, None, :, None] * dA[..., None, :]
            S2B = SB[None, j] - SB[i0:i1, None] - ZB[i0:i1, None, :, None] * dB[..., None, :]
            e2 = np.sqrt(np.sum((S2A - S2B) ** 2, axis=(-1, -2)))
            r2 = np.where(mask, e2 / np.where(mask, dt, 1.0) ** (2 * alpha), 0.0)
            l2 = max(l2, float(r2.max()))
    d = max(l1, l2)
    return (d, l1, l2) if components else d
