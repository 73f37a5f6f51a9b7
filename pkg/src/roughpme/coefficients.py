"""Flux coefficients A(x, xi) with analytic derivatives.

Every family exposes, for points ``x`` of shape ``(..., d)`` and velocities
``xi`` of shape ``(...)``:

* ``a``, ``b = d_xi a``            shape ``(..., d, n)``
* ``c_j = sum_i d_{x_i} a_ij``      shape ``(..., n)``
* ``db_dx[..., i, j, k] = d_{x_k} b_ij``, ``db_dxi``, ``dc_dx[..., j, k]``, ``dc_dxi``
* ``b_sup(x)``: sup over xi of ``|b_ij(x, .)|``, used as the Lax-Friedrichs speed

Families built through :func:`make_family` pass the structural gate
(periodicity in x, c(x,0) = 0 and the conservative identity
div_x b = d_xi c). Negative controls are built with ``validate=False``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi

GATE_TOL = 1e-10


class CoefficientError(ValueError):
    """A family violates one of the structural assumptions."""


def _prep(x, xi, d):
    x = np.asarray(x, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] != d:
        if d == 1 and x.shape == xi.shape:
            x = x[..., None]
        else:
            raise ValueError(f"x must have trailing dimension {d}, got shape {x.shape}")
    x, xi = np.broadcast_arrays(x, xi[..., None])
    return x, xi[..., 0]


class FluxCoefficients:
    family_id = "abstract"

    def __init__(self, d: int, n: int, params):
        self.d = int(d)
        self.n = int(n)
        self.params = [float(p) for p in params]

    def describe(self) -> dict:
        return {"family": self.family_id, "d": self.d, "n": self.n, "params": list(self.params)}

    # subclasses implement these on prepared arrays
    def _a(self, x, xi): raise NotImplementedError
    def _b(self, x, xi): raise NotImplementedError
    def _c(self, x, xi): raise NotImplementedError
    def _db_dx(self, x, xi): raise NotImplementedError
    def _db_dxi(self, x, xi): raise NotImplementedError
    def _dc_dx(self, x, xi): raise NotImplementedError
    def _dc_dxi(self, x, xi): raise NotImplementedError
    def _b_sup(self, x): raise NotImplementedError

    def a(self, x, xi):
        return self._a(*_prep(x, xi, self.d))

    def b(self, x, xi):
        return self._b(*_prep(x, xi, self.d))

    def c(self, x, xi):
        return self._c(*_prep(x, xi, self.d))

    def db_dx(self, x, xi):
        return self._db_dx(*_prep(x, xi, self.d))

    def db_dxi(self, x, xi):
        return self._db_dxi(*_prep(x, xi, self.d))

    def dc_dx(self, x, xi):
        return self._dc_dx(*_prep(x, xi, self.d))

    def dc_dxi(self, x, xi):
        return self._dc_dxi(*_prep(x, xi, self.d))

    def b_sup(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        return self._b_sup(x)


class SeparableSine(FluxCoefficients):
    """a_ij(x, xi) = kappa sin(2 pi (x_i + j/(2n))) sin(xi).

    For d = n = 1 this is kappa sin(2 pi x) sin(xi). The phase shift j/(2n)
    makes the noise directions distinct when n > 1.
    """

    family_id = "separable_sine"

    def __init__(self, d=1, n=1, kappa=1.0):
        super().__init__(d, n, [kappa])
        self.kappa = float(kappa)
        self._shift = np.arange(self.n) / (2.0 * self.n)

    def _phase(self, x):
        return TWO_PI * (x[..., :, None] + self._shift)  # (..., d, n)

    def _a(self, x, xi):
        return self.kappa * np.sin(self._phase(x)) * np.sin(xi)[..., None, None]

    def _b(self, x, xi):
        return self.kappa * np.sin(self._phase(x)) * np.cos(xi)[..., None, None]

    def _c(self, x, xi):
        return self.kappa * TWO_PI * np.cos(self._phase(x)).sum(axis=-2) * np.sin(xi)[..., None]

    def _db_dx(self, x, xi):
        g = self.kappa * TWO_PI * np.cos(self._phase(x)) * np.cos(xi)[..., None, None]
        eye = np.eye(self.d)
        return g[..., :, :, None] * eye[:, None, :]

    def _db_dxi(self, x, xi):
        return -self.kappa * np.sin(self._phase(x)) * np.sin(xi)[..., None, None]

    def _dc_dx(self, x, xi):
        g = -self.kappa * TWO_PI**2 * np.sin(self._phase(x)) * np.sin(xi)[..., None, None]
        return np.swapaxes(g, -1, -2)  # (..., n, d)

    def _dc_dxi(self, x, xi):
        return self.kappa * TWO_PI * np.cos(self._phase(x)).sum(axis=-2) * np.cos(xi)[..., None]

    def _b_sup(self, x):
        return np.abs(self.kappa * np.sin(self._phase(x)))


class ConstantB(FluxCoefficients):
    """a(x, xi) = B xi with a constant d x n matrix B (pure translation)."""

    family_id = "constant_b"

    def __init__(self, B):
        B = np.atleast_2d(np.asarray(B, dtype=np.float64))
        super().__init__(B.shape[0], B.shape[1], B.ravel())
        self.B = B

    def _a(self, x, xi):
        return self.B * xi[..., None, None]

    def _b(self, x, xi):
        return np.broadcast_to(self.B, xi.shape + self.B.shape).copy()

    def _c(self, x, xi):
        return np.zeros(xi.shape + (self.n,))

    def _db_dx(self, x, xi):
        return np.zeros(xi.shape + (self.d, self.n, self.d))

    def _db_dxi(self, x, xi):
        return np.zeros(xi.shape + (self.d, self.n))

    def _dc_dx(self, x, xi):
        return np.zeros(xi.shape + (self.n, self.d))

    def _dc_dxi(self, x, xi):
        return np.zeros(xi.shape + (self.n,))

    def _b_sup(self, x):
        return np.broadcast_to(np.abs(self.B), x.shape[:-1] + self.B.shape).copy()


class BrokenDivergence(SeparableSine):
    """Negative control: b as in the sine family but c forced to zero."""

    family_id = "broken_divergence"

    def _c(self, x, xi):
        return np.zeros(xi.shape + (self.n,))

    def _dc_dx(self, x, xi):
        return np.zeros(xi.shape + (self.n, self.d))

    def _dc_dxi(self, x, xi):
        return np.zeros(xi.shape + (self.n,))


class BrokenVanishing(SeparableSine):
    """Negative control: a = kappa sin(2 pi x)(sin xi + eps), so c(x,0) != 0.

    The conservative identity still holds; only the vanishing condition fails.
    """

    family_id = "broken_vanishing"

    def __init__(self, d=1, n=1, kappa=1.0, eps=0.5):
        super().__init__(d, n, kappa)
        self.eps = float(eps)
        self.params = [self.kappa, self.eps]

    def _a(self, x, xi):
        return self.kappa * np.sin(self._phase(x)) * (np.sin(xi) + self.eps)[..., None, None]

    def _c(self, x, xi):
        return self.kappa * TWO_PI * np.cos(self._phase(x)).sum(axis=-2) * (np.sin(xi) + self.eps)[..., None]

    def _dc_dx(self, x, xi):
        g = -self.kappa * TWO_PI**2 * np.sin(self._phase(x)) * (np.sin(xi) + self.eps)[..., None, None]
        return np.swapaxes(g, -1, -2)


class CustomTable(FluxCoefficients):
    """Tabulated a(x, xi) for d = n = 1, bicubic spline, periodic in x.

    The table is replicated one period to each side before fitting so the
    spline is smooth across x = 0. Outside the tabulated xi range the table
    is clamped, so b = 0 there.
    """

    family_id = "custom-table"

    def __init__(self, xs, xis, table, source: str = ""):
        from scipy.interpolate import RectBivariateSpline

        xs = np.asarray(xs, dtype=np.float64)
        xis = np.asarray(xis, dtype=np.float64)
        table = np.asarray(table, dtype=np.float64)
        if table.shape != (xs.size, xis.size):
            raise CoefficientError("table shape does not match the x and xi axes")
        if xs.size < 4 or xis.size < 4:
            raise CoefficientError("table needs at least 4 samples per axis")
        if np.any(xs < 0) or np.any(xs > 1):
            raise CoefficientError("table x samples must lie in [0, 1]")
        if np.isclose(xs[-1], 1.0) and np.isclose(xs[0], 0.0):
            gap = np.max(np.abs(table[-1] - table[0]))
            if gap > GATE_TOL:
                raise CoefficientError(f"table is not periodic in x: |a(1, .) - a(0, .)| = {gap:.3e}")
            xs, table = xs[:-1], table[:-1]
        super().__init__(1, 1, [])
        self.source = source
        self.xi_lo, self.xi_hi = float(xis[0]), float(xis[-1])
        xx = np.concatenate([xs - 1.0, xs, xs + 1.0])
        tt = np.concatenate([table, table, table], axis=0)
        self._spl = RectBivariateSpline(xx, xis, tt, kx=3, ky=3, s=0)
        xi_probe = np.linspace(self.xi_lo, self.xi_hi, 4 * xis.size)
        xp = np.linspace(0, 1, 4 * xs.size, endpoint=False)
        bs = np.abs(self._spl(xp, xi_probe, dy=1))
        self._bsup_x = xp
        self._bsup_v = 1.1 * bs.max(axis=1)

    def describe(self):
        out = super().describe()
        out["source"] = self.source
        return out

    def _ev(self, x, xi, dx=0, dy=0):
        xm = np.mod(x[..., 0], 1.0)
        xc = np.clip(xi, self.xi_lo, self.xi_hi)
        v = self._spl.ev(xm.ravel(), xc.ravel(), dx=dx, dy=dy).reshape(xi.shape)
        if dy > 0:
            v = np.where((xi < self.xi_lo) | (xi > self.xi_hi), 0.0, v)
        return v

    def _a(self, x, xi):
        return self._ev(x, xi)[..., None, None]

    def _b(self, x, xi):
        return self._ev(x, xi, dy=1)[..., None, None]

    def _c(self, x, xi):
        return self._ev(x, xi, dx=1)[..., None]

    def _db_dx(self, x, xi):
        return self._ev(x, xi, dx=1, dy=1)[..., None, None, None]

    def _db_dxi(self, x, xi):
        return self._ev(x, xi, dy=2)[..., None, None]

    def _dc_dx(self, x, xi):
        return self._ev(x, xi, dx=2)[..., None, None]

    def _dc_dxi(self, x, xi):
        return self._ev(x, xi, dx=1, dy=1)[..., None]

    def _b_sup(self, x):
        xm = np.mod(x[..., 0], 1.0)
        v = np.interp(xm, self._bsup_x, self._bsup_v, period=1.0)
        return v[..., None, None]

    @classmethod
    def from_csv(cls, path) -> "CustomTable":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            for row in reader:
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    rows.append([float(v) for v in row[:3]])
                except ValueError:
                    continue  # header line
        data = np.asarray(rows)
        if data.ndim != 2 or data.shape[1] != 3:
            raise CoefficientError(f"{path}: expected rows of (x, xi, a)")
        xs = np.unique(data[:, 0])
        xis = np.unique(data[:, 1])
        if xs.size * xis.size != data.shape[0]:
            raise CoefficientError(f"{path}: samples do not form a full tensor grid")
        table = np.full((xs.size, xis.size), np.nan)
        ix = np.searchsorted(xs, data[:, 0])
        ik = np.searchsorted(xis, data[:, 1])
        table[ix, ik] = data[:, 2]
        if np.isnan(table).any():
            raise CoefficientError(f"{path}: duplicate samples in the table")
        return cls(xs, xis, table, source=str(path))


# ---------------------------------------------------------------- evaluators

def b_matrix(coeffs: FluxCoefficients, x, xi):
    return coeffs.b(x, xi)


def c_vector(coeffs: FluxCoefficients, x, xi):
    return coeffs.c(x, xi)


@dataclass
class ConservativeCheck:
    residual: float
    point: tuple | None
    ok: bool


def conservative_residual(coeffs: FluxCoefficients, x, xi) -> np.ndarray:
    """Pointwise max_j |sum_i d_{x_i} b_ij - d_xi c_j| from analytic derivatives."""
    db = coeffs.db_dx(x, xi)  # (..., d, n, d)
    div_b = np.einsum("...iji->...j", db)
    return np.abs(div_b - coeffs.dc_dxi(x, xi)).max(axis=-1)


def check_conservative_identity(coeffs: FluxCoefficients, sample_points, tol: float = GATE_TOL) -> ConservativeCheck:
    """Max residual of div_x b - d_xi c over ``sample_points = (x, xi)``.

    The worst point is reported when the residual exceeds ``tol``.
    """
    x, xi = sample_points
    xi = np.asarray(xi, dtype=np.float64)
    if xi.size == 0:
        raise ValueError("sample_points must be nonempty")
    r = conservative_residual(coeffs, x, xi).ravel()
    k = int(np.argmax(r))
    worst = float(r[k])
    xx, _ = _prep(x, xi, coeffs.d)
    point = None
    if worst > tol:
        point = (tuple(float(v) for v in xx.reshape(-1, coeffs.d)[k]), float(xi.ravel()[k]))
    return ConservativeCheck(worst, point, worst <= tol)


def probe_points(d: int, nx: int = 64, nxi: int = 64, xi_range: float = 4.0):
    """(x, xi) tensor probe grid used by the registration gate."""
    ax = np.arange(nx) / nx
    xis = np.linspace(-xi_range, xi_range, nxi)
    if d == 1:
        X, K = np.meshgrid(ax, xis, indexing="ij")
        return X[..., None], K
    g = np.arange(8) / 8.0
    X, Y, K = np.meshgrid(g, g, xis, indexing="ij")
    return np.stack([X, Y], axis=-1), K


def validate_family(coeffs: FluxCoefficients, tol: float = GATE_TOL) -> dict:
    """Registration gate. Raises :class:`CoefficientError` on any violation."""
    x, xi = probe_points(coeffs.d)
    a0 = coeffs.a(x, xi)
    for k in range(coeffs.d):
        shifted = x.copy()
        shifted[..., k] += 1.0
        gap = float(np.max(np.abs(coeffs.a(shifted, xi) - a0)))
        if gap > tol:
            raise CoefficientError(f"{coeffs.family_id}: a is not 1-periodic in x_{k + 1} (gap {gap:.3e})")
    c0 = np.abs(coeffs.c(x, np.zeros_like(xi)))
    if c0.max() > tol:
        idx = np.unravel_index(np.argmax(c0.max(axis=-1)), xi.shape)
        raise CoefficientError(
            f"{coeffs.family_id}: c(x, 0) = {c0.max():.3e} at x = {x[idx].tolist()}; "
            "the coefficients must vanish at xi = 0 so that the sign of the velocity is preserved"
        )
    chk = check_conservative_identity(coeffs, (x, xi), tol)
    if not chk.ok:
        raise CoefficientError(
            f"{coeffs.family_id}: conservative identity div_x b = d_xi c fails, "
            f"residual {chk.residual:.3e} at {chk.point}"
        )
    return {"c_at_zero": float(c0.max()), "conservative_residual": chk.residual}


FAMILIES = {
    "separable_sine": SeparableSine,
    "custom-table": CustomTable,
    "constant_b": ConstantB,
    "broken_divergence": BrokenDivergence,
    "broken_vanishing": BrokenVanishing,
}


def make_family(name: str, params=None, d: int = 1, n: int = 1, table: str | None = None,
                validate: bool = True) -> FluxCoefficients:
    """Build a family by name. ``params`` is the family's parameter list.

    separable_sine: [kappa]; constant_b: the entries of B (d*n values);
    custom-table: none, ``table`` is the CSV path; broken_*: [kappa(, eps)].
    """
    params = list(params or [])
    if name == "separable_sine":
        fam = SeparableSine(d, n, *(params or [1.0]))
    elif name == "constant_b":
        B = np.asarray(params or [1.0] * (d * n), dtype=np.float64).reshape(d, n)
        fam = ConstantB(B)
    elif name == "custom-table":
        if table is None:
            raise CoefficientError("custom-table family needs a table path")
        if d != 1 or n != 1:
            raise CoefficientError("custom-table family supports d = n = 1 only")
        fam = CustomTable.from_csv(table)
    elif name == "broken_divergence":
        fam = BrokenDivergence(d, n, *(params or [1.0]))
    elif name == "broken_vanishing":
        fam = BrokenVanishing(d, n, *(params or [1.0]))
    else:
        raise CoefficientError(f"unknown coefficient family {name!r}; known: {sorted(FAMILIES)}")
    if validate:
        validate_family(fam)
    return fam
