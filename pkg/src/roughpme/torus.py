"""Periodic grids on the unit torus, grid functions and discrete operators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TorusGrid:
    """Uniform cell-centred grid on the unit torus [0,1)^d, d in {1, 2}.

    Node ``i`` sits at ``(i + 0.5) * spacing``, so every node is the midpoint
    of its cell and the midpoint rule is the natural quadrature.
    """

    dim: int
    points_per_dim: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if int(self.points_per_dim) != self.points_per_dim or self.points_per_dim < 8:
            raise ValueError(f"points_per_dim must be an integer >= 8, got {self.points_per_dim}")
        if (1.0 / self.points_per_dim) * self.points_per_dim != 1.0:
            # e.g. 49: 1/49 * 49 rounds to 1 - 2^-53
            raise ValueError(f"spacing * {self.points_per_dim} is not exactly 1 in float64")

    @property
    def spacing(self) -> float:
        return 1.0 / self.points_per_dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_dim,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_dim**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    def axis(self) -> np.ndarray:
        return (np.arange(self.points_per_dim) + 0.5) * self.spacing

    def coords(self) -> np.ndarray:
        """Node coordinates with shape ``shape + (dim,)``."""
        ax = self.axis()
        if self.dim == 1:
            return ax[:, None]
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def face_coords(self, axis: int) -> np.ndarray:
        """Coordinates of the faces between node i and i+1 along ``axis``."""
        c = self.coords().copy()
        c[..., axis] += 0.5 * self.spacing
        return c

    def field(self, values) -> "ScalarField":
        return ScalarField(self, values)

    def sample(self, fn) -> "ScalarField":
        """Evaluate ``fn`` at the nodes. ``fn`` gets one array per coordinate."""
        c = self.coords()
        return ScalarField(self, fn(*[c[..., k] for k in range(self.dim)]))


class ScalarField:
    """An immutable grid function on a :class:`TorusGrid`."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: TorusGrid, values):
        v = np.array(values, dtype=np.float64)
        if v.size == grid.size and v.shape != grid.shape:
            v = v.reshape(grid.shape)
        if v.shape != grid.shape:
            raise ValueError(f"expected {grid.shape} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", v)

    def __setattr__(self, name, value):
        raise AttributeError("ScalarField is immutable")

    def __repr__(self):
        return f"ScalarField(dim={self.grid.dim}, n={self.grid.points_per_dim})"

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)


@dataclass(frozen=True)
class VelocityGrid:
    """Uniform cell grid in the velocity variable. Zero must be a cell face."""

    xi_min: float
    xi_max: float
    n_xi: int

    def __post_init__(self):
        if not (self.xi_min < 0.0 < self.xi_max):
            raise ValueError("velocity grid must satisfy xi_min < 0 < xi_max")
        if self.n_xi < 2:
            raise ValueError("n_xi must be at least 2")
        k = -self.xi_min / self.spacing
        if abs(k - round(k)) > 1e-9:
            raise ValueError("xi = 0 must fall on a cell face of the velocity grid")

    @classmethod
    def symmetric(cls, half_width: float, cells_per_side: int) -> "VelocityGrid":
        return cls(-half_width, half_width, 2 * cells_per_side)

    @classmethod
    def covering(cls, lo: float, hi: float, spacing: float) -> "VelocityGrid":
        """Smallest grid with the given spacing, a face at 0, covering [lo, hi]."""
        kneg = max(1, int(np.ceil(max(0.0, -lo) / spacing - 1e-12)) + 1)
        kpos = max(1, int(np.ceil(max(0.0, hi) / spacing - 1e-12)) + 1)
        return cls(-kneg * spacing, kpos * spacing, kneg + kpos)

    @property
    def spacing(self) -> float:
        return (self.xi_max - self.xi_min) / self.n_xi

    @property
    def zero_face(self) -> int:
        return int(round(-self.xi_min / self.spacing))

    def centers(self) -> np.ndarray:
        return self.xi_min + (np.arange(self.n_xi) + 0.5) * self.spacing

    def faces(self) -> np.ndarray:
        return self.xi_min + np.arange(self.n_xi + 1) * self.spacing


def signed_power(v, m: float):
    """|v|^(m-1) v, odd and increasing; 0 maps to 0 for every m > 0."""
    if m <= 0:
        raise ValueError("exponent must be positive")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.abs(v) ** m


def _vals(f):
    return f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=np.float64)


def laplacian_periodic(f: ScalarField) -> ScalarField:
    """Three-point (d=1) or five-point (d=2) periodic Laplacian."""
    v = f.values
    h2 = f.grid.spacing**2
    out = np.zeros_like(v)
    for ax in range(v.ndim):
        out += np.roll(v, -1, axis=ax) - 2.0 * v + np.roll(v, 1, axis=ax)
    return ScalarField(f.grid, out / h2)


def divergence_periodic(F, grid: TorusGrid) -> ScalarField:
    """Divergence of a nodal vector field ``F`` with shape ``(dim,) + grid.shape``.

    Uses the face average (F_i + F_{i+1})/2 as the flux, so the result is the
    centred difference and telescopes to zero mean.
    """
    F = np.asarray(F, dtype=np.float64)
    if F.shape != (grid.dim,) + grid.shape:
        raise ValueError(f"vector field must have shape {(grid.dim,) + grid.shape}")
    out = np.zeros(grid.shape)
    for ax in range(grid.dim):
        face = 0.5 * (F[ax] + np.roll(F[ax], -1, axis=ax))
        out += (face - np.roll(face, 1, axis=ax)) / grid.spacing
    return ScalarField(grid, out)


def gradient_centered(f: ScalarField) -> np.ndarray:
    """Centred-difference gradient, shape ``(dim,) + grid.shape``."""
    v = f.values
    h = f.grid.spacing
    return np.stack([(np.roll(v, -1, axis=ax) - np.roll(v, 1, axis=ax)) / (2 * h) for ax in range(v.ndim)])


def integrate(f) -> float:
    """Midpoint rule on the unit torus (the mean of the nodal values)."""
    if isinstance(f, ScalarField):
        return float(np.sum(f.values) * f.grid.cell_volume)
    v = np.asarray(f, dtype=np.float64)
    return float(np.mean(v))


def lp_norm(f, p: float) -> float:
    if not (p >= 1):
        raise ValueError("p must lie in [1, inf]")
    v = _vals(f)
    if np.isinf(p):
        return float(np.max(np.abs(v)))
    return float(np.mean(np.abs(v) ** p) ** (1.0 / p))


def interp_periodic(f: ScalarField, points: np.ndarray) -> np.ndarray:
    """Linear (d=1) or bilinear (d=2) periodic interpolation at ``points``.

    ``points`` has shape ``(..., dim)``; coordinates may lie outside [0,1).
    """
    g = f.grid
    n = g.points_per_dim
    p = np.asarray(points, dtype=np.float64)
    s = p / g.spacing - 0.5
    i0 = np.floor(s)
    t = s - i0
    i0 = i0.astype(np.int64) % n
    i1 = (i0 + 1) % n
    v = f.values
    if g.dim == 1:
        return (1 - t[..., 0]) * v[i0[..., 0]] + t[..., 0] * v[i1[..., 0]]
    tx, ty = t[..., 0], t[..., 1]
    ax, ay, bx, by = i0[..., 0], i0[..., 1], i1[..., 0], i1[..., 1]
    return ((1 - tx) * (1 - ty) * v[ax, ay] + tx * (1 - ty) * v[bx, ay]
            + (1 - tx) * ty * v[ax, by] + tx * ty * v[bx, by])
