"""Pure-numpy reference kernels. Same signatures as the numba versions."""
import numpy as np


def phi_m_scalar_array(v, M, m):
    """Truncated signed power phi^M, elementwise."""
    a = np.abs(v)
    inside = np.sign(v) * a**m
    return np.where(a <= M, inside, v * M ** (m - 1.0))


def phi_apply(u, M, m, offs, w, dw, mu2):
    """Mollified truncated power and its derivative at every entry of ``u``.

    ``offs`` are the quadrature abscissae scaled to the window, ``w`` the
    mollifier weights (sum 1), ``dw`` the weights of the mollifier derivative
    (normalised so affine functions differentiate exactly), ``mu2`` the
    discrete second moment of ``w``.
    """
    u = np.asarray(u, dtype=np.float64)
    flat = u.ravel()
    delta = offs[-1]
    phi = np.empty_like(flat)
    dphi = np.empty_like(flat)
    if m == 1.0:
        phi[:] = flat
        dphi[:] = 1.0
        return phi.reshape(u.shape), dphi.reshape(u.shape)
    a = np.abs(flat)
    slope = M ** (m - 1.0)
    far = a >= M + delta
    phi[far] = flat[far] * slope
    dphi[far] = slope
    todo = ~far
    if m == 2.0:
        quad = todo & (a > delta) & (a <= M - delta)
        s = np.sign(flat[quad])
        phi[quad] = s * (flat[quad] ** 2 + mu2)
        dphi[quad] = 2.0 * a[quad]
        todo &= ~quad
    if np.any(todo):
        vals = phi_m_scalar_array(flat[todo][:, None] - offs[None, :], M, m)
        phi[todo] = vals @ w
        dphi[todo] = vals @ dw
    return phi.reshape(u.shape), dphi.reshape(u.shape)


def rhs_1d(u, F, fL, fR, alpha, dx):
    """Flux-form right-hand side on a periodic line, batched over axis 0.

    Face ``i`` sits between nodes ``i`` and ``i+1``. Returns the rhs plus per
    batch member the diffusive dissipation sum((F_R-F_L)(u_R-u_L)) / dx and
    the transport work sum(u * div G) * dx.
    """
    uR = np.roll(u, -1, axis=1)
    FR = np.roll(F, -1, axis=1)
    du = uR - u
    dF = FR - F
    G = 0.5 * (fL + fR) + 0.5 * alpha * du
    divG = (G - np.roll(G, 1, axis=1)) / dx
    lap = (dF - np.roll(dF, 1, axis=1)) / (dx * dx)
    diss = np.sum(dF * du, axis=1) / dx
    work = np.sum(u * divG, axis=1) * dx
    return lap + divG, diss, work


def rhs_2d(u, F, fLx, fRx, ax, fLy, fRy, ay, dx):
    """Two-dimensional analogue of :func:`rhs_1d` (axis 1 is x, axis 2 is y)."""
    out = np.zeros_like(u)
    diss = np.zeros(u.shape[0])
    work = np.zeros(u.shape[0])
    for axis, fL, fR, al in ((1, fLx, fRx, ax), (2, fLy, fRy, ay)):
        du = np.roll(u, -1, axis=axis) - u
        dF = np.roll(F, -1, axis=axis) - F
        G = 0.5 * (fL + fR) + 0.5 * al * du
        divG = (G - np.roll(G, 1, axis=axis)) / dx
        out += (dF - np.roll(dF, 1, axis=axis)) / (dx * dx) + divG
        diss += np.sum(dF * du, axis=(1, 2))
        work += np.sum(u * divG, axis=(1, 2)) * dx * dx
    return out, diss, work


def pair_sum_1d(f, kern, p, periodic):
    """Ordered-pair sum  sum_i sum_k kern[k] |f_i - f_{i+k}|^p  for k >= 1."""
    n = f.shape[0]
    total = 0.0
    for k in range(1, n):
        if periodic:
            diff = np.abs(f - np.roll(f, -k))
        else:
            diff = np.abs(f[:-k] - f[k:])
        if p != 1.0:
            diff = diff**p
        s = kern[k] * np.sum(diff)
        total += s if periodic else 2.0 * s
    return total


def pair_sum_2d(f, kern, p, periodic0, periodic1):
    """Ordered-pair sum on a 2D array over all nonzero offsets.

    ``kern[a, b]`` holds the weight for offset index (a, b). A periodic axis
    of length N uses offsets 0..N-1 taken modulo N. A bounded axis uses
    offsets -(N-1)..N-1 stored at index offset + N - 1.
    """
    n0, n1 = f.shape
    offs0 = range(n0) if periodic0 else range(-(n0 - 1), n0)
    offs1 = range(n1) if periodic1 else range(-(n1 - 1), n1)
    total = 0.0
    for k0 in offs0:
        a = k0 if periodic0 else k0 + n0 - 1
        if periodic0:
            g0 = np.roll(f, -k0, axis=0)
            f0 = f
        else:
            lo, hi = max(0, -k0), min(n0, n0 - k0)
            if hi <= lo:
                continue
            f0 = f[lo:hi]
            g0 = f[lo + k0:hi + k0]
        for k1 in offs1:
            if k0 == 0 and k1 == 0:
                continue
            b = k1 if periodic1 else k1 + n1 - 1
            wgt = kern[a, b]
            if wgt == 0.0:
                continue
            if periodic1:
                diff = np.abs(f0 - np.roll(g0, -k1, axis=1))
            else:
                lo1, hi1 = max(0, -k1), min(n1, n1 - k1)
                if hi1 <= lo1:
                    continue
                diff = np.abs(f0[:, lo1:hi1] - g0[:, lo1 + k1:hi1 + k1])
            if p != 1.0:
                diff = diff**p
            total += wgt * np.sum(diff)
    return total
