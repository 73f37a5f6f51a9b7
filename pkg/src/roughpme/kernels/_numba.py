"""numba-compiled kernels. Signatures mirror :mod:`roughpme.kernels._numpy`."""
import numpy as np
from numba import njit


@njit(cache=True)
def _phi_m(v, M, m):
    a = abs(v)
    if a <= M:
        if v >= 0.0:
            return a**m
        return -(a**m)
    return v * M ** (m - 1.0)


@njit(cache=True)
def _phi_apply_flat(flat, M, m, offs, w, dw, mu2, phi, dphi):
    delta = offs[offs.shape[0] - 1]
    slope = M ** (m - 1.0)
    nq = offs.shape[0]
    for i in range(flat.shape[0]):
        v = flat[i]
        if m == 1.0:
            phi[i] = v
            dphi[i] = 1.0
            continue
        a = abs(v)
        if a >= M + delta:
            phi[i] = v * slope
            dphi[i] = slope
            continue
        if m == 2.0 and a > delta and a <= M - delta:
            s = 1.0 if v > 0.0 else -1.0
            phi[i] = s * (v * v + mu2)
            dphi[i] = 2.0 * a
            continue
        acc = 0.0
        dacc = 0.0
        for k in range(nq):
            val = _phi_m(v - offs[k], M, m)
            acc += w[k] * val
            dacc += dw[k] * val
        phi[i] = acc
        dphi[i] = dacc


def phi_apply(u, M, m, offs, w, dw, mu2):
    u = np.asarray(u, dtype=np.float64)
    flat = np.ascontiguousarray(u).ravel()
    phi = np.empty_like(flat)
    dphi = np.empty_like(flat)
    _phi_apply_flat(flat, float(M), float(m), offs, w, dw, float(mu2), phi, dphi)
    return phi.reshape(u.shape), dphi.reshape(u.shape)


@njit(cache=True)
def rhs_1d(u, F, fL, fR, alpha, dx):
    nb, n = u.shape
    out = np.empty_like(u)
    diss = np.zeros(nb)
    work = np.zeros(nb)
    G = np.empty(n)
    dF = np.empty(n)
    inv = 1.0 / dx
    inv2 = inv * inv
    for b in range(nb):
        for i in range(n):
            j = i + 1 if i + 1 < n else 0
            du = u[b, j] - u[b, i]
            dF[i] = F[b, j] - F[b, i]
            G[i] = 0.5 * (fL[b, i] + fR[b, i]) + 0.5 * alpha[b, i] * du
            diss[b] += dF[i] * du
        for i in range(n):
            im = i - 1 if i > 0 else n - 1
            divG = (G[i] - G[im]) * inv
            out[b, i] = (dF[i] - dF[im]) * inv2 + divG
            work[b] += u[b, i] * divG
        diss[b] *= inv
        work[b] *= dx
    return out, diss, work


@njit(cache=True)
def rhs_2d(u, F, fLx, fRx, ax, fLy, fRy, ay, dx):
    nb, n0, n1 = u.shape
    out = np.empty_like(u)
    diss = np.zeros(nb)
    work = np.zeros(nb)
    Gx = np.empty((n0, n1))
    Gy = np.empty((n0, n1))
    dFx = np.empty((n0, n1))
    dFy = np.empty((n0, n1))
    inv = 1.0 / dx
    inv2 = inv * inv
    for b in range(nb):
        for i in range(n0):
            ip = i + 1 if i + 1 < n0 else 0
            for j in range(n1):
                jp = j + 1 if j + 1 < n1 else 0
                dux = u[b, ip, j] - u[b, i, j]
                duy = u[b, i, jp] - u[b, i, j]
                dFx[i, j] = F[b, ip, j] - F[b, i, j]
                dFy[i, j] = F[b, i, jp] - F[b, i, j]
                Gx[i, j] = 0.5 * (fLx[b, i, j] + fRx[b, i, j]) + 0.5 * ax[b, i, j] * dux
                Gy[i, j] = 0.5 * (fLy[b, i, j] + fRy[b, i, j]) + 0.5 * ay[b, i, j] * duy
                diss[b] += dFx[i, j] * dux + dFy[i, j] * duy
        for i in range(n0):
            im = i - 1 if i > 0 else n0 - 1
            for j in range(n1):
                jm = j - 1 if j > 0 else n1 - 1
                divG = (Gx[i, j] - Gx[im, j] + Gy[i, j] - Gy[i, jm]) * inv
                lap = (dFx[i, j] - dFx[im, j] + dFy[i, j] - dFy[i, jm]) * inv2
                out[b, i, j] = lap + divG
                work[b] += u[b, i, j] * divG
        work[b] *= dx * dx
    return out, diss, work


@njit(cache=True)
def pair_sum_1d(f, kern, p, periodic):
    n = f.shape[0]
    total = 0.0
    for k in range(1, n):
        s = 0.0
        if periodic:
            for i in range(n):
                j = i + k
                if j >= n:
                    j -= n
                d = abs(f[i] - f[j])
                s += d if p == 1.0 else d**p
            total += kern[k] * s
        else:
            for i in range(n - k):
                d = abs(f[i] - f[i + k])
                s += d if p == 1.0 else d**p
            total += 2.0 * kern[k] * s
    return total


@njit(cache=True)
def pair_sum_2d(f, kern, p, periodic0, periodic1):
    n0, n1 = f.shape
    lo0 = 0 if periodic0 else -(n0 - 1)
    lo1 = 0 if periodic1 else -(n1 - 1)
    total = 0.0
    for k0 in range(lo0, n0):
        a = k0 if periodic0 else k0 + n0 - 1
        for k1 in range(lo1, n1):
            if k0 == 0 and k1 == 0:
                continue
            b = k1 if periodic1 else k1 + n1 - 1
            wgt = kern[a, b]
            if wgt == 0.0:
                continue
            s = 0.0
            for i in range(n0):
                ii = i + k0
                if periodic0:
                    if ii >= n0:
                        ii -= n0
                elif ii < 0 or ii >= n0:
                    continue
                for j in range(n1):
                    jj = j + k1
                    if periodic1:
                        if jj >= n1:
                            jj -= n1
                    elif jj < 0 or jj >= n1:
                        continue
                    d = abs(f[i, j] - f[ii, jj])
                    s += d if p == 1.0 else d**p
            total += wgt * s
    return total
