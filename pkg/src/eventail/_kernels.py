"""Compiled inner loops for the per-iteration objective work.

The numpy implementations in :mod:`eventail.geometry` and
:mod:`eventail.eigen` are the reference; these kernels fuse the same
arithmetic into single passes so an Adam iteration costs microseconds.
"""
from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

RAYLEIGH_TOL = 1e-10
_TWO_PI_3 = 2.0 * math.pi / 3.0


@njit(cache=True)
def gram_exact(vectors, times, weights, omegas, incidence, scale):
    """Exact-rotation Gram matrices, shape (K, M, k, k)."""
    K = omegas.shape[0]
    M, N = times.shape
    k = 6 if incidence else 3
    out = np.zeros((K, M, k, k))
    row = np.zeros(6)
    for a in range(K):
        wx, wy, wz = omegas[a, 0], omegas[a, 1], omegas[a, 2]
        w = math.sqrt(wx * wx + wy * wy + wz * wz)
        if w > 0.0:
            ax, ay, az = wx / w, wy / w, wz / w
        else:
            ax, ay, az = 0.0, 0.0, 0.0
        for i in range(M):
            acc = out[a, i]
            for j in range(N):
                wt = weights[i, j]
                if wt == 0.0:
                    continue
                t = times[i, j]
                vx, vy, vz = vectors[i, j, 0], vectors[i, j, 1], vectors[i, j, 2]
                ang = t * w
                s = math.sin(ang)
                h = math.sin(0.5 * ang)
                c = 2.0 * h * h
                cx = ay * vz - az * vy
                cy = az * vx - ax * vz
                cz = ax * vy - ay * vx
                d = ax * vx + ay * vy + az * vz
                rx = (vx + s * cx + c * (ax * d - vx)) * wt
                ry = (vy + s * cy + c * (ay * d - vy)) * wt
                rz = (vz + s * cz + c * (az * d - vz)) * wt
                if incidence:
                    row[0], row[1], row[2] = t * rx, t * ry, t * rz
                    row[3], row[4], row[5] = rx, ry, rz
                else:
                    row[0], row[1], row[2] = rx, ry, rz
                for p in range(k):
                    rp = row[p]
                    for q in range(p, k):
                        acc[p, q] += rp * row[q]
            for p in range(k):
                acc[p, p] *= scale
                for q in range(p + 1, k):
                    acc[p, q] *= scale
                    acc[q, p] = acc[p, q]
    return out


@njit(cache=True)
def _eig3_single(a_, b_, c_, d, e, f):
    """Eigenvalues (ascending) and smallest eigenvector of [[a d f] [d b e] [f e c]]."""
    q = (a_ + b_ + c_) / 3.0
    p1 = d * d + e * e + f * f
    aq, bq, cq = a_ - q, b_ - q, c_ - q
    p2 = aq * aq + bq * bq + cq * cq + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    if p > 0.0:
        det = aq * (bq * cq - e * e) - d * (d * cq - e * f) + f * (d * e - bq * f)
        r = det / (2.0 * p * p * p)
        r = min(1.0, max(-1.0, r))
        phi = math.acos(r) / 3.0
        hi = q + 2.0 * p * math.cos(phi)
        lo = q + 2.0 * p * math.cos(phi + _TWO_PI_3)
        mid = 3.0 * q - hi - lo
    else:
        hi = lo = mid = q
    # rows of S - lo I; the largest pairwise cross product spans the null space
    r0x, r0y, r0z = a_ - lo, d, f
    r1x, r1y, r1z = d, b_ - lo, e
    r2x, r2y, r2z = f, e, c_ - lo
    c0x, c0y, c0z = r0y * r1z - r0z * r1y, r0z * r1x - r0x * r1z, r0x * r1y - r0y * r1x
    c1x, c1y, c1z = r0y * r2z - r0z * r2y, r0z * r2x - r0x * r2z, r0x * r2y - r0y * r2x
    c2x, c2y, c2z = r1y * r2z - r1z * r2y, r1z * r2x - r1x * r2z, r1x * r2y - r1y * r2x
    n0 = c0x * c0x + c0y * c0y + c0z * c0z
    n1 = c1x * c1x + c1y * c1y + c1z * c1z
    n2 = c2x * c2x + c2y * c2y + c2z * c2z
    bx, by, bz, nb = c0x, c0y, c0z, n0
    if n1 > nb:
        bx, by, bz, nb = c1x, c1y, c1z, n1
    if n2 > nb:
        bx, by, bz, nb = c2x, c2y, c2z, n2
    if nb > 0.0:
        s = 1.0 / math.sqrt(nb)
        qx, qy, qz = bx * s, by * s, bz * s
        # the Rayleigh quotient is far more accurate than the cubic root
        ray = (a_ * qx * qx + b_ * qy * qy + c_ * qz * qz
               + 2.0 * (d * qx * qy + e * qy * qz + f * qx * qz))
        if abs(ray - lo) <= RAYLEIGH_TOL * (abs(hi) + abs(lo)):
            lo = ray
            mid = 3.0 * q - hi - lo
        return lo, mid, hi, qx, qy, qz
    return lo, mid, hi, 1.0, 0.0, 0.0


@njit(cache=True)
def eig3(S):
    """Ascending eigenvalues and the smallest eigenvector of a batch of 3x3 matrices."""
    B = S.shape[0]
    lam = np.empty((B, 3))
    vec = np.empty((B, 3))
    for b in range(B):
        lo, mid, hi, qx, qy, qz = _eig3_single(S[b, 0, 0], S[b, 1, 1], S[b, 2, 2],
                                               S[b, 0, 1], S[b, 1, 2], S[b, 0, 2])
        lam[b, 0], lam[b, 1], lam[b, 2] = lo, mid, hi
        vec[b, 0], vec[b, 1], vec[b, 2] = qx, qy, qz
    return lam, vec


@njit(cache=True)
def poly_eig_grad3(flat, omega):
    """First-order 3x3 path: eigenvalues, eigenvectors and d(q^T G q)/d omega per cluster.

    ``flat`` holds the compressed coefficients, shape (M, 10, 9).
    """
    x, y, z = omega[0], omega[1], omega[2]
    mono = np.array([1.0, x, y, z, x * x, y * y, z * z, x * y, x * z, y * z])
    dmono = np.zeros((3, 10))
    dmono[0, 1] = 1.0
    dmono[0, 4] = 2.0 * x
    dmono[0, 7] = y
    dmono[0, 8] = z
    dmono[1, 2] = 1.0
    dmono[1, 5] = 2.0 * y
    dmono[1, 7] = x
    dmono[1, 9] = z
    dmono[2, 3] = 1.0
    dmono[2, 6] = 2.0 * z
    dmono[2, 8] = x
    dmono[2, 9] = y
    M = flat.shape[0]
    lam = np.empty((M, 3))
    vec = np.empty((M, 3))
    grad = np.empty((M, 3))
    S = np.empty(9)
    for i in range(M):
        for e in range(9):
            acc = 0.0
            for k in range(10):
                acc += mono[k] * flat[i, k, e]
            S[e] = acc
        lo, mid, hi, qx, qy, qz = _eig3_single(S[0], S[4], S[8], S[1], S[5], S[2])
        lam[i, 0], lam[i, 1], lam[i, 2] = lo, mid, hi
        vec[i, 0], vec[i, 1], vec[i, 2] = qx, qy, qz
        qq0, qq1, qq2 = qx * qx, qy * qy, qz * qz
        qxy, qxz, qyz = 2.0 * qx * qy, 2.0 * qx * qz, 2.0 * qy * qz
        for c in range(3):
            g = 0.0
            for k in range(1, 10):
                dk = dmono[c, k]
                if dk == 0.0:
                    continue
                r = flat[i, k]
                g += dk * (qq0 * r[0] + qq1 * r[4] + qq2 * r[8] + qxy * r[1] + qxz * r[2] + qyz * r[5])
            grad[i, c] = g
    return lam, vec, grad


@njit(cache=True)
def grad_exact3(vectors, times, weights, omega, q, scale):
    """Per-cluster gradient of q_i^T N_i(omega) q_i, shape (M, 3)."""
    M, N = times.shape
    out = np.zeros((M, 3))
    wx, wy, wz = omega[0], omega[1], omega[2]
    w = math.sqrt(wx * wx + wy * wy + wz * wz)
    if w > 0.0:
        ax, ay, az = wx / w, wy / w, wz / w
    else:
        ax, ay, az = 0.0, 0.0, 0.0
    for i in range(M):
        qx, qy, qz = q[i, 0], q[i, 1], q[i, 2]
        gx = gy = gz = 0.0
        for j in range(N):
            wt = weights[i, j]
            if wt == 0.0:
                continue
            t = times[i, j]
            vx, vy, vz = vectors[i, j, 0], vectors[i, j, 1], vectors[i, j, 2]
            ang = t * w
            s = math.sin(ang)
            h = math.sin(0.5 * ang)
            c = 2.0 * h * h
            cx = ay * vz - az * vy
            cy = az * vx - ax * vz
            cz = ax * vy - ay * vx
            d = ax * vx + ay * vy + az * vz
            rx = vx + s * cx + c * (ax * d - vx)
            ry = vy + s * cy + c * (ay * d - vy)
            rz = vz + s * cz + c * (az * d - vz)
            proj = rx * qx + ry * qy + rz * qz
            # z = t (R v x q);  J_l(t omega)^T z
            zx = t * (ry * qz - rz * qy)
            zy = t * (rz * qx - rx * qz)
            zz = t * (rx * qy - ry * qx)
            th = ang
            if abs(th) < 1e-6:
                ca = (0.5 - th * th / 24.0) * th
                cb = (1.0 / 6.0 - th * th / 120.0) * th * th
            else:
                ca = c / th
                cb = (th - s) / th
            azx = ay * zz - az * zy
            azy = az * zx - ax * zz
            azz = ax * zy - ay * zx
            dz = ax * zx + ay * zy + az * zz
            jx = zx - ca * azx + cb * (ax * dz - zx)
            jy = zy - ca * azy + cb * (ay * dz - zy)
            jz = zz - ca * azz + cb * (az * dz - zz)
            coef = 2.0 * wt * wt * proj
            gx += coef * jx
            gy += coef * jy
            gz += coef * jz
        out[i, 0], out[i, 1], out[i, 2] = gx * scale, gy * scale, gz * scale
    return out

