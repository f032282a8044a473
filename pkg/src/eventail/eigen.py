"""Smallest eigenpairs of small symmetric matrices.

3x3 matrices go through the trigonometric solution of the characteristic
cubic, vectorized over any leading batch shape. 6x6 matrices use LAPACK's
symmetric solver through numpy.
"""
from __future__ import annotations

import numpy as np

RAYLEIGH_TOL = 1e-10
_TWO_PI_3 = 2.0 * np.pi / 3.0


def canonical_sign(v: np.ndarray) -> np.ndarray:
    """Flip each vector (last axis) so its largest-magnitude entry is positive."""
    v = np.asarray(v, dtype=float)
    idx = np.argmax(np.abs(v), axis=-1)
    lead = np.take_along_axis(v, idx[..., None], axis=-1)
    return np.where(lead < 0, -v, v)


def eigvals3(S: np.ndarray) -> np.ndarray:
    """All eigenvalues of symmetric 3x3 matrices in ascending order, shape (..., 3)."""
    S = np.asarray(S, dtype=float)
    a, b, c = S[..., 0, 0], S[..., 1, 1], S[..., 2, 2]
    d, e, f = S[..., 0, 1], S[..., 1, 2], S[..., 0, 2]
    q = (a + b + c) / 3.0
    p1 = d * d + e * e + f * f
    aq, bq, cq = a - q, b - q, c - q
    p2 = aq * aq + bq * bq + cq * cq + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe = np.where(p > 0, p, 1.0)
    # det((S - qI) / p) / 2
    det = aq * (bq * cq - e * e) - d * (d * cq - e * f) + f * (d * e - bq * f)
    r = np.clip(det / (2.0 * safe**3), -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    hi = q + 2.0 * p * np.cos(phi)
    lo = q + 2.0 * p * np.cos(phi + _TWO_PI_3)
    mid = 3.0 * q - hi - lo
    return np.stack([lo, mid, hi], axis=-1)


def smallest_eigvals3(S: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of symmetric 3x3 matrices, shape (..., 3, 3) -> (...)."""
    return eigvals3(S)[..., 0]


def _cross(a, b):
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def null_vector3(S: np.ndarray, lam: np.ndarray, canonical: bool = True) -> np.ndarray:
    """Unit vector spanning (or lying in) the null space of S - lam I."""
    T = S - lam[..., None, None] * np.eye(3)
    r0, r1, r2 = T[..., 0, :], T[..., 1, :], T[..., 2, :]
    c01, c02, c12 = _cross(r0, r1), _cross(r0, r2), _cross(r1, r2)
    n01 = np.sum(c01 * c01, axis=-1)
    n02 = np.sum(c02 * c02, axis=-1)
    n12 = np.sum(c12 * c12, axis=-1)
    vec = np.where((n01 >= n02)[..., None], c01, c02)
    nbest = np.maximum(n01, n02)
    vec = np.where((n12 > nbest)[..., None], c12, vec)
    nbest = np.maximum(nbest, n12)

    scale = np.max(np.abs(S), axis=(-2, -1))
    degenerate = nbest <= (1e-14 * np.maximum(scale, 1e-300)) ** 2
    if np.any(degenerate):
        # repeated smallest eigenvalue: any unit vector orthogonal to the
        # dominant row of (S - lam I) lies in the eigenspace
        rows = np.stack([r0, r1, r2], axis=-2)
        rn = np.linalg.norm(rows, axis=-1)
        row = np.take_along_axis(rows, np.argmax(rn, axis=-1)[..., None, None], axis=-2)[..., 0, :]
        axis = np.eye(3)[np.argmin(np.abs(row), axis=-1)]
        alt = _cross(row, axis)
        alt = np.where(np.linalg.norm(alt, axis=-1, keepdims=True) > 0, alt, np.eye(3)[0])
        vec = np.where(degenerate[..., None], alt, vec)
    vec = vec / np.sqrt(np.sum(vec * vec, axis=-1, keepdims=True))
    return canonical_sign(vec) if canonical else vec


def refine_smallest(S: np.ndarray, lam: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Replace lam[..., 0] by the Rayleigh quotient of vec where the two agree closely.

    The cubic-root formula loses digits of the smallest eigenvalue relative to
    the largest one; the quotient of an accurate eigenvector does not.
    """
    ray = np.einsum("...i,...ij,...j->...", vec, S, vec)
    ok = np.abs(ray - lam[..., 0]) <= RAYLEIGH_TOL * (np.abs(lam[..., 2]) + np.abs(lam[..., 0]))
    out = lam.copy()
    out[..., 0] = np.where(ok, ray, lam[..., 0])
    out[..., 1] = np.where(ok, lam.sum(axis=-1) - lam[..., 2] - out[..., 0], lam[..., 1])
    return out


def smallest_eigpairs3(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched smallest eigenvalue and unit eigenvector of symmetric 3x3 matrices."""
    S = np.asarray(S, dtype=float)
    lam = eigvals3(S)
    vec = null_vector3(S, lam[..., 0])
    return refine_smallest(S, lam, vec)[..., 0], vec


def smallest_eigvals(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.shape[-1] == 3:
        return smallest_eigvals3(S)
    return np.linalg.eigvalsh(S)[..., 0]


def smallest_eigpairs(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    S = np.asarray(S, dtype=float)
    if S.shape[-1] == 3:
        return smallest_eigpairs3(S)
    w, V = np.linalg.eigh(S)
    return w[..., 0], canonical_sign(V[..., :, 0])


def eigen_smallest(sym) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue and unit eigenvector of a symmetric 3x3 or 6x6 matrix.

    The eigenvector's largest-magnitude component is made positive so the
    result is deterministic. For repeated eigenvalues any valid eigenvector
    may be returned.
    """
    S = np.asarray(sym, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] not in (3, 6):
        raise ValueError(f"expected a 3x3 or 6x6 matrix, got shape {S.shape}")
    if not np.allclose(S, S.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(S).max())):
        raise ValueError("matrix is not symmetric")
    lam, vec = smallest_eigpairs(0.5 * (S + S.T))
    return float(lam), vec
