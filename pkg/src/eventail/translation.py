"""Linear velocity recovery once the angular velocity is known.

Each line contributes only the part of v perpendicular to its direction
(the aperture problem); :func:`velocity_average` intersects those partial
constraints across lines. Scenes whose bearings collapse onto planes are
flagged as pure rotation, in which case v = 0.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .eigen import canonical_sign, eigen_smallest
from .errors import (
    AmbiguousDirection,
    DegenerateConfiguration,
    EventailError,
    InsufficientEvents,
    PureRotationDetected,
    RankDeficient,
)
from .geometry import EXACT, FIRST_ORDER, EventCluster, build_incidence, rotate
from .rotation import (
    COPLANARITY,
    INCIDENCE,
    PURE_ROTATION,
    AdamConfig,
    Objective,
    ObjectiveSpec,
    SolveReport,
    adam_solve,
)

TAU_RANK = 1e-4
RANK_TOL = 1e-10
GAP_TOL = 1e-12
PARALLEL_TOL = 1e-6
MIN_TRANSLATION_EVENTS = 5


@dataclass
class PartialVelocity:
    """Velocity component perpendicular to one line, up to positive scale."""

    d: np.ndarray
    v_perp: np.ndarray
    m: np.ndarray
    line_index: int | None = None


@dataclass
class PureRotationVerdict:
    is_pure: bool
    rank_ratio: float
    e2_estimate: np.ndarray | None = None


@dataclass
class LinearVelocity:
    v_dir: np.ndarray
    sign_resolved: bool = True
    known_up_to_scale: bool = True
    residual: float = 0.0


def _unit(v):
    return v / np.linalg.norm(v)


def line_direction(N) -> np.ndarray:
    """Line direction as the eigenvector of the smallest eigenvalue of N."""
    N = np.asarray(N, dtype=float)
    w = np.linalg.eigvalsh(N)
    if w[1] - w[0] < GAP_TOL * max(abs(w[-1]), 1e-300):
        raise AmbiguousDirection("two smallest eigenvalues of N coincide")
    return eigen_smallest(N)[1]


def _perp_basis(d) -> np.ndarray:
    """Two orthonormal columns spanning the plane perpendicular to unit d."""
    q, _ = np.linalg.qr(np.column_stack([d, np.eye(3)[np.argsort(np.abs(d))[:2]].T]))
    return q[:, 1:]


def _rotated_bearings(cluster: EventCluster, omega) -> np.ndarray:
    return rotate(cluster.bearings, cluster.rel_times, np.asarray(omega, dtype=float), EXACT)


def coplanarity_translation(cluster: EventCluster, omega, d) -> PartialVelocity:
    """Solve rows [t (f' x d), f'] . [v; m] = 0 for v_perp and m."""
    n = len(cluster)
    if n < MIN_TRANSLATION_EVENTS:
        raise InsufficientEvents(f"translation needs {MIN_TRANSLATION_EVENTS} events, got {n}")
    d = _unit(np.asarray(d, dtype=float))
    f = _rotated_bearings(cluster, omega)
    t = cluster.rel_times
    fxd = np.cross(f, d)
    # [d; 0] always solves the system (aperture), so v is sought in the plane
    # perpendicular to d and the remaining null space is one-dimensional
    basis = _perp_basis(d)
    rows = np.hstack([t[:, None] * (fxd @ basis), f]) * cluster.row_weights[:, None]
    _, s, vt = np.linalg.svd(rows, full_matrices=False)
    if len(s) < 5 or s[-2] < RANK_TOL * s[0]:
        raise RankDeficient("translation system has a null space of dimension > 1")
    x = vt[-1]
    v = basis @ x[:2]
    m = x[2:]
    scale = np.linalg.norm(v)
    if scale < RANK_TOL * np.linalg.norm(x):
        raise RankDeficient("velocity is parallel to the line")
    v, m = v / scale, m / scale
    # the point seen at time t lies in front of the camera: its moment about
    # the camera centre has positive projection on f' x d
    cheir = (m[None, :] - t[:, None] * np.cross(v, d)[None, :]) * fxd
    if np.sum(np.sign(cheir.sum(axis=1))) < 0:
        v, m = -v, -m
    return PartialVelocity(canonical_sign(d), v, m)


def incidence_translation(cluster: EventCluster, omega) -> PartialVelocity:
    """Line direction and v_perp from the null vector of the incidence matrix."""
    n = len(cluster)
    if n < MIN_TRANSLATION_EVENTS:
        raise InsufficientEvents(f"translation needs {MIN_TRANSLATION_EVENTS} events, got {n}")
    A = build_incidence(cluster, omega, EXACT)
    _, s, vt = np.linalg.svd(A, full_matrices=False)
    if len(s) < 6 or s[-2] < RANK_TOL * s[0]:
        raise PureRotationDetected("incidence matrix has rank 4")
    x = vt[-1]
    a, b = x[:3], x[3:]
    nb = np.linalg.norm(b)
    a, e2 = a / nb, b / nb
    u_z = a @ e2
    w = a - u_z * e2
    u_y_abs = np.linalg.norm(w)
    if u_y_abs < RANK_TOL:
        raise RankDeficient("cannot separate e3 from the null vector")
    e3 = -w / u_y_abs
    # cheirality: f'.e3 has the sign of -(1 + t u_z) for points ahead of the camera
    f = _rotated_bearings(cluster, omega)
    expected = -np.sign(1.0 + cluster.rel_times * u_z)
    if np.sum(np.sign(f @ e3) * expected) < 0:
        e3 = -e3
    u_y = -(w @ e3)
    e1 = np.cross(e2, e3)
    v = u_y * e2 + u_z * e3
    scale = np.linalg.norm(v)
    if scale < RANK_TOL:
        raise RankDeficient("velocity is parallel to the line")
    return PartialVelocity(canonical_sign(e1), v / scale, -e2 / scale)


def velocity_average(partials: Sequence[PartialVelocity]) -> LinearVelocity:
    """Direction of v lying in span{d_i, v_perp_i} for every line, in least squares."""
    partials = list(partials)
    if len(partials) < 2:
        raise DegenerateConfiguration("velocity averaging needs at least two lines")
    D = np.array([_unit(p.d) for p in partials])
    P = np.array([_unit(p.v_perp) for p in partials])
    cos = np.abs(D @ D[0])
    if np.all(np.arccos(np.clip(cos, -1.0, 1.0)) < PARALLEL_TOL):
        raise DegenerateConfiguration("all line directions are parallel")
    C = np.cross(D, P)
    lam, v = eigen_smallest(C.T @ C)
    dots = P @ v
    votes = np.sum(np.sign(dots))
    if votes < 0 or (votes == 0 and dots[np.argmax(np.abs(dots))] < 0):
        v = -v
    return LinearVelocity(v, residual=float(max(lam, 0.0)))


def detect_pure_rotation(cluster: EventCluster, omega, tau_rank: float = TAU_RANK) -> PureRotationVerdict:
    """Rank-2 test on the unrotated bearings."""
    if len(cluster) < 4:
        raise InsufficientEvents("pure-rotation detection needs 4 events")
    f = _rotated_bearings(cluster, omega)
    u, s, _ = np.linalg.svd(f.T, full_matrices=False)
    ratio = float(s[2] / s[1]) if s[1] > 0 else 0.0
    is_pure = ratio < tau_rank
    return PureRotationVerdict(is_pure, ratio, canonical_sign(u[:, 2]) if is_pure else None)


def _pure_rotation_probe(clusters, config: AdamConfig, tau_rank: float):
    """Solve the reduced objective and return (report, verdicts) if every cluster is pure."""
    spec = ObjectiveSpec(PURE_ROTATION, FIRST_ORDER)
    quick = replace(config, max_iters=max(1, int(config.first_stage_fraction * config.max_iters)))
    rough = adam_solve(spec, clusters, quick)
    # a loose test at the first-order optimum decides whether refining is worthwhile
    if not all(detect_pure_rotation(c, rough.omega_est, 1e-2).is_pure for c in clusters):
        return None
    report = adam_solve(ObjectiveSpec(PURE_ROTATION, "cascade"), clusters, config)
    verdicts = [detect_pure_rotation(c, report.omega_est, tau_rank) for c in clusters]
    if not all(v.is_pure for v in verdicts):
        return None
    return report, verdicts


def solve_full(clusters: Sequence[EventCluster], spec: ObjectiveSpec = ObjectiveSpec(),
               config: AdamConfig = AdamConfig(), tau_rank: float = TAU_RANK,
               omega_init=None) -> SolveReport:
    """Angular velocity, then per-line partial velocities, then their average.

    Clusters whose translation system is degenerate are skipped and listed in
    ``report.excluded`` as (index, reason) pairs.
    """
    clusters = list(clusters)
    start = time.perf_counter()
    probe = None
    if all(len(c) >= 4 for c in clusters):
        probe = _pure_rotation_probe(clusters, config, tau_rank)
    if probe is not None:
        report, _ = probe
        report.pure_rotation = True
        report.v_dir = np.zeros(3)
        report.runtime = time.perf_counter() - start
        return report

    report = adam_solve(spec, clusters, config, omega_init)
    omega = report.omega_est
    partials, excluded, ratios = [], [], []
    for i, c in enumerate(clusters):
        try:
            verdict = detect_pure_rotation(c, omega, tau_rank)
            ratios.append(verdict.rank_ratio)
            if verdict.is_pure:
                raise PureRotationDetected("bearings are rank 2")
            if spec.formulation == INCIDENCE:
                p = incidence_translation(c, omega)
            else:
                N = Objective([c], COPLANARITY, EXACT).matrices(omega)[0, 0]
                p = coplanarity_translation(c, omega, line_direction(N))
        except EventailError as exc:
            excluded.append((i, type(exc).__name__))
            continue
        p.line_index = i
        partials.append(p)
    report.partials = partials
    report.excluded = excluded
    report.line_ratios = ratios
    if len(partials) >= 2:
        report.v_dir = velocity_average(partials).v_dir
    elif partials:
        report.v_dir = partials[0].v_perp.copy()
    report.runtime = time.perf_counter() - start
    return report
