"""Synthetic scenes of 3D lines observed by an event camera.

The camera moves with constant angular velocity ``omega`` and linear
velocity ``v``. Its frame at the reference time is the body frame; at time
``t`` it has orientation exp([t omega]x) and center ``t v``. A world point X
(body frame) is seen at time ``t`` along the bearing R(t)^T (X - t v).

All randomness flows through explicit seeds, so every function here is a
pure function of its arguments.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np

from .errors import BehindCamera, DegenerateProjection, RejectionExhausted
from .geometry import (
    EventCluster,
    Event,
    MotionState,
    NormalFlowSample,
    PluckerLine,
    rotate,
)

MAX_DIRECTION_REJECTIONS = 10_000
MAX_POINT_ATTEMPTS = 100
MAX_LINE_ATTEMPTS = 1000


@dataclass(frozen=True)
class SimConfig:
    omega_range: float = 1.0 / 8.0
    v_range: float = 5.0
    window: float = 0.5
    cube_center: tuple = (0.0, 0.0, 1.0)
    cube_side: float = 5.0
    line_point_radius: float = 2.5
    max_line_plane_angle: float = 60.0
    focal_px: float = 400.0
    sigma_pixel: float = 0.0
    sigma_time: float = 0.0
    n_lines: int = 5
    n_events: int = 100
    outlier_fraction: float = 0.0
    seed: int = 0
    pure_rotation: bool = False
    # flow direction jitter is atan(flow_noise_gain * sigma_pixel / focal_px)
    flow_noise_gain: float = 10.0
    tau_s: float = 0.0

    def __post_init__(self):
        for name in ("omega_range", "v_range", "window", "cube_side", "line_point_radius",
                     "max_line_plane_angle", "focal_px"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.sigma_pixel < 0 or self.sigma_time < 0:
            raise ValueError("noise levels must be nonnegative")
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError("outlier_fraction must lie in [0, 1]")
        if self.n_lines < 1 or self.n_events < 1:
            raise ValueError("n_lines and n_events must be positive")

    @property
    def half_window(self) -> float:
        return 0.5 * self.window

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Scene:
    motion: MotionState
    lines: list
    clusters: list
    anchors: list = field(default_factory=list)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _child_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


def sample_motion(config: SimConfig, rng) -> MotionState:
    rng = _rng(rng)
    omega = rng.uniform(-config.omega_range, config.omega_range, 3)
    v = rng.uniform(-config.v_range, config.v_range, 3)
    if config.pure_rotation:
        v = np.zeros(3)
    return MotionState(omega, v)


def sample_line(config: SimConfig, rng) -> tuple[PluckerLine, np.ndarray]:
    """Anchor uniform in the cube, direction uniform on the sphere.

    Directions are rejected until their angle with the image plane is below
    ``max_line_plane_angle``.
    """
    rng = _rng(rng)
    half = 0.5 * config.cube_side
    anchor = np.asarray(config.cube_center, dtype=float) + rng.uniform(-half, half, 3)
    max_dz = math.sin(math.radians(config.max_line_plane_angle))
    for _ in range(MAX_DIRECTION_REJECTIONS):
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        if abs(d[2]) < max_dz:
            return PluckerLine.from_point_direction(anchor, d), anchor
    raise RejectionExhausted("no line direction satisfied the image-plane angle bound")


def _camera_points(line_pts, ts, motion):
    """World points -> camera-frame coordinates at times ts."""
    rel = line_pts - ts[:, None] * motion.v
    return rotate(rel, ts, -np.asarray(motion.omega))


def _image_line_normals(line: PluckerLine, motion: MotionState, ts):
    """Camera-frame normal of the plane through the camera center and the line."""
    ts = np.asarray(ts, dtype=float)
    centers = ts[:, None] * motion.v
    n_body = line.m - np.cross(centers, line.d)
    return rotate(n_body, ts, -np.asarray(motion.omega))


def flow_directions(line: PluckerLine, motion: MotionState, ts) -> np.ndarray:
    """Unit normal-flow directions of the projected line at times ``ts``."""
    n = _image_line_normals(line, motion, ts)
    g = n[:, :2]
    gn = np.linalg.norm(g, axis=1)
    if np.any(gn < 1e-12 * np.maximum(np.linalg.norm(n, axis=1), 1e-300)) or np.any(
        np.linalg.norm(n, axis=1) < 1e-12
    ):
        raise DegenerateProjection("line does not project to an image line")
    return g / gn[:, None]


def ground_truth_flow(line: PluckerLine, motion: MotionState, event: Event, tau_s: float = 0.0):
    g = flow_directions(line, motion, [event.tau - tau_s])[0]
    return NormalFlowSample(event, (float(g[0]), float(g[1])))


def _sample_points(line, anchor, motion, config, rng, n):
    h = config.half_window
    ts = rng.uniform(-h, h, n)
    ss = rng.uniform(-config.line_point_radius, config.line_point_radius, n)
    cam = _camera_points(anchor + ss[:, None] * line.d, ts, motion)
    for _ in range(MAX_POINT_ATTEMPTS):
        bad = cam[:, 2] <= 0
        if not bad.any():
            return ts, cam
        k = int(bad.sum())
        ts[bad] = rng.uniform(-h, h, k)
        ss[bad] = rng.uniform(-config.line_point_radius, config.line_point_radius, k)
        cam[bad] = _camera_points(anchor + ss[bad, None] * line.d, ts[bad], motion)
    raise BehindCamera("could not sample event points in front of the camera")


def synthesize_events(line: PluckerLine, motion: MotionState, config: SimConfig, seed,
                      anchor=None, n_events: int | None = None) -> EventCluster:
    """Noise-free events of one line with ground-truth normal flow."""
    rng = _rng(seed)
    n = config.n_events if n_events is None else n_events
    anchor = line.closest_point if anchor is None else np.asarray(anchor, dtype=float)
    ts, cam = _sample_points(line, anchor, motion, config, rng, n)
    xs = cam[:, 0] / cam[:, 2]
    ys = cam[:, 1] / cam[:, 2]
    pol = rng.choice([-1, 1], n)
    flow = flow_directions(line, motion, ts)
    return EventCluster(xs, ys, ts, tau_s=config.tau_s, half_window=config.half_window,
                        polarity=pol, flow=flow, outlier=np.zeros(n, dtype=bool))


def add_noise(cluster: EventCluster, config: SimConfig, seed) -> EventCluster:
    """Gaussian pixel noise, timestamp jitter and matching flow-direction jitter."""
    if config.sigma_pixel == 0 and config.sigma_time == 0:
        return cluster
    rng = _rng(seed)
    n = len(cluster)
    sp = config.sigma_pixel / config.focal_px
    xs = cluster.xs + rng.normal(0.0, sp, n) if sp > 0 else cluster.xs
    ys = cluster.ys + rng.normal(0.0, sp, n) if sp > 0 else cluster.ys
    ts = cluster.rel_times + rng.normal(0.0, config.sigma_time, n) if config.sigma_time > 0 \
        else cluster.rel_times
    flow = cluster.flow
    if flow is not None and sp > 0:
        sigma_angle = math.atan(config.flow_noise_gain * sp)
        ang = rng.normal(0.0, sigma_angle, n)
        c, s = np.cos(ang), np.sin(ang)
        flow = np.stack([c * flow[:, 0] - s * flow[:, 1], s * flow[:, 0] + c * flow[:, 1]], axis=1)
    half = max(cluster.half_window, float(np.max(np.abs(ts))) if n else 0.0)
    return cluster.replace(xs=xs, ys=ys, rel_times=ts, flow=flow, half_window=half)


def inject_outliers(cluster: EventCluster, fraction: float, seed, motion: MotionState,
                    config: SimConfig) -> EventCluster:
    """Replace floor(fraction * N) events by events of unrelated random lines.

    Every outlier comes from its own freshly drawn line, so outliers share no
    common structure.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    n = len(cluster)
    k = int(math.floor(fraction * n))
    if k == 0:
        return cluster
    rng = _rng(seed)
    idx = np.sort(rng.choice(n, size=k, replace=False))
    parts = []
    while len(parts) < k:
        for _ in range(MAX_LINE_ATTEMPTS):
            line, anchor = sample_line(config, rng)
            try:
                parts.append(synthesize_events(line, motion, config, rng, anchor=anchor, n_events=1))
                break
            except (BehindCamera, DegenerateProjection):
                continue
        else:
            raise RejectionExhausted("could not generate an outlier line")
    other = EventCluster(
        np.concatenate([p.xs for p in parts]), np.concatenate([p.ys for p in parts]),
        np.concatenate([p.rel_times for p in parts]), tau_s=cluster.tau_s,
        half_window=cluster.half_window, polarity=np.concatenate([p.polarity for p in parts]),
        flow=np.concatenate([p.flow for p in parts]))
    xs, ys, ts = cluster.xs.copy(), cluster.ys.copy(), cluster.rel_times.copy()
    pol = cluster.polarity.copy()
    xs[idx], ys[idx], ts[idx], pol[idx] = other.xs, other.ys, other.rel_times, other.polarity
    flow = None
    if cluster.flow is not None:
        flow = cluster.flow.copy()
        flow[idx] = other.flow
    out = np.zeros(n, dtype=bool) if cluster.outlier is None else cluster.outlier.copy()
    out[idx] = True
    return cluster.replace(xs=xs, ys=ys, rel_times=ts, polarity=pol, flow=flow, outlier=out)


def sample_scene(config: SimConfig, seed=None) -> Scene:
    """Draw motion, lines and (optionally noisy, contaminated) event clusters."""
    rng = _rng(config.seed if seed is None else seed)
    motion = sample_motion(config, rng)
    lines, anchors, clusters = [], [], []
    attempts = 0
    while len(lines) < config.n_lines:
        attempts += 1
        if attempts > MAX_LINE_ATTEMPTS * config.n_lines:
            raise RejectionExhausted("could not place enough visible lines")
        line, anchor = sample_line(config, rng)
        ev_seed, noise_seed, out_seed = _child_seed(rng), _child_seed(rng), _child_seed(rng)
        try:
            cluster = synthesize_events(line, motion, config, ev_seed, anchor=anchor)
            if config.outlier_fraction > 0:
                cluster = inject_outliers(cluster, config.outlier_fraction, out_seed, motion, config)
        except (BehindCamera, DegenerateProjection):
            continue
        cluster = add_noise(cluster, config, noise_seed)
        lines.append(line)
        anchors.append(anchor)
        clusters.append(cluster)
    return Scene(motion, lines, clusters, anchors)
