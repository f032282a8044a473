"""Event and line geometry.

Bearings, the two rotation parametrizations, line-dependent frames, the
incidence matrix and its Gram matrix, plane normals from normal flow, the
coplanarity Gram matrix, and the compressed (event-count independent)
polynomial form of both Gram matrices under the first-order rotation.

Conventions
-----------
* ``omega`` is the angular velocity in rad/s, ``t`` a time relative to the
  cluster reference time.
* Every Gram matrix is multiplied by ``OBJECTIVE_SCALE`` so tiny eigenvalues
  near the optimum stay well above the optimizer's stopping tolerances.
* Per-event weights multiply rows of the stacked matrices, so they enter the
  Gram matrices squared.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .eigen import canonical_sign
from .errors import DegenerateFlow, DegenerateLine

OBJECTIVE_SCALE = 1e6
SMALL_ANGLE = 1e-9
DEGENERATE_LINE_TOL = 1e-9

EXACT = "exact"
FIRST_ORDER = "first-order"
CASCADE = "cascade"

_PARAM_ALIASES = {
    "exact": EXACT,
    "first-order": FIRST_ORDER,
    "first_order": FIRST_ORDER,
    "approx": FIRST_ORDER,
    "cascade": CASCADE,
    "cascad": CASCADE,
}


def parametrization_name(name: str) -> str:
    try:
        return _PARAM_ALIASES[str(name).lower()]
    except KeyError:
        raise ValueError(f"unknown rotation parametrization {name!r}") from None


# ---------------------------------------------------------------- types ---- #

@dataclass(frozen=True)
class Event:
    x: float
    y: float
    tau: float
    polarity: int = 1

    def __post_init__(self):
        if not np.isfinite(self.tau):
            raise ValueError("event timestamp must be finite")
        if self.polarity not in (1, -1):
            raise ValueError("polarity must be +1 or -1")


@dataclass(frozen=True)
class NormalFlowSample:
    event: Event
    g: tuple[float, float]

    def __post_init__(self):
        if np.hypot(*self.g) <= 0:
            raise DegenerateFlow("normal flow must be nonzero")


def _readonly(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventCluster:
    """Events of one 3D line, stored column-wise.

    ``rel_times`` are offsets from ``tau_s``. ``flow`` holds the per-event
    normal flow (N, 2) when available and ``outlier`` the ground-truth
    outlier flags written by the simulator.
    """

    xs: np.ndarray
    ys: np.ndarray
    rel_times: np.ndarray
    tau_s: float = 0.0
    half_window: float = 0.25
    polarity: np.ndarray | None = None
    weights: np.ndarray | None = None
    flow: np.ndarray | None = None
    outlier: np.ndarray | None = None

    def __post_init__(self):
        xs, ys, ts = (_readonly(np.ravel(a)) for a in (self.xs, self.ys, self.rel_times))
        n = len(xs)
        if len(ys) != n or len(ts) != n:
            raise ValueError("xs, ys and rel_times must have equal length")
        if not np.all(np.isfinite(ts)):
            raise ValueError("timestamps must be finite")
        if n and np.max(np.abs(ts)) > self.half_window * (1 + 1e-12):
            raise ValueError("relative time outside the half window")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "rel_times", ts)
        pol = np.ones(n, dtype=int) if self.polarity is None else self.polarity
        pol = _readonly(np.ravel(pol), dtype=int)
        if len(pol) != n or not np.all(np.abs(pol) == 1):
            raise ValueError("polarity must be +1/-1 per event")
        object.__setattr__(self, "polarity", pol)
        if self.weights is not None:
            w = _readonly(np.ravel(self.weights))
            if len(w) != n or np.any(w < 0):
                raise ValueError("weights must be nonnegative, one per event")
            object.__setattr__(self, "weights", w)
        if self.flow is not None:
            g = _readonly(np.reshape(self.flow, (n, 2)))
            object.__setattr__(self, "flow", g)
        if self.outlier is not None:
            o = _readonly(np.ravel(self.outlier), dtype=bool)
            if len(o) != n:
                raise ValueError("outlier flags must match event count")
            object.__setattr__(self, "outlier", o)

    def __len__(self):
        return len(self.xs)

    @classmethod
    def from_events(cls, events: Sequence[Event], tau_s: float, half_window: float, **kw):
        xs = [e.x for e in events]
        ys = [e.y for e in events]
        ts = [e.tau - tau_s for e in events]
        pol = [e.polarity for e in events]
        return cls(xs, ys, ts, tau_s=tau_s, half_window=half_window, polarity=pol, **kw)

    @property
    def events(self) -> list[Event]:
        return [
            Event(float(x), float(y), float(t + self.tau_s), int(p))
            for x, y, t, p in zip(self.xs, self.ys, self.rel_times, self.polarity)
        ]

    @property
    def row_weights(self) -> np.ndarray:
        return np.ones(len(self)) if self.weights is None else self.weights

    @cached_property
    def bearings(self) -> np.ndarray:
        return bearings(self.xs, self.ys)

    @cached_property
    def normals(self) -> np.ndarray:
        if self.flow is None:
            raise ValueError("cluster carries no normal flow")
        return plane_normals(self.bearings, self.flow)

    def subset(self, idx) -> "EventCluster":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return EventCluster(
            self.xs[idx], self.ys[idx], self.rel_times[idx], self.tau_s, self.half_window,
            pick(self.polarity), pick(self.weights), pick(self.flow), pick(self.outlier),
        )

    def replace(self, **changes) -> "EventCluster":
        fields_ = dict(
            xs=self.xs, ys=self.ys, rel_times=self.rel_times, tau_s=self.tau_s,
            half_window=self.half_window, polarity=self.polarity, weights=self.weights,
            flow=self.flow, outlier=self.outlier,
        )
        fields_.update(changes)
        return EventCluster(**fields_)


@dataclass(frozen=True, eq=False)
class PluckerLine:
    d: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        m = np.asarray(self.m, dtype=float)
        nd = np.linalg.norm(d)
        if nd == 0:
            raise DegenerateLine("line direction must be nonzero")
        d, m = d / nd, m / nd
        if abs(d @ m) > 1e-10 * max(1.0, np.linalg.norm(m)):
            raise ValueError("Pluecker coordinates violate d.m = 0")
        object.__setattr__(self, "d", _readonly(d))
        object.__setattr__(self, "m", _readonly(m))

    @classmethod
    def from_point_direction(cls, point, direction) -> "PluckerLine":
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        return cls(d, np.cross(np.asarray(point, dtype=float), d))

    @property
    def closest_point(self) -> np.ndarray:
        return np.cross(self.d, self.m)

    def point(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return self.closest_point + s[..., None] * self.d


@dataclass(frozen=True, eq=False)
class LineFrame:
    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray
    theta_l: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return np.column_stack([self.e1, self.e2, self.e3])


@dataclass(frozen=True)
class MotionState:
    omega: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", _readonly(self.omega))
        object.__setattr__(self, "v", _readonly(self.v))


# ------------------------------------------------------------- rotations --- #

def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _cross(a, b):
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def rotation_exact(omega, t: float) -> np.ndarray:
    """Rodrigues' formula for exp([t*omega]x)."""
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    phi = float(t) * np.asarray(omega, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta == 0.0:
        return np.eye(3)
    if theta < SMALL_ANGLE:
        return np.eye(3) + K
    a = np.sin(theta) / theta
    b = 2.0 * np.sin(0.5 * theta) ** 2 / theta**2
    return np.eye(3) + a * K + b * (K @ K)


def rotation_first_order(omega, t: float) -> np.ndarray:
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    return np.eye(3) + skew(float(t) * np.asarray(omega, dtype=float))


def _axis_angle(times, omega):
    omega = np.asarray(omega, dtype=float)
    w = np.sqrt(np.sum(omega * omega, axis=-1, keepdims=True))
    axis = omega / np.where(w > 0, w, 1.0)
    angle = np.asarray(times, dtype=float) * w[..., 0]
    return axis, angle


def rotate(vectors, times, omega, parametrization: str = EXACT) -> np.ndarray:
    """Apply R(omega; t) to vectors, broadcasting over leading axes.

    ``vectors`` has shape (..., 3), ``times`` the matching (...) and
    ``omega`` anything broadcastable to (..., 3). The exact branch uses the
    axis-angle form with the unit axis omega/|omega|, which has no 0/0 limit.
    """
    vectors = np.asarray(vectors, dtype=float)
    if parametrization_name(parametrization) == FIRST_ORDER:
        phi = np.asarray(times, dtype=float)[..., None] * np.asarray(omega, dtype=float)
        return vectors + _cross(phi, vectors)
    axis, angle = _axis_angle(times, omega)
    ax_v = _cross(axis, vectors)
    # axis x (axis x v) = axis (axis . v) - v
    ax_ax_v = axis * np.sum(axis * vectors, axis=-1, keepdims=True) - vectors
    s = np.sin(angle)[..., None]
    c = (2.0 * np.sin(0.5 * angle) ** 2)[..., None]
    return vectors + s * ax_v + c * ax_ax_v


def rotate_jacobian_t(vectors_rot, times, omega, y, parametrization: str = EXACT):
    """Return (d(R v)/d omega)^T y for each event.

    ``vectors_rot`` are the already rotated vectors R v. The exact branch
    uses the left Jacobian of SO(3): d(R v) = -[R v]x J_l(t omega) t d omega,
    so the transpose product is t J_l^T (R v x y).
    """
    times = np.asarray(times, dtype=float)
    z = times[..., None] * _cross(vectors_rot, y)
    if parametrization_name(parametrization) == FIRST_ORDER:
        return z
    axis, theta = _axis_angle(times, omega)
    # J_l(phi)^T z = z - a [phi]x z + b [phi]x^2 z with phi = theta * axis
    small = np.abs(theta) < 1e-6
    th = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 0.5 - t2 / 24.0, 2.0 * np.sin(0.5 * th) ** 2 / th**2) * theta
    b = np.where(small, 1.0 / 6.0 - t2 / 120.0, (th - np.sin(th)) / th**3) * t2
    az = _cross(axis, z)
    aaz = axis * np.sum(axis * z, axis=-1, keepdims=True) - z
    return z - a[..., None] * az + b[..., None] * aaz


# -------------------------------------------------------------- bearings --- #

def bearings(xs, ys) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    h = np.stack([xs, np.asarray(ys, dtype=float), np.ones_like(xs)], axis=-1)
    return h / np.linalg.norm(h, axis=-1, keepdims=True)


def bearing_from_event(e: Event) -> np.ndarray:
    return bearings(e.x, e.y)


def unrotate_bearing(f, omega, t, parametrization: str = EXACT) -> np.ndarray:
    """Express a camera-frame bearing at time ``t`` in the body frame."""
    return rotate(f, t, omega, parametrization)


# ----------------------------------------------------------------- lines --- #

def line_frame(line: PluckerLine) -> LineFrame:
    p0 = line.closest_point
    dist = np.linalg.norm(p0)
    if dist < DEGENERATE_LINE_TOL:
        raise DegenerateLine("line passes through the origin")
    e1 = np.array(line.d)
    e3 = -p0 / dist
    e2 = np.cross(e3, e1)
    R = np.column_stack([e1, e2, e3])
    theta = Rotation.from_matrix(R).as_rotvec()
    return LineFrame(e1, e2, e3, theta)


# ------------------------------------------------------------- incidence --- #

def incidence_rows(vectors, times, weights=None) -> np.ndarray:
    """Rows w*[t f', f'] for already unrotated bearings (..., 3)."""
    times = np.asarray(times, dtype=float)
    rows = np.concatenate([times[..., None] * vectors, vectors], axis=-1)
    if weights is not None:
        rows = rows * np.asarray(weights, dtype=float)[..., None]
    return rows


def build_incidence(cluster: EventCluster, omega, parametrization: str = EXACT) -> np.ndarray:
    f_rot = rotate(cluster.bearings, cluster.rel_times, omega, parametrization)
    return incidence_rows(f_rot, cluster.rel_times, cluster.weights)


def gram_M(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    M = OBJECTIVE_SCALE * (A.T @ A)
    return 0.5 * (M + M.T)


# ----------------------------------------------------------- coplanarity --- #

def plane_normals(f, g) -> np.ndarray:
    """Plane normals f x (-g_y, g_x, 0), unit length, canonical sign."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    gn = np.linalg.norm(g, axis=-1, keepdims=True)
    if np.any(gn <= 0):
        raise DegenerateFlow("normal flow must be nonzero")
    g = g / gn
    f = f / np.linalg.norm(f, axis=-1, keepdims=True)
    h = np.stack([-g[..., 1], g[..., 0], np.zeros(g.shape[:-1])], axis=-1)
    n = _cross(f, h)
    nn = np.linalg.norm(n, axis=-1, keepdims=True)
    if np.any(nn < 1e-12):
        raise DegenerateFlow("bearing is parallel to the image line direction")
    return canonical_sign(n / nn)


def plane_normal(e: Event, flow: NormalFlowSample | Sequence[float]) -> np.ndarray:
    g = flow.g if isinstance(flow, NormalFlowSample) else flow
    return plane_normals(bearing_from_event(e), np.asarray(g, dtype=float))


def gram_N(normals, rel_times, omega, parametrization: str = EXACT, weights=None) -> np.ndarray:
    n_rot = rotate(normals, rel_times, omega, parametrization)
    if weights is not None:
        n_rot = n_rot * np.asarray(weights, dtype=float)[:, None]
    N = OBJECTIVE_SCALE * (n_rot.T @ n_rot)
    return 0.5 * (N + N.T)


# ----------------------------------------------------------- compression --- #

MONOMIALS = ("1", "wx", "wy", "wz", "wx^2", "wy^2", "wz^2", "wx*wy", "wx*wz", "wy*wz")
_PAIRS = ((0, 1), (0, 2), (1, 2))


def monomials(omega) -> np.ndarray:
    w = np.asarray(omega, dtype=float)
    if w.shape == (3,):
        x, y, z = w.tolist()
        return np.array([1.0, x, y, z, x * x, y * y, z * z, x * y, x * z, y * z])
    x, y, z = w[..., 0], w[..., 1], w[..., 2]
    one = np.ones_like(x)
    return np.stack([one, x, y, z, x * x, y * y, z * z, x * y, x * z, y * z], axis=-1)


def monomial_gradients(omega) -> np.ndarray:
    """d(monomials)/d(omega), shape (..., 3, 10)."""
    w = np.asarray(omega, dtype=float)
    if w.shape == (3,):
        x, y, z = w.tolist()
        return np.array([
            [0.0, 1.0, 0.0, 0.0, 2 * x, 0.0, 0.0, y, z, 0.0],
            [0.0, 0.0, 1.0, 0.0, 0.0, 2 * y, 0.0, x, 0.0, z],
            [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 2 * z, 0.0, x, y],
        ])
    x, y, z = w[..., 0], w[..., 1], w[..., 2]
    o, one = np.zeros_like(x), np.ones_like(x)
    return np.stack([
        np.stack([o, one, o, o, 2 * x, o, o, y, z, o], axis=-1),
        np.stack([o, o, one, o, o, 2 * y, o, x, o, z], axis=-1),
        np.stack([o, o, o, one, o, o, 2 * z, o, x, y], axis=-1),
    ], axis=-2)


@dataclass(frozen=True, eq=False)
class CompressedMoments:
    """Gram matrices as quadratic polynomials in omega.

    ``coefficients`` has shape (..., 10, k, k) with the monomial axis
    ordered as in ``MONOMIALS``. Evaluation cost does not depend on how many
    events were compressed.
    """

    coefficients: np.ndarray
    kind: str = field(default="incidence")

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        k = c.shape[-1]
        object.__setattr__(self, "coefficients", c)
        # (..., 10, k*k) view for matmul-based evaluation
        object.__setattr__(self, "_flat", c.reshape(c.shape[:-2] + (k * k,)))

    @property
    def size(self) -> int:
        return self.coefficients.shape[-1]

    def evaluate(self, omega) -> np.ndarray:
        """G(omega); omega of shape (3,) gives (..., k, k), (K, 3) gives (K, ..., k, k)."""
        mono = monomials(omega)
        k = self.size
        lead = self._flat.shape[:-2]
        if mono.ndim == 1:
            out = np.matmul(mono, self._flat)
            return out.reshape(lead + (k, k))
        extra = (1,) * len(lead)
        out = np.matmul(mono.reshape((mono.shape[0],) + extra + (1, 10)), self._flat)
        return out.reshape((mono.shape[0],) + lead + (k, k))

    def derivative(self, omega) -> np.ndarray:
        """dG/d omega_k for a single omega, shape (..., 3, k, k)."""
        dm = monomial_gradients(omega)
        k = self.size
        out = np.matmul(dm, self._flat)
        return out.reshape(out.shape[:-1] + (k, k))


def _affine_rows(vectors, times, weights, kind):
    """Split rows r(omega) = a + G omega under the first-order rotation.

    omega x v = sum_k omega_k (e_k x v), so column k of G is built from e_k x v.
    """
    vectors = np.asarray(vectors, dtype=float)
    t = np.asarray(times, dtype=float)[..., None]
    w = np.ones(vectors.shape[:-1]) if weights is None else np.asarray(weights, dtype=float)
    w = w[..., None]
    axes = np.eye(3)
    ek_x_v = np.stack([_cross(np.broadcast_to(axes[k], vectors.shape), vectors) for k in range(3)],
                      axis=-2)  # (..., 3, 3)
    if kind == "coplanarity":
        a = w * vectors
        G = (w * t)[..., None, :] * ek_x_v
    elif kind == "incidence":
        a = w * np.concatenate([t * vectors, vectors], axis=-1)
        tt = t[..., None, :]
        G = w[..., None, :] * np.concatenate([tt * tt * ek_x_v, tt * ek_x_v], axis=-1)
    else:
        raise ValueError(f"unknown moment kind {kind!r}")
    return a, G


def compress_moments(vectors, rel_times, weights=None, kind: str = "incidence") -> CompressedMoments:
    """Precompute the monomial coefficient matrices of M(omega) or N(omega).

    ``vectors`` are raw bearings (incidence) or raw plane normals
    (coplanarity), shape (N, 3) or batched (B, N, 3) with zero-weight padding.
    """
    a, G = _affine_rows(vectors, rel_times, weights, kind)
    s = OBJECTIVE_SCALE
    C0 = np.einsum("...ni,...nj->...ij", a, a)
    AG = np.einsum("...ni,...nkj->...kij", a, G)
    lin = AG + np.swapaxes(AG, -1, -2)
    Q = np.einsum("...nki,...nlj->...klij", G, G)
    quad_sq = [Q[..., k, k, :, :] for k in range(3)]
    quad_x = [Q[..., k, l, :, :] + Q[..., l, k, :, :] for k, l in _PAIRS]
    coeffs = np.stack([C0, lin[..., 0, :, :], lin[..., 1, :, :], lin[..., 2, :, :], *quad_sq, *quad_x],
                      axis=-3)
    return CompressedMoments(s * coeffs, kind)
