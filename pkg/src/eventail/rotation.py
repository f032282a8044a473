"""Angular-velocity estimation by minimizing smallest eigenvalues with Adam.

Three formulations share one machinery:

``incidence``      sum_i lambda_min(M_i(omega)), M_i the 6x6 incidence Gram matrix
``coplanarity``    sum_i lambda_min(N_i(omega)), N_i the 3x3 plane-normal Gram matrix
``pure-rotation``  sum_i lambda_min of the bottom-right 3x3 block of M_i

Clusters are padded to a common length with zero-weight events so that every
evaluation is a handful of batched numpy calls, and several angular
velocities (e.g. a point and its finite-difference neighbours) are evaluated
together.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _kernels
from .eigen import eigvals3, null_vector3, refine_smallest, smallest_eigvals
from .errors import DegenerateEigenvalue, InsufficientEvents
from .geometry import (
    CASCADE,
    EXACT,
    FIRST_ORDER,
    OBJECTIVE_SCALE,
    EventCluster,
    compress_moments,
    incidence_rows,
    parametrization_name,
    rotate,
    rotate_jacobian_t,
)

INCIDENCE = "incidence"
COPLANARITY = "coplanarity"
PURE_ROTATION = "pure-rotation"

_FORMULATION_ALIASES = {
    "incidence": INCIDENCE, "inc": INCIDENCE,
    "coplanarity": COPLANARITY, "cop": COPLANARITY,
    "pure-rotation": PURE_ROTATION, "incidence-pure-rotation": PURE_ROTATION, "pure": PURE_ROTATION,
}

MIN_EVENTS = {INCIDENCE: 8, COPLANARITY: 3, PURE_ROTATION: 4}
EIGEN_GAP_TOL = 1e-12


def formulation_name(name: str) -> str:
    try:
        return _FORMULATION_ALIASES[str(name).lower()]
    except KeyError:
        raise ValueError(f"unknown formulation {name!r}") from None


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_iters: int = 2000
    grad_tolerance: float = 1e-10
    objective_tolerance: float = 1e-14
    fdm_step: float = 1e-6
    first_stage_fraction: float = 0.6

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.fdm_step <= 0:
            raise ValueError("fdm_step must be positive")


@dataclass(frozen=True)
class ObjectiveSpec:
    formulation: str = COPLANARITY
    parametrization: str = CASCADE
    gradient_mode: str | None = None  # None: closed form where available
    exponent_p: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "formulation", formulation_name(self.formulation))
        object.__setattr__(self, "parametrization", parametrization_name(self.parametrization))
        mode = self.gradient_mode
        if mode is None:
            mode = "fdm" if self.formulation == INCIDENCE else "closed"
        mode = {"fdm": "fdm", "finite-difference": "fdm", "closed": "closed",
                "closed-form": "closed"}.get(str(mode).lower())
        if mode is None:
            raise ValueError(f"unknown gradient mode {self.gradient_mode!r}")
        if mode == "closed" and self.formulation == INCIDENCE:
            raise ValueError("closed-form gradients need 3x3 matrices (coplanarity or pure-rotation)")
        if not self.exponent_p > 0:
            raise ValueError("exponent_p must be positive")
        object.__setattr__(self, "gradient_mode", mode)


@dataclass
class StageTrace:
    parametrization: str
    omega_start: np.ndarray
    omega_end: np.ndarray
    objective: float
    iterations: int
    converged: bool


@dataclass
class SolveReport:
    omega_est: np.ndarray
    objective_value: float
    iterations: int
    converged: bool
    stage_trace: list = field(default_factory=list)
    # filled in by the translation stage
    v_dir: np.ndarray | None = None
    pure_rotation: bool = False
    partials: list = field(default_factory=list)
    excluded: list = field(default_factory=list)
    line_ratios: list = field(default_factory=list)
    runtime: float = 0.0
    # filled in by the RANSAC wrapper
    inliers: list | None = None
    low_confidence: bool = False


# ------------------------------------------------------------- objective --- #

class Objective:
    """Precomputed per-cluster material for one formulation and parametrization.

    Calling the object evaluates sum_i lambda_min(.)^p; ``matrices`` exposes
    the per-cluster Gram matrices for a batch of angular velocities.
    """

    def __init__(self, clusters: Sequence[EventCluster], formulation: str,
                 parametrization: str = EXACT, exponent_p: float = 1.0):
        self.formulation = formulation_name(formulation)
        self.parametrization = parametrization_name(parametrization)
        if self.parametrization == CASCADE:
            raise ValueError("an objective is evaluated under a single parametrization")
        self.exponent_p = float(exponent_p)
        clusters = list(clusters)
        if not clusters:
            raise InsufficientEvents("no clusters given")
        need = MIN_EVENTS[self.formulation]
        for i, c in enumerate(clusters):
            if len(c) < need:
                raise InsufficientEvents(
                    f"cluster {i} has {len(c)} events, {self.formulation} needs {need}")
        n_max = max(len(c) for c in clusters)
        m = len(clusters)
        vecs = np.zeros((m, n_max, 3))
        vecs[..., 2] = 1.0
        times = np.zeros((m, n_max))
        w = np.zeros((m, n_max))
        for i, c in enumerate(clusters):
            n = len(c)
            vecs[i, :n] = c.normals if self.formulation == COPLANARITY else c.bearings
            times[i, :n] = c.rel_times
            w[i, :n] = c.row_weights
        self.vectors, self.times, self.weights = vecs, times, w
        self._w2 = w * w
        self.size = 6 if self.formulation == INCIDENCE else 3
        self._moments = None

    @property
    def n_clusters(self) -> int:
        return self.vectors.shape[0]

    @property
    def moments(self):
        if self._moments is None:
            kind = INCIDENCE if self.formulation == INCIDENCE else COPLANARITY
            self._moments = compress_moments(self.vectors, self.times, self.weights, kind)
        return self._moments

    def matrices(self, omegas) -> np.ndarray:
        """Gram matrices, shape (K, M, k, k) for omegas of shape (K, 3)."""
        omegas = np.atleast_2d(np.asarray(omegas, dtype=float))
        if self.parametrization == FIRST_ORDER:
            return self.moments.evaluate(omegas)
        if _kernels.HAVE_NUMBA:
            return _kernels.gram_exact(self.vectors, self.times, self.weights, omegas,
                                       self.size == 6, OBJECTIVE_SCALE)
        rot = rotate(self.vectors, self.times, omegas[:, None, None, :], EXACT)
        rows = rot * self.weights[..., None]
        if self.formulation == INCIDENCE:
            rows = incidence_rows(rows, self.times)
        return OBJECTIVE_SCALE * np.matmul(np.swapaxes(rows, -1, -2), rows)

    def _combine(self, lam):
        lam = np.maximum(lam, 0.0)
        if self.exponent_p != 1.0:
            lam = lam**self.exponent_p
        return lam.sum(axis=-1)

    def _eigs(self, S):
        """Ascending eigenvalues (..., 3) and smallest eigenvectors of 3x3 stacks."""
        if _kernels.HAVE_NUMBA:
            lam, vec = _kernels.eig3(np.ascontiguousarray(S).reshape(-1, 3, 3))
            return lam.reshape(S.shape[:-1]), vec.reshape(S.shape[:-1])
        lam = eigvals3(S)
        vec = null_vector3(S, lam[..., 0], canonical=False)
        return refine_smallest(S, lam, vec), vec

    def _smallest(self, S):
        if self.size == 3:
            return self._eigs(S)[0][..., 0]
        return smallest_eigvals(S)

    def values(self, omegas) -> np.ndarray:
        return self._combine(self._smallest(self.matrices(omegas)))

    def per_cluster(self, omega) -> np.ndarray:
        return np.maximum(self._smallest(self.matrices(omega)[0]), 0.0)

    def __call__(self, omega) -> float:
        return float(self.values(omega)[0])

    # gradients

    def value_and_grad_fdm(self, omega, step: float = 1e-6, central: bool = False):
        omega = np.asarray(omega, dtype=float)
        eye = np.eye(3) * step
        if central:
            vals = self.values(np.vstack([omega, omega + eye, omega - eye]))
            return vals[0], (vals[1:4] - vals[4:7]) / (2 * step)
        vals = self.values(np.vstack([omega, omega + eye]))
        return vals[0], (vals[1:] - vals[0]) / step

    def value_and_grad_closed(self, omega):
        if self.size != 3:
            raise ValueError("closed-form gradients need 3x3 matrices")
        omega = np.asarray(omega, dtype=float)
        fused = None
        if self.parametrization == FIRST_ORDER and _kernels.HAVE_NUMBA:
            flat = self.moments._flat
            fused = _kernels.poly_eig_grad3(flat.reshape(-1, 10, 9), omega)
            w3, q = fused[0], fused[1]
        else:
            S = self.matrices(omega)[0]
            w3, q = self._eigs(S)
        gap = w3[:, 1] - w3[:, 0]
        if np.any(gap <= EIGEN_GAP_TOL * np.maximum(np.abs(w3[:, 2]), 1.0)):
            raise DegenerateEigenvalue("smallest eigenvalue is not simple")
        lam = np.maximum(w3[:, 0], 0.0)
        p = self.exponent_p
        coef = np.ones_like(lam) if p == 1.0 else p * np.where(lam > 0, lam, 0.0) ** (p - 1)
        if fused is not None:
            per = fused[2].T
        elif self.parametrization == FIRST_ORDER:
            dS = self.moments.derivative(omega).reshape(-1, 3, 9)  # (M, 3, 9)
            qq = (q[:, :, None] * q[:, None, :]).reshape(-1, 9, 1)
            per = np.matmul(dS, qq)[..., 0].T
        elif _kernels.HAVE_NUMBA:
            per = _kernels.grad_exact3(self.vectors, self.times, self.weights, omega, q,
                                       OBJECTIVE_SCALE).T
        else:
            rot = rotate(self.vectors, self.times, omega, EXACT)
            s = np.matmul(rot, q[:, :, None])[..., 0]
            J = rotate_jacobian_t(rot, self.times, omega, q[:, None, :], EXACT)
            per = 2.0 * OBJECTIVE_SCALE * np.matmul((self._w2 * s)[:, None, :], J)[:, 0, :].T
        return self._combine(lam), per @ coef

    def value_and_grad(self, omega, mode: str = "fdm", step: float = 1e-6):
        if mode == "closed":
            try:
                return self.value_and_grad_closed(omega)
            except DegenerateEigenvalue:
                pass
        return self.value_and_grad_fdm(omega, step)


def objective_incidence(clusters, omega, parametrization=EXACT, exponent_p=1.0) -> float:
    return Objective(clusters, INCIDENCE, parametrization, exponent_p)(omega)


def objective_coplanarity(clusters, omega, parametrization=EXACT, exponent_p=1.0) -> float:
    return Objective(clusters, COPLANARITY, parametrization, exponent_p)(omega)


def objective_pure_rotation(clusters, omega, parametrization=EXACT) -> float:
    return Objective(clusters, PURE_ROTATION, parametrization)(omega)


def grad_fdm(objective, omega, step: float = 1e-6, central: bool = False) -> np.ndarray:
    """Finite-difference gradient of any scalar function of omega."""
    if not step > 0:
        raise ValueError("step must be positive")
    omega = np.asarray(omega, dtype=float)
    f0 = objective(omega)
    g = np.empty(3)
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        if central:
            g[k] = (objective(omega + e) - objective(omega - e)) / (2 * step)
        else:
            g[k] = (objective(omega + e) - f0) / step
    return g


def grad_closed(clusters, omega, parametrization=EXACT, formulation=COPLANARITY) -> np.ndarray:
    """Analytic gradient sum_i q_i^T dN_i/d omega q_i.

    Raises DegenerateEigenvalue when some lambda_min is not simple.
    """
    obj = clusters if isinstance(clusters, Objective) else Objective(clusters, formulation, parametrization)
    return obj.value_and_grad_closed(omega)[1]


# ----------------------------------------------------------------- adam ---- #

def _adam(objective: Objective, omega0, config: AdamConfig, mode: str, max_iters: int):
    omega = np.array(omega0, dtype=float)
    m = np.zeros(3)
    v = np.zeros(3)
    best_f, best_w = np.inf, omega.copy()
    hist: list[float] = []
    converged = False
    b1, b2 = config.beta1, config.beta2
    it = 0
    for it in range(1, max_iters + 1):
        f, g = objective.value_and_grad(omega, mode, config.fdm_step)
        if f < best_f:
            best_f, best_w = f, omega.copy()
        hist.append(f)
        if (len(hist) > 10 and np.linalg.norm(g) < config.grad_tolerance
                and abs(hist[-11] - f) < config.objective_tolerance):
            converged = True
            break
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**it)
        vhat = v / (1 - b2**it)
        omega = omega - config.learning_rate * mhat / (np.sqrt(vhat) + config.epsilon)
    if not converged:
        f = objective(omega)
        if f < best_f:
            best_f, best_w = f, omega.copy()
    return best_w, float(best_f), it, converged


def _objective_for(spec: ObjectiveSpec, clusters, parametrization):
    return Objective(clusters, spec.formulation, parametrization, spec.exponent_p)


def adam_solve(spec: ObjectiveSpec, clusters, config: AdamConfig = AdamConfig(),
               omega_init=None) -> SolveReport:
    """Minimize the chosen objective from ``omega_init`` (zero by default).

    Returns the best iterate seen, not the last one. With the cascade
    parametrization this delegates to :func:`cascade_solve`.
    """
    omega0 = np.zeros(3) if omega_init is None else np.asarray(omega_init, dtype=float)
    if spec.parametrization == CASCADE:
        return cascade_solve(clusters, config, spec=spec, omega_init=omega0)
    obj = _objective_for(spec, clusters, spec.parametrization)
    w, f, iters, conv = _adam(obj, omega0, config, spec.gradient_mode, config.max_iters)
    trace = [StageTrace(spec.parametrization, omega0, w, f, iters, conv)]
    return SolveReport(w, f, iters, conv, trace)


def cascade_solve(clusters, config: AdamConfig = AdamConfig(), spec: ObjectiveSpec | None = None,
                  omega_init=None) -> SolveReport:
    """First-order stage with compressed moments, then exact refinement."""
    spec = ObjectiveSpec() if spec is None else spec
    omega0 = np.zeros(3) if omega_init is None else np.asarray(omega_init, dtype=float)
    n1 = max(1, int(round(config.first_stage_fraction * config.max_iters)))
    n2 = max(1, config.max_iters - n1)
    approx = _objective_for(spec, clusters, FIRST_ORDER)
    w1, f1, it1, c1 = _adam(approx, omega0, config, spec.gradient_mode, n1)
    exact = _objective_for(spec, clusters, EXACT)
    w2, f2, it2, c2 = _adam(exact, w1, config, spec.gradient_mode, n2)
    trace = [
        StageTrace(FIRST_ORDER, omega0, w1, f1, it1, c1),
        StageTrace(EXACT, w1, w2, f2, it2, c2),
    ]
    return SolveReport(w2, f2, it1 + it2, c2, trace)


def with_parametrization(spec: ObjectiveSpec, parametrization: str) -> ObjectiveSpec:
    return replace(spec, parametrization=parametrization_name(parametrization))
