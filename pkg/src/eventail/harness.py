"""Error metrics, Monte Carlo benchmarks, objective landscapes and RANSAC."""
from __future__ import annotations

import csv
import math
import time
from contextlib import contextmanager
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInput, EventailError, NoConsensus, UndefinedMetric
from .geometry import CASCADE, EXACT, FIRST_ORDER, EventCluster, build_incidence, rotate
from .rotation import (
    COPLANARITY,
    INCIDENCE,
    MIN_EVENTS,
    AdamConfig,
    Objective,
    ObjectiveSpec,
    SolveReport,
    adam_solve,
    formulation_name,
)
from .simulator import SimConfig, sample_scene
from .translation import TAU_RANK, solve_full

SR1_THRESHOLD = 0.01
SR2_THRESHOLD = 0.05
SWEEP_AXES = ("n_events", "n_lines", "sigma_time", "sigma_pixel")
CSV_COLUMNS = ("solver_id", "axis_value", "median_eps_ang", "median_eps_lin_deg", "sr1", "sr2",
               "median_objective", "median_runtime_s")


def fmt(x) -> str:
    """Round-trip float formatting (17 significant digits)."""
    return format(float(x), ".17g")


# --------------------------------------------------------------- metrics --- #

def metric_ang(omega_est, omega_gt) -> float:
    """||a - b|| / (||a|| + ||b||), which lies in [0, 1]."""
    a = np.asarray(omega_est, dtype=float)
    b = np.asarray(omega_gt, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    scale = max(na, nb)
    if scale == 0:
        raise UndefinedMetric("both angular velocities are zero")
    # normalizing first keeps ratios such as 1/3 for (2w, w) exact
    return float((np.linalg.norm(a - b) / scale) / (na / scale + nb / scale))


def metric_lin(v_est, v_gt) -> float:
    """Angle between two velocity directions in degrees."""
    a = np.asarray(v_est, dtype=float)
    b = np.asarray(v_gt, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UndefinedMetric("linear velocity metric needs nonzero vectors")
    return float(np.degrees(np.arccos(np.clip(a @ b / (na * nb), -1.0, 1.0))))


def success_rate(errors: Iterable[float], threshold: float) -> float:
    e = np.asarray(list(errors), dtype=float)
    if e.size == 0:
        raise EmptyInput("success rate of an empty list")
    return float(np.mean(e < threshold))


# ------------------------------------------------------------- benchmark --- #

@dataclass
class TrialResult:
    eps_ang: float
    eps_lin: float
    objective: float
    runtime: float
    solver_id: str
    converged: bool
    error: str | None = None
    seed: int | None = None


@dataclass
class BenchmarkSummary:
    solver_id: str
    median_eps_ang: float
    median_eps_lin: float
    sr1: float
    sr2: float
    median_objective: float
    median_runtime: float
    n_trials: int
    n_failed: int = 0
    trials: list = field(default_factory=list, repr=False)

    @classmethod
    def from_trials(cls, solver_id: str, trials: Sequence[TrialResult]) -> "BenchmarkSummary":
        ang = [t.eps_ang for t in trials]
        return cls(
            solver_id,
            float(np.median(ang)),
            float(np.median([t.eps_lin for t in trials])),
            success_rate(ang, SR1_THRESHOLD),
            success_rate(ang, SR2_THRESHOLD),
            float(np.median([t.objective for t in trials])),
            float(np.median([t.runtime for t in trials])),
            len(trials),
            sum(t.error is not None for t in trials),
            list(trials),
        )


def solver_label(spec: ObjectiveSpec) -> str:
    form = {INCIDENCE: "inc", COPLANARITY: "cop"}.get(spec.formulation, "pure")
    param = "approx" if spec.parametrization == FIRST_ORDER else spec.parametrization
    return f"{form}+{param}"


DEFAULT_SOLVERS = (ObjectiveSpec(INCIDENCE, CASCADE), ObjectiveSpec(COPLANARITY, CASCADE))


def _trial(config: SimConfig, seed: int, specs, adam: AdamConfig, tau_rank: float):
    scene = sample_scene(config, seed)
    results = []
    for spec in specs:
        label = solver_label(spec)
        start = time.perf_counter()
        try:
            report = solve_full(scene.clusters, spec, adam, tau_rank)
        except EventailError as exc:
            results.append(TrialResult(1.0, 180.0, math.inf, time.perf_counter() - start, label,
                                       False, type(exc).__name__, seed))
            continue
        runtime = time.perf_counter() - start
        eps_ang = metric_ang(report.omega_est, scene.motion.omega)
        if report.pure_rotation or report.v_dir is None or not np.any(report.v_dir):
            eps_lin = 0.0 if not np.any(scene.motion.v) and report.pure_rotation else 180.0
        elif not np.any(scene.motion.v):
            eps_lin = 180.0
        else:
            eps_lin = metric_lin(report.v_dir, scene.motion.v)
        results.append(TrialResult(eps_ang, eps_lin, report.objective_value, runtime, label,
                                   report.converged, None, seed))
    return results


def _trial_star(args):
    return _trial(*args)


def run_trials(config: SimConfig, trials: int, solvers=DEFAULT_SOLVERS, adam: AdamConfig = AdamConfig(),
               seed: int | None = None, workers: int = 1, tau_rank: float = TAU_RANK) -> dict:
    """Raw per-trial results keyed by solver label; trial i uses seed + i."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    base = config.seed if seed is None else seed
    jobs = [(config, base + i, tuple(solvers), adam, tau_rank) for i in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(_trial_star, jobs, chunksize=max(1, trials // (4 * workers))))
    else:
        per_trial = [_trial_star(j) for j in jobs]
    out: dict[str, list[TrialResult]] = {solver_label(s): [] for s in solvers}
    for res in per_trial:
        for r in res:
            out[r.solver_id].append(r)
    return out


def run_benchmark(config: SimConfig, trials: int, solvers=DEFAULT_SOLVERS,
                  adam: AdamConfig = AdamConfig(), seed: int | None = None, workers: int = 1,
                  tau_rank: float = TAU_RANK) -> dict:
    """One :class:`BenchmarkSummary` per solver label.

    Solver errors inside a trial are recorded as failed trials with the worst
    possible errors rather than aborting the run.
    """
    raw = run_trials(config, trials, solvers, adam, seed, workers, tau_rank)
    return {k: BenchmarkSummary.from_trials(k, v) for k, v in raw.items()}


@dataclass
class SweepRow:
    axis: str
    axis_value: float
    summary: BenchmarkSummary


def run_sweep(axis: str, values: Sequence, base_config: SimConfig, trials: int,
              solvers=DEFAULT_SOLVERS, adam: AdamConfig = AdamConfig(), seed: int | None = None,
              workers: int = 1) -> list[SweepRow]:
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    rows = []
    for val in values:
        val = int(val) if axis in ("n_events", "n_lines") else float(val)
        cfg = replace(base_config, **{axis: val})
        for summary in run_benchmark(cfg, trials, solvers, adam, seed, workers).values():
            rows.append(SweepRow(axis, val, summary))
    return rows


@contextmanager
def _opened(target):
    if hasattr(target, "write"):
        yield target
    else:
        with open(target, "w", newline="") as fh:
            yield fh


def write_summary_csv(rows, path, metadata: dict | None = None) -> None:
    """Write summaries (or sweep rows) with the fixed column layout.

    ``metadata`` is written first as ``# key=value`` comment lines. ``path``
    may also be an open text file.
    """
    with _opened(path) as fh:
        for k, v in (metadata or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            if isinstance(row, SweepRow):
                s, axis_value = row.summary, fmt(row.axis_value)
            else:
                s, axis_value = row, ""
            w.writerow([s.solver_id, axis_value, fmt(s.median_eps_ang), fmt(s.median_eps_lin),
                        fmt(s.sr1), fmt(s.sr2), fmt(s.median_objective), fmt(s.median_runtime)])


def format_table(summaries: Iterable[BenchmarkSummary]) -> str:
    lines = [f"{'solver':<16}{'eps_ang':>12}{'eps_lin[deg]':>14}{'SR1':>8}{'SR2':>8}{'trials':>8}"]
    for s in summaries:
        lines.append(f"{s.solver_id:<16}{s.median_eps_ang:>12.3e}{s.median_eps_lin:>14.3e}"
                     f"{100 * s.sr1:>7.1f}%{100 * s.sr2:>7.1f}%{s.n_trials:>8d}")
    return "\n".join(lines)


# ------------------------------------------------------------- landscape --- #

@dataclass
class Landscape:
    axes: tuple
    first: np.ndarray   # sample positions along axes[0]
    second: np.ndarray  # sample positions along axes[1]
    values: np.ndarray  # (len(second), len(first))
    fixed_value: float

    @property
    def log_values(self) -> np.ndarray:
        tiny = np.finfo(float).tiny
        return np.log10(np.maximum(self.values, tiny))

    def argmin(self) -> tuple[int, int]:
        """(row, column) index of the smallest value."""
        return tuple(int(i) for i in np.unravel_index(np.argmin(self.values), self.values.shape))

    def cell_of(self, omega) -> tuple[int, int]:
        omega = np.asarray(omega, dtype=float)
        return (int(np.argmin(np.abs(self.second - omega[self.axes[1]]))),
                int(np.argmin(np.abs(self.first - omega[self.axes[0]]))))

    def fraction_near_min(self, factor: float = 10.0) -> float:
        lo = float(self.values.min())
        return float(np.mean(self.values <= factor * lo)) if lo > 0 else float(np.mean(self.values <= 0))


def landscape_grid(clusters, omega_ref, formulation: str = COPLANARITY, axes=(0, 1),
                   half_range: float = 0.25, samples: int = 101, center=(0.0, 0.0),
                   parametrization: str = EXACT, chunk: int = 2048) -> Landscape:
    """Objective over a 2D slice of omega; the remaining component is taken from omega_ref."""
    if samples < 2 or not math.isfinite(half_range) or half_range <= 0:
        raise ValueError("grid needs finite positive bounds and at least 2 samples per axis")
    a0, a1 = axes
    if a0 == a1 or {a0, a1} - {0, 1, 2}:
        raise ValueError("axes must be two distinct indices in 0..2")
    fixed = ({0, 1, 2} - {a0, a1}).pop()
    omega_ref = np.asarray(omega_ref, dtype=float)
    first = center[0] + np.linspace(-half_range, half_range, samples)
    second = center[1] + np.linspace(-half_range, half_range, samples)
    S, F = np.meshgrid(second, first, indexing="ij")
    omegas = np.empty((S.size, 3))
    omegas[:, a0] = F.ravel()
    omegas[:, a1] = S.ravel()
    omegas[:, fixed] = omega_ref[fixed]
    obj = Objective(clusters, formulation, parametrization)
    vals = np.concatenate([obj.values(omegas[i:i + chunk]) for i in range(0, len(omegas), chunk)])
    return Landscape((a0, a1), first, second, vals.reshape(S.shape), float(omega_ref[fixed]))


def write_landscape_csv(land: Landscape, path, log: bool = True) -> None:
    """CSV matrix: header row holds the first-axis samples, first column the second-axis samples."""
    names = ("wx", "wy", "wz")
    data = land.log_values if log else land.values
    with _opened(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{names[land.axes[1]]}\\{names[land.axes[0]]}"] + [fmt(x) for x in land.first])
        for y, row in zip(land.second, data):
            w.writerow([fmt(y)] + [fmt(x) for x in row])


# ---------------------------------------------------------------- RANSAC --- #

@dataclass(frozen=True)
class RansacConfig:
    sample_size: int = 8
    threshold: float = 1e-3
    initial_threshold: float = 1e-1
    shrink: float = 0.2
    confidence: float = 0.99
    max_iterations: int = 1000
    min_inlier_ratio: float = 0.25
    # coplanarity only: max |n' . d| against the consensus line direction
    flow_threshold: float = 5e-2
    max_rounds: int = 12
    seed: int = 0


def _required_iterations(ratio: float, sample_size: int, confidence: float) -> float:
    good = ratio**sample_size
    if good <= 0:
        return math.inf
    if good >= 1:
        return 1.0
    return math.log(1.0 - confidence) / math.log(1.0 - good)


def incidence_residuals(rows: np.ndarray, x: np.ndarray) -> np.ndarray:
    """|row . x| with x scaled so its line part (last three entries) is unit."""
    return np.abs(rows @ x) / np.linalg.norm(x[3:])


def _cluster_consensus(cluster: EventCluster, omega, threshold: float, cfg: RansacConfig, rng):
    """Best inlier mask for one cluster at fixed omega, and the confidence reached."""
    rows = build_incidence(cluster.replace(weights=None), omega, EXACT)
    n = len(rows)
    k = cfg.sample_size
    if n < k:
        return np.zeros(n, dtype=bool), 0.0
    best, best_count, best_cost = np.zeros(n, dtype=bool), -1, math.inf
    needed, it = float(cfg.max_iterations), 0
    while it < min(needed, cfg.max_iterations):
        it += 1
        idx = rng.choice(n, size=k, replace=False)
        x = np.linalg.svd(rows[idx])[2][-1]
        if np.linalg.norm(x[3:]) < 1e-12:
            continue
        res = incidence_residuals(rows, x)
        mask = res < threshold
        count = int(mask.sum())
        cost = float(np.minimum(res, threshold).sum())
        if count > best_count or (count == best_count and cost < best_cost):
            best, best_count, best_cost = mask, count, cost
            needed = _required_iterations(count / n, k, cfg.confidence)
    # refit on the consensus set once
    if best_count >= k:
        x = np.linalg.svd(rows[best])[2][-1]
        if np.linalg.norm(x[3:]) >= 1e-12:
            refit = incidence_residuals(rows, x) < threshold
            if refit.sum() >= best_count:
                best = refit
    ratio = best.sum() / n
    reached = 1.0 - (1.0 - ratio**k) ** it if ratio > 0 else 0.0
    return best, reached


def _flow_consistent(cluster: EventCluster, omega, mask, threshold: float) -> np.ndarray:
    """Drop consensus events whose plane normal is not perpendicular to the line."""
    if cluster.flow is None or mask.sum() < 6:
        return mask
    rows = build_incidence(cluster.replace(weights=None), omega, EXACT)
    x = np.linalg.svd(rows[mask])[2][-1]
    e2 = x[3:] / np.linalg.norm(x[3:])
    w = x[:3] / np.linalg.norm(x[3:])
    w = w - (w @ e2) * e2
    if np.linalg.norm(w) < 1e-12:
        return mask
    d = np.cross(e2, w / np.linalg.norm(w))
    n = rotate(cluster.normals, cluster.rel_times, omega, EXACT)
    return mask & (np.abs(n @ d) < threshold)


def ransac_solve(clusters: Sequence[EventCluster], spec: ObjectiveSpec = ObjectiveSpec(),
                 config: RansacConfig = RansacConfig(), adam: AdamConfig = AdamConfig(),
                 omega_init=None) -> SolveReport:
    """Robust solve: per-cluster incidence consensus at the current omega, re-solve, tighten.

    The first round scores events at ``omega_init`` (zero by default) with the
    loose ``initial_threshold``, which tolerates the unmodelled rotation of
    inliers over the time window. The threshold then shrinks geometrically to
    ``threshold``, re-estimating omega on the consensus sets each round.
    Raises NoConsensus when no cluster keeps ``min_inlier_ratio`` of its events.
    """
    clusters = list(clusters)
    if not clusters:
        raise NoConsensus("no clusters given")
    rng = np.random.default_rng(config.seed)
    need = max(config.sample_size, MIN_EVENTS[formulation_name(spec.formulation)])
    omega = np.zeros(3) if omega_init is None else np.asarray(omega_init, dtype=float)
    threshold = max(config.initial_threshold, config.threshold)
    # intermediate re-solves use the incidence objective, matching the consensus model
    inner = ObjectiveSpec(INCIDENCE, spec.parametrization)
    check_flow = spec.formulation == COPLANARITY
    previous = None
    for _ in range(config.max_rounds):
        masks, reached = [], []
        for c in clusters:
            m, r = _cluster_consensus(c, omega, threshold, config, rng)
            if check_flow:
                m = _flow_consistent(c, omega, m, config.flow_threshold)
            masks.append(m)
            reached.append(r)
        kept = [i for i, m in enumerate(masks)
                if m.sum() >= max(need, config.min_inlier_ratio * len(m))]
        if not kept:
            raise NoConsensus(f"no cluster reached {config.min_inlier_ratio:.0%} inliers")
        consensus = [clusters[i].subset(masks[i]) for i in kept]
        final = threshold <= config.threshold
        if final and previous is not None and all(
                a.shape == b.shape and np.array_equal(a, b) for a, b in zip(masks, previous)):
            break
        previous = masks
        omega = adam_solve(inner, consensus, adam, omega_init=omega).omega_est
        threshold = max(config.threshold, threshold * config.shrink)
    report = solve_full(consensus, spec, adam, omega_init=omega)
    report.inliers = [masks[i] if i in kept else np.zeros(len(masks[i]), dtype=bool)
                      for i in range(len(clusters))]
    report.low_confidence = len(kept) < len(clusters) or any(reached[i] < config.confidence for i in kept)
    # map per-cluster diagnostics back to the caller's indexing
    for p in report.partials:
        if p.line_index is not None:
            p.line_index = kept[p.line_index]
    report.excluded = [(kept[i], why) for i, why in report.excluded] + \
        [(i, "NoConsensus") for i in range(len(clusters)) if i not in kept]
    return report


def inlier_precision(report: SolveReport, clusters: Sequence[EventCluster]) -> float:
    """Fraction of accepted events that are true inliers according to the simulator flags."""
    accepted = np.concatenate(report.inliers)
    truth = np.concatenate([~c.outlier if c.outlier is not None else np.ones(len(c), bool)
                            for c in clusters])
    if not accepted.any():
        raise EmptyInput("no accepted events")
    return float(np.mean(truth[accepted]))
