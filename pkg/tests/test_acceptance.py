"""Acceptance checks.

Each test prints a single ``criterion N: PASS|FAIL ...`` line; the lines are
repeated in the terminal summary. Run standalone with
``python3 tests/test_acceptance.py`` to print the lines without pytest.
"""
import time
import timeit
from functools import lru_cache

import numpy as np

from eventail.errors import EventailError, PureRotationDetected, RankDeficient
from eventail.geometry import EXACT, FIRST_ORDER, build_incidence, gram_M, gram_N, rotate
from eventail.harness import (
    DEFAULT_SOLVERS,
    inlier_precision,
    landscape_grid,
    metric_ang,
    ransac_solve,
    run_benchmark,
    run_sweep,
)
from eventail.rotation import CASCADE, COPLANARITY, INCIDENCE, Objective, ObjectiveSpec, grad_fdm
from eventail.simulator import SimConfig, sample_scene
from eventail.translation import (
    coplanarity_translation,
    detect_pure_rotation,
    incidence_translation,
    solve_full,
)

TRIALS = 200
SWEEP_TRIALS = 100
RANSAC_TRIALS = 50
LANDSCAPE_SCENES = 20

APPROX = (ObjectiveSpec(INCIDENCE, FIRST_ORDER), ObjectiveSpec(COPLANARITY, FIRST_ORDER))
NOISY = SimConfig(sigma_pixel=0.5, sigma_time=5e-4)


def _line(num, ok, detail):
    return f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}"


@lru_cache(maxsize=None)
def _benchmark(config: SimConfig, solvers):
    return run_benchmark(config, TRIALS, solvers)


# 1 ---------------------------------------------------------------------------

def check_1():
    t0 = time.perf_counter()
    res = _benchmark(SimConfig(seed=1_000), DEFAULT_SOLVERS)
    elapsed = time.perf_counter() - t0
    ok, parts = True, []
    for label in ("inc+cascade", "cop+cascade"):
        s = res[label]
        good = s.median_eps_ang <= 1e-3 and s.median_eps_lin <= 0.02 and s.sr2 >= 0.9
        ok &= good
        parts.append(f"{label} eps_ang={s.median_eps_ang:.2e} eps_lin={s.median_eps_lin:.2e}deg "
                     f"SR2={s.sr2:.3f}")
    return ok, "; ".join(parts) + f" ({TRIALS} trials, {elapsed:.0f}s)"


# 2 ---------------------------------------------------------------------------

def check_2():
    cascade = _benchmark(SimConfig(seed=1_000), DEFAULT_SOLVERS)
    approx = _benchmark(SimConfig(seed=1_000), APPROX)
    ok, parts = True, []
    for form in ("inc", "cop"):
        a, c = approx[f"{form}+approx"].median_eps_ang, cascade[f"{form}+cascade"].median_eps_ang
        ok &= a >= 10 * c
        parts.append(f"{form}: approx {a:.2e} vs cascade {c:.2e} ({a / c:.0f}x)")
    return ok, "; ".join(parts)


# 3 ---------------------------------------------------------------------------

def _landscape_stats(formulation):
    near, adjacent = [], []
    for k in range(LANDSCAPE_SCENES):
        one = sample_scene(SimConfig(n_lines=1), seed=3_100 + k)
        near.append(landscape_grid(one.clusters, one.motion.omega, formulation).fraction_near_min())
        three = sample_scene(SimConfig(n_lines=3), seed=3_200 + k)
        land = landscape_grid(three.clusters, three.motion.omega, formulation)
        (r, c), (gr, gc) = land.argmin(), land.cell_of(three.motion.omega)
        adjacent.append(max(abs(r - gr), abs(c - gc)) <= 1)
    return float(np.median(near)), float(np.mean(adjacent))


def check_3():
    res = _benchmark(SimConfig(n_lines=1, seed=3_000), DEFAULT_SOLVERS)
    inc, cop = res["inc+cascade"].sr2, res["cop+cascade"].sr2
    sr_ok = inc <= 0.3 and cop <= 0.1
    parts = [f"M=1 SR2 inc={inc:.3f} cop={cop:.3f}"]
    land_ok = True
    for form, label in ((INCIDENCE, "inc"), (COPLANARITY, "cop")):
        near, adjacent = _landscape_stats(form)
        land_ok &= near >= 0.1 and adjacent == 1.0
        parts.append(f"{label} landscape: M=1 median fraction within 10x of min={near:.4f}, "
                     f"M=3 argmin adjacent in {adjacent:.0%}")
    return sr_ok and land_ok, "; ".join(parts)


# 4 ---------------------------------------------------------------------------

def _non_increasing(v, slack=2.0):
    return all(b <= slack * a for a, b in zip(v, v[1:])) and v[-1] <= v[0]


def _non_decreasing(v, slack=2.0):
    return all(b >= a / slack for a, b in zip(v, v[1:])) and v[-1] >= v[0]


def _sweep_medians(axis, values, base):
    rows = run_sweep(axis, values, base, SWEEP_TRIALS, DEFAULT_SOLVERS)
    out = {}
    for r in rows:
        out.setdefault(r.summary.solver_id, []).append(r.summary.median_eps_ang)
    return out


def check_4():
    sweeps = [
        ("n_events", (8, 30, 100, 300, 1000), NOISY.with_(seed=4_000), _non_increasing),
        ("n_lines", (2, 5, 10, 20), NOISY.with_(seed=4_100), _non_increasing),
        ("sigma_pixel", (0.0, 0.25, 0.5, 1.0), SimConfig(seed=4_200), _non_decreasing),
    ]
    ok, parts = True, []
    for axis, values, base, trend in sweeps:
        for label, med in _sweep_medians(axis, values, base).items():
            good = trend(med)
            ok &= good
            parts.append(f"{axis} {label} [{', '.join(f'{m:.2e}' for m in med)}]"
                         f"{'' if good else ' (trend violated)'}")
    return ok, "; ".join(parts)


# 5 ---------------------------------------------------------------------------

def _compressed_equality():
    """Compressed first-order Grams and objectives vs direct construction, 1000 (scene, omega) pairs."""
    rng = np.random.default_rng(5_000)
    worst_matrix = worst_objective = 0.0
    for k in range(100):
        sc = sample_scene(SimConfig(), seed=5_000 + k)
        for form in (INCIDENCE, COPLANARITY):
            obj = Objective(sc.clusters, form, FIRST_ORDER)
            for _ in range(5):
                w = rng.uniform(-0.25, 0.25, 3)
                comp = obj.matrices(w)[0]
                if form == INCIDENCE:
                    direct = np.array([gram_M(build_incidence(c, w, FIRST_ORDER)) for c in sc.clusters])
                else:
                    direct = np.array([gram_N(c.normals, c.rel_times, w, FIRST_ORDER) for c in sc.clusters])
                scale = np.linalg.norm(direct, axis=(1, 2))
                worst_matrix = max(worst_matrix, float(np.max(np.linalg.norm(comp - direct, axis=(1, 2)) / scale)))
                ref = np.sum(np.maximum(np.linalg.eigvalsh(direct)[:, 0], 0.0))
                # eigenvalues of a Gram matrix are only defined to ~eps * ||G||
                worst_objective = max(worst_objective, abs(obj(w) - ref) / scale.sum())
    return max(worst_matrix, worst_objective) <= 1e-10, f"compressed {max(worst_matrix, worst_objective):.1e}"


def _gradient_agreement():
    rng = np.random.default_rng(5_100)
    worst, checked, k = 0.0, 0, 0
    while checked < 100:
        sc = sample_scene(SimConfig(sigma_pixel=0.5), seed=5_100 + k)
        k += 1
        w = sc.motion.omega + rng.uniform(-0.1, 0.1, 3)
        param = EXACT if checked % 2 == 0 else FIRST_ORDER
        obj = Objective(sc.clusters, COPLANARITY, param)
        lam = np.linalg.eigvalsh(obj.matrices(w)[0])
        if np.min((lam[:, 1] - lam[:, 0]) / lam[:, 2]) <= 1e-8:
            continue
        g = obj.value_and_grad_closed(w)[1]
        ref = grad_fdm(obj, w, 1e-6, central=True)
        worst = max(worst, np.linalg.norm(g - ref) / max(1e-6, 1e-4 * np.linalg.norm(g)))
        checked += 1
    return worst <= 1.0, f"gradient {worst:.2f} of tolerance"


def _ground_truth_residuals():
    worst_inc = worst_cop = worst_lam = 0.0
    for k in range(20):
        sc = sample_scene(SimConfig(), seed=5_200 + k)
        gt = sc.motion
        for c, line in zip(sc.clusters, sc.lines):
            f = rotate(c.bearings, c.rel_times, gt.omega, EXACT)
            centres = c.rel_times[:, None] * gt.v
            worst_inc = max(worst_inc, np.max(np.abs(f @ line.m + np.cross(centres, f) @ line.d)))
            n = rotate(c.normals, c.rel_times, gt.omega, EXACT)
            worst_cop = max(worst_cop, np.max(np.abs(n @ line.d)))
        for form in (INCIDENCE, COPLANARITY):
            worst_lam = max(worst_lam, float(np.max(Objective(sc.clusters, form, EXACT).per_cluster(gt.omega))))
    ok = worst_inc <= 1e-10 and worst_cop <= 1e-10 and worst_lam <= 1e-6
    return ok, f"residuals inc {worst_inc:.1e} cop {worst_cop:.1e}, lambda_min {worst_lam:.1e}"


def _aperture():
    worst = 0.0
    for k in range(10):
        sc = sample_scene(SimConfig(), seed=5_300 + k)
        for c, line in zip(sc.clusters, sc.lines):
            f = rotate(c.bearings, c.rel_times, sc.motion.omega, EXACT)
            tfxd = c.rel_times[:, None] * np.cross(f, line.d)
            base = tfxd @ sc.motion.v + f @ line.m
            for alpha in (-3.0, 1.0, 10.0):
                shifted = tfxd @ (sc.motion.v + alpha * line.d) + f @ line.m
                worst = max(worst, np.max(np.abs(shifted - base)))
    return worst <= 1e-12, f"aperture {worst:.1e}"


def _pure_rotation():
    ratios, linear_ok, verdict_ok, errs = [], True, True, []
    for k in range(10):
        sc = sample_scene(SimConfig(pure_rotation=True), seed=5_400 + k)
        for c, line in zip(sc.clusters, sc.lines):
            ratios.append(detect_pure_rotation(c, sc.motion.omega).rank_ratio)
            try:
                incidence_translation(c, sc.motion.omega)
                linear_ok = False
            except PureRotationDetected:
                pass
            try:
                coplanarity_translation(c, sc.motion.omega, line.d)
                linear_ok = False
            except RankDeficient:
                pass
        rep = solve_full(sc.clusters)
        verdict_ok &= rep.pure_rotation and not np.any(rep.v_dir)
        errs.append(metric_ang(rep.omega_est, sc.motion.omega))
    ok = max(ratios) <= 1e-8 and linear_ok and verdict_ok and max(errs) <= 1e-2
    return ok, f"pure rotation ratio {max(ratios):.1e} eps_ang {max(errs):.1e}"


def _metric_identities():
    rng = np.random.default_rng(5_500)
    ok = True
    for _ in range(1000):
        w = rng.uniform(-0.125, 0.125, 3)
        ok &= metric_ang(w, w) == 0.0 and metric_ang(-w, w) == 1.0 and metric_ang(2 * w, w) == 1 / 3
    return ok, "metric identities " + ("exact" if ok else "inexact")


def check_5():
    results = [fn() for fn in (_compressed_equality, _gradient_agreement, _ground_truth_residuals,
                               _aperture, _pure_rotation, _metric_identities)]
    ok = all(r[0] for r in results)
    return ok, "; ".join(d + ("" if good else " (FAILED)") for good, d in results)


# 6 ---------------------------------------------------------------------------

def check_6():
    precision, errs, failures = [], [], 0
    for k in range(RANSAC_TRIALS):
        sc = sample_scene(SimConfig(outlier_fraction=0.3), seed=6_000 + k)
        try:
            rep = ransac_solve(sc.clusters)
        except EventailError:
            failures += 1
            precision.append(0.0)
            errs.append(1.0)
            continue
        precision.append(inlier_precision(rep, sc.clusters))
        errs.append(metric_ang(rep.omega_est, sc.motion.omega))
    ok = np.mean(precision) >= 0.95 and np.median(errs) <= 1e-2
    return ok, (f"precision mean {np.mean(precision):.4f} min {np.min(precision):.4f}; "
                f"eps_ang median {np.median(errs):.1e} max {np.max(errs):.1e}; "
                f"{failures} failed of {RANSAC_TRIALS}")


# 7 ---------------------------------------------------------------------------

def _compressed_eval_seconds(n_events):
    sc = sample_scene(SimConfig(n_lines=1, n_events=n_events), seed=7_100)
    obj = Objective(sc.clusters, INCIDENCE, FIRST_ORDER)
    w = np.array([0.05, -0.02, 0.1])
    obj.values(w)
    return min(timeit.repeat(lambda: obj.values(w), number=2000, repeat=5)) / 2000


def check_7():
    solve_full(sample_scene(SimConfig(), seed=7_000).clusters)  # JIT warm-up
    medians = {}
    for spec in DEFAULT_SOLVERS:
        times = []
        for k in range(20):
            clusters = sample_scene(SimConfig(), seed=7_000 + k).clusters
            t0 = time.perf_counter()
            solve_full(clusters, spec)
            times.append(time.perf_counter() - t0)
        medians[spec.formulation] = float(np.median(times))
    small, large = _compressed_eval_seconds(10), _compressed_eval_seconds(10_000)
    ratio = max(small, large) / min(small, large)
    ok = max(medians.values()) <= 0.5 and ratio < 2.0
    return ok, (f"median solve inc {1e3 * medians[INCIDENCE]:.0f} ms, cop {1e3 * medians[COPLANARITY]:.0f} ms; "
                f"compressed eval N=10 {1e6 * small:.1f} us vs N=10000 {1e6 * large:.1f} us ({ratio:.2f}x)")


CHECKS = {1: check_1, 2: check_2, 3: check_3, 4: check_4, 5: check_5, 6: check_6, 7: check_7}


def _run(num, acceptance_log):
    ok, detail = CHECKS[num]()
    acceptance_log(_line(num, ok, detail))
    assert ok, detail


def test_criterion_1_noise_free_accuracy(acceptance_log):
    _run(1, acceptance_log)


def test_criterion_2_approximation_gap(acceptance_log):
    _run(2, acceptance_log)


def test_criterion_3_single_line_ambiguity(acceptance_log):
    _run(3, acceptance_log)


def test_criterion_4_noise_and_size_trends(acceptance_log):
    _run(4, acceptance_log)


def test_criterion_5_property_suite(acceptance_log):
    _run(5, acceptance_log)


def test_criterion_6_ransac(acceptance_log):
    _run(6, acceptance_log)


def test_criterion_7_performance(acceptance_log):
    _run(7, acceptance_log)


if __name__ == "__main__":
    for num, check in CHECKS.items():
        ok, detail = check()
        print(_line(num, ok, detail), flush=True)
