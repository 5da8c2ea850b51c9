"""Go/no-go gate suite: fourteen end-to-end checks at fixed tolerances.

Each criterion function returns (name, passed, detail) and is cheap enough
for a laptop; run_all prints one PASS/FAIL line per criterion and is what
the CLI ``selftest`` subcommand executes.  Thresholds are hard-coded on
purpose -- these are the numbers the package promises, not knobs.
"""

import filecmp
import os
import shutil
import sys
import tempfile

import numpy as np

from . import affine
from . import conformal
from . import experiments
from . import groups
from . import renormalization as renorm
from . import tangentfields
from .experiments import rotation_matrix
from .grids import unit_ball_grid


def _tangent_params(lam):
    return tangentfields.TangentIdentityParams(
        lam, rotation_matrix(3, 0.8), np.diag([2.0, 1.0, 1.0]),
        np.array([0.2, -0.1, 0.3]), np.array([0.5, 0.4, -0.3]))


def _standard_schedule(dim=2, n_max=12):
    ns = list(range(1, n_max + 1))
    u = np.eye(dim)[0]
    v = np.zeros(dim)
    v[:2] = (0.6, 0.8)
    eps = [4.0 ** -n * u for n in ns]
    M = [2.0 ** n * v for n in ns]
    lam = [2.0 ** -float(n) for n in ns]
    schedule = renorm.choose_dilation(eps, M, lam, ns=ns)
    gs = [renorm.realize_based_linear(
        renorm.BasedLinearMap(eps[k], M[k], lam[k] * np.eye(dim)))
        for k in range(len(ns))]
    return schedule, gs


def criterion_1():
    """64-fold generator products keep the quadratic form and cross-ratio."""
    G = groups.builtin_catalog()["coxeter-534"]
    rng = np.random.default_rng(7)
    worst_defect, worst_cr = 0.0, 0.0
    for _ in range(3):
        g = conformal.MoebiusMap.identity(G.chart_dim)
        for _ in range(64):
            g = conformal.compose(
                G.generators[rng.integers(len(G.generators))], g)
        worst_defect = max(worst_defect, g.lorentz_defect())
        pts = [conformal.BoundaryPoint(p)
               for p in rng.uniform(-2.0, 2.0, size=(4, G.chart_dim))]
        cr0 = conformal.cross_ratio(*pts)
        cr1 = conformal.cross_ratio(*[conformal.apply(g, p) for p in pts])
        worst_cr = max(worst_cr, abs(cr1 - cr0) / abs(cr0))
    passed = worst_defect <= 1e-9 and worst_cr <= 1e-8
    return ("lorentz-integrity", passed,
            f"form defect {worst_defect:.2e} (<=1e-9), "
            f"cross-ratio drift {worst_cr:.2e} (<=1e-8)")


def criterion_2():
    """Dilation zoom on a quadratically perturbed map halves per step."""
    A = 2.0 * np.eye(2)
    f = lambda X: np.asarray(X, dtype=float) @ A.T + np.linalg.norm(
        X, axis=-1, keepdims=True) * np.asarray(X, dtype=float)
    grid = unit_ball_grid(2, 200, seed=7)
    errs = [float(np.abs(2.0 ** n * f(2.0 ** -n * grid) - grid @ A.T).max())
            for n in range(1, 26)]
    ratios = [b / a for a, b in zip(errs, errs[1:])]
    in_band = all(0.4 <= r <= 0.6 for r in ratios)
    # the zoom pipeline recovers the same multiplier from f alone
    T = conformal.MoebiusMap.dilation(2.0, 2)
    based, report = renorm.zoom_at_fixed_point(f, T, n_max=25)
    mult_gap = float(np.abs(based.A - A).max())
    passed = (in_band and errs[-1] <= 1e-6 and mult_gap <= 1e-6
              and report.converged)
    return ("zoom-limit", passed,
            f"step ratios in [{min(ratios):.3f}, {max(ratios):.3f}] "
            f"(need [0.4, 0.6]), error {errs[-1]:.2e} at n=25 (<=1e-6), "
            f"recovered multiplier off by {mult_gap:.2e}")


def criterion_3():
    """n-fold Euler products reach the matrix exponential at rate 1/n."""
    B = np.array([[0.0, 0.1], [-0.1, 0.0]])
    b = np.array([0.1, 0.0])
    n_values = [100, 1000, 10000]
    grid = unit_ball_grid(2, 200, seed=7)
    target = affine.aff_exp(affine.AffineField(B, b), 1.0)(grid)
    r_max = affine.R_MAX_FACTOR * affine.grid_radius(grid)
    errs = []
    for n in n_values:
        f_n = affine.AffineMap(np.eye(2) + B / n, b / n)
        orbit = affine.iterate(f_n, n, grid, r_max=r_max)
        errs.append(affine.sup_norm(orbit.final - target))
    within = all(e <= 2.0 / n for n, e in zip(n_values, errs))
    slope = float(np.polyfit(np.log(n_values), np.log(errs), 1)[0])
    passed = within and 0.9 <= -slope <= 1.1
    return ("euler-limit", passed,
            f"errors {[f'{e:.2e}' for e in errs]} under 2/n, "
            f"decay exponent {-slope:.3f} (need [0.9, 1.1])")


def criterion_4():
    """Schedule margins shrink and the almost-affine residual dies."""
    schedule, gs = _standard_schedule()
    margins = schedule.margins
    monotone = bool(np.all(np.diff(margins, axis=1) < 0.0))
    report = renorm.almost_affine_residual(gs, schedule)
    final = report.errors[-1]
    passed = monotone and final < 1e-3
    return ("dilation-schedule", passed,
            f"margins monotone: {monotone}, normalized residual "
            f"{final:.2e} at n=12 (<1e-3)")


def criterion_5():
    """Deep commutators match their predicted affine model."""
    schedule, gs = _standard_schedule()
    B = np.diag([2.0, 1.0])
    cz = renorm.commutator_zoom(B, gs, schedule)
    final = cz.residuals[-1]
    passed = final <= 1e-2 and cz.report.verdict != "diverged"
    return ("commutator-expansion", passed,
            f"normalized residual {final:.2e} at n=12 (<=1e-2)")


def criterion_6():
    """Two routes to the far-field map agree; the limit field is real."""
    # route agreement: |direct - expansion| * |w| stays flat along rays
    tp_mid = _tangent_params(0.1)
    dirs = tangentfields.sphere_directions(3, 20, seed=7)
    worst_var = 0.0
    for d in dirs:
        qs = []
        for s in (1e2, 1e3, 1e4):
            w = s * d
            diff = (tangentfields.g2_triple_prime(w, tp_mid, path="direct")
                    - tangentfields.g2_triple_prime(w, tp_mid,
                                                    path="expansion"))
            qs.append(np.linalg.norm(diff) * np.linalg.norm(w))
        worst_var = max(worst_var, max(qs) / max(min(qs), 1e-300))
    # homogeneity and a nonvanishing witness at the small-lam params
    tp = _tangent_params(1e-3)
    search = tangentfields.nonvanishing_search(tp)
    w0 = search.witness
    base = tangentfields.phi_field(w0, tp)
    worst_h = max(
        np.linalg.norm(tangentfields.phi_field(s * w0, tp) - base)
        / np.linalg.norm(base)
        for s in (1e-3, 1e-2, 1e-1, 1e1, 1e2, 1e3))
    witness_norm = float(np.linalg.norm(base))
    passed = worst_var <= 2.0 and worst_h <= 1e-9 and witness_norm >= 1e-3
    return ("tangent-identity-field", passed,
            f"ray variation {worst_var:.3f} (<=2), homogeneity drift "
            f"{worst_h:.2e} (<=1e-9), |field(w*)| = {witness_norm:.3g} "
            f"(>=1e-3)")


def criterion_7():
    """Sector zoom plus Euler limit rebuilds the translation flow."""
    report, _ = experiments._run_tangent_identity_flow(
        {}, "criterion-7", None, experiments.TOL_PROFILES["default"])
    passed = (report["passed"] and report["rel_gap"] <= 0.05
              and report["flow_defect"] <= 1e-8)
    return ("flow-end-to-end", passed,
            f"translation constant off by {report['rel_gap']:.2e} rel "
            f"(<=5e-2), flow group-law defect {report['flow_defect']:.2e} "
            f"(<=1e-8)")


def criterion_8():
    """The distortion form vanishes exactly for conformal linear parts."""
    rng = np.random.default_rng(7)
    V = rng.normal(size=(1000, 3))
    W = rng.normal(size=(1000, 3))
    maxima = {}
    for label, A in (("conformal", 2.0 * np.eye(3)),
                     ("nonconformal", np.diag([2.0, 1.0, 1.0]))):
        tp = tangentfields.TangentIdentityParams(
            1e-3, rotation_matrix(3, 0.8), A,
            np.array([0.2, -0.1, 0.3]), np.array([0.5, 0.4, -0.3]))
        maxima[label] = max(abs(tangentfields.sigma_form(v, w, tp))
                            for v, w in zip(V, W))
    passed = maxima["conformal"] <= 1e-10 and maxima["nonconformal"] > 1e-6
    return ("sigma-conformality", passed,
            f"conformal max {maxima['conformal']:.2e} (<=1e-10), "
            f"nonconformal max {maxima['nonconformal']:.2e} (>1e-6)")


def criterion_9():
    """Inversion conjugation turns nonconformal linear maps nonlinear."""
    certs = {}
    for label, A in (("nonconformal", np.diag([2.0, 1.0, 1.0])),
                     ("conformal", 2.0 * np.eye(3))):
        phi1, phi2 = experiments.standard_nonlinear_factors(A)
        certs[label] = experiments.nonlinear_mu_check(
            A, phi1, phi2)["nonlinearity"]
    passed = certs["nonconformal"] > 1e-3 and certs["conformal"] <= 1e-8
    return ("nonlinear-mu", passed,
            f"certificate {certs['nonconformal']:.2e} (>1e-3) nonconformal, "
            f"{certs['conformal']:.2e} (<=1e-8) conformal")


def criterion_10():
    """Sandwich iterates stay distinct while their derivatives settle."""
    mu = lambda X: (np.asarray(X, dtype=float)
                    + np.linalg.norm(X, axis=-1, keepdims=True)
                    * np.asarray(X, dtype=float))
    ecc = renorm.eccentric_sequence(mu, (0.5, np.eye(2)), (0.5, np.eye(2)),
                                    n_max=20)
    probes = unit_ball_grid(2, 32, seed=7)
    rep = experiments.distinctness_certificate(ecc.maps, probes)
    off = rep.matrix[~np.eye(rep.matrix.shape[0], dtype=bool)]
    tail = max(ecc.report.errors[-3:])
    passed = bool(off.min() > 1e-8 and tail <= 1e-4)
    return ("eccentric-sequence", passed,
            f"min pairwise gap {off.min():.2e} (>1e-8) over n<=20, "
            f"derivative Cauchy tail {tail:.2e} (<=1e-4)")


def criterion_11():
    """Deeper word budgets find poles closer to the basepoint."""
    G = groups.builtin_catalog()["coxeter-534"]
    basepoint = np.array([-1.9, 2.6])
    scores = []
    for budget in (6, 8, 10):
        found = groups.pole_density_search(G, budget, even_only=True,
                                           basepoint=basepoint)
        scores.append(found[0].score)
    passed = all(b < a for a, b in zip(scores, scores[1:]))
    return ("pole-density-trend", passed,
            "best scores " + " > ".join(f"{s:.5f}" for s in scores)
            + " strictly decreasing through budgets 6, 8, 10")


def criterion_12():
    """Length ratios: detect 1/3 exactly, reject 1 vs sqrt(2)."""
    r = groups.commensurability_test(np.log(2.0), 3.0 * np.log(2.0),
                                     tol=1e-9, max_denominator=10 ** 4)
    i = groups.commensurability_test(1.0, np.sqrt(2.0),
                                     tol=1e-9, max_denominator=10 ** 4)
    rational_ok = isinstance(r, groups.Rational) and (r.p, r.q) == (1, 3)
    independent_ok = isinstance(i, groups.Independent)
    passed = rational_ok and independent_ok
    return ("commensurability", passed,
            f"log2/3log2 -> {r!r}, 1/sqrt2 -> {i!r}")


def criterion_13():
    """A translation flow tears one circle out of a circle-grid pattern."""
    report, _ = experiments._run_pattern_flow_demo(
        {}, "criterion-13", None, experiments.TOL_PROFILES["default"])
    passed = (report["passed"] and report["clearance"] > report["floor"]
              and report["drift"] < report["floor"])
    return ("pattern-flow-incompatibility", passed,
            f"element {report['element']} at t0={report['t0']:g}: "
            f"clearance {report['clearance']:.3f} > floor "
            f"{report['floor']:.3f}, deep-time drift {report['drift']:.3f}")


def criterion_14():
    """Re-running every bundled scenario is byte-identical."""
    tmp = tempfile.mkdtemp(prefix="selftest-")
    mismatched, checked = [], 0
    try:
        for path in experiments.bundled_scenarios():
            scenario = experiments.load_scenario(path)
            d1 = os.path.join(tmp, scenario.id + "-a")
            d2 = os.path.join(tmp, scenario.id + "-b")
            m1 = experiments.run_scenario(scenario, out_dir=d1)
            experiments.run_scenario(scenario, out_dir=d2)
            for name in m1["artifacts"] + ["manifest.json"]:
                checked += 1
                if not filecmp.cmp(os.path.join(d1, name),
                                   os.path.join(d2, name), shallow=False):
                    mismatched.append(f"{scenario.id}/{name}")
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    passed = not mismatched
    return ("determinism", passed,
            f"{checked} artifacts re-run byte-identical"
            + (f"; mismatches: {mismatched}" if mismatched else ""))


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4,
            criterion_5, criterion_6, criterion_7, criterion_8,
            criterion_9, criterion_10, criterion_11, criterion_12,
            criterion_13, criterion_14)


def run_all(stream=None):
    """Run every criterion; print one PASS/FAIL line each."""
    stream = stream or sys.stdout
    results = []
    for k, crit in enumerate(CRITERIA, start=1):
        name, passed, detail = crit()
        results.append((name, passed, detail))
        status = "PASS" if passed else "FAIL"
        print(f"{status} {k:2d} {name}: {detail}", file=stream)
    return results
