"""Scenario-driven pipelines tying the numerical modules together.

A scenario is a TOML table (id, pipeline, parameters, seed, output_dir)
validated against a JSON schema.  Each pipeline wires group elements,
zooms, and affine limits into one experiment, writes its tables as CSV
(atomically, so concurrent scenarios never interleave), and returns a
plain-dict report embedding the tolerances and grid spec actually used.
Identical (scenario, seed) pairs produce byte-identical artifacts.
"""

import csv
import importlib.resources
import json
import os
import tempfile

try:
    import tomllib
except ModuleNotFoundError:          # Python < 3.11
    import tomli as tomllib

import jsonschema
import numpy as np

from . import affine
from . import groups
from . import renormalization as renorm
from . import tangentfields
from .conformal import (
    MoebiusMap,
    NumericalDegeneracy,
    apply_array,
    based_normalizer,
)
from .grids import GRID_SEED, GRID_SIZE, sphere_directions, unit_ball_grid

#: pairwise map distances above this certify distinctness
DISTINCT_TOL = 1e-8
#: second-difference certificates at or below this read as linear
LINEAR_TOL = 1e-8
#: default probe displacement for second differences
PROBE_STEP = 0.25
#: fraction of the pattern's discreteness floor a moved element must clear
WITNESS_CLEARANCE = 1.0

PIPELINE_NAMES = (
    "ZoomConvergence",
    "PoleDensity",
    "EulerFlow",
    "CommutatorFlow",
    "TangentIdentityFlow",
    "EccentricSequence",
    "NonlinearMu",
    "PatternFlowDemo",
    "Commensurability",
)

#: tolerance profiles a run may select; "strict" tightens the pass gates
TOL_PROFILES = {
    "default": {"flow": affine.TOL_FLOW, "distinct": DISTINCT_TOL,
                "linear": LINEAR_TOL},
    "strict": {"flow": affine.TOL_FLOW / 10.0, "distinct": DISTINCT_TOL,
               "linear": LINEAR_TOL / 10.0},
}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["id", "pipeline", "parameters", "seed"],
    "additionalProperties": False,
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "pipeline": {"type": "string", "enum": list(PIPELINE_NAMES)},
        "parameters": {"type": "object"},
        "seed": {"type": "integer"},
        "output_dir": {"type": "string"},
    },
}


class ExperimentError(Exception):
    pass


class ConfigError(ExperimentError):
    """A scenario file failed to parse or validate."""


class PoleOnGrid(ExperimentError):
    """A probe grid touches a pole of the map under test."""


class NoWitnessFound(ExperimentError):
    """The pattern/flow search exhausted its candidates."""


class Scenario:
    """Validated scenario config: one pipeline run with fixed seed."""

    __slots__ = ("id", "pipeline", "parameters", "seed", "output_dir")

    def __init__(self, id, pipeline, parameters, seed, output_dir=None):
        self.id = id
        self.pipeline = pipeline
        self.parameters = dict(parameters)
        self.seed = int(seed)
        self.output_dir = output_dir

    def __repr__(self):
        return f"Scenario(id={self.id!r}, pipeline={self.pipeline!r})"


def load_scenario(path):
    """Parse and validate one TOML scenario file."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: TOML parse error: {exc}") from exc
    try:
        jsonschema.validate(raw, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "(top level)"
        raise ConfigError(f"{path}: field {where}: {exc.message}") from exc
    return Scenario(raw["id"], raw["pipeline"], raw["parameters"],
                    raw["seed"], raw.get("output_dir"))


def bundled_scenarios():
    """Paths of the scenario files shipped with the package, sorted."""
    root = importlib.resources.files(__package__) / "scenarios"
    return sorted(str(p) for p in root.iterdir()
                  if p.name.endswith(".toml"))


def _require(params, key, scenario_id):
    if key not in params:
        raise ConfigError(f"scenario {scenario_id}: missing required "
                          f"parameter {key!r}")
    return params[key]


def _as_matrix(value, name):
    mat = np.asarray(value, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ConfigError(f"parameter {name!r} must be a square matrix")
    return mat


# ---------------------------------------------------------------------------
# atomic artifact writing


def _write_rows_atomic(path, header, rows, comment=None):
    """Write a CSV to a temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".part")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            if comment is not None:
                fh.write(f"# {comment}\n")
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _write_json_atomic(path, payload):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".part")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _report_rows(report):
    return [[int(n), repr(e)] for n, e in zip(report.indices, report.errors)]


# ---------------------------------------------------------------------------
# shared constructions


def rotation_matrix(dim, angle, axis=(0, 1)):
    """Rotation by `angle` in the (i, j) coordinate plane of R^dim."""
    i, j = axis
    O = np.eye(dim)
    O[i, i] = O[j, j] = np.cos(angle)
    O[i, j] = -np.sin(angle)
    O[j, i] = np.sin(angle)
    return O


def standard_nonlinear_factors(A, p1=(3.0, 0.0, 0.0), q1=(0.0, 3.0, 0.0)):
    """Conformal factors (phi1, phi2) making phi2 o A o phi1^-1 fix 0, inf.

    phi1^-1 is the normalizer sending (0, inf) to (p1, q1); phi2 undoes the
    image pair (A p1, A q1).  Both involve an inversion, so the composite
    is nonlinear exactly when A is not conformal.  phi1^-1 reaches infinity
    at a finite point at distance |p1 - q1| from the origin; grids must
    stay inside that radius.
    """
    p1 = np.asarray(p1, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    A = np.asarray(A, dtype=float)
    S1 = based_normalizer(p1, q1)
    S2 = based_normalizer(A @ p1, A @ q1)
    return S1.inverse(), S2.inverse()


def nonlinear_mu_check(A, phi1, phi2, grid=None, probe_step=PROBE_STEP,
                       linear_tol=LINEAR_TOL):
    """Second-difference linearity certificate for mu = phi2 o A o phi1^-1.

    The composite must fix 0 and infinity (checked at 0 and via the
    leading-order behaviour on a far sphere).  Returns a dict with the
    maximal normalized second difference over the grid and the verdict
    is_linear (certificate <= linear_tol).  Grid points whose probe stars
    hit a pole raise PoleOnGrid.
    """
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    S1 = phi1.inverse()

    def mu(X):
        Y = apply_array(S1, np.asarray(X, dtype=float))
        return apply_array(phi2, Y @ A.T)

    try:
        origin_image = mu(np.zeros((1, d)))[0]
    except NumericalDegeneracy as exc:
        raise PoleOnGrid(f"0 is a pole of the composite ({exc})") from exc
    if np.linalg.norm(origin_image) > renorm.TOL_FIX:
        raise ValueError("the composite does not fix 0 "
                         f"(|mu(0)| = {np.linalg.norm(origin_image):.3e})")
    far = 1e6 * sphere_directions(d, 8, seed=GRID_SEED)
    far_gap = np.linalg.norm(mu(far), axis=1) / np.linalg.norm(far, axis=1)
    if far_gap.max() > 1e3 or far_gap.min() < 1e-3:
        raise ValueError("the composite does not fix infinity "
                         "(far-sphere norms blow up or collapse)")

    if grid is None:
        grid = unit_ball_grid(d, GRID_SIZE, seed=GRID_SEED)
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    try:
        vals0 = mu(grid)
        cert = 0.0
        for e in np.eye(d)[:2]:
            plus = mu(grid + probe_step * e)
            minus = mu(grid - probe_step * e)
            second = np.abs(plus + minus - 2.0 * vals0).max()
            cert = max(cert, float(second) / probe_step ** 2)
    except NumericalDegeneracy as exc:
        raise PoleOnGrid(f"probe grid touches a pole ({exc})") from exc
    return {"is_linear": bool(cert <= linear_tol), "nonlinearity": cert,
            "mu": mu}


class DistinctnessReport:
    """Pairwise sup-distances between maps over shared probe points."""

    __slots__ = ("matrix", "threshold")

    def __init__(self, matrix, threshold=DISTINCT_TOL):
        self.matrix = matrix
        self.threshold = threshold

    @property
    def distinct(self):
        off = self.matrix[~np.eye(self.matrix.shape[0], dtype=bool)]
        return bool(off.size == 0 or off.min() > self.threshold)

    def __repr__(self):
        return (f"DistinctnessReport(n={self.matrix.shape[0]}, "
                f"distinct={self.distinct})")


def distinctness_certificate(maps, probe_points, threshold=DISTINCT_TOL):
    """Matrix of pairwise sup-distances on the probes."""
    if len(maps) < 2:
        raise ValueError("need at least two maps to compare")
    probes = np.atleast_2d(np.asarray(probe_points, dtype=float))
    values = [np.asarray(m(probes), dtype=float) for m in maps]
    count = len(values)
    out = np.zeros((count, count))
    for i in range(count):
        for j in range(i + 1, count):
            gap = float(np.abs(values[i] - values[j]).max())
            out[i, j] = out[j, i] = gap
    return DistinctnessReport(out, threshold)


# ---------------------------------------------------------------------------
# patterns and flows


def _hausdorff(P, Q):
    """Hausdorff distance between two finite point sets (k, d), (m, d)."""
    diff = P[:, None, :] - Q[None, :, :]
    dists = np.linalg.norm(diff, axis=2)
    return float(max(dists.min(axis=1).max(), dists.min(axis=0).max()))


class PatternSet:
    """Finite truncation of a symmetric pattern: a list of point clouds.

    The discreteness floor (least pairwise Hausdorff distance) is always
    recomputed from the elements; configs cannot assert it.  Singletons are
    rejected: pattern elements are closed sets, not points.
    """

    def __init__(self, elements):
        self.elements = [np.atleast_2d(np.asarray(E, dtype=float))
                         for E in elements]
        if len(self.elements) < 2:
            raise ValueError("a pattern needs at least two elements")
        for k, E in enumerate(self.elements):
            if E.shape[0] < 2:
                raise ValueError(f"element {k} is a singleton")
        floor = np.inf
        for i in range(len(self.elements)):
            for j in range(i + 1, len(self.elements)):
                floor = min(floor, _hausdorff(self.elements[i],
                                              self.elements[j]))
        self.discreteness_floor = float(floor)

    def __len__(self):
        return len(self.elements)


def circle_grid_pattern(rows=3, cols=3, spacing=2.0, radius=0.3,
                        points_per_circle=48):
    """Disjoint small circles at the nodes of a planar grid."""
    theta = np.linspace(0.0, 2.0 * np.pi, points_per_circle, endpoint=False)
    ring = radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    elements = []
    for r in range(rows):
        for c in range(cols):
            center = np.array([c * spacing, r * spacing])
            elements.append(ring + center)
    return PatternSet(elements)


def concentric_circle_pattern(radii=(1.0, 2.0, 3.0), points_per_circle=720):
    """Circles about the origin; invariant under any rotation flow."""
    theta = np.linspace(0.0, 2.0 * np.pi, points_per_circle, endpoint=False)
    ring = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return PatternSet([r * ring for r in radii])


def pattern_flow_demo(pattern, flow, t0_candidates=None, n_deep=64):
    """Exhibit the incompatibility witness: an element moved clear of the
    pattern by f_{t0} while f_{t0/n} keeps it within the discreteness floor.

    ``flow`` maps a time to a point-cloud map (an AffineMap works).  The
    flow must be nontrivial (flow(1) must move something); patterns whose
    every element absorbs all the candidate motions yield NoWitnessFound.
    """
    floor = pattern.discreteness_floor
    if floor <= 0.0:
        raise ValueError("pattern has overlapping elements (floor 0)")
    probe = pattern.elements[0]
    if np.abs(np.asarray(flow(1.0)(probe)) - probe).max() <= 1e-12:
        raise ValueError("flow is trivial at t=1; nothing to demonstrate")
    if t0_candidates is None:
        t0_candidates = [1.0, 2.0, 4.0, 8.0, 16.0, 0.5]
    for j, J in enumerate(pattern.elements):
        for t0 in t0_candidates:
            moved = np.asarray(flow(float(t0))(J))
            clearance = min(_hausdorff(moved, E) for E in pattern.elements)
            if clearance <= WITNESS_CLEARANCE * floor:
                continue
            # deep subdivision: the same flow at time t0/n barely moves J
            small = np.asarray(flow(float(t0) / n_deep)(J))
            drift = _hausdorff(small, J)
            if drift < floor:
                return {"element": j, "t0": float(t0),
                        "clearance": clearance, "n_deep": n_deep,
                        "drift": drift, "floor": floor}
    raise NoWitnessFound(
        "no (element, t0) pair moved clear of the pattern; the flow "
        "appears compatible with it at this truncation")


# ---------------------------------------------------------------------------
# pipelines


def _run_zoom_convergence(params, scenario_id, rng, tols):
    A = _as_matrix(_require(params, "multiplier", scenario_id), "multiplier")
    dim = A.shape[0]
    kind = params.get("perturbation", "norm")
    if kind == "norm":
        f = lambda X: np.asarray(X, dtype=float) @ A.T + np.linalg.norm(
            X, axis=-1, keepdims=True) * np.asarray(X, dtype=float)
    elif kind == "none":
        f = lambda X: np.asarray(X, dtype=float) @ A.T
    else:
        raise ConfigError(f"scenario {scenario_id}: unknown perturbation "
                          f"{kind!r}")
    T = MoebiusMap.dilation(float(params.get("dilation", 2.0)), dim)
    based, report = renorm.zoom_at_fixed_point(
        f, T, n_max=int(params.get("n_max", 25)))
    mult_gap = float(np.abs(based.A - A).max())
    artifacts = {"zoom.csv": (["n", "error"], _report_rows(report))}
    return {"verdict": report.verdict, "passed": report.converged,
            "multiplier_gap": mult_gap,
            "geometric_ratio": report.geometric_ratio()}, artifacts


def _run_pole_density(params, scenario_id, rng, tols):
    catalog = groups.builtin_catalog()
    name = params.get("group", "coxeter-534")
    if name not in catalog:
        raise ConfigError(f"scenario {scenario_id}: unknown group {name!r}")
    G = catalog[name]
    budgets = [int(b) for b in params.get("budgets", [6, 8, 10])]
    even_only = bool(params.get("even_only", True))
    basepoint = params.get("basepoint")
    if basepoint is not None:
        basepoint = np.asarray(basepoint, dtype=float)
    scores, rows = [], []
    last = None
    for budget in budgets:
        found = groups.pole_density_search(G, budget, even_only=even_only,
                                           basepoint=basepoint)
        best = found[0]
        scores.append(best.score)
        rows.append([budget, best.record.word_label(), repr(best.score),
                     repr(best.length), repr(best.eps_norm),
                     repr(best.m_norm)])
        last = found
    decreasing = all(b < a for a, b in zip(scores, scores[1:]))
    artifacts = {
        "scores.csv": (["budget", "word", "score", "l", "eps_norm",
                        "M_norm"], rows),
        "witnesses.csv": (
            ["word", "l", "eps_norm", "M_norm", "t_star", "score"],
            [[w.record.word_label(), repr(w.length), repr(w.eps_norm),
              repr(w.m_norm), repr(w.t), repr(w.score)]
             for w in last[:50]]),
    }
    return {"verdict": "decreasing" if decreasing else "not-decreasing",
            "passed": decreasing, "scores": scores}, artifacts


def _run_euler_flow(params, scenario_id, rng, tols):
    B = _as_matrix(_require(params, "B", scenario_id), "B")
    b = np.asarray(_require(params, "b", scenario_id), dtype=float)
    n_values = [int(n) for n in params.get("n_values", [100, 1000, 10000])]
    t_final = float(params.get("t", 1.0))
    dim = B.shape[0]
    grid = unit_ball_grid(dim, GRID_SIZE, seed=GRID_SEED)
    eye = np.eye(dim)
    # headline comparison: n-fold products of id + (B, b)/n against the
    # time-t exponential, with the textbook 2/n envelope
    target = affine.aff_exp(affine.AffineField(B, b), t_final)(grid)
    r_max = affine.R_MAX_FACTOR * affine.grid_radius(grid)
    errs = []
    for n in n_values:
        f_n = affine.AffineMap(eye + B / n, b / n)
        orbit = affine.iterate(f_n, int(np.floor(n * t_final)), grid,
                               r_max=r_max)
        errs.append(affine.sup_norm(orbit.final - target))
    slope = float(np.polyfit(np.log(n_values), np.log(errs), 1)[0]) \
        if len(n_values) >= 2 else float("nan")
    within = [e <= 2.0 / n for n, e in zip(n_values, errs)]
    # the same data through the generic direction-clustering limit, for the
    # reconstructed flow and its group law
    maps = [affine.AffineMap(eye + B / n, b / n) for n in n_values]
    fields = [affine.AffineField(B / n, b / n) for n in n_values]
    seq = affine.EulerSequence(maps, fields, grid, strict=False)
    A_limit, flow, report = affine.euler_limit(seq, t_final)
    check = affine.flow_check(flow, [0.0, 0.25, 0.5, 1.0])
    rows = [[n, repr(e), repr(2.0 / n)] for n, e in zip(n_values, errs)]
    passed = (all(within) and -1.1 <= slope <= -0.9
              and check.group_law_defect <= tols["flow"] and check.nontrivial)
    artifacts = {"euler.csv": (["n", "error", "bound"], rows)}
    return {"verdict": report.verdict, "passed": bool(passed),
            "errors": errs, "decay_exponent": -slope,
            "flow_defect": check.group_law_defect,
            "direction_B": A_limit.B.tolist(),
            "direction_b": A_limit.b.tolist()}, artifacts


def _synthetic_schedule(dim, n_values, eps_base=4.0, m_base=2.0,
                        lam_base=2.0, u=None, v=None):
    """The standard contracting family eps_n = eps_base^-n u etc."""
    if u is None:
        u = np.eye(dim)[0]
    if v is None:
        v = np.zeros(dim)
        v[:2] = (0.6, 0.8)
    eps_vecs = [eps_base ** -n * u for n in n_values]
    M_vecs = [m_base ** n * v for n in n_values]
    lams = [lam_base ** -float(n) for n in n_values]
    schedule = renorm.choose_dilation(eps_vecs, M_vecs, lams, ns=n_values)
    gs = [renorm.realize_based_linear(
        renorm.BasedLinearMap(eps_vecs[k], M_vecs[k], lams[k] * np.eye(dim)))
        for k in range(len(n_values))]
    return schedule, gs


def _run_commutator_flow(params, scenario_id, rng, tols):
    B = _as_matrix(_require(params, "B", scenario_id), "B")
    dim = B.shape[0]
    n_values = [int(n) for n in params.get(
        "n_values", list(range(1, 13)))]
    schedule, gs = _synthetic_schedule(dim, n_values)
    cz = renorm.commutator_zoom(B, gs, schedule)
    rows = [[int(n), repr(e)] for n, e in zip(schedule.ns, cz.residuals)]
    # the predicted near-identity fields feed the Euler limit; use the tail
    # where the remainders are small enough for the affine log
    tail = [k for k, f in enumerate(cz.fields)
            if max(np.abs(f.B).max(), np.abs(f.b).max())
            < affine.LOG_DOMAIN_RADIUS / 2.0]
    flow_report = None
    if len(tail) >= 2:
        grid = unit_ball_grid(dim, 64, seed=GRID_SEED)
        seq = affine.EulerSequence([cz.maps[k] for k in tail],
                                   [cz.fields[k] for k in tail],
                                   grid, strict=False)
        try:
            A_limit, flow, erep = affine.euler_limit(seq, 1.0)
            check = affine.flow_check(flow, [0.0, 0.5, 1.0])
            flow_report = {"verdict": erep.verdict,
                           "flow_defect": check.group_law_defect,
                           "direction_b": A_limit.b.tolist()}
        except affine.AffineError as exc:
            flow_report = {"verdict": "failed", "error": str(exc)}
    passed = cz.report.converged
    artifacts = {"commutator.csv": (["n", "residual"], rows)}
    out = {"verdict": cz.report.verdict, "passed": passed,
           "normalization": "eps'_n / lam_n"}
    if flow_report is not None:
        out["euler"] = flow_report
    return out, artifacts


def _tangent_params_from_config(params, scenario_id):
    lam = float(params.get("lam", 1e-3))
    dim = int(params.get("dim", 3))
    O = params.get("O")
    O = (_as_matrix(O, "O") if O is not None
         else rotation_matrix(dim, float(params.get("o_angle", 0.8))))
    A = params.get("A")
    A = (_as_matrix(A, "A") if A is not None
         else np.diag([2.0] + [1.0] * (dim - 1)))
    eps = np.asarray(params.get("epsilon", [0.2, -0.1, 0.3][:dim]),
                     dtype=float)
    a = np.asarray(params.get("a", [0.5, 0.4, -0.3][:dim]), dtype=float)
    return tangentfields.TangentIdentityParams(lam, O, A, eps, a)


def _run_tangent_identity_flow(params, scenario_id, rng, tols):
    tp = _tangent_params_from_config(params, scenario_id)
    search = tangentfields.nonvanishing_search(tp)
    if search.all_zero:
        return {"verdict": "field-vanishes", "passed": False,
                "witness": None}, {}
    w0 = search.witness
    c_field = tangentfields.phi_field(w0, tp)
    f = lambda W: tangentfields.deviation_map(np.asarray(W, dtype=float), tp)
    if "n_values" in params:
        n_values = [int(n) for n in params["n_values"]]
    else:
        # the per-step translation is ~|c|/n, and the affine log needs it
        # well inside its domain, so the depth scales with the field size
        m = max(30, int(np.ceil(8.0 * np.linalg.norm(c_field))))
        n_values = [m, 3 * m, 10 * m, 33 * m]
    sz = renorm.sector_zoom(f, w0, n_values)
    c_est = sz.c_estimate
    rel_gap = float(np.linalg.norm(c_est - c_field)
                    / max(np.linalg.norm(c_field), 1e-30))
    # Euler limit over the sector maps: translation flow w + t c
    dim = w0.shape[0]
    grid = unit_ball_grid(dim, 64, seed=GRID_SEED)
    keep = [k for k, c in enumerate(sz.c_hat)
            if np.linalg.norm(c) < affine.LOG_DOMAIN_RADIUS / 2.0]
    if len(keep) < 2:
        raise ExperimentError("fewer than two sector maps land inside the "
                              "affine-log domain; deepen n_values")
    fields = [affine.AffineField(np.zeros((dim, dim)), sz.c_hat[k])
              for k in keep]
    seq = affine.EulerSequence([sz.maps[k] for k in keep], fields,
                               grid, strict=False)
    A_limit, flow, erep = affine.euler_limit(seq, 1.0)
    check = affine.flow_check(flow, [0.0, 0.5, 1.0, 2.0])
    direction_gap = float(np.linalg.norm(
        A_limit.b - c_est / np.linalg.norm(c_est)))
    passed = (rel_gap <= 0.05
              and check.group_law_defect <= tols["flow"]
              and check.nontrivial)
    rows = [[int(n), *[repr(x) for x in (n * c)]]
            for n, c in zip(sz.n_values, sz.c_hat)]
    header = ["n"] + [f"nc_{i}" for i in range(dim)]
    artifacts = {"sector.csv": (header, rows)}
    return {"verdict": "converged" if passed else "off-target",
            "passed": bool(passed), "witness": w0.tolist(),
            "c_estimate": c_est.tolist(), "c_field": c_field.tolist(),
            "rel_gap": rel_gap, "direction_gap": direction_gap,
            "flow_defect": check.group_law_defect}, artifacts


def _mu_from_config(params, scenario_id):
    spec = params.get("mu", {"kind": "quadratic"})
    kind = spec.get("kind", "quadratic")
    if kind == "quadratic":
        return lambda X: (np.asarray(X, dtype=float)
                          + np.linalg.norm(X, axis=-1, keepdims=True)
                          * np.asarray(X, dtype=float))
    if kind == "linear":
        D = _as_matrix(_require(spec, "matrix", scenario_id), "mu.matrix")
        return lambda X: np.asarray(X, dtype=float) @ D.T
    if kind == "conjugated":
        A = _as_matrix(_require(spec, "matrix", scenario_id), "mu.matrix")
        p1 = spec.get("p1", (3.0, 0.0, 0.0)[:A.shape[0]])
        q1 = spec.get("q1", (0.0, 3.0, 0.0)[:A.shape[0]])
        phi1, phi2 = standard_nonlinear_factors(A, p1, q1)
        return nonlinear_mu_check(A, phi1, phi2)["mu"]
    raise ConfigError(f"scenario {scenario_id}: unknown mu kind {kind!r}")


def _run_eccentric_sequence(params, scenario_id, rng, tols):
    dim = int(params.get("dim", 2))
    lam1 = float(params.get("lam1", 0.5))
    lam2 = float(params.get("lam2", 0.5))
    O1 = rotation_matrix(dim, float(params.get("o1_angle", 0.0)))
    O2 = rotation_matrix(dim, float(params.get("o2_angle", 0.0)))
    mu = _mu_from_config(params, scenario_id)
    n_max = int(params.get("n_max", 20))
    ecc = renorm.eccentric_sequence(mu, (lam1, O1), (lam2, O2), n_max=n_max)
    probes = unit_ball_grid(dim, 32, seed=GRID_SEED)
    distinct = distinctness_certificate(ecc.maps, probes,
                                        threshold=tols["distinct"])
    rows = [[int(n), int(m), repr(r), repr(c)]
            for n, m, r, c in zip(ecc.ns, ecc.m, ecc.ratio,
                                  ecc.certificates)]
    sub_rows = _report_rows(ecc.report)
    passed = distinct.distinct and ecc.report.verdict != "diverged"
    artifacts = {
        "eccentric.csv": (["n", "m", "ratio", "certificate"], rows),
        "subsequence.csv": (["n", "error"], sub_rows),
    }
    return {"verdict": ecc.report.verdict, "passed": bool(passed),
            "subsequence": [int(n) for n in ecc.subsequence],
            "distinct": distinct.distinct,
            "B": ecc.B.tolist()}, artifacts


def _run_nonlinear_mu(params, scenario_id, rng, tols):
    A = _as_matrix(_require(params, "A", scenario_id), "A")
    p1 = params.get("p1", (3.0, 0.0, 0.0)[:A.shape[0]])
    q1 = params.get("q1", (0.0, 3.0, 0.0)[:A.shape[0]])
    phi1, phi2 = standard_nonlinear_factors(A, p1, q1)
    result = nonlinear_mu_check(A, phi1, phi2, linear_tol=tols["linear"])
    expect_linear = params.get("expect_linear")
    passed = True if expect_linear is None else \
        (result["is_linear"] == bool(expect_linear))
    rows = [[repr(result["nonlinearity"]), result["is_linear"]]]
    artifacts = {"nonlinearity.csv": (["certificate", "is_linear"], rows)}
    return {"verdict": "linear" if result["is_linear"] else "nonlinear",
            "passed": bool(passed),
            "nonlinearity": result["nonlinearity"]}, artifacts


def _run_pattern_flow_demo(params, scenario_id, rng, tols):
    pat_spec = params.get("pattern", {"kind": "circle-grid"})
    kind = pat_spec.get("kind", "circle-grid")
    if kind == "circle-grid":
        pattern = circle_grid_pattern(
            rows=int(pat_spec.get("rows", 3)),
            cols=int(pat_spec.get("cols", 3)),
            spacing=float(pat_spec.get("spacing", 2.0)),
            radius=float(pat_spec.get("radius", 0.3)),
            points_per_circle=int(pat_spec.get("points_per_circle", 48)))
    elif kind == "concentric":
        pattern = concentric_circle_pattern(
            radii=tuple(pat_spec.get("radii", (1.0, 2.0, 3.0))))
    else:
        raise ConfigError(f"scenario {scenario_id}: unknown pattern kind "
                          f"{kind!r}")
    flow_spec = params.get("flow", {"kind": "translation", "c": [1.0, 0.3]})
    fkind = flow_spec.get("kind", "translation")
    dim = pattern.elements[0].shape[1]
    if fkind == "translation":
        c = np.asarray(flow_spec.get("c", [1.0, 0.3]), dtype=float)
        flow = lambda t: affine.AffineMap(np.eye(dim), t * c)
    elif fkind == "rotation":
        rate = float(flow_spec.get("rate", 0.7))
        flow = lambda t: affine.AffineMap(rotation_matrix(dim, rate * t),
                                          np.zeros(dim))
    else:
        raise ConfigError(f"scenario {scenario_id}: unknown flow kind "
                          f"{fkind!r}")
    witness = pattern_flow_demo(pattern, flow)
    rows = [[witness["element"], repr(witness["t0"]),
             repr(witness["clearance"]), witness["n_deep"],
             repr(witness["drift"]), repr(witness["floor"])]]
    artifacts = {"witness.csv": (["element", "t0", "clearance", "n_deep",
                                  "drift", "floor"], rows)}
    return {"verdict": "witness-found", "passed": True,
            **{k: witness[k] for k in ("element", "t0", "clearance",
                                       "drift", "floor")}}, artifacts


_LENGTH_TOKENS = {"log": np.log, "sqrt": np.sqrt, "pi": np.pi, "e": np.e}


def _parse_length(value, name):
    if isinstance(value, (int, float)):
        out = float(value)
    elif isinstance(value, str):
        try:
            out = float(eval(value, {"__builtins__": {}},
                             dict(_LENGTH_TOKENS)))
        except Exception as exc:
            raise ConfigError(f"cannot evaluate length {name} = {value!r}: "
                              f"{exc}") from exc
    else:
        raise ConfigError(f"length {name} must be a number or expression")
    if out <= 0:
        raise ConfigError(f"length {name} must be positive")
    return out


def _run_commensurability(params, scenario_id, rng, tols):
    l1 = _parse_length(_require(params, "l1", scenario_id), "l1")
    l2 = _parse_length(_require(params, "l2", scenario_id), "l2")
    tol = float(params.get("tol", 1e-9))
    max_den = int(params.get("max_denominator", 10 ** 4))
    verdict = groups.commensurability_test(l1, l2, tol=tol,
                                           max_denominator=max_den)
    if isinstance(verdict, groups.Rational):
        row = ["rational", f"{verdict.p}/{verdict.q}", repr(verdict.error)]
        report = {"verdict": "rational", "ratio": f"{verdict.p}/{verdict.q}",
                  "passed": True}
    else:
        row = ["independent", "", repr(verdict.best_error)]
        report = {"verdict": "independent", "passed": True}
    expect = params.get("expect")
    if expect is not None:
        report["passed"] = bool(report["verdict"] == expect)
    artifacts = {"commensurability.csv":
                 (["l1", "l2", "verdict", "ratio", "error"],
                  [[repr(l1), repr(l2), *row]])}
    return report, artifacts


_PIPELINE_TABLE = {
    "ZoomConvergence": _run_zoom_convergence,
    "PoleDensity": _run_pole_density,
    "EulerFlow": _run_euler_flow,
    "CommutatorFlow": _run_commutator_flow,
    "TangentIdentityFlow": _run_tangent_identity_flow,
    "EccentricSequence": _run_eccentric_sequence,
    "NonlinearMu": _run_nonlinear_mu,
    "PatternFlowDemo": _run_pattern_flow_demo,
    "Commensurability": _run_commensurability,
}


def run_scenario(scenario, out_dir=None, seed=None, tol_profile="default"):
    """Execute one scenario and write its artifacts.

    Returns the manifest dict (also written as manifest.json next to the
    CSVs).  ``seed``/``out_dir`` override the scenario's own values; the
    seed fully determines all sampling, so reruns are byte-identical.
    """
    if tol_profile not in TOL_PROFILES:
        raise ConfigError(f"unknown tol profile {tol_profile!r}")
    tols = TOL_PROFILES[tol_profile]
    if scenario.pipeline not in _PIPELINE_TABLE:
        raise ConfigError(f"scenario {scenario.id}: unknown pipeline "
                          f"{scenario.pipeline!r}")
    if not scenario.parameters and scenario.pipeline not in (
            "CommutatorFlow",):
        # every pipeline except the fully-defaulted ones needs something
        required_any = {"ZoomConvergence": "multiplier", "EulerFlow": "B",
                        "NonlinearMu": "A", "Commensurability": "l1"}
        key = required_any.get(scenario.pipeline)
        if key is not None:
            raise ConfigError(f"scenario {scenario.id}: empty parameters "
                              f"(at least {key!r} is required)")
    use_seed = scenario.seed if seed is None else int(seed)
    rng = np.random.default_rng(use_seed)
    target = out_dir or scenario.output_dir or os.path.join(
        os.getcwd(), scenario.id)
    try:
        report, artifacts = _PIPELINE_TABLE[scenario.pipeline](
            scenario.parameters, scenario.id, rng, tols)
    except ExperimentError:
        raise
    except (ValueError, ArithmeticError, renorm.RenormalizationError,
            affine.AffineError, groups.GroupError,
            tangentfields.TangentFieldError) as exc:
        raise ExperimentError(
            f"scenario {scenario.id} ({scenario.pipeline}): {exc}") from exc
    written = []
    for name, (header, rows) in sorted(artifacts.items()):
        path = os.path.join(target, name)
        _write_rows_atomic(path, header, rows,
                           comment=f"columns v1; scenario {scenario.id}; "
                                   f"seed {use_seed}")
        written.append(path)
    manifest = {
        "scenario": scenario.id,
        "pipeline": scenario.pipeline,
        "seed": use_seed,
        "tol_profile": tol_profile,
        "tolerances": tols,
        "grid": {"size": GRID_SIZE, "seed": GRID_SEED},
        "report": report,
        "artifacts": [os.path.basename(p) for p in written],
    }
    _write_json_atomic(os.path.join(target, "manifest.json"), manifest)
    return manifest
