"""Scenario loading, pattern demos, mu linearity checks, pipeline runs."""

import filecmp
import json
import os

import numpy as np
import pytest
from numpy.testing import assert_allclose

import boundaryflows.affine as af
import boundaryflows.conformal as cf
import boundaryflows.experiments as ex


# --- scenario loading --------------------------------------------------------

def write_scenario(tmp_path, text, name="s.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


GOOD_TOML = """
id = "probe"
pipeline = "Commensurability"
seed = 11

[parameters]
l1 = "log(2)"
l2 = "3 * log(2)"
"""


def test_load_scenario_valid(tmp_path):
    sc = ex.load_scenario(write_scenario(tmp_path, GOOD_TOML))
    assert sc.id == "probe"
    assert sc.pipeline == "Commensurability"
    assert sc.seed == 11
    assert sc.output_dir is None
    assert sc.parameters["l1"] == "log(2)"


def test_load_scenario_rejects_broken_toml(tmp_path):
    with pytest.raises(ex.ConfigError):
        ex.load_scenario(write_scenario(tmp_path, "id = [unterminated"))


@pytest.mark.parametrize("mutation", [
    GOOD_TOML.replace('pipeline = "Commensurability"', ""),      # missing key
    GOOD_TOML.replace("Commensurability", "Teleportation"),      # bad enum
    GOOD_TOML.replace("seed = 11", 'seed = "eleven"'),           # wrong type
    GOOD_TOML.replace("seed = 11", "seed = 11\nunexpected = true"),
])
def test_load_scenario_rejects_schema_violations(tmp_path, mutation):
    with pytest.raises(ex.ConfigError):
        ex.load_scenario(write_scenario(tmp_path, mutation))


def test_bundled_scenarios_cover_every_pipeline():
    files = ex.bundled_scenarios()
    assert len(files) == 9
    pipelines = {ex.load_scenario(f).pipeline for f in files}
    assert pipelines == set(ex.PIPELINE_NAMES)


# --- mu linearity checks -----------------------------------------------------

def test_nonlinear_mu_check_identity_factors_give_A_itself():
    A = np.diag([2.0, 1.0, 1.0])
    res = ex.nonlinear_mu_check(A, cf.MoebiusMap.identity(3),
                                cf.MoebiusMap.identity(3))
    assert res["is_linear"]
    assert res["nonlinearity"] <= 1e-8
    probe = np.array([[0.3, -0.2, 0.5]])
    assert_allclose(res["mu"](probe), probe @ A.T, atol=1e-12)


def test_nonlinear_mu_check_detects_distortion():
    A = np.diag([2.0, 1.0, 1.0])
    res = ex.nonlinear_mu_check(A, *ex.standard_nonlinear_factors(A))
    assert not res["is_linear"]
    assert res["nonlinearity"] > 1e-3


def test_nonlinear_mu_check_conformal_A_stays_linear():
    A = 2.0 * np.eye(3)
    res = ex.nonlinear_mu_check(A, *ex.standard_nonlinear_factors(A))
    assert res["is_linear"]
    assert res["nonlinearity"] <= 1e-8


def test_nonlinear_mu_check_reports_pole_on_grid():
    A = np.diag([2.0, 1.0, 1.0])
    phi1, phi2 = ex.standard_nonlinear_factors(A)
    pole = cf.apply(phi1, cf.BoundaryPoint.infinity(3))
    grid = np.vstack([np.zeros((1, 3)), pole.coords[None, :]])
    with pytest.raises(ex.PoleOnGrid):
        ex.nonlinear_mu_check(A, phi1, phi2, grid=grid)


# --- patterns and flow demos -------------------------------------------------

def test_pattern_set_recomputes_floor():
    pat = ex.circle_grid_pattern()
    assert len(pat.elements) == 9
    assert pat.discreteness_floor == pytest.approx(2.0)
    assert ex.concentric_circle_pattern().discreteness_floor \
        == pytest.approx(1.0)


def test_pattern_set_rejects_degenerate_input():
    circle = ex.concentric_circle_pattern(radii=(1.0,)).elements[0]
    with pytest.raises(ValueError):
        ex.PatternSet([circle])
    with pytest.raises(ValueError):
        ex.PatternSet([circle, circle[:1]])  # singleton element


def test_pattern_flow_demo_translation_witness():
    pat = ex.circle_grid_pattern()
    flow = lambda t: af.AffineMap(np.eye(2), t * np.array([1.0, 0.3]))
    out = ex.pattern_flow_demo(pat, flow)
    assert out["element"] == 0
    assert out["t0"] == 8.0
    assert out["clearance"] == pytest.approx(4.02, abs=0.01)
    assert out["clearance"] > out["floor"] == pytest.approx(2.0)
    assert out["drift"] < out["floor"]
    assert out["n_deep"] == 64


def test_pattern_flow_demo_compatible_flow_finds_nothing():
    con = ex.concentric_circle_pattern()
    spin = af.AffineField(np.array([[0.0, -1.0], [1.0, 0.0]]), np.zeros(2))
    with pytest.raises(ex.NoWitnessFound):
        ex.pattern_flow_demo(con, lambda t: af.aff_exp(spin, t))


def test_pattern_flow_demo_rejects_trivial_flow():
    pat = ex.circle_grid_pattern()
    with pytest.raises(ValueError):
        ex.pattern_flow_demo(pat, lambda t: af.AffineMap.identity(2))


def test_distinctness_certificate():
    g = af.AffineMap(np.eye(2), [1.0, 0.0])
    h = af.AffineMap(np.eye(2), [0.0, 1.0])
    probes = np.array([[0.0, 0.0], [1.0, 1.0]])
    rep = ex.distinctness_certificate([g, h], probes, ex.DISTINCT_TOL)
    assert rep.distinct
    assert rep.matrix[0, 1] > 1.0
    same = ex.distinctness_certificate([g, g], probes, ex.DISTINCT_TOL)
    assert not same.distinct
    assert same.matrix[0, 1] == 0.0
    with pytest.raises(ValueError):
        ex.distinctness_certificate([g], probes, ex.DISTINCT_TOL)


# --- length expressions ------------------------------------------------------

@pytest.mark.parametrize("text,value", [
    ("log(2)", np.log(2.0)),
    ("3 * log(2)", 3.0 * np.log(2.0)),
    ("sqrt(2)", np.sqrt(2.0)),
    ("pi / 4", np.pi / 4.0),
    ("2.5", 2.5),
])
def test_parse_length_expressions(text, value):
    assert ex._parse_length(text, "l1") == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("text", ["open('x')", "log(2) -", "-1.0", "0",
                                  "import os"])
def test_parse_length_rejects_bad_expressions(text):
    with pytest.raises(ex.ConfigError):
        ex._parse_length(text, "l1")


# --- run_scenario ------------------------------------------------------------

def test_run_scenario_writes_manifest_and_artifacts(tmp_path):
    sc = ex.Scenario("probe", "Commensurability",
                     {"l1": "log(2)", "l2": "3 * log(2)",
                      "expect": "rational"}, 7)
    man = ex.run_scenario(sc, out_dir=str(tmp_path))
    assert sorted(man) == ["artifacts", "grid", "pipeline", "report",
                           "scenario", "seed", "tol_profile", "tolerances"]
    assert man["scenario"] == "probe"
    assert man["seed"] == 7
    assert man["tol_profile"] == "default"
    assert man["tolerances"] == ex.TOL_PROFILES["default"]
    assert man["report"]["passed"] is True
    assert man["artifacts"] == ["commensurability.csv"]
    csv_path = tmp_path / "commensurability.csv"
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "# columns v1; scenario probe; seed 7"
    assert lines[1].startswith("l1,l2,verdict,")
    stored = json.loads((tmp_path / "manifest.json").read_text())
    assert stored == man


def test_run_scenario_is_deterministic(tmp_path):
    src = [f for f in ex.bundled_scenarios()
           if "pattern-translation" in str(f)][0]
    sc = ex.load_scenario(src)
    a, b = tmp_path / "a", tmp_path / "b"
    ex.run_scenario(sc, out_dir=str(a))
    ex.run_scenario(sc, out_dir=str(b))
    for name in os.listdir(a):
        assert filecmp.cmp(a / name, b / name, shallow=False), name


def test_run_scenario_seed_override_changes_nothing_structural(tmp_path):
    sc = ex.Scenario("probe", "Commensurability",
                     {"l1": "log(2)", "l2": "3 * log(2)"}, 7)
    man = ex.run_scenario(sc, out_dir=str(tmp_path), seed=123)
    assert man["seed"] == 123
    header = (tmp_path / "commensurability.csv").read_text().splitlines()[0]
    assert header.endswith("seed 123")


def test_run_scenario_rejects_bad_config(tmp_path):
    with pytest.raises(ex.ConfigError):
        ex.run_scenario(ex.Scenario("x", "Commensurability", {}, 7),
                        out_dir=str(tmp_path))
    with pytest.raises(ex.ConfigError):
        ex.run_scenario(ex.Scenario("x", "NoSuchPipeline", {"a": 1}, 7),
                        out_dir=str(tmp_path))
    sc = ex.Scenario("x", "Commensurability",
                     {"l1": "log(2)", "l2": "log(3)"}, 7)
    with pytest.raises(ex.ConfigError):
        ex.run_scenario(sc, out_dir=str(tmp_path), tol_profile="loose")


def test_run_scenario_wraps_pipeline_failures(tmp_path):
    # a multiplier with eigenvalues on the unit circle cannot be zoomed
    sc = ex.Scenario("bad-zoom", "ZoomConvergence",
                     {"multiplier": [[1.0, 0.0], [0.0, 1.0]]}, 7)
    with pytest.raises(ex.ExperimentError) as info:
        ex.run_scenario(sc, out_dir=str(tmp_path))
    assert "bad-zoom" in str(info.value)


def test_tol_profiles_strict_tightens():
    default = ex.TOL_PROFILES["default"]
    strict = ex.TOL_PROFILES["strict"]
    assert strict["flow"] == default["flow"] / 10.0
    assert strict["linear"] == default["linear"] / 10.0


def test_rotation_matrix_is_orthogonal():
    R = ex.rotation_matrix(3, 0.8)
    assert_allclose(R.T @ R, np.eye(3), atol=1e-14)
    assert_allclose(R[0, 0], np.cos(0.8), rtol=1e-15)
    assert_allclose(R[2, 2], 1.0)
