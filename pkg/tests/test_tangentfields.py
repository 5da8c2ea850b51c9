"""Degree-zero deviation fields: pieces, expansion accuracy, witness search."""

import csv

import numpy as np
import pytest
from numpy.testing import assert_allclose

import boundaryflows.tangentfields as tf

A3 = np.array([[1.1, 0.2, 0.0], [0.0, 0.9, 0.1], [0.1, 0.0, 1.2]])
EPS3 = np.array([0.2, -0.1, 0.3])
A_POLE = np.array([0.5, 0.4, -0.3])


def rotz(theta):
    return np.array([[np.cos(theta), -np.sin(theta), 0.0],
                     [np.sin(theta), np.cos(theta), 0.0],
                     [0.0, 0.0, 1.0]])


@pytest.fixture(scope="module")
def params():
    return tf.TangentIdentityParams(0.35, rotz(0.8), A3, EPS3, A_POLE)


def test_params_validation():
    with pytest.raises(ValueError):
        tf.TangentIdentityParams(1.0, rotz(0.1), A3, EPS3, A_POLE)
    with pytest.raises(ValueError):
        tf.TangentIdentityParams(0.5, A3, A3, EPS3, A_POLE)  # not orthogonal
    with pytest.raises(ValueError):
        tf.TangentIdentityParams(0.5, rotz(0.1), A3, np.zeros(3), A_POLE)
    with pytest.raises(ValueError):
        tf.TangentIdentityParams(0.5, rotz(0.1), np.zeros((3, 3)), EPS3,
                                 A_POLE)
    with pytest.raises(ValueError):
        tf.TangentIdentityParams(0.5, rotz(0.1), A3, EPS3, A_POLE,
                                 b_override=np.zeros(2))


def test_params_derived_quantities(params):
    assert params.dim == 3
    assert_allclose(params.b,
                    (np.eye(3) - 0.35 * rotz(0.8)) @ EPS3, rtol=1e-14)
    assert_allclose(params.O_tilde, np.linalg.inv(A3) @ rotz(0.8) @ A3,
                    rtol=1e-14)
    relabeled = params.with_lambda(0.1)
    assert relabeled.lam == 0.1
    assert_allclose(relabeled.b, (np.eye(3) - 0.1 * rotz(0.8)) @ EPS3,
                    rtol=1e-14)
    pinned = tf.TangentIdentityParams(0.35, rotz(0.8), A3, EPS3, A_POLE,
                                      b_override=np.zeros(3))
    assert np.all(pinned.b == 0.0)
    assert np.all(pinned.with_lambda(0.1).b == 0.0)


def test_sigma_vanishes_exactly_for_conformal_A():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(50, 3))
    w = rng.normal(size=(50, 3))
    conformal = tf.TangentIdentityParams(0.35, rotz(0.8), 1.7 * rotz(0.3),
                                         EPS3, A_POLE)
    assert np.abs(tf.sigma_form(v, w, conformal)).max() <= 1e-10
    sheared = tf.TangentIdentityParams(0.35, rotz(0.8),
                                       np.diag([2.0, 1.0, 1.0]),
                                       EPS3, A_POLE)
    assert np.abs(tf.sigma_form(v, w, sheared)).max() > 1e-6


def test_phi_is_eta_minus_its_radial_projection(params):
    rng = np.random.default_rng(1)
    w = rng.normal(size=(20, 3))
    eta = tf.eta_field(w, params)
    manual = eta - 2.0 * tf.sigma_form(eta, w, params)[..., None] * w
    assert_allclose(tf.phi_field(w, params), manual, atol=1e-14)


def test_phi_homogeneous_of_degree_zero(params):
    rng = np.random.default_rng(2)
    for _ in range(10):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        base = tf.phi_field(d, params)
        for s in (1e2, 1e3, 1e4):
            assert np.abs(tf.phi_field(s * d, params) - base).max() <= 1e-9


def test_expansion_error_decays_along_rays(params):
    # direct and expansion routes differ by O(1/|w|): s * gap is flat
    rng = np.random.default_rng(3)
    for _ in range(5):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        gaps = []
        for s in (1e2, 1e3, 1e4):
            diff = (tf.g2_triple_prime(s * d, params, path="direct")
                    - tf.g2_triple_prime(s * d, params, path="expansion"))
            gaps.append(s * np.linalg.norm(diff))
        assert max(gaps) <= 2.0 * min(gaps)


def test_g2_triple_prime_rejects_bad_input(params):
    with pytest.raises(tf.BelowValidityRadius):
        tf.g2_triple_prime(np.array([1.0, 0.0, 0.0]), params)
    with pytest.raises(ValueError):
        tf.g2_triple_prime(100.0 * np.ones(3), params, path="sideways")
    assert params.validity_radius == 10.0


def test_deviation_map_first_order_model(params):
    rng = np.random.default_rng(4)
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    resid = {}
    for s in (1e2, 1e4):
        w = s * d
        resid[s] = np.linalg.norm(tf.deviation_map(w, params) - w
                                  - tf.phi_field(w, params))
    # the remainder is O(1/|w|): shrinks 100x over two decades (with slack)
    assert resid[1e4] < 3e-2 * resid[1e2]


def test_phi_field_rejects_zero(params):
    with pytest.raises(tf.ZeroW):
        tf.phi_field(np.zeros(3), params)
    with pytest.raises(tf.ZeroW):
        tf.eta_field(np.zeros((2, 3)), params)


def test_nonvanishing_search_standard_witness(params):
    report = tf.nonvanishing_search(params)
    assert not report.all_zero
    assert report.value == pytest.approx(2.7083, abs=5e-4)
    assert_allclose(np.linalg.norm(report.witness), 1.0, rtol=1e-12)
    assert_allclose(tf.phi_field(report.witness, params),
                    tf.phi_field(report.witness * 500.0, params), atol=1e-9)
    # the winner is at least as good as every candidate it beat
    assert all(report.value >= v for _, _, v in report.candidates)


def test_nonvanishing_search_case_probes(params):
    # with the sphere grid disabled, only the case probes compete
    paired = tf.nonvanishing_search(params, grid_size=0)
    assert paired.case == "paired" and len(paired.candidates) == 1
    pinned = tf.TangentIdentityParams(0.35, rotz(0.8), A3, EPS3, A_POLE,
                                      b_override=np.zeros(3))
    pole = tf.nonvanishing_search(pinned, grid_size=0)
    assert pole.case == "pole"
    assert_allclose(pole.witness, A_POLE / np.linalg.norm(A_POLE),
                    rtol=1e-12)
    # the grid can still outscore the case probe when it is enabled
    full = tf.nonvanishing_search(pinned)
    assert full.candidates[0][0] == "pole"
    assert full.value >= pole.value


def test_nonvanishing_search_all_zero_verdict():
    # identity data with both poles pinned away leaves nothing to find
    degenerate = tf.TangentIdentityParams(0.35, np.eye(3), np.eye(3), EPS3,
                                          np.zeros(3),
                                          b_override=np.zeros(3))
    report = tf.nonvanishing_search(degenerate)
    assert report.all_zero
    assert report.witness is None and report.value == 0.0
    assert report.case == "none"
    assert "all_zero" in repr(report)


def test_lambda_sweep_scales_inversely(params):
    sweep = tf.lambda_sweep(params)
    assert [lam for lam, _ in sweep] == [1e-1, 1e-2, 1e-3]
    values = [rep.value for _, rep in sweep]
    assert all(not rep.all_zero for _, rep in sweep)
    # the 1/lam coefficient dominates: each decade of lam gains ~10x
    assert 8.0 < values[1] / values[0] < 12.0
    assert 8.0 < values[2] / values[1] < 12.0


def test_export_field_csv_roundtrip(params, tmp_path):
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(4, 3)) * 3.0
    path = str(tmp_path / "field.csv")
    out = tf.export_field_csv(params, pts, path)
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["w_0", "w_1", "w_2", "phi_0", "phi_1", "phi_2"]
    assert len(rows) == 5
    got_w = np.array([[float(x) for x in r[:3]] for r in rows[1:]])
    got_phi = np.array([[float(x) for x in r[3:]] for r in rows[1:]])
    assert_allclose(got_w, pts, rtol=1e-15)
    assert_allclose(got_phi, tf.phi_field(pts, params), rtol=1e-15)
