"""Zooms, dilation schedules, almost-affine residuals, eccentric sequences."""

import csv

import numpy as np
import pytest
from numpy.testing import assert_allclose

import boundaryflows.conformal as cf
import boundaryflows.renormalization as rz
import boundaryflows.tangentfields as tf

U2 = np.array([1.0, 0.0])
V2 = np.array([0.6, 0.8])


def rotation(theta):
    return np.array([[np.cos(theta), -np.sin(theta)],
                     [np.sin(theta), np.cos(theta)]])


def contracting_family(n_max=12):
    """eps_n = 4^-n u, M_n = 2^n v, lam_n = 2^-n with staged realizations."""
    ns = list(range(1, n_max + 1))
    eps = [4.0 ** -n * U2 for n in ns]
    M = [2.0 ** n * V2 for n in ns]
    lams = [2.0 ** -n for n in ns]
    sch = rz.choose_dilation(eps, M, lams, ns=ns)
    gs = [cf.realize_based_linear(
              cf.BasedLinearMap(eps[k], M[k], lams[k] * np.eye(2)))
          for k in range(n_max)]
    return sch, gs, eps, M, lams


# --- dilation schedules ------------------------------------------------------

def test_choose_dilation_margins_decay():
    sch, _, eps, M, lams = contracting_family()
    assert sch.has_vectors
    assert len(sch) == 12
    margins = sch.margins
    assert margins.shape == (3, 12)
    assert np.all(margins < 1.0)
    assert np.all(np.diff(margins, axis=1) < 0.0)
    # t_n is the geometric mean of the feasible interval
    eps_norms = np.array([np.linalg.norm(e) for e in eps])
    M_norms = np.array([np.linalg.norm(m) for m in M])
    lam = np.asarray(lams)
    lower = eps_norms / lam
    upper = np.minimum.reduce([np.sqrt(eps_norms * M_norms / lam),
                               np.sqrt(eps_norms / lam),
                               eps_norms / lam ** 2])
    assert_allclose(sch.t, np.sqrt(lower * upper), rtol=1e-12)
    assert_allclose(np.linalg.norm(sch.eps_prime, axis=1),
                    eps_norms / sch.t, rtol=1e-12)


def test_choose_dilation_rejects_bad_input():
    with pytest.raises(rz.InfeasibleSchedule):
        rz.choose_dilation([0.0, 0.1], [10.0, 20.0], [0.5, 0.25])
    with pytest.raises(rz.InfeasibleSchedule):
        rz.choose_dilation([0.1, 0.01], [10.0, 20.0], [0.5, 1.5])
    with pytest.raises(rz.InfeasibleSchedule):
        # |eps| = 0.9 with lam = 0.9 leaves no room between the bounds
        rz.choose_dilation([0.9, 0.8], [1.0, 1.0], [0.9, 0.89])
    with pytest.raises(rz.InfeasibleSchedule):
        # constant data: margins cannot decay
        rz.choose_dilation([0.25, 0.25], [100.0, 100.0], [0.5, 0.5])


def test_zoom_schedule_constructor_validation():
    with pytest.raises(rz.InfeasibleSchedule):
        rz.ZoomSchedule(t=[1.0], lam=[0.5], eps=[2.0], M=[10.0])
    with pytest.raises(ValueError):
        rz.ZoomSchedule(t=[1.0, 1.0], lam=[0.5], eps=[0.1, 0.1],
                        M=[10.0, 10.0])
    # validate=False admits deliberately broken diagnostic schedules
    flat = rz.ZoomSchedule(t=[1.0, 1.0], lam=[0.5, 0.5], eps=[2.0, 2.0],
                           M=[10.0, 10.0], validate=False)
    assert np.any(flat.margins >= 1.0)


# --- almost-affine residuals -------------------------------------------------

def test_almost_affine_residual_tracks_multiplier():
    sch, gs, _, _, lams = contracting_family()
    report = rz.almost_affine_residual(gs, sch)
    assert report.verdict == "converged"
    ratios = [e / l for e, l in zip(report.errors, lams)]
    assert all(1.0 < r < 1.6 for r in ratios)
    assert report.errors[-1] < 1e-3


def test_almost_affine_residual_matrix_path_agrees():
    sch, gs, eps, M, lams = contracting_family(8)
    gs_mm = [cf.loxodromic_from_poles(eps[k], M[k], lams[k])
             for k in range(8)]
    rep_staged = rz.almost_affine_residual(gs, sch)
    rep_mm = rz.almost_affine_residual(gs_mm, sch)
    gap = max(abs(a - b)
              for a, b in zip(rep_mm.errors, rep_staged.errors))
    assert gap < 1e-6


def test_almost_affine_residual_exact_when_model_is_exact():
    # similarities whose translation constant IS the schedule eps': the
    # affine model has nothing left over
    sch, _, _, M, lams = contracting_family()
    O = rotation(0.3)
    gs_exact, exact_eps = [], []
    for k in range(len(sch)):
        b = sch.t[k] * sch.eps_prime[k]
        gs_exact.append(cf.MoebiusMap.similarity(lams[k], O, b))
        exact_eps.append(b)
    sch_exact = rz.ZoomSchedule(t=sch.t, lam=np.array(lams),
                                eps=np.array(exact_eps), M=np.array(M),
                                ns=sch.ns, validate=False)
    report = rz.almost_affine_residual(gs_exact, sch_exact)
    assert max(report.errors) < 1e-12
    assert report.verdict == "converged"


def test_almost_affine_residual_flat_rescale_stalls():
    sch, gs, eps, M, lams = contracting_family()
    flat = rz.ZoomSchedule(t=np.ones(12), lam=np.array(lams),
                           eps=np.array(eps), M=np.array(M),
                           ns=sch.ns, validate=False)
    report = rz.almost_affine_residual(gs, flat)
    assert report.verdict != "converged"
    assert report.errors[-1] > 0.5


def test_almost_affine_residual_rejects_mismatched_maps():
    sch, _, eps, M, lams = contracting_family()
    wrong_rate = [cf.realize_based_linear(
                      cf.BasedLinearMap(eps[k], M[k],
                                        0.7 * lams[k] * np.eye(2)))
                  for k in range(12)]
    with pytest.raises(rz.FixedPointMismatch):
        rz.almost_affine_residual(wrong_rate, sch)
    moved = [cf.realize_based_linear(
                 cf.BasedLinearMap(eps[k] + np.array([0.5, 0.0]), M[k],
                                   lams[k] * np.eye(2)))
             for k in range(12)]
    with pytest.raises(rz.FixedPointMismatch):
        rz.almost_affine_residual(moved, sch)


# --- commutator zoom ---------------------------------------------------------

def test_commutator_zoom_residuals_and_prediction():
    sch, gs, _, _, lams = contracting_family()
    B = np.diag([2.0, 1.0])
    cz = rz.commutator_zoom(B, gs, sch)
    assert cz.report.verdict == "converged"
    assert cz.residuals[-1] <= 1e-2
    # closed form at O = I: L_1 = I and shift = B^-1 (B - I) v_1
    v1 = sch.eps_prime[0] / lams[0]
    predicted = cz.predicted[0]
    assert_allclose(predicted.B, np.eye(2), atol=1e-14)
    assert_allclose(predicted.b,
                    np.linalg.solve(B, (B - np.eye(2)) @ v1), atol=1e-14)
    # fields are (L - I, shift)
    assert_allclose(cz.fields[0].B, predicted.B - np.eye(2), atol=1e-14)
    assert_allclose(cz.fields[0].b, predicted.b, atol=1e-14)


def test_commutator_zoom_identity_B_is_trivial():
    sch, gs, _, _, _ = contracting_family()
    cz = rz.commutator_zoom(np.eye(2), gs, sch)
    assert max(cz.residuals) < 1e-4
    assert np.abs(cz.predicted[0].B - np.eye(2)).max() == 0.0
    assert np.abs(cz.predicted[0].b).max() == 0.0


def test_commutator_zoom_rotation_prediction():
    sch, _, eps, M, lams = contracting_family()
    O = rotation(0.3)
    gs_rot = [cf.realize_based_linear(
                  cf.BasedLinearMap(eps[k], M[k], lams[k] * O))
              for k in range(12)]
    B = np.diag([2.0, 1.0])
    cz = rz.commutator_zoom(B, gs_rot, sch)
    assert cz.report.verdict == "converged"
    assert_allclose(cz.predicted[0].B, np.linalg.solve(B, O.T @ B @ O),
                    atol=1e-14)


def test_commutator_zoom_rejects_singular_B():
    sch, gs, _, _, _ = contracting_family()
    with pytest.raises(rz.NonInvertibleB):
        rz.commutator_zoom(np.array([[1.0, 0.0], [0.0, 0.0]]), gs, sch)


# --- zoom at a fixed point ---------------------------------------------------

def test_zoom_recovers_linear_part_of_quadratic_map():
    A = np.array([[0.3, -0.1], [0.2, 0.4]])
    f = lambda X: (np.asarray(X) @ A.T
                   + np.linalg.norm(X, axis=-1, keepdims=True)
                   * np.asarray(X))
    based, report = rz.zoom_at_fixed_point(f, cf.MoebiusMap.dilation(2.0, 2),
                                           n_max=25)
    errs = report.errors
    ratios = [errs[i + 1] / errs[i] for i in range(18)]
    assert all(0.4 <= r <= 0.6 for r in ratios)
    assert errs[-1] <= 1e-6
    assert np.abs(based.A - A).max() < 1e-6
    assert report.converged
    assert 0.45 < report.geometric_ratio() < 0.55
    assert based.eps.coords.shape == (2,)
    assert based.M.is_infinity


def test_zoom_at_staged_pole():
    eps = np.array([0.3, -0.2])
    M = np.array([4.0, 1.0])
    lam = 0.55
    g = cf.realize_based_linear(cf.BasedLinearMap(eps, M, lam * np.eye(2)))
    # T expands at eps (its repelling pole), which g fixes attractingly
    Tz = cf.loxodromic_from_poles(M, eps, 0.5)
    based, report = rz.zoom_at_fixed_point(g, Tz, n_max=20)
    assert report.verdict == "converged"
    assert np.abs(based.A - lam * np.eye(2)).max() < 1e-6


def test_zoom_rejects_unusable_input():
    A = np.array([[0.3, -0.1], [0.2, 0.4]])
    f = lambda X: (np.asarray(X) @ A.T
                   + np.linalg.norm(X, axis=-1, keepdims=True)
                   * np.asarray(X))
    with pytest.raises(ValueError):
        rz.zoom_at_fixed_point(f, cf.MoebiusMap.rotation(rotation(np.pi / 2)))
    with pytest.raises(rz.FixedPointMismatch):
        rz.zoom_at_fixed_point(lambda X: np.asarray(X) + 1.0,
                               cf.MoebiusMap.dilation(2.0, 2))
    with pytest.raises(cf.PoleAtInfinity):
        # contracting dilation expands at infinity instead
        rz.zoom_at_fixed_point(f, cf.MoebiusMap.dilation(0.5, 2))


# --- sector zoom -------------------------------------------------------------

def test_sector_zoom_exact_translation():
    c = np.array([0.7, -0.2, 0.4])
    f = lambda W: np.asarray(W, dtype=float) + c
    sz = rz.sector_zoom(f, np.array([1.0, 1.0, 0.5]), [10, 30, 100, 300])
    assert np.abs(sz.scaled - c).max() < 1e-9
    assert_allclose(sz.c_estimate, c, atol=1e-9)
    assert list(sz.n_values) == [10, 30, 100, 300]


def test_sector_zoom_recovers_deviation_field():
    lam = 0.35
    O3 = np.array([[np.cos(0.8), -np.sin(0.8), 0.0],
                   [np.sin(0.8), np.cos(0.8), 0.0],
                   [0.0, 0.0, 1.0]])
    A3 = np.array([[1.1, 0.2, 0.0], [0.0, 0.9, 0.1], [0.1, 0.0, 1.2]])
    params = tf.TangentIdentityParams(lam, O3, A3,
                                      np.array([0.2, -0.1, 0.3]),
                                      np.array([0.5, 0.4, -0.3]))
    w_star = tf.nonvanishing_search(params).witness
    phi_star = tf.phi_field(w_star, params)
    f = lambda W: tf.deviation_map(np.asarray(W, dtype=float), params)
    sz = rz.sector_zoom(f, w_star, [30, 100, 300])
    rel = (np.linalg.norm(sz.scaled[-1] - phi_star)
           / np.linalg.norm(phi_star))
    assert rel < 0.05
    # the scaled estimates have already settled at these depths
    spread = max(np.linalg.norm(s - sz.scaled[-1]) for s in sz.scaled)
    assert spread < 0.01 * np.linalg.norm(phi_star)


def test_sector_zoom_rejects_vanishing_field():
    with pytest.raises(ValueError):
        rz.sector_zoom(lambda W: np.asarray(W, dtype=float),
                       np.array([1.0, 1.0, 0.5]), [10, 30, 100])


def test_sector_zoom_rejects_shallow_sector():
    c = np.array([0.7, -0.2, 0.4])
    f = lambda W: np.asarray(W, dtype=float) + c
    with pytest.raises(rz.SectorViolation):
        rz.sector_zoom(f, np.array([1.0, 1.0, 0.5]), [10, 30],
                       a_seq=[0.0, 0.0])


# --- eccentric sequences -----------------------------------------------------

def test_eccentric_sequence_quadratic_closed_form():
    mu = lambda X: (np.asarray(X, dtype=float)
                    + np.linalg.norm(X, axis=-1, keepdims=True)
                    * np.asarray(X, dtype=float))
    ecc = rz.eccentric_sequence(mu, (0.5, np.eye(2)), (0.5, np.eye(2)),
                                n_max=20)
    # equal rates bracket exactly: m_n = n and h_n = x + 2^-n |x| x
    assert np.array_equal(ecc.m, np.arange(1, 21))
    grid = rz.zoom_grid(2)
    expected = grid + 2.0 ** -6 * np.linalg.norm(grid, axis=1,
                                                 keepdims=True) * grid
    assert np.abs(ecc.maps[5](grid) - expected).max() < 1e-12
    assert ecc.report.verdict == "converged"
    assert np.abs(ecc.B - np.eye(2)).max() < 1e-5
    # consecutive maps are genuinely distinct and approach each other
    gaps = [np.abs(ecc.maps[i](grid) - ecc.maps[i + 1](grid)).max()
            for i in range(6)]
    assert all(g > 0 for g in gaps)
    for g1, g2 in zip(gaps, gaps[1:]):
        assert 0.4 < g2 / g1 < 0.6


def test_eccentric_sequence_identity_mu():
    ecc = rz.eccentric_sequence(lambda X: np.asarray(X, dtype=float),
                                (0.5, np.eye(2)), (0.5, np.eye(2)),
                                n_max=12)
    grid = rz.zoom_grid(2)
    assert max(np.abs(m(grid) - grid).max() for m in ecc.maps) == 0.0
    assert ecc.report.verdict == "converged"


def test_eccentric_sequence_linear_mu_closed_form():
    D = np.array([[0.9, 0.3], [-0.2, 1.1]])
    mu = lambda X: np.asarray(X, dtype=float) @ D.T
    O1, O2 = rotation(1.0), rotation(0.61)
    ecc = rz.eccentric_sequence(mu, (0.3, O1), (0.5, O2), n_max=25)
    # bracketing keeps r_n = lam1^n / lam2^m_n inside (lam2, 1]
    assert np.all((ecc.ratio > 0.5) & (ecc.ratio <= 1.0))
    assert list(ecc.m[:8]) == [1, 3, 5, 6, 8, 10, 12, 13]
    n_chk = 7
    m_chk = ecc.m[n_chk - 1]
    r_chk = 0.3 ** n_chk / 0.5 ** m_chk
    H = (r_chk * np.linalg.matrix_power(O2, m_chk).T @ D
         @ np.linalg.matrix_power(O1, n_chk))
    grid = rz.zoom_grid(2)
    assert np.abs(ecc.maps[n_chk - 1](grid) - grid @ H.T).max() < 1e-12
    # a linear mu leaves no nonlinearity for the certificates to find
    assert ecc.certificates.max() < 1e-12
    # rotation angles never align, so no convergent subsequence emerges
    assert list(ecc.subsequence) == [16, 17, 20, 21, 23, 24]
    assert ecc.report.verdict == "inconclusive"


def test_eccentric_sequence_rejects_non_contraction():
    mu = lambda X: np.asarray(X, dtype=float)
    with pytest.raises(rz.BracketingFailure):
        rz.eccentric_sequence(mu, (0.3, np.eye(2)), (1.0, np.eye(2)),
                              n_max=5)


# --- based flow prep ---------------------------------------------------------

def test_based_flow_prep_exact_schedule():
    A2 = np.array([[0.5, 0.1], [0.0, 0.6]])
    seq = [cf.BasedLinearMap(U2 / n ** 2, n ** 2 * V2, A2)
           for n in range(2, 12)]
    prep = rz.based_flow_prep(seq)
    ns = np.arange(2, 12)
    assert np.abs(prep.t - 1.0 / ns).max() < 1e-12
    assert np.abs(np.linalg.norm(prep.eps_prime, axis=1)
                  - 1.0 / ns).max() < 1e-12
    # rescaled fields are pure translations b_n = A^-1 (I - A) eps'_n
    for k in (0, 3, 9):
        fld = prep.fields[k]
        assert np.abs(fld.B).max() < 1e-14
        assert_allclose(fld.b, np.linalg.inv(A2) @ (np.eye(2) - A2)
                        @ prep.eps_prime[k], atol=1e-13)
    # residual map-vs-field deviation shrinks along the sequence
    ball = 0.5 * rz.zoom_grid(2)
    dev = [np.abs(m(ball) - ball - f.b - ball @ f.B.T).max()
           for m, f in zip(prep.maps, prep.fields)]
    assert dev[-1] < 0.01 * dev[0]


def test_based_flow_prep_rejects_degenerate_input():
    A2 = np.array([[0.5, 0.1], [0.0, 0.6]])
    seq = [cf.BasedLinearMap(U2 / n ** 2, n ** 2 * V2, A2)
           for n in range(2, 12)]
    with pytest.raises(rz.DegenerateSequence):
        rz.based_flow_prep([seq[0]] * 4)
    with pytest.raises(rz.DegeneratePoles):
        rz.based_flow_prep([cf.BasedLinearMap(0 * U2, n ** 2 * V2, A2)
                            for n in range(2, 5)])
    with pytest.raises(ValueError):
        rz.based_flow_prep(seq, A_limit=np.eye(2) * 1.5)


# --- CSV export --------------------------------------------------------------

def test_export_zoom_csv_roundtrip(tmp_path):
    sch, gs, _, _, _ = contracting_family()
    report = rz.almost_affine_residual(gs, sch)
    path = str(tmp_path / "zoom.csv")
    out = rz.export_zoom_csv(path, report, margins=sch.margins)
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["n", "residual", "margin_1", "margin_2", "margin_3",
                       "fitted_rate"]
    assert len(rows) == 13
    assert float(rows[1][1]) == report.errors[0]
    assert float(rows[1][2]) == sch.margins[0][0]
    assert all(r[2] != "" for r in rows[1:])


def test_export_zoom_csv_defaults_and_empty_margins(tmp_path):
    # the almost-affine report carries its schedule margins in extras,
    # so the explicit argument is optional there ...
    sch, gs, _, _, _ = contracting_family()
    report = rz.almost_affine_residual(gs, sch)
    path = str(tmp_path / "aa.csv")
    rz.export_zoom_csv(path, report)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert float(rows[1][2]) == sch.margins[0][0]

    # ... while a fixed-point zoom report has none: empty cells
    A = np.array([[0.3, -0.1], [0.2, 0.4]])
    f = lambda X: (np.asarray(X) @ A.T
                   + np.linalg.norm(X, axis=-1, keepdims=True)
                   * np.asarray(X))
    _, zoom_rep = rz.zoom_at_fixed_point(f, cf.MoebiusMap.dilation(2.0, 2),
                                         n_max=10)
    path2 = str(tmp_path / "zoom.csv")
    rz.export_zoom_csv(path2, zoom_rep)
    with open(path2) as fh:
        rows2 = list(csv.reader(fh))
    assert rows2[1][2] == "" and rows2[1][4] == ""
    assert float(rows2[1][5]) == zoom_rep.geometric_ratio()
