"""Reflection groups, element enumeration, pole scoring, length arithmetic."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

import boundaryflows.conformal as cf
import boundaryflows.groups as gr


@pytest.fixture(scope="module")
def catalog():
    return gr.builtin_catalog()


def test_gram_from_coxeter_entries():
    gram = gr.gram_from_coxeter(gr.COXETER_534)
    assert_allclose(np.diag(gram), 1.0)
    assert_allclose(gram[0, 1], -np.cos(np.pi / 5.0))
    assert_allclose(gram[1, 2], -0.5)
    assert_allclose(gram[2, 3], -np.sqrt(2.0) / 2.0)
    assert_allclose([gram[0, 2], gram[0, 3]], 0.0, atol=1e-15)
    assert_allclose(gram, gram.T)


def test_gram_from_coxeter_rejects_bad_matrices():
    with pytest.raises(ValueError):
        gr.gram_from_coxeter([[1, 3], [4, 1]])
    with pytest.raises(ValueError):
        gr.gram_from_coxeter([[2, 3], [3, 2]])


def test_build_coxeter_group_generators_are_lorentz_involutions(catalog):
    G = catalog["coxeter-534"]
    eye = np.eye(4)
    for g in G.generators:
        assert g.det_sign == -1
        assert g.lorentz_defect() <= cf.TOL_LORENTZ
        square = cf.compose(g, g)
        assert np.abs(square.matrix - eye).max() <= 1e-12


@pytest.mark.parametrize("i,j,m", [
    (0, 1, 5), (1, 2, 3), (2, 3, 4), (0, 2, 2), (0, 3, 2), (1, 3, 2),
])
def test_coxeter_relations_hold(catalog, i, j, m):
    G = catalog["coxeter-534"]
    p = cf.compose(G.generators[i], G.generators[j])
    w = cf.MoebiusMap.identity(2)
    for _ in range(m):
        w = cf.compose(p, w)
    assert np.abs(w.matrix - np.eye(4)).max() <= 1e-12


def test_build_coxeter_group_signature_errors():
    # spherical A2 gram is positive definite: no negative direction
    with pytest.raises(gr.WrongSignature):
        gr.build_coxeter_group(gr.gram_from_coxeter([[1, 3], [3, 1]]))
    # one negative eigenvalue plus a kernel: normals are not a basis
    degenerate = np.array([
        [1.0, -2.0, 0.0, 0.0],
        [-2.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, -1.0],
        [0.0, 0.0, -1.0, 1.0],
    ])
    with pytest.raises(gr.NonRealizableGram):
        gr.build_coxeter_group(degenerate)


def test_enumerate_elements_counts_and_dedup(catalog):
    G = catalog["coxeter-534"]
    # relations collapse words: 4 letters would give 4*3^(L-1) reduced
    # words per length, the fingerprint dedup cuts that to the true count
    assert sum(1 for _ in gr.enumerate_elements(G, 1)) == 5
    assert sum(1 for _ in gr.enumerate_elements(G, 2)) == 14
    assert sum(1 for _ in gr.enumerate_elements(G, 3)) == 31
    recs = list(gr.enumerate_elements(G, 1))
    assert recs[0].word == () and recs[0].word_label() == "e"
    assert recs[0].classification.kind == "identity"
    assert [r.word_label() for r in recs[1:]] == ["0", "1", "2", "3"]


def test_enumerate_elements_even_only(catalog):
    G = catalog["coxeter-534"]
    even = list(gr.enumerate_elements(G, 2, even_only=True))
    assert len(even) == 10
    assert all(r.map.det_sign > 0 for r in even)
    assert all(len(r.word) % 2 == 0 for r in even)
    # odd words are still traversed as prefixes: length 3 adds nothing even
    assert sum(1 for _ in gr.enumerate_elements(G, 3, even_only=True)) == 10


def test_enumerate_elements_budget(catalog):
    with pytest.raises(gr.BudgetExceeded):
        list(gr.enumerate_elements(catalog["coxeter-534"], 4, max_elements=10))


def test_picard_classification_census(catalog):
    kinds = {}
    for rec in gr.enumerate_elements(catalog["picard"], 2):
        kinds[rec.classification.kind] = kinds.get(rec.classification.kind, 0) + 1
    assert kinds == {"identity": 1, "parabolic": 12, "elliptic": 5,
                     "loxodromic": 4}


def test_schottky_generators_are_loxodromic(catalog):
    G = catalog["schottky-rank2"]
    c = cf.classify(G.generators[0])
    assert c.kind == "loxodromic"
    assert_allclose(c.loxodromic.length, -np.log(0.2), rtol=1e-12)
    assert_allclose(c.loxodromic.attracting.coords, [0.9, 0.0], atol=1e-9)
    assert_allclose(c.loxodromic.repelling.coords, [-0.9, 0.0], atol=1e-9)


def test_pole_density_search_frozen_best_scores(catalog):
    G = catalog["coxeter-534"]
    expected = {6: (0.61607, "0-1-2-1-3-2", 44),
                8: (0.50255, "1-2-3-2-1-0-1-2", 142),
                10: (0.46914, "1-2-1-0-1-3-2-1-3-2", 364)}
    for budget, (score, word, count) in expected.items():
        ws = gr.pole_density_search(G, budget, even_only=True,
                                    basepoint=[-1.9, 2.6])
        assert len(ws) == count
        assert ws[0].record.word_label() == word
        assert abs(ws[0].score - score) < 5e-6
        scores = [w.score for w in ws]
        assert scores == sorted(scores)
        assert ws.skipped["parabolic"] == 0 and ws.skipped["identity"] == 1


def test_witness_internal_consistency(catalog):
    ws = gr.pole_density_search(catalog["coxeter-534"], 6, even_only=True,
                                basepoint=[-1.9, 2.6])
    for w in ws[:10]:
        el = np.exp(w.length)
        assert_allclose(w.score, np.sqrt(w.eps_norm * el / w.m_norm),
                        rtol=1e-12)
        assert_allclose(w.t, min(1.0, np.sqrt(w.eps_norm * w.m_norm * el)),
                        rtol=1e-12)
        assert_allclose(w.ratios[0], w.eps_norm * el / w.t, rtol=1e-12)
        assert_allclose(w.ratios[1], w.t / w.m_norm, rtol=1e-12)
        assert w.theta is None


def test_export_witnesses_roundtrip(catalog, tmp_path):
    ws = gr.pole_density_search(catalog["coxeter-534"], 6, even_only=True)
    path = tmp_path / "witnesses.csv"
    gr.export_witnesses(ws[:5], path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "word,l,eps_norm,M_norm,t_star,score"
    assert len(lines) == 6
    first = lines[1].split(",")
    assert first[0] == ws[0].record.word_label()
    assert float(first[1]) == ws[0].length
    assert float(first[5]) == ws[0].score


def test_commensurability_rational_and_independent():
    verdict = gr.commensurability_test(np.log(2.0), 3.0 * np.log(2.0))
    assert isinstance(verdict, gr.Rational)
    assert verdict == (1, 3)
    assert verdict.error <= 1e-9

    exact = gr.commensurability_test(2.0, 3.0)
    assert exact == (2, 3) and exact.error == 0.0

    ind = gr.commensurability_test(1.0, np.sqrt(2.0))
    assert isinstance(ind, gr.Independent)
    assert (ind.best_p, ind.best_q) == (5741, 8119)
    assert 5e-9 < ind.best_error < 6e-9


def test_commensurability_budget_semantics():
    # "independent" always means "no convergent inside the budget": a
    # bigger denominator cap lets a deeper convergent of 1/sqrt(2) land
    # within the same tol, flipping the verdict
    flipped = gr.commensurability_test(1.0, np.sqrt(2.0),
                                       max_denominator=10 ** 5)
    assert isinstance(flipped, gr.Rational)
    assert flipped == (13860, 19601)


def test_commensurability_rejects_nonpositive():
    with pytest.raises(ValueError):
        gr.commensurability_test(0.0, 1.0)
    with pytest.raises(ValueError):
        gr.commensurability_test(1.0, -2.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=1, max_value=50),
       st.integers(min_value=1, max_value=50),
       st.floats(min_value=0.1, max_value=10.0,
                 allow_nan=False, allow_infinity=False))
def test_commensurability_recovers_exact_ratios(p, q, x):
    from fractions import Fraction
    verdict = gr.commensurability_test(p * x, q * x)
    assert isinstance(verdict, gr.Rational)
    reduced = Fraction(p, q)
    assert (verdict.p, verdict.q) == (reduced.numerator, reduced.denominator)


def test_builtin_catalog_contents(catalog):
    assert sorted(catalog) == ["coxeter-534", "picard", "schottky-rank2"]
    for G in catalog.values():
        assert G.chart_dim == 2 and G.dimension == 3
    assert len(catalog["coxeter-534"].generators) == 4
    assert len(catalog["picard"].generators) == 5
    assert len(catalog["schottky-rank2"].generators) == 4
    # generator list is closed under inverses via inv_index
    for G in catalog.values():
        for j, g in enumerate(G.generators):
            inv = G.generators[G.inv_index[j]]
            prod = cf.compose(g, inv)
            assert np.abs(prod.matrix - np.eye(4)).max() <= 1e-9


def test_normalize_by_group_identity_wins_ties(catalog):
    G = catalog["coxeter-534"]
    res = gr.normalize_by_group(G, cf.MoebiusMap.identity(2),
                                max_word_length=2)
    assert res.record.word == ()
    assert_allclose(res.separation, np.sqrt(3.0), rtol=1e-9)


def test_normalize_by_group_undoes_generator(catalog):
    G = catalog["coxeter-534"]
    res = gr.normalize_by_group(G, G.generators[0], max_word_length=2)
    assert res.record.word == (0,)
    g, phi, sep = res  # unpacking protocol
    assert g is res.record
    assert_allclose(sep, np.sqrt(3.0), rtol=1e-9)
    triple = gr.canonical_triple(2)
    for p in triple:
        image = cf.apply(phi, p)
        assert_allclose(image.coords, p.coords, atol=1e-9)


def test_canonical_triple_needs_two_chart_dims():
    with pytest.raises(ValueError):
        gr.canonical_triple(1)


def test_load_catalog_json(tmp_path):
    path = tmp_path / "cat.json"
    path.write_text(json.dumps(
        {"mygroup": {"coxeter": gr.COXETER_534.tolist(),
                     "cocompact_hint": True}}))
    loaded = gr.load_catalog(path)
    assert list(loaded) == ["mygroup"]
    G = loaded["mygroup"]
    assert G.label == "mygroup" and G.cocompact_hint
    assert len(G.generators) == 4
    assert G.generators[0].lorentz_defect() <= cf.TOL_LORENTZ
