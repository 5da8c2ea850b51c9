"""Finitely generated groups of Moebius maps: construction from Coxeter
data, reduced-word enumeration with fingerprint dedup, pole inventories and
quantitative pole scoring, triple normalization, and the rational/independent
test for pairs of translation lengths.

A group is stored as an inverse-closed generator list; elements are streamed
breadth-first as GroupElementRecord values whose classification is computed
lazily.  Scores follow the two-ratio compromise

    score = sqrt(|eps| e^l / |M|),   t* = min(1, sqrt(|eps| |M| e^l)),

which is the minimized value of max(|eps| e^l / t, t / |M|) over t in (0,1]:
small when the attracting pole sits near the basepoint, the repelling pole
is far, and the translation length is large.
"""

import csv
import json
from fractions import Fraction

import numpy as np

from .conformal import (AmbiguousClassification, BoundaryPoint, MoebiusMap,
                        NumericalDegeneracy, apply, chordal_distance, classify,
                        compose, minkowski)

FINGERPRINT_SCALE = 1e-7    # matrix entries rounded to this for dedup
SIGNATURE_TOL = 1e-10       # eigenvalues of a gram below this are "zero"
DEFAULT_MAX_ELEMENTS = 200000
SEPARATION_TIE_TOL = 1e-12


class GroupError(Exception):
    pass


class WrongSignature(GroupError):
    pass


class NonRealizableGram(GroupError):
    pass


class BudgetExceeded(GroupError):
    pass


class NoLoxodromicFound(GroupError):
    pass


def _fingerprint(mat):
    return np.rint(mat / FINGERPRINT_SCALE).astype(np.int64).tobytes()


class GroupElementRecord:
    """A group element with its defining word; classification on demand.

    `word` is a tuple of generator indices (empty for the identity).
    Elements whose classification is numerically ambiguous report
    kind="ambiguous" instead of raising, so sweeps over enumerations can
    flag and skip them.
    """

    __slots__ = ("word", "map", "_classification")

    def __init__(self, word, moebius):
        self.word = tuple(int(i) for i in word)
        self.map = moebius
        self._classification = None

    @property
    def classification(self):
        if self._classification is None:
            try:
                self._classification = classify(self.map)
            except AmbiguousClassification:
                from .conformal import Classification
                self._classification = Classification("ambiguous")
        return self._classification

    @property
    def loxodromic(self):
        return self.classification.loxodromic

    def word_label(self):
        return "-".join(str(i) for i in self.word) if self.word else "e"

    def __repr__(self):
        return "GroupElementRecord(word=%s)" % (self.word_label(),)


class KleinianGroup:
    """Inverse-closed generator list for a subgroup of Moeb(R^{N-1} u inf).

    `dimension` is N (the hyperbolic space whose boundary is acted on), so
    generators act on the chart R^{N-1} and are stored as (N+1)x(N+1)
    Lorentz matrices.  `cocompact_hint` is caller-supplied metadata and is
    never verified.
    """

    def __init__(self, generators, label="", cocompact_hint=False):
        if not generators:
            raise ValueError("need at least one generator")
        dims = {g.dim for g in generators}
        if len(dims) != 1:
            raise ValueError("generators act on different charts")
        gens = list(generators)
        prints = [_fingerprint(g.matrix) for g in gens]
        inv_index = [None] * len(gens)
        for i, g in enumerate(gens):
            if inv_index[i] is not None:
                continue
            fp_inv = _fingerprint(g.inverse().matrix)
            for j, fp in enumerate(prints):
                if fp == fp_inv:
                    inv_index[i], inv_index[j] = j, i
                    break
            else:
                gens.append(g.inverse())
                prints.append(fp_inv)
                inv_index[i] = len(gens) - 1
                inv_index.append(i)
        self.generators = gens
        self.inv_index = inv_index
        self.dimension = gens[0].dim + 1
        self.label = label
        self.cocompact_hint = bool(cocompact_hint)

    @property
    def chart_dim(self):
        return self.dimension - 1

    def __repr__(self):
        return ("KleinianGroup(%r, %d generators, N=%d)"
                % (self.label, len(self.generators), self.dimension))


def gram_from_coxeter(m):
    """Gram matrix G_ij = -cos(pi / m_ij) of a Coxeter matrix (m_ii = 1)."""
    m = np.asarray(m, dtype=float)
    if m.shape[0] != m.shape[1] or np.abs(m - m.T).max() > 0:
        raise ValueError("Coxeter matrix must be square and symmetric")
    if np.any(np.diag(m) != 1):
        raise ValueError("Coxeter matrix diagonal must be 1")
    return -np.cos(np.pi / m)


def build_coxeter_group(gram, label="coxeter", cocompact_hint=False):
    """Reflection group realizing a Lorentzian gram matrix.

    The gram must have signature (N, 1) with unit diagonal; the returned
    generators are the reflections r_i = I - 2 v_i v_i^T J in the realized
    unit normals v_i (rows of |L|^{1/2} Q^T for gram = Q L Q^T, negative
    eigenvalue ordered last so that J = diag(1,...,1,-1)).
    """
    G = np.asarray(gram, dtype=float)
    size = G.shape[0]
    if G.shape != (size, size) or np.abs(G - G.T).max() > 1e-12:
        raise ValueError("gram must be symmetric")
    if np.abs(np.diag(G) - 1.0).max() > 1e-12:
        raise ValueError("gram diagonal must be 1 (unit normals)")
    evals, Q = np.linalg.eigh(G)
    negatives = int(np.sum(evals < -SIGNATURE_TOL))
    if negatives != 1:
        raise WrongSignature("gram has %d negative eigenvalues, need exactly 1"
                             % negatives)
    if np.any(np.abs(evals) <= SIGNATURE_TOL):
        raise NonRealizableGram("gram is singular; normals are not a basis")
    order = np.argsort(-evals)  # positives first, the negative one last
    evals, Q = evals[order], Q[:, order]
    V = np.sqrt(np.abs(evals))[:, None] * Q.T  # columns v_i: V^T J V = G
    J = minkowski(size)
    gens = []
    for i in range(size):
        v = V[:, i]
        R = np.eye(size) - 2.0 * np.outer(v, v) @ J  # <v,v>_J = G_ii = 1
        if R[-1, -1] <= 0:
            R = -R  # reflections are defined up to the ray; keep time-up
        gens.append(MoebiusMap(R, det_sign=-1))
    return KleinianGroup(gens, label=label, cocompact_hint=cocompact_hint)


def enumerate_elements(G, max_word_length, even_only=False,
                       max_elements=DEFAULT_MAX_ELEMENTS):
    """Breadth-first stream of distinct elements as GroupElementRecord.

    Words are reduced (no letter followed by its inverse) and deduplicated
    by the rounded-matrix fingerprint, so relations shorter than the budget
    collapse automatically.  even_only yields only orientation-preserving
    elements but still traverses odd words (they are needed as prefixes).
    """
    size = G.chart_dim + 2
    identity = MoebiusMap.identity(G.chart_dim)
    seen = {_fingerprint(identity.matrix)}
    record = GroupElementRecord((), identity)
    count = 1
    if not even_only or identity.det_sign > 0:
        yield record
    frontier = [record]
    for _ in range(max_word_length):
        new_frontier = []
        for rec in frontier:
            last = rec.word[-1] if rec.word else None
            for j, gen in enumerate(G.generators):
                if last is not None and G.inv_index[last] == j:
                    continue
                product = compose(rec.map, gen)
                fp = _fingerprint(product.matrix)
                if fp in seen:
                    continue
                seen.add(fp)
                count += 1
                if count > max_elements:
                    raise BudgetExceeded("more than %d distinct elements"
                                         % max_elements)
                new_rec = GroupElementRecord(rec.word + (j,), product)
                new_frontier.append(new_rec)
                if not even_only or product.det_sign > 0:
                    yield new_rec
        frontier = new_frontier
        if not frontier:
            break


class PoleSearchWitness:
    """A loxodromic element scored by its pole configuration.

    ratios = (|eps| e^l / t, t / |M|) at the reported t; delta is the
    hyperbolic displacement diagnostic d(g(0, t), (0, t e^{-l})), measuring
    how closely g realizes a translation along the vertical geodesic at the
    optimal height; theta (recurrence angle) is not produced by the direct
    scoring search and is always None here.
    """

    __slots__ = ("record", "t", "score", "ratios", "eps_norm", "m_norm",
                 "length", "delta", "theta")

    def __init__(self, record, t, score, ratios, eps_norm, m_norm, length,
                 delta=None):
        self.record = record
        self.t = float(t)
        self.score = float(score)
        self.ratios = (float(ratios[0]), float(ratios[1]))
        self.eps_norm = float(eps_norm)
        self.m_norm = float(m_norm)
        self.length = float(length)
        self.delta = delta
        self.theta = None

    def __repr__(self):
        return ("PoleSearchWitness(word=%s, score=%.4g, l=%.4g)"
                % (self.record.word_label(), self.score, self.length))


def _chart_norm(point):
    return float("inf") if point.is_infinity else float(
        np.linalg.norm(point.coords))


def _vertical_point(t, size):
    """Hyperboloid point above the chart origin at height t > 0."""
    v = np.zeros(size)
    v[-2] = (1.0 - t * t) / (2.0 * t)
    v[-1] = (1.0 + t * t) / (2.0 * t)
    return v


def _displacement(moebius, t, length):
    J = minkowski(moebius.matrix.shape[0])
    v = _vertical_point(t, moebius.matrix.shape[0])
    w = _vertical_point(t * np.exp(-length), moebius.matrix.shape[0])
    c = -float((moebius.matrix @ v) @ (J @ w))
    return float(np.arccosh(max(c, 1.0)))


def score_element(record, basepoint_shift=None):
    """PoleSearchWitness for one loxodromic record, or None if not usable."""
    data = record.loxodromic
    if data is None:
        return None
    mm = record.map if basepoint_shift is None else compose(
        compose(basepoint_shift, record.map), basepoint_shift.inverse())
    if basepoint_shift is None:
        eps_pt, m_pt = data.attracting, data.repelling
        length = data.length
    else:
        shifted = classify(mm).loxodromic
        eps_pt, m_pt, length = shifted.attracting, shifted.repelling, shifted.length
    eps_norm = _chart_norm(eps_pt)
    m_norm = _chart_norm(m_pt)
    if not np.isfinite(eps_norm):
        return None  # attracting pole at infinity cannot approach the basepoint
    el = float(np.exp(length))
    score = float(np.sqrt(eps_norm * el / m_norm)) if m_norm > 0 else float("inf")
    if eps_norm == 0.0 or not np.isfinite(m_norm):
        score = 0.0
    t_sq = eps_norm * m_norm * el
    t_star = 1.0 if (not np.isfinite(t_sq) or t_sq == 0.0 or np.isnan(t_sq)) \
        else min(1.0, float(np.sqrt(t_sq)))
    ratios = (eps_norm * el / t_star,
              0.0 if not np.isfinite(m_norm) else t_star / m_norm)
    delta = _displacement(mm, t_star, length)
    return PoleSearchWitness(record, t_star, score, ratios, eps_norm, m_norm,
                             length, delta=delta)


def pole_density_search(G, max_word_length, even_only=True,
                        max_elements=DEFAULT_MAX_ELEMENTS, basepoint=None):
    """All loxodromic elements within the word-length budget, scored and
    sorted ascending by score (best witness first; ties by word).

    Optionally conjugates by the translation moving `basepoint` to 0 before
    scoring, so the pole norms are measured from that basepoint.  Elliptic,
    parabolic, and ambiguous elements are skipped; their counts are recorded
    on the returned list's `.skipped` attribute (a plain dict).
    """
    shift = None
    if basepoint is not None:
        coords = basepoint.coords if isinstance(basepoint, BoundaryPoint) \
            else np.asarray(basepoint, dtype=float)
        shift = MoebiusMap.translation(-coords)
    witnesses = []
    skipped = {"identity": 0, "elliptic": 0, "parabolic": 0, "ambiguous": 0,
               "pole_at_infinity": 0}
    for rec in enumerate_elements(G, max_word_length, even_only=even_only,
                                  max_elements=max_elements):
        kind = rec.classification.kind
        if kind != "loxodromic":
            skipped[kind] += 1
            continue
        wit = score_element(rec, basepoint_shift=shift)
        if wit is None:
            skipped["pole_at_infinity"] += 1
            continue
        witnesses.append(wit)
    if not witnesses:
        raise NoLoxodromicFound("no loxodromic element within word length %d"
                                % max_word_length)
    witnesses.sort(key=lambda w: (w.score, w.record.word))
    out = _WitnessList(witnesses)
    out.skipped = skipped
    return out


class _WitnessList(list):
    """List subclass so the search can attach its skipped-element tally."""
    __slots__ = ("skipped",)


def export_witnesses(witnesses, path):
    """CSV rows (word, l, eps_norm, M_norm, t_star, score), repr-precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["word", "l", "eps_norm", "M_norm", "t_star", "score"])
        for w in witnesses:
            writer.writerow([w.record.word_label(), repr(w.length),
                             repr(w.eps_norm), repr(w.m_norm), repr(w.t),
                             repr(w.score)])


def canonical_triple(chart_dim):
    """Equilateral triple on the unit circle of the first two chart
    coordinates — the maximally separated 3-point configuration, so the
    identity is always among the separation maximizers for it."""
    if chart_dim < 2:
        raise ValueError("need chart dimension >= 2")
    pts = []
    for k in range(3):
        c = np.zeros(chart_dim)
        c[0] = np.cos(2.0 * np.pi * k / 3.0)
        c[1] = np.sin(2.0 * np.pi * k / 3.0)
        pts.append(BoundaryPoint(c))
    return tuple(pts)


def triple_separation(moebius, triple):
    imgs = [apply(moebius, p) for p in triple]
    return min(chordal_distance(imgs[0], imgs[1]),
               chordal_distance(imgs[0], imgs[2]),
               chordal_distance(imgs[1], imgs[2]))


class NormalizationResult:
    __slots__ = ("record", "phi", "separation")

    def __init__(self, record, phi, separation):
        self.record = record
        self.phi = phi
        self.separation = float(separation)

    def __iter__(self):  # unpack as (g, phi) or (g, phi, separation)
        return iter((self.record, self.phi, self.separation))

    def __repr__(self):
        return ("NormalizationResult(word=%s, separation=%.6g)"
                % (self.record.word_label(), self.separation))


def normalize_by_group(G, T, triple=None, max_word_length=4,
                       max_elements=DEFAULT_MAX_ELEMENTS):
    """Replace T by phi = g^{-1} T with g chosen from the enumeration budget
    to maximize the minimum pairwise chordal separation of the phi-images of
    the triple.  Ties (within SEPARATION_TIE_TOL) go to the lexicographically
    smallest word, so g = identity wins whenever it is among the maximizers.
    """
    if triple is None:
        triple = canonical_triple(G.chart_dim)
    if len(triple) != 3:
        raise ValueError("need exactly three points")
    for i in range(3):
        for j in range(i + 1, 3):
            if chordal_distance(triple[i], triple[j]) == 0.0:
                raise ValueError("triple points must be pairwise distinct")
    best = None
    best_sep = -1.0
    for rec in enumerate_elements(G, max_word_length,
                                  max_elements=max_elements):
        phi = compose(rec.map.inverse(), T)
        try:
            sep = triple_separation(phi, triple)
        except NumericalDegeneracy:
            continue  # some image ray collapsed; that g is no maximizer
        if sep > best_sep + SEPARATION_TIE_TOL or (
                abs(sep - best_sep) <= SEPARATION_TIE_TOL
                and best is not None and rec.word < best[0].word):
            best = (rec, phi)
            best_sep = sep
    return NormalizationResult(best[0], best[1], best_sep)


class Rational:
    """Commensurable verdict: l1/l2 = p/q to within the requested tol."""

    __slots__ = ("p", "q", "error")

    def __init__(self, p, q, error=0.0):
        self.p = int(p)
        self.q = int(q)
        self.error = float(error)

    def __eq__(self, other):
        if isinstance(other, Rational):
            return (self.p, self.q) == (other.p, other.q)
        if isinstance(other, tuple):
            return (self.p, self.q) == other
        return NotImplemented

    def __repr__(self):
        return "Rational(%d/%d)" % (self.p, self.q)


class Independent:
    """No convergent of l1/l2 with denominator <= max_denominator came
    within tol; best_error records how close the nearest one got."""

    __slots__ = ("best_p", "best_q", "best_error")

    def __init__(self, best_p, best_q, best_error):
        self.best_p = int(best_p)
        self.best_q = int(best_q)
        self.best_error = float(best_error)

    def __eq__(self, other):
        if isinstance(other, Independent):
            return True
        return NotImplemented

    def __repr__(self):
        return ("Independent(best %d/%d, err=%.3g)"
                % (self.best_p, self.best_q, self.best_error))


def commensurability_test(l1, l2, tol=1e-9, max_denominator=10 ** 4):
    """Rational(p/q) iff some continued-fraction convergent of l1/l2 with
    denominator <= max_denominator approximates it within tol; else
    Independent.  Total function for l1, l2 > 0."""
    if l1 <= 0 or l2 <= 0:
        raise ValueError("lengths must be positive")
    x = float(l1) / float(l2)
    # convergents via Fraction's own Stern-Brocot walk would give the single
    # best approximation; the contract asks for the convergent sequence, so
    # run the classical recurrence h_n = a_n h_{n-1} + h_{n-2} explicitly.
    h_prev, h_cur = 0, 1   # numerator seeds h_{-2}, h_{-1}
    k_prev, k_cur = 1, 0   # denominator seeds k_{-2}, k_{-1}
    frac = x
    best = (0, 1, abs(x))
    for _ in range(64):
        a = int(np.floor(frac))
        h_next = a * h_cur + h_prev
        k_next = a * k_cur + k_prev
        if k_next > max_denominator:
            break
        if k_next > 0:
            err = abs(x - h_next / k_next)
            if err < best[2]:
                best = (h_next, k_next, err)
            if err <= tol:
                reduced = Fraction(h_next, k_next)
                return Rational(reduced.numerator, reduced.denominator, err)
        rem = frac - a
        h_prev, h_cur = h_cur, h_next
        k_prev, k_cur = k_cur, k_next
        if rem <= 0:
            break
        frac = 1.0 / rem
    return Independent(*best)


COXETER_534 = np.array([
    [1, 5, 2, 2],
    [5, 1, 3, 2],
    [2, 3, 1, 4],
    [2, 2, 4, 1],
], dtype=float)


def _picard_group():
    """PSL(2, Z[i]) as Moebius maps of R^2 u inf: translations by 1 and i
    together with z -> -1/z (geometric inversion followed by x-flip)."""
    t1 = MoebiusMap.translation([1.0, 0.0])
    t2 = MoebiusMap.translation([0.0, 1.0])
    s = compose(MoebiusMap.rotation(np.diag([-1.0, 1.0])),
                MoebiusMap.inversion(2))
    return KleinianGroup([t1, t2, s], label="picard", cocompact_hint=False)


def _schottky_rank2():
    from .conformal import loxodromic_from_poles
    g1 = loxodromic_from_poles([0.9, 0.0], [-0.9, 0.0], 0.2)
    g2 = loxodromic_from_poles([0.0, 0.9], [0.0, -0.9], 0.2)
    return KleinianGroup([g1, g2], label="schottky-rank2",
                         cocompact_hint=False)


def builtin_catalog():
    """Label -> KleinianGroup for the groups shipped with the package."""
    return {
        "coxeter-534": build_coxeter_group(gram_from_coxeter(COXETER_534),
                                           label="coxeter-534",
                                           cocompact_hint=True),
        "picard": _picard_group(),
        "schottky-rank2": _schottky_rank2(),
    }


def load_catalog(path):
    """Load {label: KleinianGroup} from a JSON or TOML catalog file.

    Each entry supplies either `coxeter` (a Coxeter matrix) or `generators`
    (list of (N+1)x(N+1) matrices) plus `label` and optional
    `cocompact_hint`.
    """
    text = open(path, "rb").read()
    if str(path).endswith(".toml"):
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        data = tomllib.loads(text.decode())
    else:
        data = json.loads(text.decode())
    groups = {}
    entries = data["groups"] if isinstance(data, dict) and "groups" in data \
        else data
    if isinstance(entries, dict):
        entries = [dict(v, label=k) for k, v in entries.items()]
    for entry in entries:
        label = entry["label"]
        if "coxeter" in entry:
            groups[label] = build_coxeter_group(
                gram_from_coxeter(np.asarray(entry["coxeter"], dtype=float)),
                label=label,
                cocompact_hint=entry.get("cocompact_hint", False))
        elif "generators" in entry:
            gens = [MoebiusMap(np.asarray(m, dtype=float))
                    for m in entry["generators"]]
            groups[label] = KleinianGroup(
                gens, label=label,
                cocompact_hint=entry.get("cocompact_hint", False))
        else:
            raise ValueError("entry %r needs 'coxeter' or 'generators'" % label)
    return groups
