"""Moebius maps of the boundary sphere R^n u {inf} as Lorentz matrices.

A point of the boundary of hyperbolic (n+1)-space is a ray of null vectors in
Minkowski space R^(n+1,1).  We use the quadratic form J = diag(1,...,1,-1)
and the paraboloid chart

    y in R^n   <->   (y, (1 - |y|^2)/2, (1 + |y|^2)/2),      inf <-> (0,...,0,-1,1),

so a Moebius transformation of R^n u {inf} is exactly a matrix M of size
(n+2) with M^T J M = J that preserves the upper light cone.  Compositions are
matrix products; inverses are exact (M^-1 = J M^T J); a polar-type projection
back onto the matrix group is applied every few compositions to stop drift.

Internally the generators are assembled in light-cone coordinates
(x, u, w) = (x, t+s, t-s), where the chart action is transparent:
translations, dilations and orthogonal maps are affine in (x, u), and the
unit-sphere inversion is the swap of u and w.
"""

import json

import numpy as np

TOL_LORENTZ = 1e-9     # |M^T J M - J| allowed after re-projection
TOL_COMPOSE = 1e-9     # apply(compose(f,g), x) vs apply(f, apply(g, x))
TOL_DERIV = 1e-6       # analytic Jacobian vs finite differences
TOL_FIX = 1e-8         # fixed-point residuals (chordal)
TOL_LOXO = 1e-6        # translation lengths below this are non-loxodromic
TOL_ORTH = 1e-9        # orthogonality defect accepted on input matrices
RENORMALIZE_EVERY = 8  # compositions between re-projections onto O(n+1,1)
FD_STEP = 1e-5         # central-difference step for numerical Jacobians

_INF_RATIO = 1e-13         # |u| below this (relative) means "at infinity"
_IDENTITY_TOL = 1e-10
_POLE_COLLAPSE = 1e-5      # chordal gap under which candidate poles coincide
_NULL_TOL = 1e-6


class ConformalError(Exception):
    """Base class for errors raised by the conformal core."""


class DimensionMismatch(ConformalError):
    pass


class NumericalDegeneracy(ConformalError):
    pass


class NonOrthogonal(ConformalError):
    pass


class AmbiguousClassification(ConformalError):
    pass


class PoleAtInfinity(ConformalError):
    pass


class CoincidentPoints(ConformalError):
    pass


class SingularMultiplier(ConformalError):
    pass


def minkowski(size):
    """The form J = diag(1, ..., 1, -1) of the given matrix size."""
    J = np.eye(size)
    J[-1, -1] = -1.0
    return J


def lorentz_defect(mat):
    """max |M^T J M - J|; zero iff M is exactly J-orthogonal."""
    J = minkowski(mat.shape[0])
    return float(np.abs(mat.T @ J @ mat - J).max())


def _basis_xuw(size):
    """P with (x,u,w) = P (x,s,t); exact in floats (entries 0, +-1, +-1/2)."""
    P = np.eye(size)
    P[-2, -2], P[-2, -1] = 1.0, 1.0    # u = s + t
    P[-1, -2], P[-1, -1] = -1.0, 1.0   # w = t - s
    Pinv = np.eye(size)
    Pinv[-2, -2], Pinv[-2, -1] = 0.5, -0.5
    Pinv[-1, -2], Pinv[-1, -1] = 0.5, 0.5
    return P, Pinv


def _project_lorentz(mat):
    """Newton polar-type projection onto the J-orthogonal group."""
    J = minkowski(mat.shape[0])
    X = mat
    try:
        for _ in range(3):
            X = 0.5 * (X + J @ np.linalg.inv(X).T @ J)
    except np.linalg.LinAlgError:
        raise NumericalDegeneracy("matrix drifted beyond repair (singular "
                                  "within working precision)")
    return X


class BoundaryPoint:
    """A point of R^n u {inf}; `coords` is an (n,) array or None for inf."""

    __slots__ = ("coords", "dim")

    def __init__(self, coords=None, dim=None):
        if coords is None:
            if dim is None:
                raise ValueError("point at infinity needs an explicit dim")
            self.coords = None
            self.dim = int(dim)
        else:
            c = np.asarray(coords, dtype=float)
            if c.ndim != 1:
                raise ValueError("chart coordinates must be a flat vector")
            if not np.all(np.isfinite(c)):
                raise ValueError("finite chart coordinates required (use infinity())")
            c = c.copy()
            c.flags.writeable = False
            self.coords = c
            self.dim = c.shape[0]

    @classmethod
    def infinity(cls, dim):
        return cls(None, dim=dim)

    @classmethod
    def from_null(cls, vec, tol=_NULL_TOL):
        """Point for a null ray given in (x, s, t) coordinates."""
        v = np.asarray(vec, dtype=float)
        n = v.shape[0] - 2
        J = minkowski(n + 2)
        norm2 = float(v @ v)
        if norm2 <= 0.0:
            raise NumericalDegeneracy("zero vector is not a ray")
        if abs(float(v @ J @ v)) > tol * norm2:
            raise NumericalDegeneracy("vector is not null within tolerance")
        if v[-1] < 0:
            v = -v
        u = v[-2] + v[-1]
        if abs(u) <= _INF_RATIO * v[-1]:
            return cls.infinity(n)
        return cls(v[:n] / u)

    @property
    def is_infinity(self):
        return self.coords is None

    def null(self):
        """Time-normalized null lift in (x, s, t) coordinates."""
        n = self.dim
        v = np.zeros(n + 2)
        if self.is_infinity:
            v[-2], v[-1] = -1.0, 1.0
            return v
        r2 = float(self.coords @ self.coords)
        v[:n] = 2.0 * self.coords
        v[-2] = 1.0 - r2
        v[-1] = 1.0 + r2
        return v / (1.0 + r2)

    def to_json(self):
        chart = "inf" if self.is_infinity else list(map(float, self.coords))
        return json.dumps({"chart": chart, "dimension": self.dim})

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        if data["chart"] == "inf":
            return cls.infinity(int(data["dimension"]))
        return cls(np.asarray(data["chart"], dtype=float))

    def __repr__(self):
        if self.is_infinity:
            return "BoundaryPoint(inf, dim=%d)" % self.dim
        return "BoundaryPoint(%s)" % np.array2string(self.coords, precision=6)


def chordal_distance(p, q):
    """Chordal metric on the boundary sphere (max value 2).

    Computed from chart differences rather than the Minkowski inner product:
    the two agree exactly, but differencing first keeps full precision for
    nearby points.
    """
    if p.dim != q.dim:
        raise DimensionMismatch("points live on different spheres")
    if p.is_infinity and q.is_infinity:
        return 0.0
    if p.is_infinity or q.is_infinity:
        y = q.coords if p.is_infinity else p.coords
        return float(2.0 / np.sqrt(1.0 + y @ y))
    d = p.coords - q.coords
    return float(2.0 * np.sqrt((d @ d) / ((1.0 + p.coords @ p.coords)
                                          * (1.0 + q.coords @ q.coords))))


def cross_ratio(a, b, c, d):
    """Moebius-invariant cross-ratio of four distinct boundary points.

    For finite points this equals |a-c|^2 |b-d|^2 / (|a-d|^2 |b-c|^2).
    """
    J = minkowski(a.dim + 2)
    va, vb, vc, vd = a.null(), b.null(), c.null(), d.null()
    num = (va @ J @ vc) * (vb @ J @ vd)
    den = (va @ J @ vd) * (vb @ J @ vc)
    if den == 0.0:
        raise CoincidentPoints("cross-ratio undefined: repeated point")
    return float(num / den)


class ConformalDerivative:
    """Derivative lambda * O of a conformal map: scale + orthogonal part."""

    __slots__ = ("lam", "O", "defect")

    def __init__(self, lam, O, defect=0.0):
        self.lam = float(lam)
        self.O = np.asarray(O, dtype=float)
        self.defect = float(defect)

    @property
    def matrix(self):
        return self.lam * self.O

    def __repr__(self):
        return "ConformalDerivative(lam=%.6g, defect=%.2g)" % (self.lam, self.defect)


class LoxodromicData:
    """Attracting/repelling poles, translation length, and the multiplier
    (the conformal derivative at the attracting pole, stretch e^-length)."""

    __slots__ = ("attracting", "repelling", "length", "multiplier")

    def __init__(self, attracting, repelling, length, multiplier):
        self.attracting = attracting
        self.repelling = repelling
        self.length = float(length)
        self.multiplier = multiplier

    def __repr__(self):
        return "LoxodromicData(length=%.6g, attracting=%r)" % (
            self.length, self.attracting)


class Classification:
    """Result of classify(): kind + loxodromic data when applicable."""

    __slots__ = ("kind", "loxodromic")

    def __init__(self, kind, loxodromic=None):
        self.kind = kind
        self.loxodromic = loxodromic

    def __repr__(self):
        return "Classification(%r)" % self.kind

    def __eq__(self, other):
        if isinstance(other, str):
            return self.kind == other
        return NotImplemented


class MoebiusMap:
    """A Moebius transformation of R^dim u {inf}, stored as a Lorentz matrix.

    Values are immutable; compose/inverse return new maps.  `det_sign` tracks
    orientation.  A composition counter triggers re-projection onto the
    matrix group every RENORMALIZE_EVERY products.
    """

    __slots__ = ("matrix", "dim", "det_sign", "_compositions", "_xuw")

    def __init__(self, matrix, det_sign=None, _compositions=0, _validate=True):
        mat = np.array(matrix, dtype=float)
        size = mat.shape[0]
        if mat.shape != (size, size) or size < 4:
            raise ValueError("need a square matrix of size chart_dim + 2 >= 4")
        if _validate:
            defect = lorentz_defect(mat)
            if defect > 1e-6:
                raise ValueError("matrix is not J-orthogonal (defect %.3g)" % defect)
            if defect > TOL_LORENTZ:
                mat = _project_lorentz(mat)
            if mat[-1, -1] <= 0:
                raise ValueError("matrix does not preserve the upper light cone")
        mat.flags.writeable = False
        self.matrix = mat
        self.dim = size - 2
        if det_sign is None:
            det_sign = 1 if np.linalg.det(mat) > 0 else -1
        self.det_sign = int(det_sign)
        self._compositions = _compositions
        P, Pinv = _basis_xuw(size)
        xuw = P @ mat @ Pinv
        xuw.flags.writeable = False
        self._xuw = xuw

    # -- constructors ------------------------------------------------------

    @staticmethod
    def identity(dim):
        return MoebiusMap(np.eye(dim + 2), det_sign=1, _validate=False)

    @staticmethod
    def translation(b):
        """x -> x + b."""
        b = np.asarray(b, dtype=float)
        n = b.shape[0]
        M = np.eye(n + 2)
        M[:n, n] = b
        M[n + 1, :n] = 2.0 * b
        M[n + 1, n] = float(b @ b)
        return MoebiusMap._from_xuw(M, det_sign=1)

    @staticmethod
    def dilation(lam, dim):
        """x -> lam * x, lam > 0."""
        lam = float(lam)
        if lam <= 0:
            raise ValueError("dilation factor must be positive")
        M = np.eye(dim + 2)
        M[dim, dim] = 1.0 / lam
        M[dim + 1, dim + 1] = lam
        return MoebiusMap._from_xuw(M, det_sign=1)

    @staticmethod
    def rotation(O, tol=TOL_ORTH):
        """x -> O x for an orthogonal matrix O."""
        O = np.asarray(O, dtype=float)
        n = O.shape[0]
        if np.abs(O.T @ O - np.eye(n)).max() > tol:
            raise NonOrthogonal("matrix fails orthogonality at %.1g" % tol)
        M = np.eye(n + 2)
        M[:n, :n] = O
        return MoebiusMap._from_xuw(M, det_sign=1 if np.linalg.det(O) > 0 else -1)

    @staticmethod
    def similarity(lam, O, b):
        """x -> lam * O x + b (fixes infinity)."""
        b = np.asarray(b, dtype=float)
        n = b.shape[0]
        return compose(MoebiusMap.translation(b),
                       compose(MoebiusMap.dilation(lam, n), MoebiusMap.rotation(O)))

    @staticmethod
    def inversion(dim):
        """Unit-sphere inversion x -> x / |x|^2; swaps 0 and inf."""
        M = np.eye(dim + 2)
        M[dim, dim] = M[dim + 1, dim + 1] = 0.0
        M[dim, dim + 1] = M[dim + 1, dim] = 1.0
        return MoebiusMap._from_xuw(M, det_sign=-1)

    @staticmethod
    def _from_xuw(mat_xuw, det_sign=None):
        size = mat_xuw.shape[0]
        P, Pinv = _basis_xuw(size)
        return MoebiusMap(Pinv @ mat_xuw @ P, det_sign=det_sign, _validate=False)

    def to_json(self):
        return json.dumps({
            "dimension": self.dim,
            "det_sign": self.det_sign,
            "matrix": [[float(v) for v in row] for row in self.matrix],
        })

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        mat = np.asarray(data["matrix"], dtype=float)
        if mat.shape[0] != data["dimension"] + 2:
            raise ValueError("matrix size does not match dimension")
        return cls(mat, det_sign=data.get("det_sign"))

    # -- action ------------------------------------------------------------

    def __call__(self, point):
        return apply(self, point)

    def inverse(self):
        J = minkowski(self.dim + 2)
        return MoebiusMap(J @ self.matrix.T @ J, det_sign=self.det_sign,
                          _compositions=self._compositions, _validate=False)

    def lorentz_defect(self):
        return lorentz_defect(self.matrix)

    def __repr__(self):
        return "MoebiusMap(dim=%d, det_sign=%+d)" % (self.dim, self.det_sign)


def compose(f, g):
    """The map x -> f(g(x)).  Re-projects onto O(n+1,1) periodically."""
    if f.dim != g.dim:
        raise DimensionMismatch("cannot compose maps of dims %d and %d"
                                % (f.dim, g.dim))
    mat = f.matrix @ g.matrix
    count = f._compositions + g._compositions + 1
    if count >= RENORMALIZE_EVERY:
        mat = _project_lorentz(mat)
        # absolute tolerance at unit scale; relative once entries are large,
        # since the defect of an exactly projected matrix still carries
        # rounding of size ~ eps * |M|^2
        scale = max(1.0, float(np.abs(mat).max()) ** 2)
        if lorentz_defect(mat) > TOL_LORENTZ * scale:
            raise NumericalDegeneracy("re-projection failed to restore the "
                                      "Lorentz relations")
        count = 0
    return MoebiusMap(mat, det_sign=f.det_sign * g.det_sign,
                      _compositions=count, _validate=False)


def apply(f, point):
    """Evaluate the boundary action on a BoundaryPoint."""
    if isinstance(point, (list, tuple, np.ndarray)):
        point = BoundaryPoint(point)
    if point.dim != f.dim:
        raise DimensionMismatch("point dim %d, map dim %d" % (point.dim, f.dim))
    n = f.dim
    if point.is_infinity:
        v = np.zeros(n + 2)
        v[-1] = 1.0  # (x, u, w) = (0, 0, 1)
    else:
        v = np.empty(n + 2)
        v[:n] = point.coords
        v[-2] = 1.0
        v[-1] = float(point.coords @ point.coords)
    img = f._xuw @ v
    scale = np.abs(img).max()
    if not np.isfinite(scale) or scale == 0.0:
        raise NumericalDegeneracy("image ray collapsed numerically")
    if abs(img[-2]) <= _INF_RATIO * scale:
        return BoundaryPoint.infinity(n)
    return BoundaryPoint(img[:n] / img[-2])


def apply_array(f, pts):
    """Vectorized chart action on an (m, dim) array of finite points.

    Raises NumericalDegeneracy if any image is at (or numerically past)
    infinity; batch callers are expected to keep poles off their grids.
    """
    Y = np.atleast_2d(np.asarray(pts, dtype=float))
    if Y.shape[1] != f.dim:
        raise DimensionMismatch("points dim %d, map dim %d" % (Y.shape[1], f.dim))
    r2 = np.einsum("ij,ij->i", Y, Y)
    V = np.concatenate([Y, np.ones_like(r2)[:, None], r2[:, None]], axis=1)
    img = V @ f._xuw.T
    u = img[:, -2]
    scale = np.abs(img).max(axis=1)
    bad = np.abs(u) <= _INF_RATIO * scale
    if np.any(bad):
        raise NumericalDegeneracy("grid point maps to infinity (row %d)"
                                  % int(np.nonzero(bad)[0][0]))
    return img[:, :f.dim] / u[:, None]


def derivative_at(f, x, tol_conformal=1e-6):
    """Conformal derivative lambda*O of the chart action at a finite point.

    The Jacobian is computed from the light-cone block formula (exact up to
    rounding) and split into scale and orthogonal parts by SVD; `defect`
    reports the relative spread of singular values.
    """
    if isinstance(x, BoundaryPoint):
        if x.is_infinity:
            raise PoleAtInfinity("derivative chart is centered at a finite "
                                 "point; conjugate by inversion first")
        y = x.coords
    else:
        y = np.asarray(x, dtype=float)
    n = f.dim
    M = f._xuw
    A, b_col, c_col = M[:n, :n], M[:n, n], M[:n, n + 1]
    d_row, e, ff = M[n, :n], M[n, n], M[n, n + 1]
    r2 = float(y @ y)
    u = float(d_row @ y + e + ff * r2)
    if abs(u) <= _INF_RATIO * (1.0 + r2):
        raise PoleAtInfinity("f(x) is at infinity; conjugate by inversion first")
    ximg = A @ y + b_col + c_col * r2
    jac = (A + 2.0 * np.outer(c_col, y)) / u \
        - np.outer(ximg, d_row + 2.0 * ff * y) / u**2
    U, s, Vt = np.linalg.svd(jac)
    lam = float(np.exp(np.mean(np.log(s))))
    defect = float((s.max() - s.min()) / lam)
    if defect > tol_conformal:
        raise NumericalDegeneracy("Jacobian is not conformal within %.1g "
                                  "(defect %.3g)" % (tol_conformal, defect))
    O = U @ Vt
    return ConformalDerivative(lam, O, defect)


def _fixed_space_basis(mat):
    """Orthonormal basis (columns) of the numerical kernel of (M - I)."""
    size = mat.shape[0]
    U, s, Vt = np.linalg.svd(mat - np.eye(size))
    cutoff = max(1e-10, 1e-7 * s.max())
    return Vt[s <= cutoff].T


def classify(f):
    """Identity / elliptic / parabolic / loxodromic, with loxodromic data.

    A map is loxodromic iff its matrix has spectral radius e^l with
    l >= TOL_LOXO *and* the leading/trailing eigenrays are genuinely
    separated null rays (an exact parabolic already reads numerically as
    spectral radius exp(~4e-6) through Jordan-block noise, so the radius
    alone cannot decide).  Otherwise: elliptic iff the fixed space of the
    matrix contains a timelike vector.
    """
    mat = f.matrix
    size = mat.shape[0]
    if np.abs(mat - np.eye(size)).max() <= _IDENTITY_TOL:
        return Classification("identity")
    evals, evecs = np.linalg.eig(mat)
    mags = np.abs(evals)
    i_max, i_min = int(np.argmax(mags)), int(np.argmin(mags))
    length = float(np.log(mags[i_max]))
    if length >= TOL_LOXO:
        try:
            p_att = BoundaryPoint.from_null(np.real(evecs[:, i_max]))
            p_rep = BoundaryPoint.from_null(np.real(evecs[:, i_min]))
        except NumericalDegeneracy:
            p_att = p_rep = None
        if p_att is not None and chordal_distance(p_att, p_rep) > _POLE_COLLAPSE:
            if abs(np.imag(evals[i_max])) > 1e-8 * mags[i_max]:
                raise AmbiguousClassification("leading eigenvalue is not real")
            mult = _multiplier_at(f, p_att)
            return Classification("loxodromic",
                                  LoxodromicData(p_att, p_rep, length, mult))
        if length > 1e-4:
            raise AmbiguousClassification(
                "spectral radius %.3g with collapsed fixed rays" % np.exp(length))
        # fall through: spectral radius was Jordan-block noise
    basis = _fixed_space_basis(mat)
    if basis.shape[1] == 0:
        raise AmbiguousClassification("no fixed directions found")
    gram = basis.T @ minkowski(size) @ basis
    lam_min = float(np.linalg.eigvalsh(gram)[0])
    if lam_min <= -1e-6:
        return Classification("elliptic")
    if lam_min <= -1e-9:
        raise AmbiguousClassification("fixed space is borderline timelike")
    return Classification("parabolic")


def _multiplier_at(f, pole):
    """Conformal derivative at a fixed point, conjugating when it is inf."""
    if pole.is_infinity:
        inv = MoebiusMap.inversion(f.dim)
        return derivative_at(compose(inv, compose(f, inv)),
                             np.zeros(f.dim))
    return derivative_at(f, pole)


def _normalizer_factors(eps, M):
    """Elementary factors of the based normalizer, first-applied first.

    Kept a list so callers that need the action near eps at full absolute
    precision can apply the factors one at a time: flattening them into a
    single matrix bakes the T_M-against-inversion cancellation into the
    entries, which costs ~|M|^2 * macheps of absolute accuracy near eps.
    """
    if isinstance(eps, BoundaryPoint):
        if eps.is_infinity:
            raise ValueError("base point eps must be finite")
        eps = eps.coords
    eps = np.asarray(eps, dtype=float)
    n = eps.shape[0]
    if isinstance(M, (list, tuple, np.ndarray)):
        M = BoundaryPoint(M)
    if not M.is_infinity and M.dim != n:
        raise DimensionMismatch("eps and M have different dimensions")
    if M.is_infinity:
        return [MoebiusMap.translation(eps)]
    diff = eps - M.coords
    dist2 = float(diff @ diff)
    if chordal_distance(BoundaryPoint(eps), M) <= 1e-8:
        raise CoincidentPoints("eps and M coincide within tolerance")
    e_hat = diff / np.sqrt(dist2)
    refl = np.eye(n) - 2.0 * np.outer(e_hat, e_hat)
    # leading similarity cancels DS0(0) = dist2 * refl
    return [MoebiusMap.similarity(1.0 / dist2, refl, np.zeros(n)),
            MoebiusMap.translation(diff / dist2),
            MoebiusMap.inversion(n),
            MoebiusMap.translation(M.coords)]


def based_normalizer(eps, M):
    """The unique Moebius map S with S(0) = eps, S(inf) = M, DS(0) = I.

    eps must be finite.  For finite M the map is assembled as
    T_M o inversion o T_c o (lam0 O0)^-1 with c = inversion(eps - M),
    whose derivative at 0 is the exact conformal factor |eps-M|^2 (I-2ee^T).
    """
    factors = _normalizer_factors(eps, M)
    out = factors[0]
    for f in factors[1:]:
        out = compose(f, out)
    return out


class BasedLinearMap:
    """A linear map A read through the chart based at (eps, M):
    the conjugate S A S^-1 with S = based_normalizer(eps, M) fixes eps and M
    and has derivative A at eps."""

    __slots__ = ("eps", "M", "A")

    def __init__(self, eps, M, A):
        self.eps = eps if isinstance(eps, BoundaryPoint) else BoundaryPoint(eps)
        self.M = M if isinstance(M, BoundaryPoint) else BoundaryPoint(M)
        self.A = np.asarray(A, dtype=float)

    def __repr__(self):
        return "BasedLinearMap(eps=%r, M=%r)" % (self.eps, self.M)


class ConjugatedLinearMap:
    """Callable closure S o A o S^-1 realizing a BasedLinearMap on arrays.

    S is applied factor by factor (see _normalizer_factors) so the action
    stays absolutely accurate near eps even when |M| is large.
    """

    __slots__ = ("based", "factors", "factors_inv")

    def __init__(self, based, factors):
        self.based = based
        self.factors = list(factors)
        self.factors_inv = [f.inverse() for f in reversed(self.factors)]

    def __call__(self, pts):
        X = np.atleast_2d(np.asarray(pts, dtype=float))
        for f in self.factors_inv:
            X = apply_array(f, X)
        X = X @ self.based.A.T
        for f in self.factors:
            X = apply_array(f, X)
        return X

    @property
    def dim(self):
        return self.based.A.shape[0]

    def inverse(self):
        """(S A S^-1)^-1 = S A^-1 S^-1, staying in staged form."""
        flipped = BasedLinearMap(self.based.eps, self.based.M,
                                 np.linalg.inv(self.based.A))
        return ConjugatedLinearMap(flipped, self.factors)

    def derivative_at_base(self):
        return self.based.A


def realize_based_linear(based):
    """Closure for the based linear map; errors if A is singular.

    When A = lam*O is conformal the same conjugate is available as a genuine
    MoebiusMap via `loxodromic_from_poles`.
    """
    A = based.A
    if abs(np.linalg.det(A)) < 1e-12:
        raise SingularMultiplier("multiplier matrix is singular")
    return ConjugatedLinearMap(based, _normalizer_factors(based.eps, based.M))


def loxodromic_from_poles(eps, M, lam, O=None):
    """The Moebius map with fixed points (eps, M) and conformal derivative
    lam*O at eps (attracting there when lam < 1)."""
    if isinstance(eps, BoundaryPoint):
        n = eps.dim
    else:
        n = np.asarray(eps).shape[0]
    if O is None:
        O = np.eye(n)
    S = based_normalizer(eps, M)
    core = MoebiusMap.similarity(lam, O, np.zeros(n))
    return compose(S, compose(core, S.inverse()))
