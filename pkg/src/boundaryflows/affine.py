"""Affine maps and fields on R^n, and Euler limits of near-identity maps.

An affine map x -> Bx + b and an affine vector field x -> Bx + b share the
coefficient pair (B, b); both carry the norm max(|B|_op, |b|).  exp and log
go through the homogeneous (n+1) embedding

    field (B, b)  ->  [[B, b], [0, 0]],        map (B, b)  ->  [[B, b], [0, 1]],

with scaling-and-squaring (exp) and square-root staging plus a fixed series
depth (log) so results are deterministic and dependency-free.

The Euler limit takes maps f_n = id + a_n + E_n with affine fields a_n and
relatively vanishing remainders E_n and compounds them, m_n = floor(t / t_n)
steps of f_n with t_n = |aff_log(id + a_n)|, against the flow exp(tA) of the
common direction A = lim a_n / t_n.
"""

import numpy as np

from .grids import R_MAX_FACTOR, grid_radius, sup_norm
from .reports import ConvergenceReport

TOL_FLOW = 1e-8          # group-law defect allowed by flow_check
LOG_DOMAIN_RADIUS = 0.5  # aff_log requires |map - id| below this
CLUSTER_TOL = 1e-3       # direction clustering threshold in euler_limit
_EXP_SERIES_TERMS = 18
_LOG_SERIES_TERMS = 60


class AffineError(Exception):
    pass


class OutsideLogDomain(AffineError):
    pass


class DegenerateStep(AffineError):
    pass


class NoConvergentDirection(AffineError):
    pass


class DomainEscape(AffineError):
    pass


def _opnorm(B):
    return float(np.linalg.norm(B, 2))


class _Coefficients:
    """Shared (B, b) container for maps and fields."""

    __slots__ = ("B", "b")

    def __init__(self, B, b):
        self.B = np.asarray(B, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if self.B.shape != (self.b.shape[0],) * 2:
            raise ValueError("B must be square and match b")

    @property
    def dim(self):
        return self.b.shape[0]

    def norm(self):
        """max(|B|_op, |b|) for fields; for maps use distance_to_identity."""
        return max(_opnorm(self.B), float(np.linalg.norm(self.b)))


class AffineField(_Coefficients):
    """Vector field v(x) = Bx + b."""

    def __call__(self, pts):
        return np.asarray(pts, dtype=float) @ self.B.T + self.b

    def __add__(self, other):
        return AffineField(self.B + other.B, self.b + other.b)

    def __sub__(self, other):
        return AffineField(self.B - other.B, self.b - other.b)

    def scaled(self, c):
        return AffineField(c * self.B, c * self.b)

    def __repr__(self):
        return "AffineField(dim=%d, norm=%.4g)" % (self.dim, self.norm())


class AffineMap(_Coefficients):
    """Map y = Bx + b acting on (..., n) arrays."""

    def __call__(self, pts):
        return np.asarray(pts, dtype=float) @ self.B.T + self.b

    @staticmethod
    def identity(dim):
        return AffineMap(np.eye(dim), np.zeros(dim))

    def compose(self, other):
        """self after other."""
        return AffineMap(self.B @ other.B, self.B @ other.b + self.b)

    def inverse(self):
        Binv = np.linalg.inv(self.B)
        return AffineMap(Binv, -Binv @ self.b)

    def distance_to_identity(self):
        return max(_opnorm(self.B - np.eye(self.dim)),
                   float(np.linalg.norm(self.b)))

    def __repr__(self):
        return "AffineMap(dim=%d)" % self.dim


def _expm(X):
    """Matrix exponential by scaling-and-squaring with a fixed Taylor depth."""
    nrm = np.linalg.norm(X, np.inf)
    squarings = max(0, int(np.ceil(np.log2(nrm / 0.5)))) if nrm > 0.5 else 0
    Y = X / (2.0 ** squarings)
    acc = np.eye(X.shape[0])
    term = np.eye(X.shape[0])
    for k in range(1, _EXP_SERIES_TERMS + 1):
        term = term @ Y / k
        acc = acc + term
    for _ in range(squarings):
        acc = acc @ acc
    return acc


def _sqrtm_affine(H):
    """Principal square root by the coupled Newton iteration; preserves the
    homogeneous affine block shape."""
    Y, Z = H, np.eye(H.shape[0])
    for _ in range(60):
        Yn = 0.5 * (Y + np.linalg.inv(Z))
        Zn = 0.5 * (Z + np.linalg.inv(Y))
        if np.abs(Yn - Y).max() < 1e-15 * max(1.0, np.abs(Y).max()):
            Y = Yn
            break
        Y, Z = Yn, Zn
    return Y


def _logm_near_identity(H):
    X = H - np.eye(H.shape[0])
    acc = np.zeros_like(X)
    term = np.eye(H.shape[0])
    for k in range(1, _LOG_SERIES_TERMS + 1):
        term = term @ X
        acc = acc + ((-1.0) ** (k + 1) / k) * term
    return acc


def aff_exp(field, t=1.0):
    """The time-t map of an affine field, exp(t * [[B, b], [0, 0]])."""
    n = field.dim
    X = np.zeros((n + 1, n + 1))
    X[:n, :n] = t * field.B
    X[:n, n] = t * field.b
    E = _expm(X)
    return AffineMap(E[:n, :n], E[:n, n])


def aff_log(amap):
    """The affine field whose time-1 map is `amap`.

    Requires |amap - id| < LOG_DOMAIN_RADIUS in the coefficient norm; the
    homogeneous matrix is staged through square roots until a fixed series
    depth is accurate.
    """
    if amap.distance_to_identity() >= LOG_DOMAIN_RADIUS:
        raise OutsideLogDomain("map is %.3g from the identity, need < %.3g"
                               % (amap.distance_to_identity(), LOG_DOMAIN_RADIUS))
    n = amap.dim
    H = np.eye(n + 1)
    H[:n, :n] = amap.B
    H[:n, n] = amap.b
    halvings = 0
    while np.linalg.norm(H - np.eye(n + 1), np.inf) > 0.25 and halvings < 20:
        H = _sqrtm_affine(H)
        halvings += 1
    L = _logm_near_identity(H) * (2.0 ** halvings)
    return AffineField(L[:n, :n], L[:n, n])


class OrbitTable:
    """Result of iterating a map over a grid: final points, per-step radii,
    and the first escape index (None when the orbit stayed in the safe ball)."""

    __slots__ = ("final", "radii", "escape_step", "steps_done")

    def __init__(self, final, radii, escape_step, steps_done):
        self.final = final
        self.radii = radii
        self.escape_step = escape_step
        self.steps_done = steps_done


def iterate(f, m, grid, r_max=None):
    """Iterate a vectorized map m times over the grid with an escape guard."""
    X = np.array(grid, dtype=float)
    if r_max is None:
        r_max = R_MAX_FACTOR * max(grid_radius(X), 1e-12)
    radii = []
    for step in range(1, m + 1):
        X = f(X)
        r = float(np.linalg.norm(X, axis=1).max())
        radii.append(r)
        if not np.isfinite(r) or r > r_max:
            return OrbitTable(X, radii, step, step)
    return OrbitTable(X, radii, None, m)


class EulerSequence:
    """Maps f_n = id + a_n + E_n: callables plus their affine parts.

    sup|E_n| is measured on the grid at construction, and the relative
    remainders sup|E_n| / |a_n| must tail off (they are what the Euler error
    bound is driven by).
    """

    def __init__(self, maps, fields, grid, strict=True):
        if len(maps) != len(fields):
            raise ValueError("need one affine field per map")
        self.maps = list(maps)
        self.fields = list(fields)
        self.grid = np.asarray(grid, dtype=float)
        self.e_sup = []
        self.ratios = []
        for f, a in zip(self.maps, self.fields):
            nrm = a.norm()
            if nrm == 0.0:
                raise DegenerateStep("affine part vanishes")
            resid = f(self.grid) - self.grid - a(self.grid)
            e = sup_norm(resid)
            self.e_sup.append(e)
            self.ratios.append(e / nrm)
        if strict and len(self.ratios) >= 6:
            head = max(self.ratios[:3])
            tail = max(self.ratios[-3:])
            if tail > 1e-9 and tail > 0.5 * head:
                raise ValueError("remainders E_n do not vanish relative to "
                                 "a_n (head %.3g, tail %.3g)" % (head, tail))

    def __len__(self):
        return len(self.maps)


def euler_limit(seq, t, max_steps_per_map=2 * 10 ** 6):
    """Compound the maps of an EulerSequence into the time-t flow map.

    Per index: A'_n = aff_log(id + a_n), t_n = |A'_n|, m_n = floor(t / t_n);
    the direction A'_n / t_n is clustered at CLUSTER_TOL and the largest
    cluster defines the unit-norm limit direction A.  Along that subsequence
    the iterates f_n^(m_n) are compared on the grid with exp(tA).

    Returns (A, flow, report): A the limit AffineField (norm 1), flow a
    callable s -> AffineMap, and a ConvergenceReport whose extras record the
    measured Euler error bound check per index.
    """
    logs = []
    for a in seq.fields:
        g = AffineMap(np.eye(a.dim) + a.B, a.b)
        logs.append(aff_log(g))
    t_ns = [lg.norm() for lg in logs]
    dirs = [lg.scaled(1.0 / tn) for lg, tn in zip(logs, t_ns)]

    clusters = []  # list of (representative, [indices])
    for i, d in enumerate(dirs):
        for rep, members in clusters:
            if (d - rep).norm() <= CLUSTER_TOL:
                members.append(i)
                break
        else:
            clusters.append((d, [i]))
    rep, members = max(clusters, key=lambda c: len(c[1]))
    if len(members) < 2:
        raise NoConvergentDirection("no repeated direction among %d maps"
                                    % len(seq.maps))
    # deepest member of the winning cluster is the best-resolved direction
    A = dirs[members[-1]]
    A = A.scaled(1.0 / A.norm())

    target = aff_exp(A, t)(seq.grid)
    r_max = R_MAX_FACTOR * max(grid_radius(seq.grid), 1e-12)
    indices, errors, bound_ok = [], [], []
    max_radius = grid_radius(seq.grid)
    for i in members:
        m_n = int(np.floor(t / t_ns[i]))
        if m_n < 1 or m_n > max_steps_per_map:
            continue
        orbit = iterate(seq.maps[i], m_n, seq.grid, r_max=r_max)
        if orbit.escape_step is not None:
            raise DomainEscape("iterate escaped the safety ball at step %d "
                               "(index %d)" % (orbit.escape_step, i))
        max_radius = max(max_radius, max(orbit.radii))
        err = sup_norm(orbit.final - target)
        indices.append(i)
        errors.append(err)
        # measured Euler bound: 4*C*t*(relative remainder) + discretization
        C_grid = max_radius / max(grid_radius(seq.grid), 1e-12)
        bound = 4.0 * C_grid * t * seq.ratios[i] + 8.0 * C_grid * (1.0 + t) * t_ns[i]
        bound_ok.append(err <= bound)
    if not indices:
        raise NoConvergentDirection("no index of the winning cluster was "
                                    "evaluable within the step budget")
    report = ConvergenceReport(indices, errors,
                               extras={"bound_ok": bound_ok,
                                       "t_n": [t_ns[i] for i in indices]})
    return A, (lambda s: aff_exp(A, s)), report


class FlowCheckReport:
    __slots__ = ("group_law_defect", "identity_defect", "nontrivial", "passed")

    def __init__(self, group_law_defect, identity_defect, nontrivial):
        self.group_law_defect = group_law_defect
        self.identity_defect = identity_defect
        self.nontrivial = nontrivial
        self.passed = (group_law_defect <= TOL_FLOW
                       and identity_defect <= TOL_FLOW and nontrivial)

    def __repr__(self):
        return ("FlowCheckReport(group_law=%.3g, identity=%.3g, "
                "nontrivial=%s, passed=%s)" % (self.group_law_defect,
                self.identity_defect, self.nontrivial, self.passed))


def flow_check(flow, sample_ts):
    """Verify flow(s+t) = flow(s) o flow(t) etc. in the coefficient norm."""
    ts = list(sample_ts)
    worst = 0.0
    for s in ts:
        for t in ts:
            lhs = flow(s + t)
            rhs = flow(s).compose(flow(t))
            worst = max(worst, _opnorm(lhs.B - rhs.B),
                        float(np.linalg.norm(lhs.b - rhs.b)))
    ident = flow(0.0).distance_to_identity()
    nontrivial = any(flow(t).distance_to_identity() > 1e-6 for t in ts if t != 0)
    return FlowCheckReport(worst, ident, nontrivial)
