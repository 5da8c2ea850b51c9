"""Zoom-in operators for boundary maps near fixed points.

Conjugating a map by deeper and deeper iterates of a loxodromic (or by a
schedule of dilations and translations) magnifies its germ at a pole.  The
operators here extract what survives the magnification:

* ``zoom_at_fixed_point``   -- based-linear limits T^n f T^-n,
* ``choose_dilation``       -- feasible dilation schedules with margins,
* ``almost_affine_residual``-- how close rescaled loxodromics are to
  ``lam*O x + eps'``,
* ``commutator_zoom``       -- affine normal forms of rescaled commutators,
* ``sector_zoom``           -- translation constants from thin sectors at
  infinity,
* ``eccentric_sequence``    -- mixed-multiplier sequences h_n with a linear
  subsequence limit,
* ``based_flow_prep``       -- near-identity affine decompositions feeding
  the Euler limit.

All sup-norms are sampled on a fixed compact grid (unit sphere plus the
origin, 200 points, fixed seed); nothing here proves uniformity on compacts,
it measures it.  Map arguments are closures acting on (m, d) arrays.
"""

from __future__ import annotations

import csv

import numpy as np

from . import affine
from .conformal import (
    TOL_FIX,
    BasedLinearMap,
    BoundaryPoint,
    MoebiusMap,
    NumericalDegeneracy,
    PoleAtInfinity,
    apply_array,
    based_normalizer,
    classify,
    compose,
    derivative_at,
    realize_based_linear,
)
from .grids import GRID_SEED, GRID_SIZE, sphere_directions
from .reports import ConvergenceReport

#: finite-difference step for closure derivatives (one Richardson step on top)
FD_STEP = 1e-5
#: fallback plain central-difference step for maps with kinked second order
FD_SMALL_STEP = 1e-8
#: ties within this of the running record count as closest returns
RECORD_TIE_TOL = 1e-12
#: errors below this floor are treated as converged regardless of ratio
CONVERGED_FLOOR = 1e-12
#: log-multiplier slack when matching maps against a schedule entry; the
#: conformal derivative at a deep pole is conditioning-limited well above
#: the generic finite-difference accuracy (measured ~1.5e-4 relative at
#: multiplier 2^-11 in double precision)
SCHEDULE_RATE_TOL = 1e-3
#: absolute pole-displacement gate when matching against a schedule entry;
#: coarse on purpose -- at depth the multiplier check is the sharp one
SCHEDULE_POLE_GATE = 1e-5


class RenormalizationError(Exception):
    """Base class for zoom failures."""


class FixedPointMismatch(RenormalizationError):
    """The map does not fix the point the zoom is centered at."""


class NoConvergentSubsequence(RenormalizationError):
    """No closest-return subsequence settled within n_max iterations."""


class GridTouchesPole(RenormalizationError):
    """A grid point landed on (or numerically past) a pole."""


class InfeasibleSchedule(RenormalizationError):
    """The pole/multiplier sequences admit no valid dilation schedule."""


class NonInvertibleB(RenormalizationError):
    """The commutator expansion needs an invertible derivative at 0."""


class SectorViolation(RenormalizationError):
    """Points left the thin sector the expansion is valid in."""


class BracketingFailure(RenormalizationError):
    """No exponent m_n satisfies lam2 <= lam1^n / lam2^m_n <= 1."""


class DerivativeSingular(RenormalizationError):
    """A finite-difference derivative came out singular."""


class DegeneratePoles(RenormalizationError):
    """A based map in the sequence has eps = 0 or M at infinity."""


class DegenerateSequence(RenormalizationError):
    """The based-map sequence has only finitely many distinct elements."""


def zoom_grid(dim, size=GRID_SIZE, seed=GRID_SEED):
    """The module's compact evaluation grid: origin + unit sphere lattice."""
    dirs = sphere_directions(dim, size - 1, seed=seed)
    return np.vstack([np.zeros((1, dim)), dirs])


def _central_jacobian(f, x0, step):
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[0]
    eye = np.eye(d)
    probes = np.vstack([x0 + step * eye, x0 - step * eye])
    vals = np.asarray(f(probes), dtype=float)
    return (vals[:d] - vals[d:]).T / (2.0 * step)


def fd_jacobian(f, x0, h=FD_STEP):
    """Central-difference Jacobian of a closure at x0, one Richardson step."""
    coarse = _central_jacobian(f, x0, h)
    fine = _central_jacobian(f, x0, h / 2.0)
    return (4.0 * fine - coarse) / 3.0


def _refine_fixed_point(f, x, max_iter=5):
    """Newton polish of f(x) = x from a tol_fix-level initial guess."""
    x = np.asarray(x, dtype=float).copy()
    scale = max(1.0, np.linalg.norm(x))
    for _ in range(max_iter):
        res = np.asarray(f(x[None, :]), dtype=float)[0] - x
        if np.linalg.norm(res) <= 1e-15 * scale:
            break
        J = fd_jacobian(f, x)
        try:
            step = np.linalg.solve(J - np.eye(x.shape[0]), -res)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)) or np.linalg.norm(step) > TOL_FIX:
            break
        x = x + step
    return x


def _eval_grid(f, pts, context):
    try:
        out = np.asarray(f(pts), dtype=float)
    except NumericalDegeneracy as exc:
        raise GridTouchesPole(f"{context}: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise GridTouchesPole(f"{context}: non-finite image on the grid")
    return out


# ---------------------------------------------------------------------------
# zoom at a fixed point


def zoom_at_fixed_point(f, T, n_max=30, grid=None):
    """Based-linear limit of T^n f T^-n at the pole of T that f fixes.

    ``T`` must be loxodromic and ``f`` (a closure on chart arrays) must fix
    the pole of T where T expands (conformal stretch > 1), within tol_fix.
    The limit is the based linear map at (eps, M_T) whose multiplier is the
    derivative of the normalized f at 0, estimated by central differences
    with one Richardson step.

    Convergence is only expected along indices n where the rotation power
    O^n returns close to I; those closest returns (record minima of
    ``|O^n - I|``, ties included) form the reported subsequence.  Raises
    NoConvergentSubsequence when the sup-errors along it fail to halve
    within n_max.
    """
    cls = classify(T)
    if cls != "loxodromic":
        raise ValueError(f"zoom needs a loxodromic map, got {cls.kind}")
    lox = cls.loxodromic
    eps_pt, M_pt = lox.repelling, lox.attracting
    if eps_pt.is_infinity:
        raise PoleAtInfinity(
            "the expanding pole is at infinity; conjugate T first")
    eps = eps_pt.coords
    d = eps.shape[0]
    image = np.asarray(f(eps[None, :]), dtype=float)[0]
    if np.linalg.norm(image - eps) > TOL_FIX:
        raise FixedPointMismatch(
            f"|f(eps) - eps| = {np.linalg.norm(image - eps):.3e} "
            f"exceeds {TOL_FIX:g}")
    # Newton-refine the fixed point: an offset delta survives the zoom as
    # lam^n * delta, so tol_fix-level agreement is far too coarse to expand.
    eps = _refine_fixed_point(f, eps)
    eps_pt = BoundaryPoint(eps)

    S = based_normalizer(eps_pt, M_pt)
    S_inv = S.inverse()
    G = compose(S_inv, compose(T, S))          # fixes 0 and infinity
    dG = derivative_at(G, np.zeros(d))
    lam, U = dG.lam, dG.O
    if lam <= 1.0:
        raise FixedPointMismatch(
            "T does not expand at the chosen pole (stretch <= 1)")

    def f_norm(pts):
        return apply_array(S_inv, np.asarray(
            f(apply_array(S, pts)), dtype=float))

    if grid is None:
        grid = zoom_grid(d)
    grid = np.atleast_2d(np.asarray(grid, dtype=float))

    indices, zoomed_vals = [], []
    record = np.inf
    U_pow = np.eye(d)
    for n in range(1, n_max + 1):
        U_pow = U_pow @ U
        defect = np.linalg.norm(U_pow - np.eye(d), 2)
        if defect <= record + RECORD_TIE_TOL:
            record = min(record, defect)
            scale = lam ** n
            inner = (grid @ U_pow) / scale       # U^-n x = x @ U_pow (U orth)
            vals = _eval_grid(f_norm, inner, "zoom_at_fixed_point")
            indices.append(n)
            zoomed_vals.append(scale * (vals @ U_pow.T))

    # Two derivative estimates at 0: Richardson differences at the standard
    # step (wins for smooth f), and plain central differences at a much
    # smaller step (wins when f is C^1 but not C^3, where Richardson keeps an
    # O(h) truncation term).  Keep whichever explains the deepest zoom
    # decisively better.
    multiplier = fd_jacobian(f_norm, np.zeros(d))
    small = _central_jacobian(f_norm, np.zeros(d), FD_SMALL_STEP)
    deepest = zoomed_vals[-1] if zoomed_vals else None
    if deepest is not None:
        err_rich = float(np.abs(deepest - grid @ multiplier.T).max())
        err_small = float(np.abs(deepest - grid @ small.T).max())
        if err_small < 0.5 * err_rich:
            multiplier = small
    errors = [float(np.abs(z - grid @ multiplier.T).max())
              for z in zoomed_vals]

    # The zoom amplifies rounding at the repelling point by lam^n; anything
    # at or below that budget is measurement noise, not divergence.
    offset0 = float(np.linalg.norm(f_norm(np.zeros((1, d)))[0]))
    mach = np.finfo(float).eps
    noise = lam ** indices[-1] * (offset0 + 10.0 * mach
                                  * max(1.0, np.linalg.norm(eps)))
    floor = max(CONVERGED_FLOOR, noise)
    if len(errors) < 2 or (
            errors[-1] > floor and errors[-1] >= 0.5 * errors[0]):
        raise NoConvergentSubsequence(
            f"closest-return errors did not halve within n_max={n_max}: "
            f"head {errors[0] if errors else 'n/a'}, "
            f"tail {errors[-1] if errors else 'n/a'}")

    report = ConvergenceReport(indices, errors, floor=floor,
                               extras={"stretch": lam,
                                       "rotation_defect": record,
                                       "noise_floor": floor})
    return BasedLinearMap(eps_pt, M_pt, multiplier), report


# ---------------------------------------------------------------------------
# dilation schedules


class ZoomSchedule:
    """A dilation schedule t_n with its feasibility margins.

    Entry n rescales by T_n : x -> x / t_n, turning poles (eps_n, M_n) into
    (eps_n/t_n, M_n/t_n).  The three schedule inequalities

        1/|M'_n|  <  |eps'_n| / lam_n  <  1,
        t_n       <  |eps'_n| / lam_n,
        |eps'_n|  >  lam_n^2,

    are recorded as strict ratios (margin_1..3, each < 1) which must decay
    along the sequence.  Construct through :func:`choose_dilation`; the raw
    constructor with ``validate=False`` is for diagnostic schedules that
    deliberately break the invariants.
    """

    def __init__(self, t, lam, eps, M, ns=None, validate=True):
        self.t = np.asarray(t, dtype=float)
        self.lam = np.asarray(lam, dtype=float)
        self.eps = np.asarray(eps, dtype=float)
        self.M = np.asarray(M, dtype=float)
        count = self.t.shape[0]
        self.ns = (np.arange(1, count + 1) if ns is None
                   else np.asarray(ns, dtype=int))
        if not (count == self.lam.shape[0] == self.eps.shape[0]
                == self.M.shape[0] == self.ns.shape[0]):
            raise ValueError("schedule sequences must share a length")
        if validate:
            margins = self.margins
            if np.any(margins >= 1.0):
                raise InfeasibleSchedule("a schedule margin reached 1")
            if count >= 2 and np.any(np.diff(margins, axis=1) >= 0.0):
                raise InfeasibleSchedule("margins do not decay")

    @property
    def has_vectors(self):
        return self.eps.ndim == 2

    @property
    def eps_norms(self):
        if self.has_vectors:
            return np.linalg.norm(self.eps, axis=1)
        return np.abs(self.eps)

    @property
    def M_norms(self):
        if self.M.ndim == 2:
            return np.linalg.norm(self.M, axis=1)
        return np.abs(self.M)

    @property
    def eps_prime(self):
        if self.has_vectors:
            return self.eps / self.t[:, None]
        return self.eps / self.t

    @property
    def M_prime_norms(self):
        return self.M_norms / self.t

    @property
    def margins(self):
        """Rows margin_1..3; every entry must be < 1 and decreasing in n."""
        ratio = (self.eps_norms / self.t) / self.lam   # |eps'|/lam
        m1 = np.maximum((1.0 / self.M_prime_norms) / ratio, ratio)
        m2 = self.t / ratio
        m3 = self.lam ** 2 / (self.eps_norms / self.t)
        return np.vstack([m1, m2, m3])

    def __len__(self):
        return self.t.shape[0]

    def __repr__(self):
        return (f"ZoomSchedule(len={len(self)}, "
                f"t[0]={self.t[0]:.3g}, t[-1]={self.t[-1]:.3g})")


def choose_dilation(eps_n, M_n, lambda_n, ns=None):
    """Pick dilation scales t_n as the geometric mean of the feasible range.

    For each n the scale must satisfy  eps/lam < t < min(sqrt(eps*M/lam),
    sqrt(eps/lam), eps/lam^2); infeasibility (including eps = 0, multipliers
    outside (0,1), or margins that fail to decay) raises InfeasibleSchedule.
    Pole sequences may be given as norms or as vectors (kept for downstream
    residual work).
    """
    eps = np.asarray(eps_n, dtype=float)
    M = np.asarray(M_n, dtype=float)
    lam = np.asarray(lambda_n, dtype=float)
    eps_norms = np.linalg.norm(eps, axis=1) if eps.ndim == 2 else np.abs(eps)
    M_norms = np.linalg.norm(M, axis=1) if M.ndim == 2 else np.abs(M)
    if np.any(eps_norms == 0.0):
        raise InfeasibleSchedule("eps must be nonzero at every index")
    if np.any((lam <= 0.0) | (lam >= 1.0)):
        raise InfeasibleSchedule("multipliers must lie in (0, 1)")
    lower = eps_norms / lam
    upper = np.minimum.reduce([
        np.sqrt(eps_norms * M_norms / lam),
        np.sqrt(eps_norms / lam),
        eps_norms / lam ** 2,
    ])
    bad = lower >= upper
    if np.any(bad):
        k = int(np.argmax(bad))
        raise InfeasibleSchedule(
            f"no feasible dilation at index {k}: "
            f"lower {lower[k]:.3e} >= upper {upper[k]:.3e}")
    t = np.sqrt(lower * upper)
    return ZoomSchedule(t, lam, eps, M, ns=ns)


# ---------------------------------------------------------------------------
# almost-affine residuals


def _apply_map(g, pts):
    """Chart action for either a MoebiusMap or a staged closure."""
    if hasattr(g, "_xuw"):
        return apply_array(g, pts)
    return np.asarray(g(np.asarray(pts, dtype=float)), dtype=float)


def _conformal_split(A, where):
    """Split a similarity matrix into (rate, rotation); reject shears."""
    U, s, Vt = np.linalg.svd(np.asarray(A, dtype=float))
    lam = float(np.exp(np.mean(np.log(s))))
    if (s.max() - s.min()) / lam > 1e-6:
        raise FixedPointMismatch(f"{where}: multiplier matrix is not "
                                 "conformal (singular value spread "
                                 f"{(s.max() - s.min()) / lam:.3g})")
    return lam, U @ Vt


def _match_schedule_entry(g, schedule, k):
    """Verify g fixes the schedule's eps_k with the schedule's rate.

    Eigenray extraction is ill-conditioned for very short multipliers with
    far-apart poles, so the check is direct: the conformal derivative at
    eps_k must contract at the scheduled rate (compared in log, the sharp
    discriminator -- schedule rates are geometric), and the map must not
    move eps_k more than evaluation roundoff at depth can account for.
    Returns that derivative as a pair (rate, rotation).
    """
    if not schedule.has_vectors:
        raise ValueError("schedule lacks pole vectors; pass eps_n as "
                         "vectors to choose_dilation")
    lam_s = schedule.lam[k]
    eps_s = schedule.eps[k]
    try:
        image = _apply_map(g, eps_s[None, :])[0]
        if hasattr(g, "derivative_at_base"):
            lam_g, O_g = _conformal_split(g.derivative_at_base(),
                                          f"entry {k}")
        else:
            der = derivative_at(g, eps_s)
            lam_g, O_g = der.lam, der.O
    except NumericalDegeneracy as exc:
        raise FixedPointMismatch(
            f"entry {k}: map is degenerate at the schedule eps "
            f"({exc})") from exc
    if lam_g <= 0.0 or abs(np.log(lam_g) - np.log(lam_s)) > SCHEDULE_RATE_TOL:
        raise FixedPointMismatch(
            f"entry {k}: map multiplier {lam_g:.6e} does not match "
            f"schedule {lam_s:.6e}")
    gap = float(np.linalg.norm(image - eps_s))
    slack = max(2.0 * lam_s * np.linalg.norm(eps_s),
                SCHEDULE_POLE_GATE * max(1.0, np.linalg.norm(eps_s)))
    if gap > slack:
        raise FixedPointMismatch(
            f"entry {k}: map moves the schedule eps by {gap:.3e} "
            f"(allowed {slack:.3e})")
    return lam_g, O_g


def _rescaled_eval(g, t, X):
    """Evaluate the dilation conjugate x -> g(t x)/t pointwise.

    Done in the chart rather than by composing matrices: flattening the
    conjugation into a single matrix stacks its dynamic range on top of
    g's own and loses the small translation part to rounding exactly when
    t is small, which is the regime these zooms live in.
    """
    return _apply_map(g, t * np.asarray(X, dtype=float)) / t


def almost_affine_residual(gs, schedule, grid=None):
    """Sup-distance of rescaled loxodromics from lam*O x + eps', per entry.

    ``gs`` is the map sequence matched entry-by-entry against ``schedule``
    (same multipliers; attracting poles at the schedule's eps_n); entries
    may be MoebiusMap instances or staged closures from
    realize_based_linear, which stay accurate much deeper.  Each map is
    conjugated by the dilation x -> x/t_n and compared on the grid with
    the affine model built from its own rotation part and the schedule's
    scaled pole; residuals are normalized by |eps'_n|.  Returns a
    ConvergenceReport whose errors are the residuals.
    """
    if len(gs) != len(schedule):
        raise ValueError("one map per schedule entry required")
    dim = gs[0].dim
    if grid is None:
        grid = zoom_grid(dim)
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    eps_prime = schedule.eps_prime
    residuals = []
    for k, g in enumerate(gs):
        _, O_k = _match_schedule_entry(g, schedule, k)
        lam_k = schedule.lam[k]
        actual = _eval_grid(lambda X, m=g, t=schedule.t[k]:
                            _rescaled_eval(m, t, X),
                            grid, f"almost_affine_residual[{k}]")
        model = lam_k * (grid @ O_k.T) + eps_prime[k]
        scale = np.linalg.norm(eps_prime[k])
        residuals.append(float(np.abs(actual - model).max()) / scale)
    report = ConvergenceReport(schedule.ns, residuals,
                               extras={"margins": schedule.margins},
                               floor=CONVERGED_FLOOR)
    return report


# ---------------------------------------------------------------------------
# commutator zooms


class CommutatorZoom:
    """Rescaled commutators with their predicted affine normal forms.

    Attributes
    ----------
    maps : list of closures
        h_n = f_n^-1 g'_n^-1 f_n g'_n on chart arrays.
    predicted : list of affine.AffineMap
        x -> B^-1 O_n^-1 B O_n x + B^-1 O_n^-1 (B - I) eps'_n / lam_n.
    fields : list of affine.AffineField
        The same data as near-identity increments, Euler-limit ready.
    residuals : list of float
        Grid sup-distance between h_n and its prediction, normalized by
        |eps'_n|/lam_n.
    report : ConvergenceReport
    B : ndarray
        Derivative of f at 0.
    """

    def __init__(self, maps, predicted, fields, residuals, report, B):
        self.maps = maps
        self.predicted = predicted
        self.fields = fields
        self.residuals = residuals
        self.report = report
        self.B = B

    def __repr__(self):
        return (f"CommutatorZoom(len={len(self.maps)}, "
                f"verdict={self.report.verdict!r})")


def _as_map_pair(f):
    """Accepts a matrix B (exact linear) or a (forward, inverse) pair."""
    if isinstance(f, np.ndarray):
        B = np.asarray(f, dtype=float)
        fwd = lambda X: X @ B.T
        inv = lambda Y: np.linalg.solve(B, np.asarray(Y, dtype=float).T).T
        return fwd, inv, B
    if isinstance(f, tuple) and len(f) == 2:
        fwd, inv = f
        return fwd, inv, None
    raise TypeError("f must be a square matrix or a (forward, inverse) "
                    "closure pair")


def commutator_zoom(f, gs, schedule, grid=None):
    """Affine normal forms of h_n = f_n^-1 g'_n^-1 f_n g'_n.

    ``f`` fixes 0 with invertible derivative B (a matrix input is used
    exactly; a closure pair is differentiated at 0).  Each group element is
    rescaled by the schedule's dilation; the commutator with the rescaled f
    is evaluated on the grid and compared against the predicted affine map
    with linear part B^-1 O_n^-1 B O_n and translation
    B^-1 O_n^-1 (B - I) eps'_n / lam_n, normalized by |eps'_n|/lam_n.
    """
    fwd, inv, B = _as_map_pair(f)
    dim = gs[0].dim if gs else 0
    origin = np.zeros((1, dim))
    if np.linalg.norm(np.asarray(fwd(origin), dtype=float)) > TOL_FIX:
        raise FixedPointMismatch("f must fix 0")
    if B is None:
        B = fd_jacobian(fwd, np.zeros(dim))
    if abs(np.linalg.det(B)) < 1e-12:
        raise NonInvertibleB("derivative of f at 0 is singular")
    if len(gs) != len(schedule):
        raise ValueError("one map per schedule entry required")
    if grid is None:
        grid = zoom_grid(dim)
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    eps_prime = schedule.eps_prime
    eye = np.eye(dim)

    maps, predicted, fields, residuals = [], [], [], []
    for k, g in enumerate(gs):
        _, O_k = _match_schedule_entry(g, schedule, k)
        lam_k = schedule.lam[k]
        t_k = schedule.t[k]
        g_inv = g.inverse()

        def h(X, t=t_k, gm=g, gi=g_inv):
            Y = _rescaled_eval(gm, t, X)
            Y = np.asarray(fwd(t * Y), dtype=float) / t
            Y = _rescaled_eval(gi, t, Y)
            return np.asarray(inv(t * Y), dtype=float) / t

        v = eps_prime[k] / lam_k
        L = np.linalg.solve(B, O_k.T @ B @ O_k)
        shift = np.linalg.solve(B, O_k.T @ ((B - eye) @ v))
        actual = _eval_grid(h, grid, f"commutator_zoom[{k}]")
        model = grid @ L.T + shift
        scale = np.linalg.norm(v)
        residuals.append(float(np.abs(actual - model).max()) / scale)
        maps.append(h)
        predicted.append(affine.AffineMap(L, shift))
        fields.append(affine.AffineField(L - eye, shift))

    report = ConvergenceReport(schedule.ns, residuals,
                               extras={"margins": schedule.margins},
                               floor=CONVERGED_FLOOR)
    return CommutatorZoom(maps, predicted, fields, residuals, report, B)


# ---------------------------------------------------------------------------
# sector zooms


class SectorZoom:
    """Rescaled restrictions of a tangent-to-identity map to thin sectors.

    Attributes
    ----------
    n_values : ndarray of int
    a_n : ndarray
        Translation depths (minimal so the n-ball lands in the sector).
    c_hat : (len, d) ndarray
        Fitted translation of f_n (grid mean of f_n - id).
    scaled : (len, d) ndarray
        n * c_hat_n, the quantity converging to the field value c.
    c_estimate : ndarray
        scaled[-1], the deepest available estimate of c.
    maps : list of closures
        f_n(w) = f(n(w + a_n w0))/n - a_n w0.
    report : ConvergenceReport
        Errors |scaled_n - c_estimate| over all but the deepest entry.
    """

    def __init__(self, n_values, a_n, c_hat, maps, report):
        self.n_values = np.asarray(n_values, dtype=int)
        self.a_n = np.asarray(a_n, dtype=float)
        self.c_hat = np.asarray(c_hat, dtype=float)
        self.maps = maps
        self.report = report

    @property
    def scaled(self):
        return self.n_values[:, None] * self.c_hat

    @property
    def c_estimate(self):
        return self.scaled[-1]

    def __repr__(self):
        return (f"SectorZoom(n={self.n_values.tolist()}, "
                f"c~{np.round(self.c_estimate, 6).tolist()})")


def _sector_coordinates(X, w0):
    w0sq = float(w0 @ w0)
    t = X @ w0 / w0sq
    v = X - t[:, None] * w0
    return t, np.linalg.norm(v, axis=1), np.linalg.norm(X, axis=1)


def sector_zoom(f, w0, n_values, eps_seq=None, R_seq=None, grid=None,
                a_seq=None):
    """Translation constants of f along the ray direction w0.

    In the sector U_{eps,R} = {t w0 + v : t >= R, |v| <= eps |w|} a map
    f(w) = w + Phi(w) + o(1) with Phi continuous and degree-0 looks like
    w + c + small, c = Phi(w0).  Conjugating by the translation w + a_n w0
    and the scaling n w gives f_n = id + c/n + o(c/n); the fitted
    translations satisfy n * c_hat_n -> c.

    eps_seq / R_seq default to n^(-1/2) and n^(1/2); a_n defaults to the
    minimal depth placing the unit ball's n-scaling inside the sector.
    Points are checked into the sector before evaluation and their images
    against a relaxed sector after (SectorViolation otherwise).  A vanishing
    deepest estimate (the field is zero along w0) is rejected.
    """
    w0 = np.asarray(w0, dtype=float).reshape(-1)
    norm_w0 = np.linalg.norm(w0)
    if norm_w0 == 0.0:
        raise ValueError("w0 must be a nonzero direction")
    d = w0.shape[0]
    n_values = np.asarray(n_values, dtype=int)
    if np.any(n_values < 1):
        raise ValueError("n_values must be positive integers")
    eps_seq = (n_values ** -0.5 if eps_seq is None
               else np.asarray(eps_seq, dtype=float))
    R_seq = (n_values ** 0.5 if R_seq is None
             else np.asarray(R_seq, dtype=float))
    if grid is None:
        grid = zoom_grid(d)
    grid = np.atleast_2d(np.asarray(grid, dtype=float))

    a_list, c_list, maps = [], [], []
    for idx, n in enumerate(n_values):
        eps_n, R_n = float(eps_seq[idx]), float(R_seq[idx])
        if a_seq is None:
            a_n = max(R_n + n / norm_w0, (n / eps_n + n) / norm_w0)
        else:
            a_n = float(a_seq[idx])
        base = grid + a_n * w0          # T_n image of the grid
        t, v_norm, norms = _sector_coordinates(base, w0)
        if np.any(t < R_n * (1 - 1e-9)) or np.any(
                v_norm > eps_n * norms * (1 + 1e-9)):
            raise SectorViolation(
                f"n={n}: the translated grid is not inside the sector "
                f"(a_n={a_n:.3g} too small?)")
        X = float(n) * base             # S_n preserves the sector
        Y = _eval_grid(f, X, f"sector_zoom[n={n}]")
        t, v_norm, norms = _sector_coordinates(Y, w0)
        if np.any(t < 0.5 * R_n) or np.any(
                v_norm > (2.0 * eps_n + 1e-6) * norms):
            raise SectorViolation(
                f"n={n}: the image escaped the relaxed sector; the "
                f"tangent-to-identity hypothesis looks wrong")
        f_n_vals = Y / float(n) - a_n * w0
        c_list.append((f_n_vals - grid).mean(axis=0))
        a_list.append(a_n)

        def f_n(W, n=float(n), a=a_n):
            return np.asarray(
                f(n * (np.asarray(W, dtype=float) + a * w0)),
                dtype=float) / n - a * w0

        maps.append(f_n)

    c_hat = np.asarray(c_list)
    scaled = n_values[:, None] * c_hat
    c_est = scaled[-1]
    if np.linalg.norm(c_est) <= 1e-10:
        raise ValueError("the translation field vanishes along w0; "
                         "sector zoom needs a nonvanishing direction")
    errors = np.linalg.norm(scaled[:-1] - c_est, axis=1)
    report = ConvergenceReport(n_values[:-1], errors,
                               extras={"c_estimate": c_est})
    return SectorZoom(n_values, a_list, c_hat, maps, report)


# ---------------------------------------------------------------------------
# eccentric sequences


class EccentricSequence:
    """Mixed-multiplier zoom h_n = g2^(-m_n) mu g1^n with its linear limit.

    Attributes
    ----------
    ns, m : ndarrays of int
        Indices and bracketing exponents (lam2 <= lam1^n/lam2^m_n <= 1).
    ratio : ndarray
        The bracketed scale factors lam1^n / lam2^m_n.
    maps : list of closures
    linear_parts : list of ndarray
        Dh_n(0), assembled from the finite-difference derivative of mu
        conjugated by the exact similarity powers.
    subsequence : list of int
        Indices (1-based n) of the densest cluster of linear parts.
    B : ndarray
        Linear part at the deepest subsequence member.
    report : ConvergenceReport
        C^1 errors (grid sup + derivative gap) against the deepest member.
    certificates : ndarray
        Per-n nonlinearity certificates (max second finite difference).
    """

    def __init__(self, ns, m, ratio, maps, linear_parts, subsequence, B,
                 report, certificates):
        self.ns = ns
        self.m = m
        self.ratio = ratio
        self.maps = maps
        self.linear_parts = linear_parts
        self.subsequence = subsequence
        self.B = B
        self.report = report
        self.certificates = certificates

    def __repr__(self):
        return (f"EccentricSequence(n_max={self.ns[-1]}, "
                f"subsequence={list(self.subsequence)})")


def _as_similarity(g, dim_hint=None):
    if isinstance(g, tuple) and len(g) == 2:
        lam, O = g
        return float(lam), np.asarray(O, dtype=float)
    if isinstance(g, MoebiusMap):
        origin = np.zeros(g.dim)
        if np.linalg.norm(apply_array(g, origin[None, :])[0]) > TOL_FIX:
            raise ValueError("similarity must fix 0")
        der = derivative_at(g, origin)
        return der.lam, der.O
    raise TypeError("similarity must be a (lam, O) pair or a MoebiusMap")


def eccentric_sequence(mu, g1, g2, n_max=25, grid=None, probe_step=0.25):
    """Bracketed two-sided zoom of mu between similarities g1 and g2.

    ``mu`` is a closure fixing 0 with invertible derivative (checked by
    finite differences); ``g1``, ``g2`` are contracting similarities given
    as (lam, O) pairs or as Moebius maps fixing 0 and infinity.  For each n
    the exponent m_n = ceil(n log lam1 / log lam2), decremented if it
    violates the bracketing lam2 <= lam1^n / lam2^m_n <= 1, keeps the
    composite h_n(x) = lam2^-m_n O2^-m_n mu(lam1^n O1^n x) at unit scale.
    The linear parts live in a compact set; the densest cluster is reported
    as the convergent subsequence with C^1 errors against its deepest
    member.  Depth is limited by double precision: the absolute noise floor
    of h_n grows like lam1^-n times machine epsilon.
    """
    lam1, O1 = _as_similarity(g1)
    lam2, O2 = _as_similarity(g2)
    d = O1.shape[0]
    if not 0.0 < lam1 < 1.0:
        raise ValueError("lam1 must lie in (0, 1)")
    if lam2 == 1.0 or not 0.0 < lam2 < 1.0:
        raise BracketingFailure(
            "lam2 must lie strictly inside (0, 1); the bracketing "
            "inequality is empty otherwise")
    origin = np.zeros(d)
    if np.linalg.norm(np.asarray(mu(origin[None, :]), dtype=float)) > TOL_FIX:
        raise FixedPointMismatch("mu must fix 0")
    D_mu = fd_jacobian(mu, origin)
    if abs(np.linalg.det(D_mu)) < 1e-12:
        raise DerivativeSingular("derivative of mu at 0 is singular")
    if grid is None:
        grid = zoom_grid(d)
    grid = np.atleast_2d(np.asarray(grid, dtype=float))

    log_ratio = np.log(lam1) / np.log(lam2)
    ns = np.arange(1, n_max + 1)
    ms, ratios, maps, linear_parts, certificates = [], [], [], [], []
    probe_dirs = np.eye(d)[:2]
    for n in ns:
        m = int(np.ceil(n * log_ratio))
        log_r = n * np.log(lam1) - m * np.log(lam2)
        if log_r > 1e-12:   # fractional target: ceil overshoots the top
            m -= 1
            log_r = n * np.log(lam1) - m * np.log(lam2)
        r = float(np.exp(log_r))
        if not (lam2 * (1 - 1e-9) <= r <= 1 + 1e-9):
            raise BracketingFailure(
                f"n={n}: no exponent m brackets lam1^n/lam2^m in "
                f"[lam2, 1] (got {r:.6g})")
        O1_n = np.linalg.matrix_power(O1, n)
        O2_m = np.linalg.matrix_power(O2, m)
        scale_in = lam1 ** n
        scale_out = lam2 ** (-m)

        def h(X, O1_n=O1_n, O2_m=O2_m, si=scale_in, so=scale_out):
            inner = si * (np.asarray(X, dtype=float) @ O1_n.T)
            return so * (np.asarray(mu(inner), dtype=float) @ O2_m)

        L = r * (O2_m.T @ D_mu @ O1_n)
        vals0 = _eval_grid(h, grid, f"eccentric_sequence[n={n}]")
        cert = 0.0
        for e in probe_dirs:
            plus = _eval_grid(h, grid + probe_step * e, "eccentric probes")
            minus = _eval_grid(h, grid - probe_step * e, "eccentric probes")
            second = np.abs(plus + minus - 2.0 * vals0).max()
            cert = max(cert, float(second) / probe_step ** 2)
        ms.append(m)
        ratios.append(r)
        maps.append(h)
        linear_parts.append(L)
        certificates.append(cert)

    subsequence = _densest_cluster(linear_parts)
    deep = subsequence[-1]
    B = linear_parts[deep - 1]
    ref_vals = maps[deep - 1](grid)
    errors = []
    for n in subsequence[:-1]:
        sup = float(np.abs(maps[n - 1](grid) - ref_vals).max())
        dgap = float(np.linalg.norm(linear_parts[n - 1] - B, 2))
        errors.append(sup + dgap)
    report = ConvergenceReport(subsequence[:-1], errors,
                               extras={"ratio": np.asarray(ratios)})
    return EccentricSequence(ns, np.asarray(ms), np.asarray(ratios), maps,
                             linear_parts, subsequence, B, report,
                             np.asarray(certificates))


def _densest_cluster(mats):
    """Indices (1-based) of the densest ball of matrices, ordered."""
    count = len(mats)
    if count == 1:
        return [1]
    flat = np.asarray([m.ravel() for m in mats])
    dists = np.linalg.norm(flat[:, None, :] - flat[None, :, :], axis=2)
    np.fill_diagonal(dists, np.inf)
    i, j = np.unravel_index(np.argmin(dists), dists.shape)
    center = max(i, j)
    radius = max(3.0 * dists[i, j], 1e-6)
    members = [k + 1 for k in range(count)
               if dists[k, center] <= radius or k == center]
    return sorted(members)


# ---------------------------------------------------------------------------
# based-map flow preparation


class BasedFlowPrep:
    """Near-identity affine decompositions of a based-map sequence.

    Attributes
    ----------
    t : ndarray
        Dilation scales |eps_n|^(3/4) |M_n|^(1/4).
    eps_prime : (len, d) ndarray
        Rescaled poles eps_n / t_n.
    maps : list of closures
        f_n = A^-1 o F'_n with F'_n the rescaled based map.
    fields : list of affine.AffineField
        Affine parts (A^-1 A_n - I, A^-1 (I - A_n) eps'_n), Euler-ready.
    A : ndarray
        The limiting multiplier used for the left inverse.
    multiplier_gaps : ndarray
        |A_n - A| per entry (convergence of multipliers is the caller's
        asymptotic claim; only the gaps are recorded).
    """

    def __init__(self, t, eps_prime, maps, fields, A, multiplier_gaps):
        self.t = t
        self.eps_prime = eps_prime
        self.maps = maps
        self.fields = fields
        self.A = A
        self.multiplier_gaps = multiplier_gaps

    def __repr__(self):
        return (f"BasedFlowPrep(len={len(self.maps)}, "
                f"t[-1]={self.t[-1]:.3g})")


def _fingerprint(based):
    eps = (np.inf,) if based.eps.is_infinity else tuple(
        np.round(based.eps.coords, 12))
    M = (np.inf,) if based.M.is_infinity else tuple(
        np.round(based.M.coords, 12))
    return eps, M, tuple(np.round(based.A, 12).ravel())


def based_flow_prep(based_maps, A_limit=None):
    """Turn based maps with eps_n -> 0, |M_n| -> infinity into Euler input.

    Scales each entry by t_n = |eps_n|^(3/4) |M_n|^(1/4) (the geometric mean
    of the feasible range for 1/|M'| << |eps'| << 1), realizes the rescaled
    based map, and left-composes with A^-1 so the affine part is
    near-identity.  A constant sequence is rejected (DegenerateSequence):
    the downstream flow needs infinitely many distinct elements.  Entries
    with eps = 0 or M at infinity raise DegeneratePoles.
    """
    if not based_maps:
        raise ValueError("empty sequence")
    if len({_fingerprint(b) for b in based_maps}) == 1 and len(based_maps) > 1:
        raise DegenerateSequence(
            "all entries are identical; the sequence must contain "
            "infinitely many distinct elements")
    for k, b in enumerate(based_maps):
        if b.eps.is_infinity or np.linalg.norm(b.eps.coords) == 0.0:
            raise DegeneratePoles(f"entry {k}: eps must be finite nonzero")
        if b.M.is_infinity:
            raise DegeneratePoles(f"entry {k}: M must be finite")
    dim = based_maps[0].eps.dim
    eye = np.eye(dim)
    if A_limit is None:
        A_limit = based_maps[-1].A
    A_limit = np.asarray(A_limit, dtype=float)
    if np.linalg.norm(A_limit, 2) >= 1.0:
        raise ValueError("the limiting multiplier must be a contraction "
                         "(operator norm < 1)")
    A_inv = np.linalg.inv(A_limit)

    t_list, eps_list, maps, fields, gaps = [], [], [], [], []
    for b in based_maps:
        eps = b.eps.coords
        M = b.M.coords
        t = np.linalg.norm(eps) ** 0.75 * np.linalg.norm(M) ** 0.25
        eps_p = eps / t
        M_p = M / t
        realized = realize_based_linear(BasedLinearMap(eps_p, M_p, b.A))

        def f_n(X, r=realized):
            return np.asarray(r(np.asarray(X, dtype=float)),
                              dtype=float) @ A_inv.T

        t_list.append(t)
        eps_list.append(eps_p)
        maps.append(f_n)
        fields.append(affine.AffineField(
            A_inv @ b.A - eye, A_inv @ ((eye - b.A) @ eps_p)))
        gaps.append(float(np.linalg.norm(b.A - A_limit, 2)))
    return BasedFlowPrep(np.asarray(t_list), np.asarray(eps_list), maps,
                         fields, A_limit, np.asarray(gaps))


# ---------------------------------------------------------------------------
# CSV export


def export_zoom_csv(path, report, margins=None):
    """Write (n, residual, margin_1..3, fitted_rate) rows for a report.

    ``margins`` defaults to the report's ``extras['margins']`` when present;
    absent margins are written as empty cells.  The fitted geometric rate is
    a single number, repeated per row for flat-file consumers.
    """
    if margins is None and isinstance(report.extras, dict):
        margins = report.extras.get("margins")
    rate = report.geometric_ratio()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "residual", "margin_1", "margin_2",
                         "margin_3", "fitted_rate"])
        for k, (n, err) in enumerate(zip(report.indices, report.errors)):
            if margins is not None:
                row_m = [f"{margins[i][k]:.17g}" for i in range(3)]
            else:
                row_m = ["", "", ""]
            writer.writerow([int(n), f"{err:.17g}", *row_m,
                             f"{rate:.17g}"])
    return path
