"""Degree-zero vector fields measuring first-order deviation from the identity.

Conjugating a pole-pair-preserving linear map ``A`` into the frame of a
loxodromic similarity ``x -> lam*O(x - eps) + eps`` and zooming at infinity
produces a map of the form ``f(w) = w + Phi(w) + O(1/|w|)``.  This module
evaluates the pieces of that expansion explicitly:

* ``sigma_form``   -- the conformal-distortion form sigma(v, w),
* ``psi_piece``    -- the quadratic correction inherited from the similarity,
* ``phi_piece``    -- the correction created by recentering at the finite pole,
* ``eta_field``    -- the combined first-order field,
* ``phi_field``    -- the degree-zero field Phi = eta - 2*sigma(eta, w)*w,
* ``g2_triple_prime`` -- the fully composed map (exact compositions), used as
  ground truth for the expansion,
* ``deviation_map``   -- f = ghat2_inverse o g2_triple_prime,
* ``nonvanishing_search`` -- witness production for Phi != 0.

Everything is vectorized over leading axes: ``w`` may be a single vector of
shape (d,) or an array of shape (..., d).
"""

from __future__ import annotations

import csv

import numpy as np

from .conformal import NumericalDegeneracy
from .grids import GRID_SEED, sphere_directions

TOL_ORTH = 1e-9
#: radius factor below which the 1/|w| bookkeeping is meaningless
VALIDITY_FACTOR = 10.0
#: multiplier sweep standing in for "lambda small enough"
LAMBDA_SWEEP = (1e-1, 1e-2, 1e-3)
#: |Phi| below this at every probe => AllZero verdict
ALL_ZERO_TOL = 1e-10


class TangentFieldError(Exception):
    """Base class for tangent-field failures."""


class ZeroW(TangentFieldError):
    """The field was evaluated at w = 0, where nothing is defined."""


class BelowValidityRadius(TangentFieldError):
    """Expansion requested inside the radius where its error term dominates."""


def _as_points(w, dim):
    pts = np.asarray(w, dtype=float)
    if pts.ndim == 0 or pts.shape[-1] != dim:
        raise ZeroW(
            f"expected points with last axis {dim}, got shape {pts.shape}"
        )
    return pts


def _dot(u, v):
    return np.sum(u * v, axis=-1)


def _nsq(u):
    return np.sum(u * u, axis=-1)


class TangentIdentityParams:
    """Data for the tangent-to-identity computation.

    Parameters
    ----------
    lam : float
        Similarity multiplier, strictly inside (0, 1).
    O : (d, d) orthogonal array
        Rotational part of the similarity.
    A : (d, d) invertible array
        The pole-pair-preserving linear map being conjugated.
    epsilon : (d,) nonzero array
        Finite pole of the similarity.
    a : (d,) array
        Finite pole of the companion affine map.
    b_override : (d,) array, optional
        Pins the expansion's constant coefficient directly instead of the
        derived ``b = (I - lam*O) @ epsilon``.  With lam in (0, 1) and O
        orthogonal the derived b can never vanish, so the degenerate b = 0
        branch of the case analysis is only reachable through this knob.

    Derived quantities (``O_tilde``, ``b``, inverses) are recomputed on every
    property read; nothing derived is cached.
    """

    def __init__(self, lam, O, A, epsilon, a, b_override=None):
        lam = float(lam)
        if not 0.0 < lam < 1.0:
            raise ValueError(f"multiplier must lie in (0, 1), got {lam}")
        O = np.array(O, dtype=float)
        A = np.array(A, dtype=float)
        epsilon = np.array(epsilon, dtype=float).reshape(-1)
        a = np.array(a, dtype=float).reshape(-1)
        d = epsilon.shape[0]
        if O.shape != (d, d) or A.shape != (d, d) or a.shape != (d,):
            raise ValueError(
                f"inconsistent shapes: O {O.shape}, A {A.shape}, "
                f"epsilon {epsilon.shape}, a {a.shape}"
            )
        if np.linalg.norm(O.T @ O - np.eye(d)) > TOL_ORTH:
            raise ValueError("O is not orthogonal")
        if np.linalg.norm(epsilon) == 0.0:
            raise ValueError("epsilon must be nonzero")
        if abs(np.linalg.det(A)) < 1e-300:
            raise ValueError("A must be invertible")
        self.lam = lam
        self.O = O
        self.A = A
        self.epsilon = epsilon
        self.a = a
        if b_override is not None:
            b_override = np.array(b_override, dtype=float).reshape(-1)
            if b_override.shape != (d,):
                raise ValueError("b_override has the wrong dimension")
        self.b_override = b_override

    @property
    def dim(self):
        return self.epsilon.shape[0]

    @property
    def O_tilde(self):
        return np.linalg.inv(self.A) @ self.O @ self.A

    @property
    def b(self):
        if self.b_override is not None:
            return self.b_override.copy()
        return (np.eye(self.dim) - self.lam * self.O) @ self.epsilon

    @property
    def validity_radius(self):
        return VALIDITY_FACTOR * max(
            np.linalg.norm(self.a), np.linalg.norm(self.epsilon), 1.0
        )

    def with_lambda(self, lam):
        """Same geometric data under a different multiplier (b re-derives)."""
        return TangentIdentityParams(
            lam, self.O, self.A, self.epsilon, self.a,
            b_override=self.b_override,
        )

    def __repr__(self):
        return (
            f"TangentIdentityParams(dim={self.dim}, lam={self.lam}, "
            f"|eps|={np.linalg.norm(self.epsilon):.3g}, "
            f"|a|={np.linalg.norm(self.a):.3g})"
        )


def _require_nonzero(w, what="w"):
    if np.any(_nsq(w) == 0.0):
        raise ZeroW(f"{what} = 0 is outside the field's domain")


def sigma_form(v, w, params):
    """sigma(v, w) = <v,w>/|w|^2 - <Ot v, Ot w>/|Ot w|^2.

    Degree +1 in v and -1 in w; identically zero exactly when O_tilde is
    orthogonal (conformal A).
    """
    d = params.dim
    v = _as_points(v, d)
    w = _as_points(w, d)
    _require_nonzero(w)
    Ot = params.O_tilde
    Ov = v @ Ot.T
    Ow = w @ Ot.T
    return _dot(v, w) / _nsq(w) - _dot(Ov, Ow) / _nsq(Ow)


def psi_piece(w, params):
    """Quadratic correction carried through the inversion conjugation.

    psi(w) = 2<A Ot w, b> Ot w / |w|^2
             + (A^-1 b - 2 <Ot w, A^-1 b> Ot w / |Ot w|^2) * |Aw|^2 / |w|^2
    """
    w = _as_points(w, params.dim)
    _require_nonzero(w)
    Ot = params.O_tilde
    b = params.b
    A_inv_b = np.linalg.solve(params.A, b)
    Ow = w @ Ot.T
    Aw = w @ params.A.T
    AOw = Ow @ params.A.T
    wsq = _nsq(w)[..., None]
    term1 = 2.0 * _dot(AOw, b)[..., None] * Ow / wsq
    bracket = A_inv_b - 2.0 * _dot(Ow, A_inv_b)[..., None] * Ow / _nsq(Ow)[..., None]
    term2 = bracket * (_nsq(Aw)[..., None] / wsq)
    return term1 + term2


def phi_piece(w, params):
    """Correction from recentering the zoom at the finite pole a.

    phi(w) = 2 sigma(a, w) lam Ot w + lam Ot a - (|Ot w|^2 / |w|^2) a
    """
    w = _as_points(w, params.dim)
    _require_nonzero(w)
    Ot = params.O_tilde
    a = params.a
    Ow = w @ Ot.T
    s = sigma_form(np.broadcast_to(a, w.shape), w, params)[..., None]
    ratio = (_nsq(Ow) / _nsq(w))[..., None]
    return 2.0 * s * params.lam * Ow + params.lam * (Ot @ a) - ratio * a


def eta_field(w, params):
    """The combined first-order field eta = (1/lam) Ot^-1 (phi + psi).

    Evaluated through its expanded display (the identity with the piecewise
    route is a test invariant):

    eta(w) = 2w( <A Ot w, b>/(lam |w|^2)
                 - (|Aw|^2/|w|^2) <Ot w, A^-1 b>/(lam |Ot w|^2)
                 + sigma(a, w) )
             + (|Aw|^2/|w|^2) Ot^-1 A^-1 b / lam
             + (I - |Ot w|^2 Ot^-1 / (lam |w|^2)) a

    Homogeneous of degree zero.
    """
    w = _as_points(w, params.dim)
    _require_nonzero(w)
    lam = params.lam
    Ot = params.O_tilde
    Ot_inv = np.linalg.inv(Ot)
    b = params.b
    a = params.a
    A_inv_b = np.linalg.solve(params.A, b)
    Ow = w @ Ot.T
    Aw = w @ params.A.T
    AOw = Ow @ params.A.T
    wsq = _nsq(w)
    Owsq = _nsq(Ow)
    Awsq = _nsq(Aw)
    scal = (
        _dot(AOw, b) / (lam * wsq)
        - (Awsq / wsq) * _dot(Ow, A_inv_b) / (lam * Owsq)
        + sigma_form(np.broadcast_to(a, w.shape), w, params)
    )
    out = 2.0 * scal[..., None] * w
    out = out + (Awsq / lam)[..., None] / wsq[..., None] * (Ot_inv @ A_inv_b)
    out = out + a - (Owsq / (lam * wsq))[..., None] * (Ot_inv @ a)
    return out


def phi_field(w, params):
    """The degree-zero deviation field Phi(w) = eta(w) - 2 sigma(eta(w), w) w."""
    w = _as_points(w, params.dim)
    eta = eta_field(w, params)
    s = sigma_form(eta, w, params)[..., None]
    return eta - 2.0 * s * w


def ghat2_inverse(w, params):
    """Inverse of the zoom limit at (infinity, 0) with multiplier (1/lam) Ot.

    ghat2^-1(w) = (1/lam) Ot^-1 w * |w|^2 / |Ot^-1 w|^2
    """
    w = _as_points(w, params.dim)
    _require_nonzero(w)
    Ot_inv = np.linalg.inv(params.O_tilde)
    Oinv_w = w @ Ot_inv.T
    return (1.0 / params.lam) * Oinv_w * (_nsq(w) / _nsq(Oinv_w))[..., None]


def _inv_pts(x):
    nsq = _nsq(x)[..., None]
    if np.any(nsq == 0.0):
        raise NumericalDegeneracy("inversion hit the origin mid-composition")
    return x / nsq


def g2_triple_prime(w, params, path="direct"):
    """The conjugated similarity g2''' near infinity, two evaluation routes.

    ``path='direct'`` composes the concrete pieces exactly:
    inversion-conjugate of the similarity, then conjugation by A, another
    inversion-conjugate, then recentering by the translation w -> w + a.
    ``path='expansion'`` evaluates the displayed first-order model

        (lam Ot w + phi(w) + psi(w)) * |w|^2 / |Ot w|^2

    whose error is O(1/|w|) along rays.  Requires |w| >= the params'
    validity radius; below that the comparison is meaningless.
    """
    w = _as_points(w, params.dim)
    radius = np.sqrt(_nsq(w))
    if np.any(radius < params.validity_radius):
        raise BelowValidityRadius(
            f"|w| must be >= {params.validity_radius:.3g}"
        )
    if path == "expansion":
        Ot = params.O_tilde
        Ow = w @ Ot.T
        lead = params.lam * Ow + phi_piece(w, params) + psi_piece(w, params)
        return lead * (_nsq(w) / _nsq(Ow))[..., None]
    if path != "direct":
        raise ValueError(f"unknown path {path!r}")
    lam, O, A = params.lam, params.O, params.A
    eps, a = params.epsilon, params.a
    A_inv = np.linalg.inv(A)

    def g2(y):
        x = _inv_pts(y)
        return _inv_pts(lam * ((x - eps) @ O.T) + eps)

    shifted = w + a                     # undo the recentering translation
    x = _inv_pts(shifted)               # move the action back to the origin
    gx = g2(x @ A.T) @ A_inv.T          # conjugate the similarity by A
    out = _inv_pts(gx)
    return out - a


def deviation_map(w, params):
    """f(w) = ghat2^-1(g2'''(w)) = w + Phi(w) + O(1/|w|), direct route."""
    return ghat2_inverse(g2_triple_prime(w, params, path="direct"), params)


class NonvanishingReport:
    """Outcome of the Phi != 0 witness search.

    Attributes
    ----------
    witness : ndarray or None
        Probe direction maximizing |Phi|; None under the all-zero verdict.
    value : float
        |Phi(witness)| (0.0 when all probes vanish).
    case : str
        Which branch produced the winner: 'pole' (b = 0, probe a),
        'paired' (probe w0 = Ot^-1 A^-1 b), or 'grid'.
    candidates : list of (str, ndarray, float)
        Every case-witness and its field magnitude, probes before grid.
    all_zero : bool
        True when no probe exceeded ``tol``.
    grid_size : int
        Number of sphere directions examined.
    """

    def __init__(self, witness, value, case, candidates, all_zero, grid_size):
        self.witness = witness
        self.value = value
        self.case = case
        self.candidates = candidates
        self.all_zero = all_zero
        self.grid_size = grid_size

    def __repr__(self):
        if self.all_zero:
            return f"NonvanishingReport(all_zero, grid={self.grid_size})"
        return (
            f"NonvanishingReport(case={self.case!r}, "
            f"|Phi|={self.value:.6g})"
        )


def nonvanishing_search(params, grid_size=200, seed=GRID_SEED,
                        tol=ALL_ZERO_TOL):
    """Search for a direction where Phi does not vanish.

    Phi is homogeneous of degree zero, so unit directions suffice.  The case
    witnesses are probed first: ``a`` when the constant coefficient b
    vanishes, otherwise ``w0 = Ot^-1 A^-1 b`` (this covers both the
    independent and dependent alignments of A^-1 b and a); a seeded sphere
    grid follows.  Returns a :class:`NonvanishingReport`; an all-zero
    outcome is a verdict, not an error.
    """
    d = params.dim
    candidates = []
    b = params.b
    if np.linalg.norm(b) <= tol:
        if np.linalg.norm(params.a) > 0.0:
            probe = params.a / np.linalg.norm(params.a)
            candidates.append(("pole", probe))
    else:
        w0 = np.linalg.inv(params.O_tilde) @ np.linalg.solve(params.A, b)
        if np.linalg.norm(w0) > 0.0:
            candidates.append(("paired", w0 / np.linalg.norm(w0)))
    for direction in sphere_directions(d, grid_size, seed=seed):
        candidates.append(("grid", direction))

    scored = []
    for case, probe in candidates:
        value = float(np.linalg.norm(phi_field(probe, params)))
        scored.append((case, probe, value))
    best = max(scored, key=lambda item: item[2])
    if best[2] <= tol:
        return NonvanishingReport(None, 0.0, "none", scored, True,
                                  grid_size)
    return NonvanishingReport(best[1], best[2], best[0], scored, False,
                              grid_size)


def lambda_sweep(params, lams=LAMBDA_SWEEP, **kwargs):
    """Run the witness search across a multiplier sweep.

    There is no quantitative threshold for when the 1/lam terms dominate,
    so the verdict is reported per multiplier.  Returns a list of
    (lam, NonvanishingReport) pairs.
    """
    return [
        (lam, nonvanishing_search(params.with_lambda(lam), **kwargs))
        for lam in lams
    ]


def export_field_csv(params, points, path):
    """Write (w, Phi(w)) rows for external plotting."""
    points = _as_points(np.atleast_2d(points), params.dim)
    values = phi_field(points, params)
    d = params.dim
    header = [f"w_{i}" for i in range(d)] + [f"phi_{i}" for i in range(d)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for w, p in zip(points, values):
            writer.writerow([f"{x:.17g}" for x in w]
                            + [f"{x:.17g}" for x in p])
    return path
