"""Closed cubic NURBS curves: evaluation, derivatives, closure and fitting.

Curves live on the normalized domain ``u in [0, 1]`` with a clamped knot
vector (multiplicity ``p + 1`` at both ends).  A racing line is closed by
solving for the last three control points so that position, first and
second parametric derivatives agree across the seam ``u = 1 -> u = 0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import comb
from typing import NamedTuple, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import least_squares

from raceloop.errors import ConditioningError, DomainError, SingularityError

DEGREE = 3
EPS_SPEED = 1e-9
# Smallest admissible gap between 0/1 and the nearest interior knot.
MIN_END_SPAN = 1e-6


def _check_u(u: NDArray[np.float64]) -> None:
    if np.any(~np.isfinite(u)) or np.any(u < 0.0) or np.any(u > 1.0):
        bad = u[(~np.isfinite(u)) | (u < 0.0) | (u > 1.0)][0]
        raise DomainError(f"parameter {bad!r} outside [0, 1]")


def find_spans(u: NDArray[np.float64], knots: NDArray[np.float64], p: int) -> NDArray[np.intp]:
    """Knot span index ``i`` with ``knots[i] <= u < knots[i+1]`` (``u = 1`` maps to the last span)."""
    n = len(knots) - p - 2
    spans = np.searchsorted(knots, u, side="right") - 1
    return np.clip(spans, p, n)


def basis_derivatives(
    u: ArrayLike, knots: ArrayLike, p: int, nders: int
) -> tuple[NDArray[np.intp], NDArray[np.float64]]:
    """Nonzero B-spline basis values and derivatives, vectorized over ``u``.

    Returns ``(spans, ders)`` where ``ders[j, k, r]`` is the ``k``-th
    derivative of basis function ``spans[j] - p + r`` at ``u[j]``.
    Derivatives above ``p`` are identically zero.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    knots = np.asarray(knots, dtype=float)
    _check_u(u)
    spans = find_spans(u, knots, p)
    npts = u.shape[0]

    ndu = np.zeros((npts, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.zeros((npts, p + 1))
    right = np.zeros((npts, p + 1))
    for j in range(1, p + 1):
        left[:, j] = u - knots[spans + 1 - j]
        right[:, j] = knots[spans + j] - u
        saved = np.zeros(npts)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved

    ders = np.zeros((npts, nders + 1, p + 1))
    ders[:, 0, :] = ndu[:, :, p]
    top = min(nders, p)
    for r in range(p + 1):
        s1, s2 = 0, 1
        a = np.zeros((2, npts, p + 1))
        a[0, :, 0] = 1.0
        for k in range(1, top + 1):
            d = np.zeros(npts)
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, :, 0] = a[s1, :, 0] / ndu[:, pk + 1, rk]
                d = a[s2, :, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, :, j] = (a[s1, :, j] - a[s1, :, j - 1]) / ndu[:, pk + 1, rk + j]
                d = d + a[s2, :, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[s2, :, k] = -a[s1, :, k - 1] / ndu[:, pk + 1, r]
                d = d + a[s2, :, k] * ndu[:, r, pk]
            ders[:, k, r] = d
            s1, s2 = s2, s1
    factor = float(p)
    for k in range(1, top + 1):
        ders[:, k, :] *= factor
        factor *= p - k
    return spans, ders


def basis_functions(u_val: float, knots: ArrayLike, p: int = DEGREE) -> tuple[int, NDArray[np.float64]]:
    """Return ``(span, values)`` for the ``p + 1`` nonzero basis functions at ``u_val``."""
    spans, ders = basis_derivatives([u_val], knots, p, 0)
    return int(spans[0]), ders[0, 0].copy()


def _validate_knots(knots: NDArray[np.float64], p: int, n_ctrl: int) -> None:
    if len(knots) != n_ctrl + p + 1:
        raise DomainError(f"expected {n_ctrl + p + 1} knots for {n_ctrl} control points, got {len(knots)}")
    if np.any(np.diff(knots) < 0):
        raise DomainError("knot vector must be nondecreasing")
    if np.any(knots[: p + 1] != 0.0) or np.any(knots[-(p + 1):] != 1.0):
        raise DomainError("knot vector must be clamped on [0, 1]")
    interior = knots[p + 1: -(p + 1)]
    if np.any(interior <= 0.0) or np.any(interior >= 1.0):
        raise DomainError("interior knots must lie strictly inside (0, 1)")


def _frozen(a: ArrayLike) -> NDArray[np.float64]:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NurbsCurve:
    """Rational B-spline curve in the plane with a clamped knot vector."""

    control_points: NDArray[np.float64]
    weights: NDArray[np.float64]
    knots: NDArray[np.float64]
    degree: int = DEGREE

    def __post_init__(self) -> None:
        cps = _frozen(self.control_points)
        w = _frozen(self.weights)
        kn = _frozen(self.knots)
        if cps.ndim != 2 or cps.shape[1] != 2:
            raise DomainError("control points must have shape (n+1, 2)")
        if w.shape != (cps.shape[0],):
            raise DomainError("need one weight per control point")
        if np.any(~(w > 0.0)):
            raise DomainError("weights must be strictly positive")
        if cps.shape[0] < self.degree + 1:
            raise DomainError("need at least degree+1 control points")
        _validate_knots(kn, self.degree, cps.shape[0])
        object.__setattr__(self, "control_points", cps)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "knots", kn)

    @property
    def n(self) -> int:
        """Highest control point index (there are ``n + 1`` control points)."""
        return self.control_points.shape[0] - 1

    def derivatives(self, u: ArrayLike, order: int) -> NDArray[np.float64]:
        """Position and parametric derivatives up to ``order`` at each ``u``.

        Returns an array of shape ``(order + 1, len(u), 2)``. Derivatives of the
        homogeneous curve are combined with the generalized quotient rule.
        """
        u = np.atleast_1d(np.asarray(u, dtype=float))
        p = self.degree
        spans, ders = basis_derivatives(u, self.knots, p, order)
        idx = spans[:, None] - p + np.arange(p + 1)
        w = self.weights[idx]
        pw = self.control_points[idx] * w[..., None]
        aw = np.einsum("nkj,njd->knd", ders, pw)
        wd = np.einsum("nkj,nj->kn", ders, w)
        out = np.empty_like(aw)
        for k in range(order + 1):
            v = aw[k].copy()
            for i in range(1, k + 1):
                v -= comb(k, i) * wd[i][:, None] * out[k - i]
            out[k] = v / wd[0][:, None]
        return out

    def evaluate(self, u_val: ArrayLike) -> NDArray[np.float64]:
        """Point(s) on the curve; scalar input gives shape ``(2,)``."""
        pts = self.derivatives(u_val, 0)[0]
        return pts[0] if np.ndim(u_val) == 0 else pts

    def derivative(self, u_val: ArrayLike, k: int = 1) -> NDArray[np.float64]:
        """``k``-th parametric derivative ``d^k c / du^k``."""
        if k < 1:
            raise DomainError(f"derivative order must be >= 1, got {k}")
        d = self.derivatives(u_val, k)[k]
        return d[0] if np.ndim(u_val) == 0 else d

    def curvature(self, u_val: ArrayLike, signed: bool = False) -> float | NDArray[np.float64]:
        """Curvature ``|c' x c''| / |c'|^3`` (left turns positive when ``signed``)."""
        d = self.derivatives(u_val, 2)
        kappa = curvature_from_derivatives(d[1], d[2], np.atleast_1d(np.asarray(u_val, float)))
        if not signed:
            kappa = np.abs(kappa)
        return float(kappa[0]) if np.ndim(u_val) == 0 else kappa

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "control_points": self.control_points.tolist(),
            "weights": self.weights.tolist(),
            "knots": self.knots.tolist(),
        }

    @classmethod
    def from_dict(cls, record: dict) -> "NurbsCurve":
        return cls(
            control_points=np.asarray(record["control_points"], dtype=float),
            weights=np.asarray(record["weights"], dtype=float),
            knots=np.asarray(record["knots"], dtype=float),
            degree=int(record.get("degree", DEGREE)),
        )

    def dumps(self) -> str:
        """Text record with every float written at 17 significant digits."""
        f = lambda x: format(float(x), ".17g")  # noqa: E731
        pts = ", ".join(f"[{f(x)}, {f(y)}]" for x, y in self.control_points)
        ws = ", ".join(f(x) for x in self.weights)
        ks = ", ".join(f(x) for x in self.knots)
        return (
            "{\n"
            f'  "degree": {self.degree},\n'
            f'  "control_points": [{pts}],\n'
            f'  "weights": [{ws}],\n'
            f'  "knots": [{ks}]\n'
            "}\n"
        )

    @classmethod
    def loads(cls, text: str) -> "NurbsCurve":
        return cls.from_dict(json.loads(text))


def curvature_from_derivatives(
    d1: NDArray[np.float64], d2: NDArray[np.float64], u: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Signed curvature from first/second derivative arrays of shape ``(N, 2)``."""
    speed = np.hypot(d1[:, 0], d1[:, 1])
    bad = speed <= EPS_SPEED
    if np.any(bad):
        raise SingularityError("degenerate tangent", float(u[np.argmax(bad)]))
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    return cross / speed**3


# ---------------------------------------------------------------------------
# Free parameters and lap closure


def knots_from_logits(z: ArrayLike) -> NDArray[np.float64]:
    """Map unconstrained reals to the free interior knots.

    The knot gaps are a softmax of ``[0, z..., 0]``; the first and last gap
    share the same logit, so the seam spans are equal and ``len(z)`` reals
    give ``len(z)`` free knots (the last interior knot is ``1 - u_{p+1}``).
    """
    z = np.asarray(z, dtype=float)
    logits = np.concatenate([[0.0], z, [0.0]])
    g = np.exp(logits - logits.max())
    g /= g.sum()
    return np.cumsum(g)[:-2]


def logits_from_knots(interior: ArrayLike) -> NDArray[np.float64]:
    """Inverse of :func:`knots_from_logits`."""
    interior = np.asarray(interior, dtype=float)
    gaps = np.diff(np.concatenate([[0.0], full_interior(interior), [1.0]]))
    if np.any(gaps <= 0.0):
        raise DomainError("interior knots must be strictly increasing inside (0, 1)")
    lg = np.log(gaps)
    return lg[1:-1] - lg[0]


def full_interior(free_knots: NDArray[np.float64]) -> NDArray[np.float64]:
    """Free interior knots plus the seam-mirrored last one, ``1 - u_{p+1}``."""
    free_knots = np.asarray(free_knots, dtype=float)
    return np.concatenate([free_knots, [1.0 - free_knots[0]]])


@dataclass(frozen=True, eq=False)
class FreeParameters:
    """Parameters left free once the seam constraints fix the last three control points.

    For ``n + 1`` control points there are ``n - 2`` free points
    ``p_0 .. p_{n-3}``, ``n - 2`` free weights and ``n - 4`` free interior
    knots; the last interior knot mirrors the first across the seam.
    """

    control_points: NDArray[np.float64]
    weights: NDArray[np.float64]
    interior_knots: NDArray[np.float64]

    def __post_init__(self) -> None:
        cps = _frozen(self.control_points)
        w = _frozen(self.weights)
        kn = _frozen(self.interior_knots)
        k = cps.shape[0]
        if cps.ndim != 2 or cps.shape[1] != 2:
            raise DomainError("free control points must have shape (n-2, 2)")
        if k < 5:
            raise DomainError("need at least 5 free control points (n >= 7)")
        if w.shape != (k,):
            raise DomainError(f"expected {k} free weights, got {w.shape}")
        if kn.shape != (k - 2,):
            raise DomainError(f"expected {k - 2} interior knots, got {kn.shape}")
        if np.any(~(w > 0.0)):
            raise DomainError("weights must be strictly positive")
        if np.any(np.diff(np.concatenate([[0.0], full_interior(kn), [1.0]])) <= 0.0):
            raise DomainError("interior knots must be strictly increasing inside (0, 1), last < 1 - first")
        object.__setattr__(self, "control_points", cps)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "interior_knots", kn)

    @property
    def n(self) -> int:
        return self.control_points.shape[0] + 2

    @property
    def dimension(self) -> int:
        return self.to_vector().shape[0]

    def to_vector(self, position_scale: float = 1.0) -> NDArray[np.float64]:
        """Unconstrained encoding: scaled points, log-weights, knot logits."""
        return np.concatenate(
            [
                self.control_points.ravel() / position_scale,
                np.log(self.weights),
                logits_from_knots(self.interior_knots),
            ]
        )

    @classmethod
    def from_vector(cls, theta: ArrayLike, n: int, position_scale: float = 1.0) -> "FreeParameters":
        theta = np.asarray(theta, dtype=float)
        k = n - 2
        expected = 2 * k + k + (n - 4)
        if theta.shape != (expected,):
            raise DomainError(f"expected parameter vector of length {expected}, got {theta.shape}")
        pts = theta[: 2 * k].reshape(k, 2) * position_scale
        w = np.exp(theta[2 * k: 3 * k])
        kn = knots_from_logits(theta[3 * k:])
        return cls(pts, w, kn)


def _end_spans(knots: NDArray[np.float64], p: int) -> tuple[float, float, float, float]:
    h1 = knots[p + 1]
    h2 = knots[p + 2]
    g1 = 1.0 - knots[-(p + 2)]
    g2 = 1.0 - knots[-(p + 3)]
    return h1, h2, g1, g2


def _close(
    free_pts: NDArray[np.float64], weights: NDArray[np.float64], knots: NDArray[np.float64], p: int = DEGREE
) -> NDArray[np.float64]:
    """Append ``p_{n-2}, p_{n-1}, p_n`` so the rational curve is C2 across the seam.

    Works on any coordinate dimension and is linear in ``free_pts`` for
    fixed weights and knots.
    """
    h1, h2, g1, g2 = _end_spans(knots, p)
    if min(h1, h2, g1, g2) < MIN_END_SPAN:
        raise ConditioningError(
            f"end knot spans too small for a stable closure (h1={h1:.3g}, h2={h2:.3g}, g1={g1:.3g}, g2={g2:.3g})"
        )
    w0, w1, w2 = weights[0], weights[1], weights[2]
    wn, wn1, wn2 = weights[-1], weights[-2], weights[-3]
    p0, p1, p2 = free_pts[0], free_pts[1], free_pts[2]

    # Homogeneous derivatives at u = 0 (clamped start).
    q0, q1, q2 = w0 * p0, w1 * p1, w2 * p2
    a1 = p / h1 * (q1 - q0)
    wd1 = p / h1 * (w1 - w0)
    a2 = (p - 1) / h1 * (p * (q2 - q1) / h2 - p * (q1 - q0) / h1)
    wd2 = (p - 1) / h1 * (p * (w2 - w1) / h2 - p * (w1 - w0) / h1)
    c0 = p0
    c1 = (a1 - wd1 * c0) / w0
    c2 = (a2 - 2.0 * wd1 * c1 - wd2 * c0) / w0

    # Solve the end conditions at u = 1 one control point at a time.
    alpha = p / g1
    beta = p / g2
    gamma = (p - 1) / g1
    pn = c0
    pn1 = pn - c1 * wn / (alpha * wn1)
    we1 = alpha * (wn - wn1)
    we2 = gamma * (we1 - beta * (wn1 - wn2))
    a1_end = alpha * (wn * pn - wn1 * pn1)
    a2_end = wn * c2 + 2.0 * we1 * c1 + we2 * c0
    # a2_end = gamma * (a1_end - beta * (wn1 * pn1 - wn2 * pn2))
    pn2 = ((a2_end / gamma - a1_end) / beta + wn1 * pn1) / wn2
    return np.concatenate([free_pts, pn2[None], pn1[None], pn[None]], axis=0)


def full_weights(free_weights: NDArray[np.float64]) -> NDArray[np.float64]:
    """Free weights followed by the first three mirrored: ``w_{n-2}=w_2, w_{n-1}=w_1, w_n=w_0``."""
    return np.concatenate([free_weights, free_weights[2::-1]])


def full_knots(free_knots: NDArray[np.float64], p: int = DEGREE) -> NDArray[np.float64]:
    """Clamped knot vector from the free interior knots."""
    return np.concatenate([np.zeros(p + 1), full_interior(free_knots), np.ones(p + 1)])


def apply_closure(free: FreeParameters) -> NurbsCurve:
    """Build the closed curve whose seam is C2 in the rational sense."""
    w = full_weights(free.weights)
    kn = full_knots(free.interior_knots)
    pts = _close(free.control_points, w, kn)
    return NurbsCurve(pts, w, kn)


def closure_matrix(n: int, weights: NDArray[np.float64] | None = None, interior: NDArray[np.float64] | None = None) -> NDArray[np.float64]:
    """Matrix ``L`` with ``full_points = L @ free_points`` for fixed weights and knots."""
    k = n - 2
    if weights is None:
        weights = np.ones(k)
    if interior is None:
        interior = uniform_interior_knots(n)
    return _close(np.eye(k), full_weights(weights), full_knots(interior))


def uniform_interior_knots(n: int) -> NDArray[np.float64]:
    """Free part (``n - 4`` knots) of the uniform knot vector for ``n + 1`` control points."""
    return np.arange(1, n - 3) / (n - 2)


def free_parameters_of(curve: NurbsCurve) -> FreeParameters:
    """Extract the free subset of an already closed curve."""
    k = curve.n - 2
    p = curve.degree
    return FreeParameters(
        curve.control_points[:k].copy(),
        curve.weights[:k].copy(),
        curve.knots[p + 1: -(p + 2)].copy(),
    )


# ---------------------------------------------------------------------------
# Centerline fitting


class CenterlineFit(NamedTuple):
    params: FreeParameters
    residual: float


def _closest_params(curve: NurbsCurve, pts: NDArray[np.float64], u0: NDArray[np.float64], iters: int = 8) -> NDArray[np.float64]:
    """Newton projection of ``pts`` onto ``curve`` starting at ``u0`` (seam aware)."""
    u = u0.copy()
    for _ in range(iters):
        d = curve.derivatives(u, 2)
        diff = d[0] - pts
        num = np.einsum("nd,nd->n", diff, d[1])
        den = np.einsum("nd,nd->n", d[1], d[1]) + np.einsum("nd,nd->n", diff, d[2])
        den = np.where(np.abs(den) < 1e-12, 1e-12, den)
        step = np.clip(num / den, -0.02, 0.02)
        u = np.mod(u - step, 1.0)
    return u


def point_curve_distance(curve: NurbsCurve, pts: ArrayLike, samples: int = 4096) -> NDArray[np.float64]:
    """Distance from each point to the closed curve (dense scan + Newton polish)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    ug = np.arange(samples) / samples
    dense = curve.evaluate(ug)
    # chunked nearest sample to keep memory bounded
    u0 = np.empty(len(pts))
    for s in range(0, len(pts), 512):
        blk = pts[s: s + 512]
        d2 = ((blk[:, None, :] - dense[None, :, :]) ** 2).sum(-1)
        u0[s: s + 512] = ug[np.argmin(d2, axis=1)]
    u = _closest_params(curve, pts, u0)
    dist_refined = np.linalg.norm(curve.evaluate(u) - pts, axis=1)
    dist_grid = np.linalg.norm(curve.evaluate(u0) - pts, axis=1)
    return np.minimum(dist_refined, dist_grid)


def _design_matrix(u: NDArray[np.float64], kn: NDArray[np.float64], n: int, order: int = 0) -> NDArray[np.float64]:
    """Dense matrix of the ``order``-th basis derivatives (rows: samples, columns: all control points)."""
    spans, ders = basis_derivatives(u, kn, DEGREE, order)
    basis = np.zeros((len(u), n + 1))
    rows = np.repeat(np.arange(len(u)), DEGREE + 1)
    cols = (spans[:, None] - DEGREE + np.arange(DEGREE + 1)).ravel()
    np.add.at(basis, (rows, cols), ders[:, order, :].ravel())
    return basis


def _joint_refine(
    free: FreeParameters, pts: NDArray[np.float64], u0: NDArray[np.float64], lmat: NDArray[np.float64], kn: NDArray[np.float64]
) -> FreeParameters:
    """Minimize ``sum |c(u_j) - q_j|^2`` jointly over free points and ``u_j`` (unit weights, fixed knots)."""
    k = lmat.shape[1]
    n = lmat.shape[0] - 1
    npts = len(pts)

    def unpack(x: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        return x[: 2 * k].reshape(2, k).T, np.mod(x[2 * k:], 1.0)

    def residual(x: NDArray[np.float64]) -> NDArray[np.float64]:
        cps, u = unpack(x)
        return ((_design_matrix(u, kn, n) @ lmat @ cps) - pts).T.ravel()

    def jacobian(x: NDArray[np.float64]) -> NDArray[np.float64]:
        cps, u = unpack(x)
        design = _design_matrix(u, kn, n) @ lmat
        tangent = _design_matrix(u, kn, n, order=1) @ lmat @ cps
        jac = np.zeros((2 * npts, 2 * k + npts))
        jac[:npts, :k] = design
        jac[npts:, k: 2 * k] = design
        idx = np.arange(npts)
        jac[idx, 2 * k + idx] = tangent[:, 0]
        jac[npts + idx, 2 * k + idx] = tangent[:, 1]
        return jac

    x0 = np.concatenate([free.control_points.T.ravel(), u0])
    sol = least_squares(residual, x0, jac=jacobian, method="trf", xtol=1e-12, ftol=1e-12, max_nfev=200)
    cps, _ = unpack(sol.x)
    return FreeParameters(cps, free.weights, free.interior_knots)


def fit_centerline(points: Sequence[Sequence[float]] | NDArray[np.float64], n_ctrl: int = 17, iterations: int = 12, refine: bool = True) -> CenterlineFit:
    """Least-squares closed cubic fit through an ordered loop of points.

    Uses unit weights and uniform knots; the seam constraints are linear in
    the free control points for fixed weights, so each pass is an ordinary
    least-squares solve, followed by a parameter-correction sweep.  With
    ``refine`` the result is polished by a joint Gauss-Newton solve over the
    free control points and the sample parameters.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DomainError("points must have shape (N, 2)")
    if np.linalg.norm(pts[0] - pts[-1]) < 1e-9 * max(1.0, np.abs(pts).max()):
        pts = pts[:-1]
    n = n_ctrl - 1
    if n < 7:
        raise DomainError("need at least 8 control points for a closed cubic fit")
    if len(pts) < n_ctrl + 1:
        raise DomainError(f"need at least {n_ctrl + 1} points, got {len(pts)}")
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[-1] <= 1e-9 * max(sv[0], 1e-300):
        raise DomainError("points are collinear; cannot form a closed loop")

    seg = np.linalg.norm(np.diff(np.vstack([pts, pts[:1]]), axis=0), axis=1)
    if seg.sum() <= 0.0:
        raise DomainError("degenerate point loop")
    u = np.concatenate([[0.0], np.cumsum(seg)[:-1]]) / seg.sum()

    k = n - 2
    interior = uniform_interior_knots(n)
    weights = np.ones(k)
    lmat = closure_matrix(n, weights, interior)
    kn = full_knots(interior)

    free = None
    for _ in range(iterations):
        design = _design_matrix(u, kn, n) @ lmat
        sol, *_ = np.linalg.lstsq(design, pts, rcond=None)
        free = FreeParameters(sol, weights, interior)
        curve = apply_closure(free)
        u = _closest_params(curve, pts, u)
    assert free is not None
    if refine:
        free = _joint_refine(free, pts, u, lmat, kn)
    curve = apply_closure(free)
    residual = float(point_curve_distance(curve, pts).max())
    return CenterlineFit(free, residual)
