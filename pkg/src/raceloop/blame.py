"""Attribute tracking errors to the acceleration phase that caused them.

The planned longitudinal acceleration is split into sign zones; an error
observed at sample ``i_min`` is blamed on the stretch between the most
recent sign transition behind ``i_min`` and ``i_min`` itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from raceloop.errors import DomainError, NoTransitionError
from raceloop.timing import TimedTrajectory


@dataclass(frozen=True, eq=False)
class SignZones:
    S: NDArray[np.int8]
    Z: NDArray[np.intp]

    @property
    def n_samples(self) -> int:
        return self.S.shape[0]

    def zone_of(self, idx: ArrayLike) -> NDArray[np.intp]:
        """Zone id of each sample index; zone ``j`` starts right after ``Z[j-1]``.

        Samples after the last crossing wrap into zone 0 (they share a phase
        with the samples before the first crossing).
        """
        idx = np.asarray(idx)
        if self.Z.size == 0:
            return np.zeros(idx.shape, dtype=int)
        zone = np.searchsorted(self.Z, idx, side="left")
        return np.where(zone == self.Z.size, 0, zone)


@dataclass(frozen=True, eq=False)
class BlameRegion:
    i_transition: int
    i_min: int
    indices: NDArray[np.intp]
    positions: NDArray[np.float64]
    e: float

    def __len__(self) -> int:
        return int(self.indices.shape[0])


def sign_zones(a_par: ArrayLike, deadband: float = 0.0, circular: bool = True) -> SignZones:
    """Sign sequence with a deadband and the indices where it changes.

    ``i`` is a crossing when ``S[i+1] != S[i]``; with ``circular`` the pair
    ``(last, first)`` counts as well.
    """
    a = np.asarray(a_par, dtype=float)
    if a.shape[0] < 2:
        raise DomainError("need at least two samples")
    s = np.where(np.abs(a) <= deadband, 0, np.sign(a)).astype(np.int8)
    nxt = np.roll(s, -1)
    changed = s != nxt
    if not circular:
        changed[-1] = False
    return SignZones(s, np.nonzero(changed)[0])


def transition_index(Z: ArrayLike, i_min: int) -> int:
    """Latest crossing strictly before ``i_min``, wrapping to the last crossing of the lap."""
    z = np.asarray(Z, dtype=int)
    if z.size == 0:
        raise NoTransitionError("acceleration sign never changes")
    behind = z[z < i_min]
    return int(behind.max()) if behind.size else int(z[-1])


def circular_range(start: int, stop: int, n: int) -> NDArray[np.intp]:
    """Indices ``start, start+1, ..., stop`` modulo ``n`` (inclusive)."""
    length = (stop - start) % n + 1
    return (start + np.arange(length)) % n


def blame_region(trajectory: TimedTrajectory, i_transition: int, i_min: int, e: float) -> BlameRegion:
    idx = circular_range(i_transition, i_min, trajectory.n_samples)
    return BlameRegion(int(i_transition), int(i_min), idx, trajectory.position[idx], float(e))


def fallback_transition(i_min: int, n_samples: int) -> int:
    """Start index when the lap has no sign transition: ``n/8`` samples behind."""
    return (i_min - n_samples // 8) % n_samples


def closest_point(
    trajectory: TimedTrajectory,
    position: ArrayLike,
    hint: int | None = None,
    window: int | None = None,
) -> tuple[int, float, float]:
    """Nearest point on the sampled reference: ``(i_min, u_min, e_hat)``.

    The nearest sample is refined on the parabola through it and its two
    neighbours.  With ``hint`` only samples within ``window`` of it are scanned.
    """
    q = np.asarray(position, dtype=float)
    pts = trajectory.position
    n = pts.shape[0]
    if hint is not None and window is not None and 2 * window + 1 < n:
        idx = (hint + np.arange(-window, window + 1)) % n
        d2 = ((pts[idx] - q) ** 2).sum(axis=1)
        i = int(idx[int(np.argmin(d2))])
    else:
        d2 = ((pts - q) ** 2).sum(axis=1)
        i = int(np.argmin(d2))
    return (i, *_parabolic_refine(pts, trajectory.u, i, q))


def _parabolic_refine(
    pts: NDArray[np.float64], u: NDArray[np.float64], i: int, q: NDArray[np.float64]
) -> tuple[float, float]:
    """Minimize the distance to the parabola through samples ``i-1, i, i+1``.

    The parabola is ``P(t) = p_i + t b + t^2 c`` with ``t in [-1, 1]`` one
    sample step per unit; returns ``(u_min, e_hat)``.
    """
    n = pts.shape[0]
    prev, nxt = pts[(i - 1) % n], pts[(i + 1) % n]
    a = pts[i] - q
    b = 0.5 * (nxt - prev)
    c = 0.5 * (nxt - 2.0 * pts[i] + prev)
    # d/dt |P(t) - q|^2 / 2 = 2 c.c t^3 + 3 b.c t^2 + (b.b + 2 a.c) t + a.b
    coeffs = [2.0 * (c @ c), 3.0 * (b @ c), b @ b + 2.0 * (a @ c), a @ b]
    cands = [0.0, -1.0, 1.0]
    if any(abs(x) > 0.0 for x in coeffs):
        roots = np.roots(np.trim_zeros(np.asarray(coeffs), "f"))
        cands.extend(float(r.real) for r in roots if abs(r.imag) < 1e-12 and -1.0 <= r.real <= 1.0)
    ts = np.asarray(cands)
    d = np.linalg.norm(a[None, :] + ts[:, None] * b + (ts**2)[:, None] * c, axis=1)
    k = int(np.argmin(d))
    return float((u[i] + ts[k] / n) % 1.0), float(d[k])
