"""Grid of acceleration scale factors learned from tracking feedback.

Each cell carries a scale factor ``M`` (multiplying both nominal
acceleration limits) and a variance ``V``.  Cells are independent scalar
filters: a signed error signal ``e`` moves ``M`` by ``K * e`` with gain
``K = V / (V + R)``, and ``V`` contracts toward its steady state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from raceloop.errors import DomainError, OutOfBoundsError


@dataclass(frozen=True)
class FeedbackConfig:
    """Error modulation settings.

    ``w_plus >= 0`` grows limits where tracking is good; ``w_minus <= 0``
    shrinks them once the error reaches ``e_th``. Both act per meter of error.
    """

    e_th: float = 0.1
    w_plus: float = 2.0
    w_minus: float = -1.0
    blame_radius: float = 0.5

    def __post_init__(self) -> None:
        if not self.e_th > 0:
            raise DomainError("e_th must be positive")
        if self.w_plus < 0 or self.w_minus > 0:
            raise DomainError("require w_plus >= 0 and w_minus <= 0")
        if not self.blame_radius > 0:
            raise DomainError("blame_radius must be positive")


def modulate_error(e_hat: float, cfg: FeedbackConfig) -> float:
    """Signed update signal: ``w_plus * e_hat`` below threshold, ``w_minus * e_hat`` at or above."""
    if e_hat < cfg.e_th:
        return cfg.w_plus * e_hat
    return cfg.w_minus * e_hat


def kalman_update_cell(
    m: ArrayLike,
    v: ArrayLike,
    e: ArrayLike,
    r: float,
    q: float,
    m_min: float = -np.inf,
    m_max: float = np.inf,
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """One scalar filter step per cell; returns ``(M_new, V_new, K)``."""
    m = np.asarray(m, dtype=float)
    v = np.asarray(v, dtype=float)
    k = v / (v + r)
    m_new = np.clip(m + k * np.asarray(e, dtype=float), m_min, m_max)
    v_new = (1.0 - k) * v + q
    return m_new, v_new, k


def steady_state_variance(r: float, q: float) -> float:
    """Fixed point of ``V -> (1 - V/(V+R)) V + Q``."""
    return 0.5 * (q + np.sqrt(q * q + 4.0 * q * r))


@dataclass(frozen=True, eq=False)
class ConstraintMap:
    """Axis-aligned grid; ``M[ix, iy]`` covers ``[x0 + ix*res, x0 + (ix+1)*res)``."""

    x0: float
    y0: float
    resolution: float
    M: NDArray[np.float64]
    V: NDArray[np.float64]
    R: float = 0.5
    Q: float = 0.01
    m_min: float = 0.05
    m_max: float = 2.0
    v_init: float = field(default=1.0)

    def __post_init__(self) -> None:
        m = np.array(self.M, dtype=float)
        v = np.array(self.V, dtype=float)
        if m.ndim != 2 or m.shape != v.shape:
            raise DomainError("M and V must be matching 2-D grids")
        if np.any(~(v > 0)):
            raise DomainError("variances must be strictly positive")
        if not (self.resolution > 0 and self.R > 0 and self.Q >= 0 and self.m_min <= self.m_max):
            raise DomainError("invalid map parameters")
        m.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "M", m)
        object.__setattr__(self, "V", v)

    @classmethod
    def covering(
        cls,
        bounds: tuple[float, float, float, float],
        resolution: float = 0.25,
        m_init: float = 1.0,
        v_init: float = 1.0,
        **params: float,
    ) -> "ConstraintMap":
        """Map whose extent covers ``(xmin, ymin, xmax, ymax)``."""
        xmin, ymin, xmax, ymax = bounds
        nx = max(1, int(np.ceil((xmax - xmin) / resolution - 1e-9)))
        ny = max(1, int(np.ceil((ymax - ymin) / resolution - 1e-9)))
        return cls(
            x0=float(xmin),
            y0=float(ymin),
            resolution=float(resolution),
            M=np.full((nx, ny), float(m_init)),
            V=np.full((nx, ny), float(v_init)),
            v_init=float(v_init),
            **params,
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.M.shape  # type: ignore[return-value]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        nx, ny = self.shape
        return (self.x0, self.y0, self.x0 + nx * self.resolution, self.y0 + ny * self.resolution)

    def cell_centers(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        nx, ny = self.shape
        cx = self.x0 + (np.arange(nx) + 0.5) * self.resolution
        cy = self.y0 + (np.arange(ny) + 0.5) * self.resolution
        return cx, cy

    def contains(self, xy: ArrayLike) -> NDArray[np.bool_]:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        x1, y1, x2, y2 = self.extent
        return (xy[:, 0] >= x1) & (xy[:, 0] <= x2) & (xy[:, 1] >= y1) & (xy[:, 1] <= y2)

    def lookup(self, xy: ArrayLike, u: ArrayLike | None = None) -> NDArray[np.float64]:
        """Bilinear interpolation of ``M`` between cell centers (edge cells held constant)."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        inside = self.contains(xy)
        if not np.all(inside):
            j = int(np.argmin(inside))
            uval = None if u is None else float(np.atleast_1d(u)[j])
            raise OutOfBoundsError(f"position ({xy[j, 0]:.4f}, {xy[j, 1]:.4f}) outside map extent", uval)
        return _bilinear(self.M, (xy[:, 0] - self.x0) / self.resolution - 0.5, (xy[:, 1] - self.y0) / self.resolution - 0.5)

    def scale_at(self, position: ArrayLike, a_par_nominal: float, a_perp_nominal: float) -> tuple[float, float]:
        """Local acceleration limits ``(M a_par_nominal, M a_perp_nominal)``."""
        m = float(self.lookup(position)[0])
        return m * a_par_nominal, m * a_perp_nominal

    def cell_index(self, xy: ArrayLike) -> tuple[NDArray[np.intp], NDArray[np.intp]]:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        nx, ny = self.shape
        ix = np.clip(np.floor((xy[:, 0] - self.x0) / self.resolution).astype(int), 0, nx - 1)
        iy = np.clip(np.floor((xy[:, 1] - self.y0) / self.resolution).astype(int), 0, ny - 1)
        return ix, iy

    def nearest_assignment(self, points: ArrayLike, radius: float) -> tuple[NDArray[np.intp], NDArray[np.intp], NDArray[np.intp]]:
        """Cells whose centers lie within ``radius`` of any point, with the nearest point index.

        Ties go to the lowest point index.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] == 0:
            empty = np.zeros(0, dtype=int)
            return empty, empty, empty
        cx, cy = self.cell_centers()
        lo = pts.min(axis=0) - radius
        hi = pts.max(axis=0) + radius
        ixs = np.nonzero((cx >= lo[0]) & (cx <= hi[0]))[0]
        iys = np.nonzero((cy >= lo[1]) & (cy <= hi[1]))[0]
        if ixs.size == 0 or iys.size == 0:
            empty = np.zeros(0, dtype=int)
            return empty, empty, empty
        gx, gy = np.meshgrid(ixs, iys, indexing="ij")
        gx, gy = gx.ravel(), gy.ravel()
        centers = np.c_[cx[gx], cy[gy]]
        best_d = np.full(len(centers), np.inf)
        best_i = np.zeros(len(centers), dtype=int)
        for s in range(0, pts.shape[0], 256):
            blk = pts[s: s + 256]
            d = np.sqrt(((centers[:, None, :] - blk[None, :, :]) ** 2).sum(-1))
            j = np.argmin(d, axis=1)
            dj = d[np.arange(len(centers)), j]
            better = dj < best_d
            best_d[better] = dj[better]
            best_i[better] = j[better] + s
        hit = best_d <= radius
        return gx[hit], gy[hit], best_i[hit]

    def apply_blame(self, points: ArrayLike, errors: ArrayLike, radius: float) -> "ConstraintMap":
        """Return a new map with one filter update per cell near the blame points.

        Each cell within ``radius`` of some point is updated exactly once with
        the signal of its nearest point; all other cells are untouched.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 2)
        err = np.atleast_1d(np.asarray(errors, dtype=float))
        if err.shape[0] != pts.shape[0]:
            raise DomainError("need one error value per blame point")
        ix, iy, nearest = self.nearest_assignment(pts, radius)
        if ix.size == 0:
            return self
        m = self.M.copy()
        v = self.V.copy()
        m_new, v_new, _ = kalman_update_cell(m[ix, iy], v[ix, iy], err[nearest], self.R, self.Q, self.m_min, self.m_max)
        m[ix, iy] = m_new
        v[ix, iy] = v_new
        return replace(self, M=m, V=v)

    def visited(self) -> NDArray[np.bool_]:
        """Cells that have received at least one update."""
        return self.V != self.v_init

    def dumps(self) -> str:
        """Text grid: header lines then one ``ix iy M V`` row per cell."""
        f = lambda x: format(float(x), ".17g")  # noqa: E731
        nx, ny = self.shape
        x1, y1, x2, y2 = self.extent
        lines = [
            "# raceloop constraint map",
            f"extent {f(x1)} {f(y1)} {f(x2)} {f(y2)}",
            f"resolution {f(self.resolution)}",
            f"X {nx}",
            f"Y {ny}",
            f"R {f(self.R)}",
            f"Q {f(self.Q)}",
            f"m_min {f(self.m_min)}",
            f"m_max {f(self.m_max)}",
            f"v_init {f(self.v_init)}",
            "cells",
        ]
        for ix in range(nx):
            for iy in range(ny):
                lines.append(f"{ix} {iy} {f(self.M[ix, iy])} {f(self.V[ix, iy])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ConstraintMap":
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        head: dict[str, list[str]] = {}
        i = 0
        while lines[i] != "cells":
            key, *vals = lines[i].split()
            head[key] = vals
            i += 1
        nx, ny = int(head["X"][0]), int(head["Y"][0])
        m = np.empty((nx, ny))
        v = np.empty((nx, ny))
        for ln in lines[i + 1:]:
            a, b, mm, vv = ln.split()
            m[int(a), int(b)] = float(mm)
            v[int(a), int(b)] = float(vv)
        return cls(
            x0=float(head["extent"][0]),
            y0=float(head["extent"][1]),
            resolution=float(head["resolution"][0]),
            M=m,
            V=v,
            R=float(head["R"][0]),
            Q=float(head["Q"][0]),
            m_min=float(head["m_min"][0]),
            m_max=float(head["m_max"][0]),
            v_init=float(head.get("v_init", ["1.0"])[0]),
        )


def _bilinear(grid: NDArray[np.float64], fx: NDArray[np.float64], fy: NDArray[np.float64]) -> NDArray[np.float64]:
    nx, ny = grid.shape
    if nx > 1:
        i0 = np.clip(np.floor(fx).astype(int), 0, nx - 2)
        tx = np.clip(fx - i0, 0.0, 1.0)
    else:
        i0 = np.zeros(fx.shape, dtype=int)
        tx = np.zeros(fx.shape)
    if ny > 1:
        j0 = np.clip(np.floor(fy).astype(int), 0, ny - 2)
        ty = np.clip(fy - j0, 0.0, 1.0)
    else:
        j0 = np.zeros(fy.shape, dtype=int)
        ty = np.zeros(fy.shape)
    i1 = np.minimum(i0 + 1, nx - 1)
    j1 = np.minimum(j0 + 1, ny - 1)
    return (
        grid[i0, j0] * (1 - tx) * (1 - ty)
        + grid[i1, j0] * tx * (1 - ty)
        + grid[i0, j1] * (1 - tx) * ty
        + grid[i1, j1] * tx * ty
    )
