"""Track geometry: closed centerline with left/right half-widths."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

from raceloop.errors import ConfigError


@dataclass(frozen=True, eq=False)
class TrackModel:
    """Closed centerline (first point not repeated) and per-point half-widths."""

    centerline: NDArray[np.float64]
    w_left: NDArray[np.float64]
    w_right: NDArray[np.float64]
    _tree: cKDTree = field(init=False, repr=False)

    def __post_init__(self) -> None:
        c = np.asarray(self.centerline, dtype=float)
        wl = np.asarray(self.w_left, dtype=float)
        wr = np.asarray(self.w_right, dtype=float)
        if c.ndim != 2 or c.shape[1] != 2 or c.shape[0] < 3:
            raise ConfigError("centerline must be an (N>=3, 2) array")
        if np.linalg.norm(c[0] - c[-1]) < 1e-9:
            c, wl, wr = c[:-1], wl[:-1], wr[:-1]
        if wl.shape != (c.shape[0],) or wr.shape != (c.shape[0],):
            raise ConfigError("need one width pair per centerline point")
        if np.any(wl <= 0) or np.any(wr <= 0):
            raise ConfigError("track widths must be positive")
        object.__setattr__(self, "centerline", c)
        object.__setattr__(self, "w_left", wl)
        object.__setattr__(self, "w_right", wr)
        object.__setattr__(self, "_tree", cKDTree(c))

    @property
    def arc_length(self) -> NDArray[np.float64]:
        seg = np.linalg.norm(np.diff(np.vstack([self.centerline, self.centerline[:1]]), axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self) -> float:
        return float(self.arc_length[-1])

    def bounds(self, margin: float = 0.0) -> tuple[float, float, float, float]:
        wmax = float(max(self.w_left.max(), self.w_right.max()))
        lo = self.centerline.min(axis=0) - wmax - margin
        hi = self.centerline.max(axis=0) + wmax + margin
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def boundaries(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Left and right boundary polylines."""
        c = self.centerline
        t = np.roll(c, -1, axis=0) - np.roll(c, 1, axis=0)
        t /= np.linalg.norm(t, axis=1)[:, None]
        nrm = np.c_[-t[:, 1], t[:, 0]]
        return c + nrm * self.w_left[:, None], c - nrm * self.w_right[:, None]

    def lateral_offset(self, pts: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
        """Signed distance to the centerline (left positive) and local half-widths.

        Returns ``(offset, w_left, w_right)`` with widths interpolated at the
        projection onto the nearest centerline segment.
        """
        q = np.atleast_2d(np.asarray(pts, dtype=float))
        c = self.centerline
        n = c.shape[0]
        _, j = self._tree.query(q)
        best_d = np.full(len(q), np.inf)
        best_off = np.zeros(len(q))
        best_wl = np.zeros(len(q))
        best_wr = np.zeros(len(q))
        for a_idx, b_idx in (((j - 1) % n, j), (j, (j + 1) % n)):
            a, b = c[a_idx], c[b_idx]
            seg = b - a
            ll = np.einsum("ij,ij->i", seg, seg)
            t = np.clip(np.einsum("ij,ij->i", q - a, seg) / ll, 0.0, 1.0)
            proj = a + seg * t[:, None]
            diff = q - proj
            d = np.hypot(diff[:, 0], diff[:, 1])
            cross = seg[:, 0] * diff[:, 1] - seg[:, 1] * diff[:, 0]
            off = np.where(cross >= 0, d, -d)
            wl = self.w_left[a_idx] * (1 - t) + self.w_left[b_idx] * t
            wr = self.w_right[a_idx] * (1 - t) + self.w_right[b_idx] * t
            better = d < best_d
            best_d = np.where(better, d, best_d)
            best_off = np.where(better, off, best_off)
            best_wl = np.where(better, wl, best_wl)
            best_wr = np.where(better, wr, best_wr)
        return best_off, best_wl, best_wr

    def boundary_excess(self, pts: ArrayLike) -> NDArray[np.float64]:
        """Distance beyond the local boundary (negative inside the track)."""
        off, wl, wr = self.lateral_offset(pts)
        return np.where(off >= 0, off - wl, -off - wr)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "w_left", "w_right"])
        for (x, y), wl, wr in zip(self.centerline, self.w_left, self.w_right):
            w.writerow([format(v, ".17g") for v in (x, y, wl, wr)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrackModel":
        rows = []
        for r in csv.reader(io.StringIO(text)):
            if not r or r[0].strip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in r[:4]])
            except ValueError:
                continue  # header
        if len(rows) < 3:
            raise ConfigError("track file needs at least three rows of x, y, w_left, w_right")
        a = np.array(rows)
        return cls(a[:, :2], a[:, 2], a[:, 3])

    @classmethod
    def load(cls, path: str | Path) -> "TrackModel":
        return cls.from_csv(Path(path).read_text())


def oval_track(straight: float = 8.0, radius: float = 2.5, half_width: float = 0.6, spacing: float = 0.05) -> TrackModel:
    """Stadium: two straights joined by semicircles, counter-clockwise, start mid-straight."""
    n_str = max(2, int(round(straight / spacing)))
    n_arc = max(8, int(round(np.pi * radius / spacing)))
    pts = []
    # bottom straight, left to right, starting at its midpoint
    xs = np.linspace(-straight / 2, straight / 2, n_str, endpoint=False)
    bottom = np.c_[xs, np.full(n_str, -radius)]
    phi = -np.pi / 2 + np.pi * np.arange(n_arc) / n_arc
    right = np.c_[straight / 2 + radius * np.cos(phi), radius * np.sin(phi)]
    top = np.c_[-xs, np.full(n_str, radius)]
    left = np.c_[-straight / 2 - radius * np.cos(phi), -radius * np.sin(phi)]
    pts = np.vstack([bottom, right, top, left])
    k = n_str // 2
    pts = np.roll(pts, -k, axis=0)
    w = np.full(len(pts), half_width)
    return TrackModel(pts, w, w.copy())


def s_curve_track(r0: float = 4.0, pinch: float = 0.3, half_width: float = 0.6, n_points: int = 600) -> TrackModel:
    """Peanut-shaped loop ``r = r0 (1 + pinch cos 2 phi)``; the waist has S-bends for ``pinch > 0.2``."""
    phi = 2 * np.pi * np.arange(n_points) / n_points - np.pi / 2
    r = r0 * (1 + pinch * np.cos(2 * phi))
    pts = np.c_[r * np.cos(phi), r * np.sin(phi)]
    w = np.full(n_points, half_width)
    return TrackModel(pts, w, w.copy())


SYNTHETIC_TRACKS = {"oval": oval_track, "s_curve": s_curve_track}


def resolve_track(spec: str | Path, base_dir: Path | None = None) -> TrackModel:
    """Track from a built-in name (``"oval"``, ``"s_curve"``) or a CSV path."""
    name = str(spec)
    if name in SYNTHETIC_TRACKS:
        return SYNTHETIC_TRACKS[name]()
    path = Path(name)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    if not path.exists():
        raise ConfigError(f"track file not found: {path}")
    return TrackModel.load(path)
