"""Planar geometry used by augmentation and scoring.

Polygons are ``(n, 2)`` float arrays of ``(x, y)`` vertices in continuous
pixel coordinates: pixel ``(i, j)`` covers ``[i, i+1) x [j, j+1)`` and its
center sits at ``(i + 0.5, j + 0.5)``. Flat COCO lists are accepted anywhere
a polygon is expected.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DET_EPS = 1e-12
W_EPS = 1e-9


class GeometryError(ValueError):
    pass


class DegeneratePolygonError(GeometryError):
    pass


class SingularHomographyError(GeometryError):
    pass


class PerspectiveSingularityError(GeometryError):
    pass


def as_vertices(polygon) -> np.ndarray:
    """Coerce a flat ``[x1, y1, ...]`` list or an ``(n, 2)`` array to ``(n, 2)`` float64."""
    arr = np.asarray(polygon, dtype=np.float64)
    if arr.ndim == 1:
        if arr.size % 2:
            raise DegeneratePolygonError(f"flat polygon has odd length {arr.size}")
        arr = arr.reshape(-1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DegeneratePolygonError(f"polygon must be (n, 2), got shape {arr.shape}")
    return arr


def flatten(vertices: np.ndarray) -> tuple[float, ...]:
    return tuple(float(v) for v in np.asarray(vertices, dtype=np.float64).reshape(-1))


def polygon_area(polygon) -> float:
    v = as_vertices(polygon)
    if len(v) < 3:
        raise DegeneratePolygonError(f"polygon needs >= 3 vertices, got {len(v)}")
    x, y = v[:, 0], v[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)) / 2.0)


# --------------------------------------------------------------------------
# homographies


@dataclass(frozen=True, eq=False)
class Homography:
    """Invertible 3x3 projective transform acting on column vectors ``(x, y, 1)``."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64, copy=True)
        if m.shape != (3, 3):
            raise SingularHomographyError(f"homography must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise SingularHomographyError("homography has non-finite entries")
        if abs(m[2, 2]) > DET_EPS and m[2, 2] != 1.0:
            m = m / m[2, 2]
        det = np.linalg.det(m)
        if not abs(det) > DET_EPS:
            raise SingularHomographyError(f"homography is not invertible (det={det:.3e})")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    def __eq__(self, other):
        if not isinstance(other, Homography):
            return NotImplemented
        return bool(np.array_equal(self.m, other.m))

    def __hash__(self):
        return hash(self.m.tobytes())

    def __repr__(self):
        rows = ", ".join("[" + ", ".join(f"{v:.6g}" for v in row) + "]" for row in self.m)
        return f"Homography([{rows}])"

    @property
    def is_affine(self) -> bool:
        return self.m[2, 0] == 0.0 and self.m[2, 1] == 0.0

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def apply_points(self, points) -> np.ndarray:
        return apply_homography(points, self)

    def to_list(self) -> list[list[float]]:
        return [[float(v) for v in row] for row in self.m]

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]))

    @classmethod
    def scaling(cls, sx: float, sy: float | None = None) -> "Homography":
        sy = sx if sy is None else sy
        return cls(np.diag([sx, sy, 1.0]))

    @classmethod
    def rotation(cls, degrees: float) -> "Homography":
        t = np.deg2rad(degrees)
        c, s = np.cos(t), np.sin(t)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))


def compose(h1: Homography, h2: Homography) -> Homography:
    """Transform equivalent to applying ``h1`` first and then ``h2``."""
    return Homography(h2.m @ h1.m)


def compose_all(hs: Iterable[Homography]) -> Homography:
    out = Homography.identity()
    for h in hs:
        out = compose(out, h)
    return out


def apply_homography(polygon, h: Homography) -> np.ndarray:
    v = as_vertices(polygon)
    m = h.m
    x, y = v[:, 0], v[:, 1]
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if np.any(np.abs(w) <= W_EPS):
        raise PerspectiveSingularityError("a vertex maps to the plane at infinity")
    xo = (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w
    yo = (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w
    return np.stack([xo, yo], axis=1)


# --------------------------------------------------------------------------
# clipping


def _clip_edge(verts: list, inside, intersect) -> list:
    if not verts:
        return []
    out = []
    prev = verts[-1]
    prev_in = inside(prev)
    for cur in verts:
        cur_in = inside(cur)
        if cur_in:
            if not prev_in:
                out.append(intersect(prev, cur))
            out.append(cur)
        elif prev_in:
            out.append(intersect(prev, cur))
        prev, prev_in = cur, cur_in
    return out


def _x_cut(x0):
    def f(p, q):
        t = (x0 - p[0]) / (q[0] - p[0])
        return (x0, p[1] + t * (q[1] - p[1]))

    return f


def _y_cut(y0):
    def f(p, q):
        t = (y0 - p[1]) / (q[1] - p[1])
        return (p[0] + t * (q[0] - p[0]), y0)

    return f


def clip_polygon(polygon, width: float, height: float) -> list[np.ndarray]:
    """Sutherland-Hodgman clip against the canvas ``[0, width] x [0, height]``.

    Returns a list holding the clipped polygon, or an empty list when nothing
    with positive area survives. Concave inputs may come back with zero-width
    bridges along the canvas border; these do not change area or even-odd fill.
    """
    v = as_vertices(polygon)
    verts = [(float(x), float(y)) for x, y in v]
    verts = _clip_edge(verts, lambda p: p[0] >= 0.0, _x_cut(0.0))
    verts = _clip_edge(verts, lambda p: p[0] <= width, _x_cut(float(width)))
    verts = _clip_edge(verts, lambda p: p[1] >= 0.0, _y_cut(0.0))
    verts = _clip_edge(verts, lambda p: p[1] <= height, _y_cut(float(height)))

    dedup = []
    for p in verts:
        if not dedup or p != dedup[-1]:
            dedup.append(p)
    if len(dedup) > 1 and dedup[0] == dedup[-1]:
        dedup.pop()
    if len(dedup) < 3:
        return []
    out = np.array(dedup, dtype=np.float64)
    if polygon_area(out) == 0.0 and (len(v) < 3 or polygon_area(v) > 0.0):
        # only a boundary sliver of a real polygon touched the canvas
        return []
    return [out]


# --------------------------------------------------------------------------
# masks


@dataclass(frozen=True, eq=False)
class Mask:
    """Boolean pixel grid, stored as a ``(height, width)`` array."""

    width: int
    height: int
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.size != self.width * self.height:
            raise GeometryError(
                f"mask has {bits.size} bits, expected {self.width}x{self.height}"
            )
        bits = bits.reshape(self.height, self.width)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and bool(np.array_equal(self.bits, other.bits))
        )

    def __hash__(self):
        return hash((self.width, self.height, self.bits.tobytes()))

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    @classmethod
    def empty(cls, width: int, height: int) -> "Mask":
        return cls(width, height, np.zeros((height, width), dtype=bool))


def _fill_even_odd(v: np.ndarray, width: int, height: int) -> np.ndarray:
    # scanline: sorted crossings per row, pixel inside iff an odd number of
    # crossings lie at or left of its center
    out = np.zeros((height, width), dtype=bool)
    if len(v) < 3:
        return out
    xi, yi = v[:, 0], v[:, 1]
    xj, yj = np.roll(xi, 1), np.roll(yi, 1)
    ymin = max(0, int(np.floor(min(yi.min(), height) - 0.5)))
    ymax = min(height - 1, int(np.ceil(max(yi.max(), 0) - 0.5)))
    px = np.arange(width, dtype=np.float64) + 0.5
    for row in range(ymin, ymax + 1):
        py = row + 0.5
        crossing = (yi > py) != (yj > py)
        if not crossing.any():
            continue
        a_x, a_y = xi[crossing], yi[crossing]
        b_x, b_y = xj[crossing], yj[crossing]
        xs = np.sort((b_x - a_x) * (py - a_y) / (b_y - a_y) + a_x)
        # number of crossings strictly right of the center must be odd;
        # with an even crossing total that equals an odd count at-or-left
        left = np.searchsorted(xs, px, side="right")
        out[row] = (left % 2) == 1
    return out


def rasterize(polygons: Sequence, width: int, height: int) -> Mask:
    """Fill the union of ``polygons``, each under the even-odd rule, sampling pixel centers."""
    if width <= 0 or height <= 0:
        raise GeometryError(f"canvas must be non-empty, got {width}x{height}")
    bits = np.zeros((height, width), dtype=bool)
    for poly in polygons:
        v = as_vertices(poly)
        if len(v) < 3:
            raise DegeneratePolygonError(f"polygon needs >= 3 vertices, got {len(v)}")
        bits |= _fill_even_odd(v, width, height)
    return Mask(width, height, bits)


def overlap_counts(pred: Mask, gt: Mask) -> tuple[int, int, int]:
    """Return ``(tp, fp, fn)`` pixel counts."""
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise GeometryError(
            f"mask size mismatch: {pred.width}x{pred.height} vs {gt.width}x{gt.height}"
        )
    p, g = pred.bits, gt.bits
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return tp, fp, fn
