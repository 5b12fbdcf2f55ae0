"""Unit cell, rod cross sections, region membership and boundary quadrature."""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import shapely.geometry

from .errors import InvalidShape, OutOfCellError, OverlapError

CELL_DIAMETER = math.sqrt(2.0)
BOUNDARY_TOL = 1e-9 * CELL_DIAMETER


class Region(enum.IntEnum):
    H = 0
    P = 1
    R = 2
    BOUNDARY = 3


@dataclass(frozen=True)
class ShapeSpec:
    """A rod cross section: a disk or a simple polygon.

    Attributes:
        kind: "disk" or "polygon".
        center: Disk center, or the vertex centroid for polygons.
        radius: Disk radius (None for polygons).
        vertices: Counterclockwise vertex array of shape (n, 2) (None for disks).
    """

    kind: str
    center: tuple
    radius: float | None = None
    vertices: np.ndarray | None = field(default=None, compare=False)

    @staticmethod
    def disk(center, radius) -> "ShapeSpec":
        cx, cy = (float(c) for c in center)
        radius = float(radius)
        if not (radius > 0.0 and math.isfinite(radius)):
            raise InvalidShape(f"disk radius must be positive, got {radius}")
        return ShapeSpec("disk", (cx, cy), radius, None)

    @staticmethod
    def polygon(vertices) -> "ShapeSpec":
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise InvalidShape("polygon needs at least three 2D vertices")
        poly = shapely.geometry.Polygon(v)
        if not poly.is_valid or not poly.exterior.is_simple or poly.area <= 0.0:
            raise InvalidShape("polygon must be simple with positive area")
        if _signed_area(v) < 0.0:
            v = v[::-1].copy()
        v.setflags(write=False)
        c = v.mean(axis=0)
        return ShapeSpec("polygon", (float(c[0]), float(c[1])), None, v)

    @property
    def area(self) -> float:
        if self.kind == "disk":
            return math.pi * self.radius**2
        return _signed_area(self.vertices)

    @property
    def perimeter(self) -> float:
        if self.kind == "disk":
            return 2.0 * math.pi * self.radius
        d = np.roll(self.vertices, -1, axis=0) - self.vertices
        return float(np.hypot(d[:, 0], d[:, 1]).sum())

    def signed_distance(self, pts) -> np.ndarray:
        """Signed distance to the boundary, negative inside."""
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "disk":
            return np.hypot(p[:, 0] - self.center[0], p[:, 1] - self.center[1]) - self.radius
        dist = _polyline_distance(self.vertices, p)
        inside = _points_in_polygon(self.vertices, p)
        return np.where(inside, -dist, dist)

    def to_shapely(self):
        if self.kind == "disk":
            return shapely.geometry.Point(self.center).buffer(self.radius, quad_segs=256)
        return shapely.geometry.Polygon(self.vertices)

    def key(self) -> str:
        if self.kind == "disk":
            return f"disk:{self.center[0]!r}:{self.center[1]!r}:{self.radius!r}"
        return "polygon:" + ":".join(repr(float(x)) for x in self.vertices.ravel())


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _polyline_distance(v: np.ndarray, p: np.ndarray) -> np.ndarray:
    a = v
    b = np.roll(v, -1, axis=0)
    ab = b - a
    ap = p[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("pek,ek->pe", ap, ab) / np.einsum("ek,ek->e", ab, ab), 0.0, 1.0)
    d = ap - t[..., None] * ab[None]
    return np.sqrt(np.min(np.einsum("pek,pek->pe", d, d), axis=1))


def _points_in_polygon(v: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Even-odd crossing test."""
    x, y = p[:, 0:1], p[:, 1:2]
    x0, y0 = v[:, 0][None], v[:, 1][None]
    x1, y1 = np.roll(v[:, 0], -1)[None], np.roll(v[:, 1], -1)[None]
    crosses = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    return (np.count_nonzero(crosses & (x < xint), axis=1) % 2) == 1


def _distance_to_cell_boundary(shape: ShapeSpec) -> float:
    if shape.kind == "disk":
        cx, cy = shape.center
        return min(cx, 1.0 - cx, cy, 1.0 - cy) - shape.radius
    v = shape.vertices
    return float(np.min(np.concatenate([v[:, 0], 1.0 - v[:, 0], v[:, 1], 1.0 - v[:, 1]])))


def shape_separation(a: ShapeSpec, b: ShapeSpec) -> float:
    """Distance between the closures of two shapes (0 when they intersect)."""
    if a.kind == "disk" and b.kind == "disk":
        d = math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1])
        return max(0.0, d - a.radius - b.radius)
    if a.kind == "disk" or b.kind == "disk":
        disk, poly = (a, b) if a.kind == "disk" else (b, a)
        c = np.array([disk.center])
        sd = float(poly.signed_distance(c)[0])
        return max(0.0, sd - disk.radius)
    return float(a.to_shapely().distance(b.to_shapely()))


@dataclass(frozen=True)
class CellGeometry:
    """Unit cell Y = [0,1]^2 with a plasmonic rod P and a dielectric rod R.

    Either shape may be None only through :func:`empty_cell`, which exists
    as a hook for tests of the periodic machinery.
    """

    shape_P: ShapeSpec | None
    shape_R: ShapeSpec | None
    theta_H: float
    theta_P: float
    theta_R: float
    separation: float

    def shapes(self):
        """(region, shape) pairs for the rods actually present."""
        out = []
        if self.shape_P is not None:
            out.append((Region.P, self.shape_P))
        if self.shape_R is not None:
            out.append((Region.R, self.shape_R))
        return out

    def key(self) -> str:
        parts = [s.key() if s is not None else "none" for s in (self.shape_P, self.shape_R)]
        return hashlib.sha256("|".join(parts).encode()).hexdigest()


def build_cell(spec_P: ShapeSpec, spec_R: ShapeSpec) -> CellGeometry:
    """Validate the two rods and compute the area fractions."""
    for name, s in (("P", spec_P), ("R", spec_R)):
        if not isinstance(s, ShapeSpec):
            raise InvalidShape(f"shape {name} must be a ShapeSpec")
        if _distance_to_cell_boundary(s) <= 0.0:
            raise OutOfCellError(f"shape {name} touches or crosses the cell boundary")
    sep = shape_separation(spec_P, spec_R)
    if sep <= 0.0:
        raise OverlapError("closures of P and R intersect")
    tP, tR = spec_P.area, spec_R.area
    return CellGeometry(spec_P, spec_R, 1.0 - tP - tR, tP, tR, sep)


def empty_cell() -> CellGeometry:
    """Cell with no rods (test hook)."""
    return CellGeometry(None, None, 1.0, 0.0, 0.0, math.inf)


def single_rod_cell(shape: ShapeSpec, region: Region) -> CellGeometry:
    """Cell with only one rod (test hook)."""
    if _distance_to_cell_boundary(shape) <= 0.0:
        raise OutOfCellError("shape touches or crosses the cell boundary")
    if region == Region.P:
        return CellGeometry(shape, None, 1.0 - shape.area, shape.area, 0.0, math.inf)
    return CellGeometry(None, shape, 1.0 - shape.area, 0.0, shape.area, math.inf)


def classify_points(cell: CellGeometry, pts, tol: float = BOUNDARY_TOL) -> np.ndarray:
    """Vectorized region classification returning Region codes."""
    p = np.atleast_2d(np.asarray(pts, dtype=float))
    out = np.full(len(p), int(Region.H), dtype=np.int64)
    for region, shape in cell.shapes():
        sd = shape.signed_distance(p)
        out[sd < -tol] = int(region)
        out[np.abs(sd) <= tol] = int(Region.BOUNDARY)
    return out


def region_of(cell: CellGeometry, pt) -> Region:
    """Region containing ``pt``; points within the tolerance band are BOUNDARY."""
    return Region(int(classify_points(cell, [pt])[0]))


@dataclass(frozen=True)
class BoundaryQuadrature:
    nodes: np.ndarray
    weights: np.ndarray
    normals: np.ndarray

    @property
    def perimeter(self) -> float:
        return float(self.weights.sum())


def boundary_quadrature(shape: ShapeSpec, n: int) -> BoundaryQuadrature:
    """Quadrature on the boundary of ``shape``.

    Disks use the n-point trapezoid rule. Polygons use n Gauss-Legendre
    nodes per edge.
    """
    if shape.kind == "disk":
        if n < 8:
            raise ValueError("disk quadrature needs n >= 8")
        t = 2.0 * np.pi * np.arange(n) / n
        normals = np.column_stack([np.cos(t), np.sin(t)])
        nodes = np.asarray(shape.center) + shape.radius * normals
        weights = np.full(n, 2.0 * np.pi * shape.radius / n)
        return BoundaryQuadrature(nodes, weights, normals)
    v = shape.vertices
    if n * len(v) < 8:
        raise ValueError("polygon quadrature needs at least 8 nodes in total")
    g, gw = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (g + 1.0)
    nodes, weights, normals = [], [], []
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        d = b - a
        length = math.hypot(*d)
        nodes.append(a + s[:, None] * d)
        weights.append(0.5 * length * gw)
        normals.append(np.tile([d[1] / length, -d[0] / length], (n, 1)))
    return BoundaryQuadrature(np.vstack(nodes), np.concatenate(weights), np.vstack(normals))
