"""Periodic boundary-conforming triangulation of the unit cell.

Disks are meshed by a patch of concentric rings (ring k carries 6k nodes)
that extends slightly past the rod boundary. The rest of the cell is a
Delaunay triangulation of a uniform background grid, the outer ring of each
patch and the vertices of polygonal rods. Grid points too close to a patch
or polygon edge are dropped so that those edges survive in the Delaunay
triangulation.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from .errors import MeshFailure
from .geometry import CellGeometry, Region, ShapeSpec

MIN_ANGLE_DEG = 15.0
CACHE_MAGIC = b"MBMESH01"
CACHE_VERSION = 1


@dataclass(frozen=True)
class Mesh:
    """Periodic triangulation of the unit cell.

    Attributes:
        vertices: (nv, 2) coordinates. Vertices on x=1 or y=1 duplicate
            vertices on the opposite edge.
        triangles: (nt, 3) counterclockwise vertex indices.
        tags: (nt,) Region code of each triangle.
        dof: (nv,) index of the independent degree of freedom of each vertex.
        ndof: number of independent vertices.
        boundary_edges: region code -> (ne, 2) vertex index pairs along the
            rod boundary, counterclockwise.
        h: target element size.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    tags: np.ndarray
    dof: np.ndarray
    ndof: int
    boundary_edges: dict = field(compare=False)
    h: float

    @property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def region_area(self, region: Region) -> float:
        return float(self.areas[self.tags == int(region)].sum())

    def dof_coordinates(self) -> np.ndarray:
        """Coordinates of one representative vertex per degree of freedom."""
        # first vertex carrying each dof
        _, rep = np.unique(self.dof, return_index=True)
        return self.vertices[rep]

    def region_dofs(self, region: Region) -> np.ndarray:
        """Sorted dofs touched by triangles of ``region``."""
        return np.unique(self.dof[self.triangles[self.tags == int(region)]])

    def boundary_dofs(self, region: Region) -> np.ndarray:
        e = self.boundary_edges.get(int(region))
        if e is None or len(e) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.unique(self.dof[e])

    def interior_dofs(self, region: Region) -> np.ndarray:
        """Dofs of ``region`` that are not on its boundary."""
        return np.setdiff1d(self.region_dofs(region), self.boundary_dofs(region))

    def min_angle_deg(self) -> float:
        return float(np.degrees(_triangle_angles(self.vertices, self.triangles).min()))


def _triangle_angles(pts, tris):
    p = pts[tris]
    out = np.empty(tris.shape)
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cosang = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        out[:, k] = np.arccos(np.clip(cosang, -1.0, 1.0))
    return out


def _orient(pts, tris):
    p = pts[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    neg = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tris = tris.copy()
    tris[neg, 1], tris[neg, 2] = tris[neg, 2].copy(), tris[neg, 1].copy()
    return tris


def _ring_patch(center, n_rings, dr, n_inner):
    """Concentric ring patch; ring k has 6k nodes at radius k*dr.

    Returns the node coordinates, triangles, a per-triangle flag telling
    whether the triangle lies inside ring ``n_inner``, and the index ranges
    of each ring.
    """
    counts = [1] + [6 * k for k in range(1, n_rings + 1)]
    pts = [np.asarray(center, dtype=float)[None]]
    starts = [0]
    count = 1
    for k in range(1, n_rings + 1):
        t = 2.0 * np.pi * np.arange(counts[k]) / counts[k]
        pts.append(np.column_stack([center[0] + k * dr * np.cos(t), center[1] + k * dr * np.sin(t)]))
        starts.append(count)
        count += counts[k]
    starts.append(count)

    def layer(s_small, n_small, s_big, n_big, m):
        # m: sector size of the smaller ring (n_small = 6m, n_big = 6(m+1))
        out = []
        for s in range(6):
            inner = [s_small + ((s * m + j) % n_small if m > 0 else 0) for j in range(m + 1)]
            outer = [s_big + (s * (m + 1) + j) % n_big for j in range(m + 2)]
            for j in range(m + 1):
                out.append((outer[j], outer[j + 1], inner[j]))
            for j in range(m):
                out.append((inner[j], outer[j + 1], inner[j + 1]))
        return out

    tris, inside = [], []
    for k in range(1, n_rings + 1):
        new = layer(starts[k - 1], counts[k - 1], starts[k], counts[k], k - 1)
        tris.extend(new)
        inside.extend([k <= n_inner] * len(new))
    return np.vstack(pts), np.asarray(tris, dtype=np.int64), np.asarray(inside), starts


def _available_room(cell: CellGeometry, shape: ShapeSpec) -> float:
    if shape.kind == "disk":
        cx, cy = shape.center
        room = min(cx, 1.0 - cx, cy, 1.0 - cy) - shape.radius
    else:
        v = shape.vertices
        room = float(np.min(np.concatenate([v[:, 0], 1 - v[:, 0], v[:, 1], 1 - v[:, 1]])))
    if len(cell.shapes()) == 2:
        room = min(room, 0.5 * cell.separation)
    return room


def _polygon_boundary_nodes(v: np.ndarray, h: float):
    nodes = []
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        m = max(1, int(math.ceil(math.hypot(*(b - a)) / h - 1e-12)))
        s = np.arange(m) / m
        nodes.append(a + s[:, None] * (b - a))
    return np.vstack(nodes)


def _edge_set(tris):
    e = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e.sort(axis=1)
    return set(map(tuple, e))


def generate_mesh(cell: CellGeometry, h: float, smooth_iterations: int = 4,
                  rod_spacing: float = 0.8) -> Mesh:
    """Build a periodic triangulation of the cell with target size ``h``.

    Args:
        cell: the cell geometry.
        h: target element size; the background grid has spacing 1/ceil(1/h).
        smooth_iterations: passes of angle-improving Laplacian smoothing.
        rod_spacing: ring spacing inside disks as a fraction of h.

    Raises:
        ValueError: if h is outside (0, 0.25].
        MeshFailure: if the minimum angle falls below 15 degrees or the rod
            boundaries are not reproduced by the triangulation.
    """
    if not (0.0 < h <= 0.25):
        raise ValueError(f"mesh size h must lie in (0, 0.25], got {h}")
    n = int(math.ceil(1.0 / h - 1e-12))
    hg = 1.0 / n
    gi, gj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    grid = np.column_stack([gi.ravel() / n, gj.ravel() / n])
    on_cell_boundary = (gi.ravel() == 0) | (gi.ravel() == n) | (gj.ravel() == 0) | (gj.ravel() == n)

    keep = np.ones(len(grid), dtype=bool)
    patches = []
    polygons = []
    for region, shape in cell.shapes():
        room = _available_room(cell, shape)
        if shape.kind == "disk":
            n_r = max(3, int(math.ceil(shape.radius / (rod_spacing * h) - 1e-12)))
            dr = shape.radius / n_r
            gap = 0.55 * hg
            extra = int(np.clip(math.floor((room - gap - 0.5 * hg) / dr), 0, 2))
            pts, tris, inside, starts = _ring_patch(shape.center, n_r + extra, dr, n_r)
            r_out = (n_r + extra) * dr
            d = np.hypot(grid[:, 0] - shape.center[0], grid[:, 1] - shape.center[1])
            keep &= d > r_out + gap
            patches.append(dict(region=region, pts=pts, tris=tris, inside=inside,
                                starts=starts, n_r=n_r, n_out=n_r + extra))
        else:
            bnodes = _polygon_boundary_nodes(shape.vertices, h)
            dist = np.abs(shape.signed_distance(grid))
            keep &= dist > 0.5 * hg
            polygons.append(dict(region=region, shape=shape, nodes=bnodes))
    if np.any(~keep & on_cell_boundary):
        raise MeshFailure("rod too close to the cell boundary for the mesh size")

    # Global point list: grid, patch nodes, polygon nodes.
    all_pts = [grid[keep]]
    offset = int(keep.sum())
    grid_free = (~on_cell_boundary[keep]).copy()
    patch_tris, patch_tags = [], []
    outer_ring_idx = []
    boundary_edges = {}
    for p in patches:
        idx = np.arange(len(p["pts"])) + offset
        all_pts.append(p["pts"])
        patch_tris.append(idx[p["tris"]])
        patch_tags.append(np.where(p["inside"], int(p["region"]), int(Region.H)))
        s = p["starts"]
        ring = idx[s[p["n_out"]]:s[p["n_out"] + 1]]
        outer_ring_idx.append(ring)
        bring = idx[s[p["n_r"]]:s[p["n_r"] + 1]]
        boundary_edges[int(p["region"])] = np.column_stack([bring, np.roll(bring, -1)])
        offset += len(p["pts"])
    poly_idx = []
    for p in polygons:
        idx = np.arange(len(p["nodes"])) + offset
        all_pts.append(p["nodes"])
        poly_idx.append(idx)
        offset += len(p["nodes"])
    pts = np.vstack(all_pts)
    n_grid = int(keep.sum())
    patch_node_count = sum(len(p["pts"]) for p in patches)

    # Delaunay over everything outside the patches; re-run with midpoints
    # inserted if a polygon edge went missing.
    for _attempt in range(8):
        dl_nodes = np.concatenate([np.arange(n_grid)] + outer_ring_idx + poly_idx).astype(np.int64)
        tri = Delaunay(pts[dl_nodes])
        dtris = dl_nodes[tri.simplices]
        ring_owner = np.full(len(pts), -1)
        for k, ring in enumerate(outer_ring_idx):
            ring_owner[ring] = k
        own = ring_owner[dtris]
        in_patch = (own[:, 0] >= 0) & (own[:, 0] == own[:, 1]) & (own[:, 1] == own[:, 2])
        dtris = dtris[~in_patch]
        edges = _edge_set(dtris)
        missing = []
        for k, ring in enumerate(outer_ring_idx):
            for a, b in zip(ring, np.roll(ring, -1)):
                if (min(a, b), max(a, b)) not in edges:
                    raise MeshFailure("patch boundary edge lost in background triangulation")
        for k, idx in enumerate(poly_idx):
            for j, (a, b) in enumerate(zip(idx, np.roll(idx, -1))):
                if (min(a, b), max(a, b)) not in edges:
                    missing.append((k, j))
        if not missing:
            break
        for k in sorted({k for k, _ in missing}):
            idx = poly_idx[k]
            node_pts = pts[idx]
            new_nodes = []
            bad = {j for kk, j in missing if kk == k}
            for j in range(len(idx)):
                new_nodes.append(node_pts[j])
                if j in bad:
                    new_nodes.append(0.5 * (node_pts[j] + node_pts[(j + 1) % len(idx)]))
            polygons[k]["nodes"] = np.array(new_nodes)
        # rebuild polygon node block at the end of the point list
        base = n_grid + patch_node_count
        pts = pts[:base]
        poly_idx = []
        off = base
        blocks = [pts]
        for p in polygons:
            blocks.append(p["nodes"])
            poly_idx.append(np.arange(len(p["nodes"])) + off)
            off += len(p["nodes"])
        pts = np.vstack(blocks)
    else:
        raise MeshFailure("polygon boundary could not be recovered")

    dtris = _orient(pts, dtris)
    p = pts[dtris]
    dareas = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                    - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    dtris = dtris[dareas > 1e-14]
    dtags = np.full(len(dtris), int(Region.H), dtype=np.int64)
    for p in polygons:
        cen = pts[dtris].mean(axis=1)
        dtags[p["shape"].signed_distance(cen) < 0.0] = int(p["region"])
    for k, (p, idx) in enumerate(zip(polygons, poly_idx)):
        boundary_edges[int(p["region"])] = np.column_stack([idx, np.roll(idx, -1)])

    triangles = np.vstack([dtris] + patch_tris) if patch_tris else dtris
    tags = np.concatenate([dtags] + patch_tags) if patch_tags else dtags
    triangles = _orient(pts, triangles)

    free = np.zeros(len(pts), dtype=bool)
    free[:n_grid] = grid_free
    if smooth_iterations > 0:
        pts = _smart_laplacian(pts, triangles, free, smooth_iterations)

    dof, ndof = _periodic_dofs(pts, n)
    mesh = Mesh(pts, triangles, tags, dof, ndof, boundary_edges, float(h))
    area_sum = float(mesh.areas.sum())
    if abs(area_sum - 1.0) > 1e-10:
        raise MeshFailure(f"triangle areas sum to {area_sum!r}")
    if mesh.areas.min() <= 0.0:
        raise MeshFailure("inverted triangle")
    angle = mesh.min_angle_deg()
    if angle < MIN_ANGLE_DEG:
        raise MeshFailure(f"minimum angle {angle:.2f} deg below {MIN_ANGLE_DEG} deg")
    return mesh


def _smart_laplacian(pts, tris, free, iterations):
    """Move free nodes toward the centroid of their neighbours when this
    improves the worst angle of the incident triangles."""
    pts = pts.copy()
    nv = len(pts)
    e = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    import scipy.sparse as sp

    adj = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(nv, nv))
    adj = ((adj + adj.T) > 0).astype(float).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    v2t = sp.coo_matrix((np.ones(tris.size), (tris.ravel(), np.repeat(np.arange(len(tris)), 3))),
                        shape=(nv, len(tris))).tocsr()
    for _ in range(iterations):
        target = adj @ pts / np.maximum(deg, 1)[:, None]
        angles = _triangle_angles(pts, tris).min(axis=1)
        cand = np.where(free & (np.linalg.norm(target - pts, axis=1) > 1e-14))[0]
        if len(cand) == 0:
            break
        trial = pts.copy()
        trial[cand] = target[cand]
        p = trial[tris]
        area = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
        new_angles = np.where(area > 0, _triangle_angles(trial, tris).min(axis=1), -1.0)
        # Accept a node only if none of its triangles gets worse than the
        # old worst; independent sets avoid interacting moves.
        accepted = np.zeros(nv, dtype=bool)
        blocked = np.zeros(nv, dtype=bool)
        for v in cand:
            if blocked[v]:
                continue
            ts = v2t.indices[v2t.indptr[v]:v2t.indptr[v + 1]]
            if new_angles[ts].min() > angles[ts].min() + 1e-12:
                accepted[v] = True
                blocked[adj.indices[adj.indptr[v]:adj.indptr[v + 1]]] = True
        if not accepted.any():
            break
        pts[accepted] = target[accepted]
    return pts


def _periodic_dofs(pts, n):
    """Identify vertices on opposite cell edges."""
    x, y = pts[:, 0], pts[:, 1]
    tol = 1e-12
    on_edge = (np.abs(x) < tol) | (np.abs(x - 1) < tol) | (np.abs(y) < tol) | (np.abs(y - 1) < tol)
    key = {}
    dof = np.empty(len(pts), dtype=np.int64)
    nd = 0
    order = np.arange(len(pts))
    for v in order:
        if on_edge[v]:
            i = int(round(x[v] * n)) % n
            j = int(round(y[v] * n)) % n
            k = ("b", i, j)
        else:
            k = ("v", v)
        d = key.get(k)
        if d is None:
            d = nd
            key[k] = d
            nd += 1
        dof[v] = d
    return dof, nd


def mesh_to_bytes(mesh: Mesh, geometry_key: str) -> bytes:
    """Serialize a mesh in the documented cache layout.

    Layout (little-endian): magic "MBMESH01", version byte, 64-byte ASCII
    geometry key, float64 h, uint32 counts (nv, nt, ndof, number of boundary
    edge lists), then vertices (float64 nv*2), triangles (int64 nt*3), tags
    (int64 nt), dof (int64 nv), and for each boundary list its region code
    (uint32), edge count (uint32) and edges (int64 ne*2).
    """
    buf = io.BytesIO()
    buf.write(CACHE_MAGIC)
    buf.write(struct.pack("<B", CACHE_VERSION))
    buf.write(geometry_key.encode("ascii")[:64].ljust(64, b" "))
    buf.write(struct.pack("<d", mesh.h))
    buf.write(struct.pack("<4I", len(mesh.vertices), len(mesh.triangles), mesh.ndof, len(mesh.boundary_edges)))
    buf.write(mesh.vertices.astype("<f8").tobytes())
    buf.write(mesh.triangles.astype("<i8").tobytes())
    buf.write(mesh.tags.astype("<i8").tobytes())
    buf.write(mesh.dof.astype("<i8").tobytes())
    for region in sorted(mesh.boundary_edges):
        e = mesh.boundary_edges[region]
        buf.write(struct.pack("<2I", region, len(e)))
        buf.write(e.astype("<i8").tobytes())
    return buf.getvalue()


def mesh_from_bytes(data: bytes) -> tuple[Mesh, str]:
    """Inverse of :func:`mesh_to_bytes`; returns the mesh and geometry key."""
    buf = io.BytesIO(data)
    if buf.read(8) != CACHE_MAGIC:
        raise ValueError("not a mesh cache file")
    (version,) = struct.unpack("<B", buf.read(1))
    if version != CACHE_VERSION:
        raise ValueError(f"unsupported mesh cache version {version}")
    key = buf.read(64).decode("ascii").strip()
    (h,) = struct.unpack("<d", buf.read(8))
    nv, nt, ndof, nb = struct.unpack("<4I", buf.read(16))
    verts = np.frombuffer(buf.read(16 * nv), dtype="<f8").reshape(nv, 2).copy()
    tris = np.frombuffer(buf.read(24 * nt), dtype="<i8").reshape(nt, 3).copy()
    tags = np.frombuffer(buf.read(8 * nt), dtype="<i8").copy()
    dof = np.frombuffer(buf.read(8 * nv), dtype="<i8").copy()
    edges = {}
    for _ in range(nb):
        region, ne = struct.unpack("<2I", buf.read(8))
        edges[region] = np.frombuffer(buf.read(16 * ne), dtype="<i8").reshape(ne, 2).copy()
    return Mesh(verts, tris, tags, dof, ndof, edges, h), key
