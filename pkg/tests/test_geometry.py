import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metaband.errors import InvalidShape, OutOfCellError, OverlapError
from metaband.geometry import (
    BOUNDARY_TOL,
    Region,
    ShapeSpec,
    boundary_quadrature,
    build_cell,
    classify_points,
    region_of,
)


def test_reference_area_fractions(cell):
    assert cell.theta_P == pytest.approx(math.pi * 0.0225, rel=1e-12)
    assert cell.theta_R == pytest.approx(math.pi * 0.04, rel=1e-12)
    assert cell.theta_P == pytest.approx(0.0706858, abs=1e-7)
    assert cell.theta_R == pytest.approx(0.1256637, abs=1e-7)
    assert cell.theta_H == pytest.approx(0.8036505, abs=1e-7)
    assert cell.theta_H + cell.theta_P + cell.theta_R == pytest.approx(1.0, abs=1e-14)


def test_square_rod_area():
    sq = ShapeSpec.polygon([(0.25, 0.25), (0.75, 0.25), (0.75, 0.75), (0.25, 0.75)])
    c = build_cell(ShapeSpec.disk((0.12, 0.12), 0.05), sq)
    assert c.theta_R == pytest.approx(0.25, abs=1e-14)


def test_overlapping_disks_rejected():
    with pytest.raises(OverlapError):
        build_cell(ShapeSpec.disk((0.35, 0.5), 0.2), ShapeSpec.disk((0.65, 0.5), 0.15))


def test_shape_touching_cell_edge_rejected():
    with pytest.raises(OutOfCellError):
        build_cell(ShapeSpec.disk((0.2, 0.5), 0.2), ShapeSpec.disk((0.7, 0.5), 0.1))


def test_invalid_shapes():
    with pytest.raises(InvalidShape):
        ShapeSpec.disk((0.5, 0.5), -0.1)
    with pytest.raises(InvalidShape):
        # bow tie
        ShapeSpec.polygon([(0.2, 0.2), (0.6, 0.6), (0.6, 0.2), (0.2, 0.6)])


def test_clockwise_polygon_is_reoriented():
    cw = ShapeSpec.polygon([(0.2, 0.2), (0.2, 0.4), (0.4, 0.4), (0.4, 0.2)])
    assert cw.area == pytest.approx(0.04)
    q = boundary_quadrature(cw, 4)
    # outward normals: the divergence identity has the right sign
    assert np.sum(q.weights * np.einsum("ij,ij->i", q.nodes, q.normals)) == pytest.approx(0.08)


def test_region_of(cell):
    assert region_of(cell, (0.7, 0.5)) == Region.R
    assert region_of(cell, (0.25, 0.5)) == Region.P
    assert region_of(cell, (0.0, 0.0)) == Region.H
    tol = BOUNDARY_TOL
    assert region_of(cell, (0.7 + 0.2 + 0.5 * tol, 0.5)) == Region.BOUNDARY
    assert region_of(cell, (0.7 + 0.2 - 0.5 * tol, 0.5)) == Region.BOUNDARY
    assert region_of(cell, (0.7 + 0.2 + 10 * tol, 0.5)) == Region.H
    assert region_of(cell, (0.7 + 0.2 - 10 * tol, 0.5)) == Region.R


def test_disk_quadrature():
    d = ShapeSpec.disk((0.7, 0.5), 0.2)
    q = boundary_quadrature(d, 64)
    assert q.perimeter == pytest.approx(2 * math.pi * 0.2, abs=1e-12)
    assert np.allclose(np.linalg.norm(q.normals, axis=1), 1.0)
    flux = np.sum(q.weights * np.einsum("ij,ij->i", q.nodes, q.normals))
    assert abs(flux - 2 * math.pi * 0.04) < 1e-10


def test_square_quadrature_perimeter():
    sq = ShapeSpec.polygon([(0.1, 0.1), (0.9, 0.1), (0.9, 0.9), (0.1, 0.9)])
    q = boundary_quadrature(sq, 4)
    assert len(q.weights) == 16
    assert q.perimeter == pytest.approx(4 * 0.8, abs=1e-14)


def test_polygon_classification_matches_crossing_rule():
    v = np.array([(0.2, 0.2), (0.8, 0.3), (0.6, 0.8), (0.4, 0.5), (0.25, 0.7)])
    R = ShapeSpec.polygon(v)
    c = build_cell(ShapeSpec.disk((0.9, 0.9), 0.05), R)
    pts = np.random.default_rng(0).random((10_000, 2))
    codes = classify_points(c, pts, tol=0.0)

    # independent even-odd crossing test
    inside = np.zeros(len(pts), bool)
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        cond = (a[1] > pts[:, 1]) != (b[1] > pts[:, 1])
        xcross = a[0] + (pts[:, 1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1] + 1e-300)
        inside ^= cond & (pts[:, 0] < xcross)
    in_P = np.hypot(pts[:, 0] - 0.9, pts[:, 1] - 0.9) < 0.05
    expect = np.where(inside, int(Region.R), np.where(in_P, int(Region.P), int(Region.H)))
    assert np.array_equal(codes, expect)


@settings(max_examples=40, deadline=None)
@given(cx=st.floats(0.25, 0.75), cy=st.floats(0.25, 0.75), r=st.floats(0.01, 0.2))
def test_disk_quadrature_divergence_identity(cx, cy, r):
    q = boundary_quadrature(ShapeSpec.disk((cx, cy), r), 32)
    flux = np.sum(q.weights * np.einsum("ij,ij->i", q.nodes, q.normals))
    assert flux == pytest.approx(2 * math.pi * r * r, rel=1e-12)
