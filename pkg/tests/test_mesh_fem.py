import math

import numpy as np
import pytest
import scipy.sparse as sp

from metaband.errors import SingularSystem
from metaband.fem import (
    ConstrainedSolver,
    SparseSystem,
    assemble_mass,
    assemble_stiffness,
    interpolate,
    load_vector,
    solve_constrained,
    solve_gevp,
)
from metaband.geometry import Region, ShapeSpec, classify_points, empty_cell, single_rod_cell
from metaband.mesh import MIN_ANGLE_DEG, generate_mesh, mesh_from_bytes, mesh_to_bytes

ALL = (Region.H, Region.P, Region.R)


@pytest.fixture(scope="module")
def empty16():
    return generate_mesh(empty_cell(), 1.0 / 16.0)


@pytest.fixture(scope="module")
def empty32():
    return generate_mesh(empty_cell(), 1.0 / 32.0)


def test_empty_cell_area(empty16):
    assert empty16.areas.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(empty16.areas > 0)
    assert np.all(empty16.tags == int(Region.H))


def test_reference_mesh_quality(mesh, cell):
    assert mesh.areas.sum() == pytest.approx(1.0, abs=1e-10)
    assert mesh.min_angle_deg() >= MIN_ANGLE_DEG
    # every triangle lies in one region: centroids classify to the tag
    cen = mesh.vertices[mesh.triangles].mean(axis=1)
    assert np.array_equal(classify_points(cell, cen, tol=0.0), mesh.tags)


def test_periodic_identification_is_bijective(mesh):
    v, dof = mesh.vertices, mesh.dof
    for axis in (0, 1):
        lo = np.flatnonzero(np.abs(v[:, axis]) < 1e-12)
        hi = np.flatnonzero(np.abs(v[:, axis] - 1.0) < 1e-12)
        assert len(lo) == len(hi)
        other = 1 - axis
        a = lo[np.argsort(v[lo, other])]
        b = hi[np.argsort(v[hi, other])]
        assert np.allclose(v[a, other], v[b, other], atol=1e-12)
        assert np.array_equal(dof[a], dof[b])


def test_discrete_rod_area_converges_quadratically():
    shape = ShapeSpec.disk((0.5, 0.5), 0.2)
    cell = single_rod_cell(shape, Region.R)
    hs = np.array([1 / 16, 1 / 32, 1 / 64])
    errs = np.array([abs(generate_mesh(cell, h).region_area(Region.R) - math.pi * 0.04) for h in hs])
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert order > 1.8


def test_coarse_mesh_rejected():
    with pytest.raises(ValueError):
        generate_mesh(empty_cell(), 0.4)


def test_cache_roundtrip(mesh, cell):
    data = mesh_to_bytes(mesh, cell.key())
    back, key = mesh_from_bytes(data)
    assert key == cell.key()
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.array_equal(back.dof, mesh.dof)
    assert back.ndof == mesh.ndof
    with pytest.raises(ValueError):
        mesh_from_bytes(b"garbage" + data[7:])


def test_mesh_generation_is_deterministic(cell):
    a = generate_mesh(cell, 1 / 16)
    b = generate_mesh(cell, 1 / 16)
    assert mesh_to_bytes(a, "k") == mesh_to_bytes(b, "k")


def test_stiffness_rows_sum_to_zero(mesh):
    K = assemble_stiffness(mesh, {Region.H: 1.0, Region.P: 2.5, Region.R: 0.3})
    assert np.abs(np.asarray(K.sum(axis=1))).max() < 1e-11


def test_sign_changing_coefficient_gives_indefinite_symmetric_matrix(mesh):
    K = assemble_stiffness(mesh, {Region.H: 1.0, Region.P: -1.0})
    assert abs(K - K.T).max() < 1e-14
    vals = np.linalg.eigvalsh(K.toarray())
    assert vals.min() < -1e-6 and vals.max() > 1e-6


def test_dirichlet_integral_of_sine(empty32):
    K = assemble_stiffness(empty32, {Region.H: 1.0})
    u = interpolate(empty32, lambda x, y: np.sin(2 * np.pi * x))
    assert u @ K @ u == pytest.approx(2 * np.pi**2, rel=2e-2)


def test_mass_totals(mesh):
    one = np.ones(mesh.ndof)
    assert one @ assemble_mass(mesh, ALL) @ one == pytest.approx(1.0, abs=1e-12)
    assert one @ assemble_mass(mesh, [Region.R]) @ one == pytest.approx(math.pi * 0.04, rel=3e-3)
    assert assemble_mass(mesh, []).nnz == 0
    assert load_vector(mesh, ALL).sum() == pytest.approx(1.0, abs=1e-12)


def _poisson(mesh, f):
    K = assemble_stiffness(mesh, {Region.H: 1.0})
    M = assemble_mass(mesh, [Region.H])
    c = load_vector(mesh, [Region.H])
    return SparseSystem(K, M @ interpolate(mesh, f), c[None, :]), c


def test_periodic_poisson(empty32):
    system, _ = _poisson(empty32, lambda x, y: np.cos(2 * np.pi * x))
    u = solve_constrained(system)
    exact = interpolate(empty32, lambda x, y: np.cos(2 * np.pi * x) / (4 * np.pi**2))
    assert np.abs(u - exact).max() < 0.02 * np.abs(exact).max()


def test_incompatible_rhs_raises(empty32):
    system, _ = _poisson(empty32, lambda x, y: 1.0 + np.cos(2 * np.pi * x))
    with pytest.raises(SingularSystem) as exc:
        solve_constrained(system)
    assert exc.value.defect > 0.1


def test_zero_rhs_gives_zero(empty32):
    system, _ = _poisson(empty32, lambda x, y: 0.0 * x)
    assert np.abs(solve_constrained(system)).max() == 0.0


def test_constrained_solver_reuse(empty32):
    system, c = _poisson(empty32, lambda x, y: np.sin(2 * np.pi * y))
    s = ConstrainedSolver(system.matrix, system.constraints)
    x1, _ = s.solve(system.rhs)
    x2, _ = s.solve(1j * system.rhs)
    assert np.allclose(x2, 1j * x1)
    assert abs(c @ x1) < 1e-12


def test_periodic_laplacian_spectrum(empty16):
    K = assemble_stiffness(empty16, {Region.H: 1.0})
    M = assemble_mass(empty16, [Region.H])
    vals = solve_gevp(K, M).values
    assert abs(vals[0]) < 1e-9
    first = vals[1:5]
    assert np.allclose(first, 4 * np.pi**2, rtol=3e-2)
    assert vals[5] > 1.5 * 4 * np.pi**2


def test_gevp_identity_pencil_and_orthonormality(empty16):
    M = assemble_mass(empty16, [Region.H])
    res = solve_gevp(M, M)
    assert np.allclose(res.values, 1.0, atol=1e-10)
    K = assemble_stiffness(empty16, {Region.H: 1.0}) + M
    r = solve_gevp(K, M, k=6)
    G = r.vectors.T @ (M @ r.vectors)
    assert np.abs(G - np.eye(6)).max() < 1e-8


def test_gevp_sparse_path(mesh):
    K = assemble_stiffness(mesh, {Region.H: 1.0, Region.P: 1.0, Region.R: 1.0}) + sp.identity(mesh.ndof) * 1e-12
    M = assemble_mass(mesh, ALL)
    r = solve_gevp(K, M, k=5, window=10.0, dense_limit=100)
    assert np.allclose(r.values[1:5], 4 * np.pi**2, rtol=2e-2)
