import math

import numpy as np
import pytest

from metaband.dirichlet import (
    MEAN_THRESHOLD_REL,
    analytic_disk_spectrum,
    compute_dirichlet,
    mu_series_tail_bound,
)
from metaband.errors import InsufficientSpectrum
from metaband.fem import assemble_mass
from metaband.geometry import Region, ShapeSpec, single_rod_cell
from metaband.mesh import generate_mesh


def _j0_series(x):
    # power series of J0, independent of scipy
    term, total, k = 1.0, 1.0, 0
    while abs(term) > 1e-17 * max(1.0, abs(total)):
        k += 1
        term *= -(x * x / 4.0) / (k * k)
        total += term
    return total


def _bessel_zero(m):
    """m-th zero of J0 by bisection on sign changes of the series."""
    xs = np.linspace(0.5, 3.2 * m + 1.0, 4000)
    vals = [_j0_series(x) for x in xs]
    found = 0
    for a, b, fa, fb in zip(xs[:-1], xs[1:], vals[:-1], vals[1:]):
        if fa * fb < 0:
            found += 1
            if found == m:
                for _ in range(200):
                    c = 0.5 * (a + b)
                    if fa * _j0_series(c) <= 0:
                        b = c
                    else:
                        a, fa = c, _j0_series(c)
                return 0.5 * (a + b)
    raise RuntimeError("zero not bracketed")


@pytest.fixture(scope="module")
def disk03():
    cell = single_rod_cell(ShapeSpec.disk((0.5, 0.5), 0.3), Region.R)
    mesh = generate_mesh(cell, 1.0 / 64.0)
    return mesh, compute_dirichlet(mesh, N=12)


def test_bessel_oracle():
    assert _bessel_zero(1) == pytest.approx(2.40483, abs=1e-5)
    assert _bessel_zero(2) == pytest.approx(5.52008, abs=1e-5)
    assert _bessel_zero(3) == pytest.approx(8.65373, abs=1e-5)


def test_fem_disk_ground_state(disk03):
    _, spec = disk03
    exact = (_bessel_zero(1) / 0.3) ** 2
    assert exact == pytest.approx(64.258, abs=1e-3)
    assert spec.eigenvalues[0] >= exact
    assert spec.eigenvalues[0] == pytest.approx(exact, rel=1e-2)
    j = _bessel_zero(1)
    assert spec.means[0] ** 2 == pytest.approx(4 * math.pi * 0.09 / j**2, rel=1e-2)
    assert 4 * math.pi * 0.09 / j**2 == pytest.approx(0.19556, abs=1e-5)


def test_fem_disk_means_split(disk03):
    _, spec = disk03
    analytic = analytic_disk_spectrum(0.3, 12)
    radial = np.abs(analytic.means) > 0
    # ordering of the first 12 agrees away from degenerate pairs
    assert np.array_equal(np.abs(spec.means) > 1e-3, radial)
    assert len(spec.nonzero_mean_index) + len(spec.zero_mean_index) == spec.count
    assert set(spec.nonzero_mean_index).isdisjoint(spec.zero_mean_index)


def test_fem_bounds_analytic_from_above(disk03):
    _, spec = disk03
    analytic = analytic_disk_spectrum(0.3, 12)
    assert np.all(spec.eigenvalues >= analytic.eigenvalues * (1 - 1e-12))


def test_orthonormal_fields(disk03):
    mesh, spec = disk03
    M = assemble_mass(mesh, [Region.R])[spec.dofs][:, spec.dofs]
    G = spec.fields.T @ (M @ spec.fields)
    assert np.abs(G - np.eye(spec.count)).max() < 1e-8


def test_square_rod():
    L = 0.5
    sq = ShapeSpec.polygon([(0.25, 0.25), (0.75, 0.25), (0.75, 0.75), (0.25, 0.75)])
    mesh = generate_mesh(single_rod_cell(sq, Region.R), 1.0 / 32.0)
    spec = compute_dirichlet(mesh, N=3)
    assert spec.eigenvalues[0] == pytest.approx(2 * math.pi**2 / L**2, rel=1e-2)
    assert 2 * math.pi**2 / L**2 == pytest.approx(78.957, abs=1e-3)
    assert spec.means[0] == pytest.approx(8 * L / math.pi**2, rel=1e-2)


def test_analytic_spectrum():
    radial = analytic_disk_spectrum(0.3, 3, modes="radial")
    for m in range(3):
        assert radial.eigenvalues[m] == pytest.approx((_bessel_zero(m + 1) / 0.3) ** 2, rel=1e-10)
    full = analytic_disk_spectrum(0.3, 20)
    assert np.all(np.diff(full.eigenvalues) >= 0)
    many = analytic_disk_spectrum(0.3, 50, modes="radial")
    assert np.sum(many.means**2) / (math.pi * 0.09) >= 0.99
    # only radial modes carry a mean; the angular ones are exactly zero
    assert np.all(full.means[full.zero_mean_index] == 0.0)


def test_parseval_monotone_and_bounded(dirichlet):
    partial = np.cumsum(dirichlet.means**2)
    assert np.all(np.diff(partial) >= 0)
    assert partial[-1] <= dirichlet.complete_total + 1e-12
    assert dirichlet.complete_total <= dirichlet.theta_R
    assert dirichlet.parseval_defect < 1e-3


def test_mean_threshold(dirichlet):
    thr = MEAN_THRESHOLD_REL * math.sqrt(dirichlet.theta_R)
    assert np.all(np.abs(dirichlet.means[dirichlet.nonzero_mean_index]) > thr)
    assert np.all(np.abs(dirichlet.means[dirichlet.zero_mean_index]) <= thr)


def test_tail_bound():
    spec = analytic_disk_spectrum(0.3, 400, modes="radial")
    assert mu_series_tail_bound(spec, 0.0) == pytest.approx(spec.parseval_defect)
    n = int(np.flatnonzero(np.pi * 0.09 - np.cumsum(spec.means**2) < 1e-3)[0]) + 1
    short = analytic_disk_spectrum(0.3, n, modes="radial")
    assert short.parseval_defect < 1e-3
    bound = mu_series_tail_bound(short, 30.0)
    assert bound < 2e-3
    # compare with the actual neglected sum
    tail = spec.means[n:] ** 2 * spec.eigenvalues[n:] / (spec.eigenvalues[n:] - 30.0)
    assert np.sum(tail) <= bound
    b1 = mu_series_tail_bound(short, 0.5 * short.eigenvalues[-1])
    b2 = mu_series_tail_bound(short, 0.99 * short.eigenvalues[-1])
    assert b2 > b1
    with pytest.raises(InsufficientSpectrum):
        mu_series_tail_bound(short, short.eigenvalues[-1])


def test_split_stable_under_refinement():
    cell = single_rod_cell(ShapeSpec.disk((0.5, 0.5), 0.2), Region.R)
    a = compute_dirichlet(generate_mesh(cell, 1 / 24), N=10)
    b = compute_dirichlet(generate_mesh(cell, 1 / 48), N=10)
    thr = 10 * MEAN_THRESHOLD_REL * math.sqrt(a.theta_R)
    strong = np.abs(a.means) > thr
    assert np.array_equal(strong, np.abs(b.means) > thr)
