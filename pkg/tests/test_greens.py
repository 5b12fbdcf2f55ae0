import numpy as np
import pytest

from metaband.greens import (
    build_periodic_greens,
    compute_resonances_nystrom,
    ewald_F,
    ewald_grad_F,
    fourier_F,
)


@pytest.fixture(scope="module")
def greens(cell):
    return build_periodic_greens(cell)


def test_ewald_matches_fourier_series():
    d = np.random.default_rng(1).random((20, 2)) * 0.8 + 0.1
    ref = fourier_F(d, 256)
    assert np.abs(ewald_F(d) - ref).max() < 5e-4
    # the discrepancy shrinks as the Fourier truncation grows
    e1 = np.abs(ewald_F(d) - fourier_F(d, 64)).max()
    assert np.abs(ewald_F(d) - ref).max() < e1


def test_F_symmetry_and_periodicity():
    rng = np.random.default_rng(2)
    x, y = rng.random((50, 2)), rng.random((50, 2))
    assert np.abs(ewald_F(x - y) - ewald_F(y - x)).max() < 1e-12
    assert np.abs(ewald_F(x + np.array([1.0, 0.0]) - y) - ewald_F(x - y)).max() < 1e-10
    assert np.abs(ewald_F(x + np.array([0.0, -1.0]) - y) - ewald_F(x - y)).max() < 1e-10


def test_F_zero_cell_average():
    n = 64
    t = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(t, t)
    d = np.column_stack([X.ravel(), Y.ravel()]) - np.array([0.013, 0.021])
    assert abs(ewald_F(d).mean()) < 1e-3


def test_grad_F_by_finite_differences():
    d = np.array([[0.31, 0.17], [0.6, 0.45]])
    eps = 1e-6
    g = ewald_grad_F(d)
    for k in range(2):
        e = np.zeros(2)
        e[k] = eps
        fd = (ewald_F(d + e) - ewald_F(d - e)) / (2 * eps)
        assert np.allclose(g[:, k], fd, atol=1e-7)


def test_corrector(greens):
    y = np.array([[0.25, 0.5], [0.1, 0.9]])
    assert greens.neumann_residual(y) < 1e-6
    assert np.allclose(greens.flux(y), greens.area_R, atol=1e-6)
    x = np.array([[0.4, 0.2]])
    # the boundary average of the corrected function vanishes by construction
    assert np.isfinite(greens.G(x, y)).all()


def test_short_truncation_rejected(cell):
    with pytest.raises(ValueError):
        build_periodic_greens(cell, truncation=8)


def test_nystrom_spectrum(cell, greens):
    a = compute_resonances_nystrom(cell, greens, 64)
    b = compute_resonances_nystrom(cell, greens, 128)
    assert b.max_imag < 1e-8
    assert np.all(np.abs(b.eigenvalues) < 0.5)
    top_a = np.sort(np.abs(a.eigenvalues))[-8:]
    top_b = np.sort(np.abs(b.eigenvalues))[-8:]
    assert np.abs(top_a - top_b).max() < 1e-6
