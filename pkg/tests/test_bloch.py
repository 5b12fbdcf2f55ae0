import numpy as np
import pytest

from metaband import bloch
from metaband import series as S
from metaband.bands import STOP, build_intervals, classify_interval, solve_branch
from metaband.effective import build_response
from metaband.errors import ModeAmbiguity
from metaband.fem import region_forms
from metaband.geometry import Region, empty_cell
from metaband.mesh import generate_mesh

TAU = 2.0
W = 40.0


@pytest.fixture(scope="module")
def forms(mesh):
    return region_forms(mesh, (1.0, 0.0))


@pytest.fixture(scope="module")
def prob(mesh, forms):
    return bloch.assemble_bloch(mesh, 0.02 / TAU, TAU, (1.0, 0.0), W, forms)


def test_homogeneous_cell_constant_mode():
    m = generate_mesh(empty_cell(), 1 / 16)
    for tau in (0.5, 2.0):
        p = bloch.assemble_bloch(m, 0.1 / tau, tau, (1.0, 0.0), 0.0)
        modes = bloch.solve_bloch(p, 1, sigma=0.7 * tau * tau)
        assert modes[0].xi == pytest.approx(tau * tau, rel=1e-10)
        assert np.allclose(modes[0].u.values, 1.0, atol=1e-8)


def test_pencil_is_hermitian(prob):
    assert prob.hermitian_defect() < 1e-12


def test_zero_shift_recovers_stiffness(mesh, forms):
    for reg in (Region.H, Region.P, Region.R):
        d = forms.shifted(reg, 0.0) - forms.S[reg]
        assert (abs(d).max() if d.nnz else 0.0) < 1e-14


def test_modes_real_and_sorted(prob):
    modes = bloch.solve_bloch(prob, 6)
    xs = [m.xi for m in modes]
    assert xs == sorted(xs)
    for m in modes:
        assert abs(m.imag) < 1e-8 * (1 + abs(m.xi))
        assert m.residual < bloch.RESIDUAL_TOL
        assert abs(m.xi) > 1e-6 and abs(m.xi - W) > 1e-6


def test_direction_reversal(mesh):
    a = bloch.solve_bloch(bloch.assemble_bloch(mesh, 0.02, TAU, (1.0, 0.0), W), 4)
    b = bloch.solve_bloch(bloch.assemble_bloch(mesh, 0.02, TAU, (-1.0, 0.0), W), 4)
    assert np.allclose([m.xi for m in a], [m.xi for m in b], rtol=1e-10)


def test_eta_continuity(mesh, forms):
    xs = []
    for eta in (0.02, 0.021, 0.022):
        p = bloch.assemble_bloch(mesh, eta / TAU, TAU, (1.0, 0.0), W, forms)
        xs.append(bloch.solve_bloch(p, 1, sigma=2.0)[0].xi)
    d = np.diff(xs)
    assert np.all(np.abs(d) < 1e-3)
    assert np.all(d > 0)


def test_eta_range_rejected(mesh, forms):
    with pytest.raises(ValueError):
        bloch.assemble_bloch(mesh, 0.6, TAU, (1.0, 0.0), W, forms)
    with pytest.raises(ValueError):
        bloch.assemble_bloch(mesh, 0.0, TAU, (1.0, 0.0), W, forms)


def test_nearest_mode_ambiguity(prob):
    modes = bloch.solve_bloch(prob, 3)
    assert bloch.nearest_mode(modes, 2.9, 1e-3) is modes[0]
    a, b = modes[0].xi, modes[1].xi
    with pytest.raises(ModeAmbiguity):
        bloch.nearest_mode(modes, 0.5 * (a + b), 1e-3)


def test_eigenvectors_normalized(prob):
    m = bloch.solve_bloch(prob, 1, sigma=2.0)[0]
    w = prob.mean_weights
    assert abs((w @ m.u.values) / w.sum() - 1.0) < 1e-12
    assert bloch.overlap(prob, m, m) == pytest.approx(1.0, abs=1e-12)


def test_pass_and_stop_intervals_against_oracle(mesh, dirichlet, electro, w1, forms):
    # with every resonance kept, each pass interval up to ~20.94 carries one
    # oracle mode near its homogenized root and stop intervals carry none
    resp = build_response(dirichlet, electro, w1, W)
    dec = build_intervals(resp, (0.0, 20.94), strict=False)
    p = bloch.assemble_bloch(mesh, 0.01 / TAU, TAU, (1.0, 0.0), W, forms)
    xs = np.array([m.xi for m in bloch.solve_bloch(p, 20, sigma=10.0)])
    n_pass = 0
    for iv in dec.intervals:
        a, b = iv.inner
        inside = xs[(xs > a) & (xs < b)]
        if classify_interval(resp, iv) == STOP:
            assert inside.size == 0
            continue
        roots = [r.xi0 for r in solve_branch(resp, TAU, (1.0, 0.0), iv)]
        assert len(inside) == len(roots)
        for x, r in zip(inside, roots):
            assert abs(x - r) < 1e-3 * r
        n_pass += 1
    assert n_pass >= 8


@pytest.fixture(scope="module")
def convergence(mesh, response, forms):
    iv = build_intervals(response, (0.0, 200.0), strict=False).interval(0)
    x0 = solve_branch(response, TAU, (1.0, 0.0), iv)[0].xi0
    ctx = S.build_context(mesh, x0, TAU, (1.0, 0.0), W, bounds=iv.outer, forms=forms)
    st = S.run_series(ctx, 4)
    etas = np.array([0.02, 0.03, 0.04, 0.06, 0.08])
    br = bloch.track_mode(mesh, TAU, etas, (1.0, 0.0), W, st.xi_real()[0], forms=forms,
                          predictor=lambda e: st.xi_of_eta(e, 2).real)
    return br, bloch.compare_with_series(br, st)


def test_tracked_branch(convergence):
    br, _ = convergence
    assert np.all(br.overlaps > bloch.OVERLAP_THRESHOLD)
    assert np.all(br.residual < bloch.RESIDUAL_TOL)
    assert np.all(np.diff(br.xi) > 0)


def test_series_converges_to_oracle(convergence):
    _, rep = convergence
    # xi1 vanishes on this branch, so M=0 and M=1 both leave an eta^2 error
    assert rep.slopes[0] == pytest.approx(2.0, abs=0.2)
    assert rep.slopes[2] >= 2.7
    assert np.all(rep.residuals[2] < rep.residuals[0])
    assert np.all(rep.residuals[4][:3] < rep.residuals[2][:3])


def test_loglog_slope():
    x = np.array([0.1, 0.2, 0.4])
    assert bloch.loglog_slope(x, 3 * x**3) == pytest.approx(3.0)
    assert np.isnan(bloch.loglog_slope(x, np.array([1.0, 0.0, 1.0])))
