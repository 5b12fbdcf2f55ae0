import numpy as np
import pytest

from metaband import bands
from metaband.bands import (
    DOUBLE_NEGATIVE,
    DOUBLE_POSITIVE,
    STOP,
    RunParams,
    build_intervals,
    classify,
    continuity_flags,
    merge_points,
    sign_table,
    solve_branch,
    trace_branches,
)
from metaband.effective import build_response, dispersion_raw, eps_inv_raw, guard_distances, mu_eff_raw
from metaband.errors import EmptyInterval


@pytest.fixture(scope="module")
def decomp(response):
    return build_intervals(response, (0.0, 200.0), strict=False)


@pytest.fixture(scope="module")
def sweep(response):
    return trace_branches(response, RunParams(rho=0.1, tau_min=0.05, tau_max=9.9, n_tau=24,
                                              scan_range=(0.0, 200.0)))


def test_merge_points():
    pts = merge_points([(np.array([1.0, 3.0]), "a"), (np.array([1.0 + 1e-12, 2.0, 9.0]), "b")], 0.0, 5.0)
    assert [p.value for p in pts] == [1.0, 2.0, 3.0]
    assert pts[0].tags == ("a", "b")
    assert pts[1].tags == ("b",)


def test_decomposition_structure(response, decomp):
    ex = np.array([e.value for e in decomp.excluded])
    assert np.all(np.diff(ex) > 0)
    ivs = decomp.intervals
    assert len(ivs) + len(decomp.dropped) == len(ex) + 1
    g = guard_distances(ex)
    for iv in ivs:
        a, b = iv.inner
        # open scan-range ends are kept, excluded ends are guarded
        assert iv.outer[0] <= a < b <= iv.outer[1]
        assert (a > iv.outer[0]) == bool(np.any(ex == iv.outer[0]))
        near = np.abs(ex[:, None] - np.array([a, b])[None]) - g[:, None]
        assert np.all(near >= -1e-14 * np.maximum(1.0, np.abs(ex))[:, None])
    outs = [iv.outer for iv in ivs]
    assert all(o1[1] <= o2[0] for o1, o2 in zip(outs[:-1], outs[1:]))
    tags = {t for e in decomp.excluded for t in e.tags}
    assert {"zeta", "nu", "mu*", "s*", "w"} <= tags


def test_strict_mode_reports_consumed_interval(response):
    with pytest.raises(EmptyInterval):
        build_intervals(response, (0.0, 200.0), abs_guard=5.0, strict=True)


def test_range_beyond_registry_rejected(response):
    with pytest.raises(ValueError):
        build_intervals(response, (0.0, 2 * response.scan_max))


def test_light_line_slope(response, decomp):
    iv = decomp.interval(0)
    ratio = float(eps_inv_raw(response, 0.0) / mu_eff_raw(response, 0.0))
    tau = 0.02
    roots = solve_branch(response, tau, (1.0, 0.0), iv)
    assert len(roots) == 1
    assert roots[0].xi0 / tau**2 == pytest.approx(ratio, rel=1e-2)


def test_root_contract_and_reciprocity(response, decomp):
    for idx in (0, 2):
        iv = decomp.interval(idx)
        plus = solve_branch(response, 2.0, (1.0, 0.0), iv)
        minus = solve_branch(response, 2.0, (-1.0, 0.0), iv)
        assert plus and len(plus) == len(minus)
        for p, m in zip(plus, minus):
            assert p.residual < 1e-8
            assert abs(p.xi0 - m.xi0) <= 1e-12 * p.xi0
            assert iv.contains(p.xi0)
            assert p.gamma != 0.0


def test_no_root_without_sign_change(response, decomp):
    for iv in decomp.intervals[:25]:
        roots = solve_branch(response, 1.0, (1.0, 0.0), iv)
        a, b = iv.inner
        ya, yb = dispersion_raw(response, np.array([a, b]), 1.0)
        if not roots:
            continue
        # an odd number of roots needs opposite end signs
        if len(roots) % 2:
            assert ya * yb < 0


def test_stop_intervals_have_no_roots(response, decomp):
    stops = [iv for iv in decomp.intervals if bands.classify_interval(response, iv) == STOP]
    assert stops
    for iv in stops:
        for tau in (0.1, 1.0, 5.0, 9.0):
            assert solve_branch(response, tau, (1.0, 0.0), iv) == []


def test_sweep_samples_consistent(response, sweep):
    assert sweep.failures == []
    for br in sweep.branches:
        assert br.classification in (DOUBLE_POSITIVE, DOUBLE_NEGATIVE)
        iv = sweep.decomposition.interval(br.interval_id)
        for s in br.samples:
            assert 0 < s.eta < 1
            assert iv.contains(s.xi0)
            assert np.sign(s.mu_eff) == np.sign(s.eps_inv)
            assert s.mu_eff / s.eps_inv > 0
    fundamental = [b for b in sweep.branches if b.interval_id == 0][0]
    assert continuity_flags(fundamental) == []
    assert np.all(np.diff(fundamental.xi0) > 0)


def test_sub_wavelength_filter(response):
    params = RunParams(rho=0.5, tau_min=0.1, tau_max=4.0, n_tau=8, scan_range=(0.0, 30.0))
    sw = trace_branches(response, params)
    assert sw.skipped_tau and min(sw.skipped_tau) >= 2.0
    assert all(s.eta < 1 for b in sw.branches for s in b.samples)
    assert not params.admissible(2.0)
    assert params.admissible(1.9)


def test_parallel_sweep_is_identical(response):
    p1 = RunParams(rho=0.1, tau_min=0.1, tau_max=5.0, n_tau=6, scan_range=(0.0, 100.0))
    p4 = RunParams(rho=0.1, tau_min=0.1, tau_max=5.0, n_tau=6, scan_range=(0.0, 100.0), threads=4)
    a, b = trace_branches(response, p1), trace_branches(response, p4)
    assert [(x.interval_id, x.sub_index, x.samples) for x in a.branches] == \
           [(x.interval_id, x.sub_index, x.samples) for x in b.branches]


def test_double_negative_at_large_plasma_parameter(response_dn):
    dec = build_intervals(response_dn, (0.0, 160.0), strict=False)
    rows = sign_table(response_dn, dec)
    dn = [r for r in rows if r[4] == DOUBLE_NEGATIVE]
    assert dn
    assert all(r[2] < 0 and r[3] < 0 for r in dn)
    # mu_eff < 0 needs xi0 above the first nonzero-mean eigenvalue
    assert all(r[1][0] > response_dn.mu_poles[0] for r in dn)
    iv = dec.interval(dn[0][0])
    roots = solve_branch(response_dn, 2.0, (1.0, 0.0), iv)
    assert roots
    assert classify(response_dn, roots[0].xi0) == DOUBLE_NEGATIVE


def test_no_double_negative_below_plasma_parameter(response):
    # mu_eff stays positive below the first Dirichlet pole, which exceeds w
    dec = build_intervals(response, (0.0, response.w), strict=False)
    assert response.mu_poles[0] > response.w
    assert all(r[4] != DOUBLE_NEGATIVE for r in sign_table(response, dec))


def test_classification_stable_under_more_resonances(mesh, dirichlet, electro, w1, response, sweep):
    from metaband.dirichlet import compute_dirichlet

    richer = build_response(compute_dirichlet(mesh, N=2 * dirichlet.count), electro.strongest(24), w1, 40.0)
    flips = 0
    for br in sweep.branches:
        for s in br.samples:
            try:
                cls = classify(richer, s.xi0)
            except Exception:
                continue
            flips += cls != br.classification
    assert flips == 0
