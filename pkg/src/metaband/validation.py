"""Acceptance suite on the reference two-disk cell.

Every criterion returns a CriterionResult with the measured quantities, so
failures carry their numbers. The heavy objects (meshes, spectra) are built
once per ReferenceSetup and shared across criteria.
"""

from __future__ import annotations

import functools
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import bands, bloch, effective, series
from .dirichlet import analytic_disk_spectrum, compute_dirichlet
from .electrostatic import compute_resonances_fem, compute_w1_projection
from .errors import MetabandError
from .geometry import ShapeSpec, build_cell, empty_cell
from .greens import build_periodic_greens, compute_resonances_nystrom
from .mesh import generate_mesh

REFERENCE_W = 40.0
REFERENCE_H = 1.0 / 64.0
REFERENCE_KAPPA = (1.0, 0.0)
REFERENCE_K_ELECTRO = 12
REFERENCE_RHO = 0.1
DOUBLE_NEGATIVE_W = 300.0
BRANCH_TAU = 2.0
ORACLE_ETAS = (0.02, 0.04, 0.08, 0.16)
W_SCAN = (20.0, 40.0, 80.0)
TAU_SWEEP = (0.05, 9.9, 48)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    summary: str
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number:2d} [{tag}] {self.title}: {self.summary} ({self.seconds:.1f} s)"


def reference_cell():
    return build_cell(ShapeSpec.disk((0.25, 0.5), 0.15), ShapeSpec.disk((0.7, 0.5), 0.2))


class ReferenceSetup:
    """Lazily built meshes, spectra and responses for the reference cell."""

    def __init__(self, h: float = REFERENCE_H, k_electro: int = REFERENCE_K_ELECTRO):
        self.h = h
        self.k_electro = k_electro
        self.cell = reference_cell()
        self._meshes = {}
        self._responses = {}
        self._forms = None
        self._series = None

    def mesh(self, h: float | None = None):
        h = self.h if h is None else h
        if h not in self._meshes:
            self._meshes[h] = generate_mesh(self.cell, h)
        return self._meshes[h]

    @functools.cached_property
    def dirichlet(self):
        return compute_dirichlet(self.mesh())

    @functools.cached_property
    def electro(self):
        return compute_resonances_fem(self.mesh(), kappa=REFERENCE_KAPPA)

    @functools.cached_property
    def w1(self):
        return compute_w1_projection(self.mesh(), REFERENCE_KAPPA)

    def response(self, w: float):
        """Response with the k_electro strongest resonances."""
        if w not in self._responses:
            el = self.electro.strongest(self.k_electro)
            self._responses[w] = effective.build_response(self.dirichlet, el, self.w1, w)
        return self._responses[w]

    def forms(self):
        if self._forms is None:
            from .fem import region_forms

            self._forms = region_forms(self.mesh(), REFERENCE_KAPPA)
        return self._forms


def _timed(number, title):
    def wrap(fn):
        @functools.wraps(fn)
        def run(setup):
            t0 = time.perf_counter()
            try:
                res = fn(setup)
            except MetabandError as exc:
                res = CriterionResult(number, title, False, f"{type(exc).__name__}: {exc}")
            res.number, res.title = number, title
            res.seconds = time.perf_counter() - t0
            return res

        run.number = number
        return run

    return wrap


@_timed(1, "sum rule mu_eff(0) = 1")
def criterion_1(s: ReferenceSetup) -> CriterionResult:
    # The plain truncated sum theta_H + theta_P + sum_j m_j^2; the completed
    # form used elsewhere equals 1 by construction and is reported alongside.
    r = s.response(REFERENCE_W)
    val = float(effective.mu_eff_raw(r, 0.0, "literal"))
    completed = float(effective.mu_eff_raw(r, 0.0))
    err = abs(val - 1.0)
    d = s.dirichlet
    return CriterionResult(1, "", err < 2e-3,
                           f"|mu_eff(0) - 1| = {err:.2e} for the truncated sum (tol 2e-3, N={d.count}, "
                           f"Parseval defect {d.parseval_defect:.1e}); completed form {completed:.15f}",
                           {"mu_eff0": val, "completed": completed, "N": d.count,
                            "parseval_defect": d.parseval_defect})


@_timed(2, "Dirichlet eigenvalues of disk R vs Bessel zeros")
def criterion_2(s: ReferenceSetup) -> CriterionResult:
    exact = analytic_disk_spectrum(0.2, 6).eigenvalues
    errs = []
    for h in (1.0 / 64.0, 1.0 / 128.0):
        fem = compute_dirichlet(s.mesh(h), N=6).eigenvalues
        errs.append(float(np.max(np.abs(fem - exact) / exact)))
    order = math.log2(errs[0] / errs[1])
    ok = errs[0] < 1e-2 and errs[1] < 2.5e-3 and order >= 1.8
    return CriterionResult(2, "", ok, f"rel err {errs[0]:.2e} (h=1/64), {errs[1]:.2e} (h=1/128), order {order:.2f}",
                           {"err_64": errs[0], "err_128": errs[1], "order": order})


@_timed(3, "electrostatic FEM vs Nystrom")
def criterion_3(s: ReferenceSetup) -> CriterionResult:
    greens = build_periodic_greens(s.cell)
    ny = compute_resonances_nystrom(s.cell, greens, 128).eigenvalues
    fem = s.electro.eigenvalues
    top_ny = ny[np.argsort(-np.abs(ny), kind="stable")[:8]]
    top_fem = fem[np.argsort(-np.abs(fem), kind="stable")[:8]]
    rel = np.abs(top_fem - top_ny) / np.abs(top_ny)
    interior = bool(np.all(np.abs(fem) < 0.5) and np.all(np.abs(ny) < 0.5))
    worst = float(np.max(rel))
    return CriterionResult(3, "", worst < 1e-2 and interior,
                           f"max rel diff over 8 strongest {worst:.2e} (tol 1e-2), interior {interior}",
                           {"fem": top_fem.tolist(), "nystrom": top_ny.tolist(), "rel": rel.tolist()})


@_timed(4, "Drude-off consistency")
def criterion_4(s: ReferenceSetup) -> CriterionResult:
    r = s.response(0.0)
    xs = np.linspace(1.0, 100.0, 64)
    vals = effective.eps_inv_raw(r, xs)
    spread = float(np.max(vals) - np.min(vals))
    direct = effective.direct_eps_inv(s.mesh(), 10.0, 0.0, REFERENCE_KAPPA)
    diff = abs(float(vals[0]) - direct)
    return CriterionResult(4, "", spread < 1e-10 and diff < 1e-2,
                           f"spread {spread:.1e} (tol 1e-10), |spectral - direct| {diff:.2e} (tol 1e-2)",
                           {"eps_inv": float(vals[0]), "direct": direct, "spread": spread})


def _between(points, poles):
    p = np.sort(poles)
    return np.array([int(np.sum((points > a) & (points < b))) for a, b in zip(p[:-1], p[1:])])


@_timed(5, "interleaving of poles and zeros")
def criterion_5(s: ReferenceSetup) -> CriterionResult:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", effective.MissedRoot)
        r = effective.build_response(s.dirichlet, s.electro.strongest(s.k_electro), s.w1, REFERENCE_W)
    mu_counts = _between(r.mu_zeros, r.mu_poles)
    s_poles = np.sort(np.concatenate([r.s_poles(), [r.w]]))
    s_poles = s_poles[s_poles <= r.scan_max]
    # Only gaps with a sign change of eps_inv between the poles must hold a zero.
    eps = lambda x: float(effective.eps_inv_raw(r, x))  # noqa: E731
    bad_s = 0
    for a, b in zip(s_poles[:-1], s_poles[1:]):
        e = 1e-9 * max(1.0, abs(b))
        n = int(np.sum((r.s_zeros > a) & (r.s_zeros < b)))
        if eps(a + e) * eps(b - e) < 0 and n != 1:
            bad_s += 1
    bad_mu = int(np.sum(mu_counts != 1))
    missed = r.missed_roots + sum(1 for w in caught if issubclass(w.category, effective.MissedRoot))
    ok = bad_mu == 0 and bad_s == 0 and missed == 0
    return CriterionResult(5, "", ok,
                           f"{len(mu_counts)} mu gaps ({bad_mu} bad), {len(s_poles) - 1} s gaps ({bad_s} bad), "
                           f"{missed} missed-root warnings",
                           {"bad_mu": bad_mu, "bad_s": bad_s, "missed": missed})


def _double_negative_intervals(resp, lo, hi):
    dec = bands.build_intervals(resp, (lo, hi), REFERENCE_KAPPA, strict=False)
    table = bands.sign_table(resp, dec)
    return [row for row in table if row[4] == bands.DOUBLE_NEGATIVE], table


@_timed(6, "band classification")
def criterion_6(s: ReferenceSetup) -> CriterionResult:
    r = s.response(REFERENCE_W)
    params = bands.RunParams(REFERENCE_RHO, TAU_SWEEP[0], TAU_SWEEP[1], REFERENCE_KAPPA, n_tau=TAU_SWEEP[2])
    sweep = bands.trace_branches(r, params)
    bad = 0
    n_samples = 0
    for b in sweep.branches:
        for smp in b.samples:
            n_samples += 1
            if np.sign(smp.mu_eff) != np.sign(smp.eps_inv) or smp.mu_eff / smp.eps_inv <= 0:
                bad += 1
    stop_with_samples = sum(1 for b in sweep.branches if b.classification == bands.STOP)
    tables = {}
    hits = {}
    dn, tables[REFERENCE_W] = _double_negative_intervals(r, 0.0, REFERENCE_W)
    hits[REFERENCE_W] = len(dn)
    if not dn:
        for w in W_SCAN:
            rw = s.response(w)
            found, tables[w] = _double_negative_intervals(rw, 0.0, w)
            hits[w] = len(found)
    # Informational: double-negative intervals anywhere in the registry range.
    full = {w: len(_double_negative_intervals(s.response(w), 0.0, s.response(w).scan_max)[0])
            for w in sorted(set(W_SCAN) | {DOUBLE_NEGATIVE_W})}
    ok = bad == 0 and stop_with_samples == 0 and sum(hits.values()) > 0
    summary = (f"{n_samples} pass-band samples, {bad} sign mismatches; double-negative intervals in (0, w): "
               + ", ".join(f"w={w:g}: {n}" for w, n in hits.items())
               + "; over the full range: " + ", ".join(f"w={w:g}: {n}" for w, n in full.items()))
    return CriterionResult(6, "", ok, summary,
                           {"bad": bad, "hits": hits, "full_range_hits": full, "sign_tables": tables,
                            "failures": len(sweep.failures)})


def _branch_points(s: ReferenceSetup):
    """(label, w, class, xi0, inner interval) for two double-positive and one
    double-negative branch point at tau = BRANCH_TAU."""
    out = []
    for w, want, skip in ((REFERENCE_W, bands.DOUBLE_POSITIVE, 0), (REFERENCE_W, bands.DOUBLE_POSITIVE, 1),
                          (DOUBLE_NEGATIVE_W, bands.DOUBLE_NEGATIVE, 0)):
        r = s.response(w)
        dec = bands.build_intervals(r, (0.0, r.scan_max), REFERENCE_KAPPA, strict=False)
        seen = 0
        for iv in dec.intervals:
            if bands.classify_interval(r, iv, REFERENCE_KAPPA) != want:
                continue
            roots = bands.solve_branch(r, BRANCH_TAU, REFERENCE_KAPPA, iv)
            if not roots:
                continue
            if seen == skip:
                out.append((f"{want} interval {iv.index} (w={w:g})", w, want, roots[0].xi0, iv))
                break
            seen += 1
    return out


def _series_runs(s: ReferenceSetup):
    if s._series is None:
        runs = []
        for label, w, cls, xi0, iv in _branch_points(s):
            ctx = series.build_context(s.mesh(), xi0, BRANCH_TAU, REFERENCE_KAPPA, w, bounds=iv.outer,
                                       forms=s.forms())
            runs.append((label, ctx, series.run_series(ctx, 4)))
        s._series = tuple(runs)
    return s._series


@_timed(7, "series realness")
def criterion_7(s: ReferenceSetup) -> CriterionResult:
    runs = _series_runs(s)
    worst = 0.0
    kinds = set()
    for label, ctx, st in runs:
        xi = np.asarray(st.xi)
        worst = max(worst, float(np.max(np.abs(xi.imag) / (1 + np.abs(xi)))))
        kinds.add(label.split()[0])
    ok = worst < 1e-8 and len(runs) == 3 and {bands.DOUBLE_POSITIVE, bands.DOUBLE_NEGATIVE} <= kinds
    return CriterionResult(7, "", ok, f"max |Im xi_m|/(1+|xi_m|) = {worst:.1e} over {len(runs)} branch points",
                           {"points": [(lbl, ctx.xi0, [complex(x) for x in st.xi]) for lbl, ctx, st in runs]})


@_timed(8, "step II compatibility")
def criterion_8(s: ReferenceSetup) -> CriterionResult:
    runs = _series_runs(s)
    worst = max(max(st.compat.values()) for _, _, st in runs)
    return CriterionResult(8, "", worst < 1e-7 and len(runs) > 0,
                           f"max scaled compatibility residual {worst:.1e} (tol 1e-7)", {"worst": worst})


@_timed(9, "oracle convergence")
def criterion_9(s: ReferenceSetup) -> CriterionResult:
    label, ctx, st = _series_runs(s)[0]
    branch = bloch.track_mode(s.mesh(), BRANCH_TAU, ORACLE_ETAS, REFERENCE_KAPPA, REFERENCE_W, ctx.xi0,
                              forms=s.forms(), predictor=lambda e: st.xi_of_eta(e, 4).real)
    rep = bloch.compare_with_series(branch, st, orders=(0, 2, 4))
    s2, s0 = rep.slopes[2], rep.slopes[0]
    ok = s2 >= 2.7 and 0.7 <= s0 <= 1.5
    return CriterionResult(9, "", ok, f"slope M=2 {s2:.2f} (need >= 2.7), slope M=0 {s0:.2f} (need [0.7, 1.5])",
                           {"eta": list(ORACLE_ETAS), "oracle": branch.xi.tolist(),
                            "residuals": {k: v.tolist() for k, v in rep.residuals.items()},
                            "slopes": rep.slopes, "xi1": complex(st.xi[1])})


@_timed(10, "homogeneous cell oracle")
def criterion_10(s: ReferenceSetup) -> CriterionResult:
    m = generate_mesh(empty_cell(), s.h)
    tau = 2.0
    prob = bloch.assemble_bloch(m, 0.05, tau, (0.6, 0.8), 0.0)
    modes = bloch.solve_bloch(prob, 3, sigma=0.9 * tau * tau)
    xi = min((md.xi for md in modes), key=lambda x: abs(x - tau * tau))
    rel = abs(xi - tau * tau) / (tau * tau)
    return CriterionResult(10, "", rel < 1e-3, f"xi = {xi:.10f}, relative error {rel:.1e} (tol 1e-3)",
                           {"xi": xi, "rel": rel})


@_timed(11, "determinism of pipeline outputs")
def criterion_11(s: ReferenceSetup) -> CriterionResult:
    import tempfile
    from pathlib import Path

    from .config import default_config
    from .pipeline import DATA_STAGES, run_pipeline

    cfg = default_config(h=1.0 / 32.0, tau_points=12)
    digests = []
    with tempfile.TemporaryDirectory() as tmp:
        for k in range(2):
            out = Path(tmp) / f"run{k}"
            code = run_pipeline(cfg, DATA_STAGES, out_dir=out, cache_dir=Path(tmp) / "cache", quiet=True)
            if code != 0:
                return CriterionResult(11, "", False, f"run {k} exited with {code}")
            digests.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    same = digests[0] == digests[1] and len(digests[0]) > 0
    return CriterionResult(11, "", same, f"{len(digests[0])} CSV files, byte-identical: {same}",
                           {"files": sorted(digests[0])})


CRITERIA = {f.number: f for f in (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
                                  criterion_7, criterion_8, criterion_9, criterion_10, criterion_11)}


def run_acceptance(numbers=None, setup: ReferenceSetup | None = None, echo=None) -> list:
    """Run the selected criteria (default all) and return their results.

    Args:
        echo: optional callable receiving each result line as it completes.
    """
    setup = ReferenceSetup() if setup is None else setup
    out = []
    for n in sorted(CRITERIA if numbers is None else numbers):
        res = CRITERIA[n](setup)
        out.append(res)
        if echo is not None:
            echo(res.line())
    return out
