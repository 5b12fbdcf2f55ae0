"""Pipeline orchestration: spectra -> effective -> bands -> series -> oracle,
plus the acceptance suite as the ``validate`` stage.

Data files are CSV with '#' header lines (artifact name, config hash,
column units) and floats written with 17 significant digits. Timings go to
the log only, so repeated runs give byte-identical CSVs.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import io
import logging
import math
import signal
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bands, bloch, effective, series
from .config import RunConfig
from .dirichlet import compute_dirichlet
from .electrostatic import compute_resonances_fem, compute_w1_projection
from .errors import ConfigError, GeometryError, MetabandError, NumericalFailure
from .fem import region_forms
from .mesh import Mesh, generate_mesh, mesh_from_bytes, mesh_to_bytes

log = logging.getLogger("metaband")

DATA_STAGES = ("spectra", "effective", "bands", "series", "oracle")
STAGES = DATA_STAGES + ("validate",)
DEPENDS = {"spectra": (), "effective": ("spectra",), "bands": ("effective",), "series": ("bands",),
           "oracle": ("series",), "validate": ()}

EXIT_OK, EXIT_ASSERT, EXIT_NUMERIC, EXIT_CONFIG = 0, 2, 3, 4
REALNESS_TOL = 1e-8


class AssertionFailure(MetabandError):
    """A pipeline invariant does not hold; carries the invariant's name."""

    def __init__(self, invariant: str, message: str):
        super().__init__(f"{invariant}: {message}")
        self.invariant = invariant


class StageTimeout(NumericalFailure):
    pass


def resolve_stages(requested) -> list:
    """Requested stages plus their dependencies, in pipeline order."""
    want = set()

    def add(s):
        if s not in STAGES:
            raise ConfigError(f"unknown stage {s!r}")
        if s not in want:
            want.add(s)
            for d in DEPENDS[s]:
                add(d)

    for s in requested:
        if s == "all":
            for t in STAGES:
                add(t)
        else:
            add(s)
    return [s for s in STAGES if s in want]


# --- CSV output ---------------------------------------------------------------

def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(x)


def write_csv(path: Path, artifact: str, digest: str, columns, rows, units=None):
    """RFC 4180 style CSV with '#' header lines and LF line endings."""
    units = units or ["1"] * len(columns)
    buf = io.StringIO()
    buf.write(f"# metaband {artifact}\n")
    buf.write(f"# config_hash: {digest}\n")
    buf.write("# units: " + ", ".join(f"{c} [{u}]" for c, u in zip(columns, units)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    path.write_text(buf.getvalue(), encoding="utf-8", newline="")


# --- state -------------------------------------------------------------------

@dataclass
class PipelineState:
    cfg: RunConfig
    out: Path
    cache: Path
    threads: int = 1
    mesh: Mesh | None = None
    dirichlet: object = None
    electro: object = None
    responses: dict = field(default_factory=dict)
    sweeps: dict = field(default_factory=dict)
    series_ctx: object = None
    series_state: object = None
    oracle: object = None
    diagnostics: list = field(default_factory=list)
    files: list = field(default_factory=list)

    @property
    def digest(self) -> str:
        return self.cfg.digest()

    def emit(self, name, artifact, columns, rows, units=None):
        if artifact not in self.cfg["outputs.artifacts"]:
            return
        path = self.out / name
        write_csv(path, artifact, self.digest, columns, rows, units)
        self.files.append(path)

    def diag(self, stage, name, value):
        self.diagnostics.append((stage, name, value))


def load_mesh(cfg: RunConfig, cache: Path | None) -> Mesh:
    """Generate the mesh or load it from the cache directory."""
    cell = cfg.cell
    h = cfg["numerics.h"]
    key = hashlib.sha256(f"{cell.key()}|{h!r}".encode()).hexdigest()
    path = None if cache is None else cache / f"mesh-{key[:24]}.mbmesh"
    if path is not None and path.exists():
        try:
            mesh, stored = mesh_from_bytes(path.read_bytes())
        except ValueError as exc:
            log.warning("ignoring unreadable mesh cache %s (%s)", path, exc)
        else:
            if stored == key[:64]:
                log.info("mesh cache hit: %s", path)
                return mesh
            log.warning("mesh cache key mismatch in %s", path)
    log.info("mesh cache miss: generating h=%s", h)
    mesh = generate_mesh(cell, h)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(mesh_to_bytes(mesh, key[:64]))
    return mesh


# --- stages ------------------------------------------------------------------

def stage_spectra(st: PipelineState):
    cfg = st.cfg
    st.mesh = load_mesh(cfg, st.cache)
    st.dirichlet = compute_dirichlet(st.mesh, cfg["numerics.N_dirichlet"], cfg["numerics.parseval_defect"])
    kap0 = cfg["sweep.kappa"][0]
    st.electro = compute_resonances_fem(st.mesh, kappa=kap0)
    d, e = st.dirichlet, st.electro
    if np.any(np.diff(d.eigenvalues) < 0) or np.any(d.eigenvalues <= 0):
        raise AssertionFailure("dirichlet_order", "eigenvalues must be positive and nondecreasing")
    if np.any(np.abs(e.eigenvalues) >= 0.5):
        raise AssertionFailure("resonance_interior", "resonance outside (-1/2, 1/2)")
    if cfg["numerics.N_dirichlet"] is None and d.parseval_defect >= cfg["numerics.parseval_defect"]:
        log.warning("Parseval defect %.3e not reached; the discrete spectrum is exhausted", d.parseval_defect)
    st.diag("spectra", "mesh_dofs", st.mesh.ndof)
    st.diag("spectra", "min_angle_deg", st.mesh.min_angle_deg())
    st.diag("spectra", "dirichlet_count", d.count)
    st.diag("spectra", "parseval_defect", d.parseval_defect)
    st.diag("spectra", "resonance_count", e.count)
    st.emit("dirichlet.csv", "spectra", ["j", "nu", "mean", "nonzero_mean"],
            [(j, d.eigenvalues[j], d.means[j], j in set(d.nonzero_mean_index.tolist())) for j in range(d.count)])
    st.emit("electrostatic.csv", "spectra", ["n", "lambda", "zeta", "alpha1", "alpha2"],
            [(n, e.eigenvalues[n], (e.eigenvalues[n] + 0.5) * cfg["physics.w"], e.alpha1[n], e.alpha2[n])
             for n in range(e.count)])
    if cfg["numerics.nystrom"]:
        from .greens import build_periodic_greens, compute_resonances_nystrom

        g = build_periodic_greens(cfg.cell, cfg["numerics.truncation"])
        ny = compute_resonances_nystrom(cfg.cell, g, cfg["numerics.nystrom_nodes"])
        st.diag("spectra", "nystrom_max_imag", ny.max_imag)
        st.emit("nystrom.csv", "spectra", ["n", "lambda"], list(enumerate(ny.eigenvalues)))


def _response(st: PipelineState, kap):
    cfg = st.cfg
    el = st.electro.with_kappa(kap)
    k = cfg["numerics.k_electro"]
    if k is not None:
        el = el.strongest(min(k, el.count))
    w1 = compute_w1_projection(st.mesh, kap)
    return effective.build_response(st.dirichlet, el, w1, cfg["physics.w"], scan_max=cfg["numerics.scan_max"])


def _sample_grid(resp, kap, n=400):
    poles = np.concatenate([resp.mu_poles, resp.s_poles(kap), [resp.w] if resp.w > 0 else []])
    xs = np.linspace(0.0, resp.scan_max, n + 1)[1:]
    if len(poles):
        g = effective.guard_distances(poles)
        near = np.any(np.abs(xs[:, None] - poles[None, :]) < g[None, :], axis=1)
        xs = xs[~near]
    return xs


def stage_effective(st: PipelineState):
    cfg = st.cfg
    for i, kap in enumerate(cfg["sweep.kappa"]):
        r = _response(st, kap)
        st.responses[i] = r
        if r.missed_roots:
            raise AssertionFailure("interleaving", f"{r.missed_roots} gaps with a missed root (direction {i})")
        st.diag("effective", f"k{i}.mu_eff0", float(effective.mu_eff_raw(r, 0.0)))
        st.diag("effective", f"k{i}.eps_inv0", float(effective.eps_inv_raw(r, 0.0, kap)))
        st.diag("effective", f"k{i}.mu_zeros", len(r.mu_zeros))
        st.diag("effective", f"k{i}.s_zeros", len(r.s_zeros))
        xs = _sample_grid(r, kap)
        mu = effective.mu_eff_raw(r, xs)
        ep = effective.eps_inv_raw(r, xs, kap)
        with np.errstate(divide="ignore", invalid="ignore"):
            n2 = np.where(ep != 0, mu / ep, np.nan)
        st.emit(f"effective_k{i}.csv", "effective", ["xi0", "mu_eff", "eps_inv", "n_eff_sq"],
                zip(xs, mu, ep, n2))
        reg = [("mu_pole", x) for x in r.mu_poles] + [("nu", x) for x in r.dirichlet.eigenvalues]
        reg += [("zeta", x) for x in r.zeta] + [("s_pole", x) for x in r.s_poles(kap)]
        reg += [("mu_zero", x) for x in r.mu_zeros] + [("s_zero", x) for x in r.s_zeros]
        if r.w > 0:
            reg.append(("w", r.w))
        st.emit(f"registry_k{i}.csv", "effective", ["kind", "value"], reg)


def stage_bands(st: PipelineState):
    cfg = st.cfg
    for i, kap in enumerate(cfg["sweep.kappa"]):
        r = st.responses[i]
        params = bands.RunParams(cfg["physics.rho"], cfg["sweep.tau_min"], cfg.tau_max, kap,
                                 (0.0, r.scan_max), cfg["sweep.tau_points"], cfg["numerics.M"], st.threads,
                                 cfg["numerics.guard_abs"], cfg["numerics.guard_rel"])
        sw = bands.trace_branches(r, params)
        st.sweeps[i] = sw
        rows = []
        for b in sw.branches:
            iid = str(b.interval_id) if b.sub_index == 0 else f"{b.interval_id}.{b.sub_index}"
            for smp in b.samples:
                if b.classification != bands.STOP and np.sign(smp.mu_eff) != np.sign(smp.eps_inv):
                    raise AssertionFailure("pass_band_signs", f"sign mismatch at tau={smp.tau!r}")
                rows.append((smp.tau, smp.xi0, iid, b.classification, smp.mu_eff, smp.eps_inv, smp.eta))
        rows.sort(key=lambda t: (t[0], t[1]))
        st.emit(f"bands_k{i}.csv", "bands", ["tau", "xi0", "interval_id", "class", "mu_eff", "eps_inv", "eta"], rows)
        ivs = []
        tags = {e.value: "|".join(e.tags) for e in sw.decomposition.excluded}
        for iv in sw.decomposition.intervals:
            ivs.append((iv.index, iv.outer[0], iv.outer[1], iv.inner[0], iv.inner[1],
                        sw.interval_classes[iv.index], tags.get(iv.outer[0], ""), tags.get(iv.outer[1], "")))
        st.emit(f"intervals_k{i}.csv", "bands",
                ["interval_id", "lo", "hi", "inner_lo", "inner_hi", "class", "left_tags", "right_tags"], ivs)
        st.diag("bands", f"k{i}.intervals", len(sw.decomposition.intervals))
        st.diag("bands", f"k{i}.dropped_intervals", len(sw.decomposition.dropped))
        st.diag("bands", f"k{i}.branches", len(sw.branches))
        st.diag("bands", f"k{i}.samples", len(rows))
        st.diag("bands", f"k{i}.failures", len(sw.failures))
        st.diag("bands", f"k{i}.continuity_flags", sum(len(bands.continuity_flags(b)) for b in sw.branches))
        for f in sw.failures:
            log.warning("sweep failure at tau=%s interval %s: %s %s", f.tau, f.interval_id, f.kind, f.message)


def stage_series(st: PipelineState):
    cfg = st.cfg
    kap = cfg["sweep.kappa"][0]
    r = st.responses[0]
    dec = st.sweeps[0].decomposition
    tau = cfg["series.tau"]
    try:
        iv = dec.interval(cfg["series.interval"])
    except KeyError:
        raise NumericalFailure(f"interval {cfg['series.interval']} not in the decomposition") from None
    roots = bands.solve_branch(r, tau, kap, iv, abs_guard=cfg["numerics.guard_abs"],
                               rel_guard=cfg["numerics.guard_rel"])
    if not roots:
        raise NumericalFailure(f"no dispersion root in interval {iv.index} at tau={tau!r}")
    forms = region_forms(st.mesh, kap)
    ctx = series.build_context(st.mesh, roots[0].xi0, tau, kap, cfg["physics.w"], bounds=iv.outer, forms=forms)
    state = series.run_series(ctx, cfg["numerics.M"], compat_tol=cfg["numerics.compat_tol"])
    st.series_ctx, st.series_state = ctx, state
    xi = np.asarray(state.xi)
    realness = float(np.max(np.abs(xi.imag) / (1 + np.abs(xi))))
    if realness >= REALNESS_TOL:
        raise AssertionFailure("series_realness", f"|Im xi_m|/(1+|xi_m|) = {realness:.2e}")
    st.diag("series", "xi0_spectral", roots[0].xi0)
    st.diag("series", "xi0_discrete", ctx.xi0)
    st.diag("series", "realness", realness)
    st.diag("series", "max_compat", max(state.compat.values()) if state.compat else 0.0)
    st.diag("series", "radius_estimate", state.radius)
    st.diag("series", "trace_mismatch", series.trace_mismatch(ctx, state))
    st.diag("series", "max_solvability_residual", float(np.max(series.solvability_residuals(ctx, state))))
    rows = []
    for m, x in enumerate(state.xi):
        rows.append((m, float(x.real), float(x.imag), state.compat.get(m + 1, 0.0) if m >= 1 else 0.0,
                     float(state.gamma[m].real) if m in state.gamma else float("nan")))
    st.emit("series.csv", "series", ["m", "xi_re", "xi_im", "compat_residual", "gamma"], rows)


def stage_oracle(st: PipelineState):
    cfg = st.cfg
    ctx, state = st.series_ctx, st.series_state
    etas = cfg["series.etas"]
    br = bloch.track_mode(st.mesh, ctx.tau, etas, ctx.kappa, ctx.w, ctx.xi0, forms=ctx.forms,
                          predictor=lambda e: state.xi_of_eta(e).real)
    st.oracle = br
    orders = list(range(state.order + 1))
    rep = bloch.compare_with_series(br, state, orders)
    for M in orders:
        st.diag("oracle", f"slope_M{M}", rep.slopes[M])
    st.diag("oracle", "max_residual", float(np.max(br.residual)))
    st.diag("oracle", "min_overlap", float(np.min(br.overlaps)))
    cols = ["eta", "xi_oracle", "residual", "overlap"] + [f"err_M{M}" for M in orders]
    rows = [[br.eta[k], br.xi[k], br.residual[k], br.overlaps[k]] + [rep.residuals[M][k] for M in orders]
            for k in range(len(br.eta))]
    st.emit("oracle.csv", "oracle", cols, rows)


def stage_validate(st: PipelineState):
    from .validation import run_acceptance

    lines = []
    results = run_acceptance(echo=lambda s: (log.info("%s", s), lines.append(s)))
    (st.out / "acceptance.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    failed = [r.number for r in results if not r.passed]
    for r in results:
        st.diag("validate", f"criterion_{r.number}", r.passed)
    if failed:
        raise AssertionFailure("acceptance", f"criteria {failed} failed")


RUNNERS = {"spectra": stage_spectra, "effective": stage_effective, "bands": stage_bands,
           "series": stage_series, "oracle": stage_oracle, "validate": stage_validate}


@contextlib.contextmanager
def _deadline(seconds):
    if not seconds or not hasattr(signal, "SIGALRM"):
        yield
        return

    def on_alarm(signum, frame):
        raise StageTimeout(f"stage exceeded {seconds} s")

    old = signal.signal(signal.SIGALRM, on_alarm)
    signal.setitimer(signal.ITIMER_REAL, seconds)
    try:
        yield
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        signal.signal(signal.SIGALRM, old)


def run_pipeline(cfg: RunConfig, stages, out_dir=None, cache_dir=None, threads: int = 1,
                 stage_timeout: float | None = None, quiet: bool = False) -> int:
    """Run the requested stages (and their dependencies).

    Returns:
        0 on success, 2 on a failed invariant or acceptance criterion, 3 on
        a numerical failure, 4 on a configuration error.
    """
    try:
        order = resolve_stages(stages)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    out = Path(out_dir if out_dir is not None else cfg["outputs.directory"])
    out.mkdir(parents=True, exist_ok=True)
    cache = Path(cache_dir) if cache_dir is not None else out / "cache"
    handler = logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(handler)
    # the run log is always complete; quiet only limits what reaches the console
    prev_level, prev_prop = log.level, log.propagate
    log.setLevel(logging.INFO)
    console = None
    if quiet:
        log.propagate = False
        console = logging.StreamHandler()
        console.setLevel(logging.WARNING)
        console.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        log.addHandler(console)
    st = PipelineState(cfg, out, cache, max(1, int(threads)))
    code = EXIT_OK
    try:
        (out / "config.resolved").write_text(cfg.echo(), encoding="utf-8")
        log.info("config hash %s; stages %s", cfg.digest(), ", ".join(order))
        for name in order:
            t0 = time.perf_counter()
            with _deadline(stage_timeout):
                RUNNERS[name](st)
            log.info("stage %s done in %.2f s", name, time.perf_counter() - t0)
    except AssertionFailure as exc:
        log.error("assertion failed: %s", exc)
        code = EXIT_ASSERT
    except (ConfigError, GeometryError) as exc:
        log.error("configuration error: %s", exc)
        code = EXIT_CONFIG
    except (MetabandError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s: %s", type(exc).__name__, exc)
        code = EXIT_NUMERIC
    finally:
        if st.diagnostics:
            write_csv(out / "diagnostics.csv", "diagnostics", cfg.digest(), ["stage", "name", "value"],
                      st.diagnostics)
        for stage, name, value in st.diagnostics:
            log.info("diagnostic %s.%s = %s", stage, name, fmt(value))
        log.removeHandler(handler)
        handler.close()
        if console is not None:
            log.removeHandler(console)
        log.setLevel(prev_level)
        log.propagate = prev_prop
    return code
