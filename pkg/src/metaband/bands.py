"""Interval decomposition of the frequency axis, quasistatic dispersion
branches and their pass/stop band classification.

The excluded frequencies are the electrostatic poles zeta_i, all Dirichlet
eigenvalues nu_j, the zeros mu*_j of mu_eff and s*_j of eps_inv, and the
plasma parameter w itself. Between consecutive excluded points mu_eff and
eps_inv are continuous and of constant sign, so an interval is either a
pass band (both signs equal) or a stop band.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .effective import (
    GUARD_ABS,
    GUARD_REL,
    EffectiveResponse,
    _unit,
    dispersion_raw,
    eps_inv,
    guard_distances,
    locate_zeros,
    mu_eff,
    scan_grid,
    solvability_G_raw,
)
from .errors import EmptyInterval, GammaCollision, MetabandError, SignAmbiguity

MERGE_TOL = 1e-10
ROOT_SAMPLES = 200
ROOT_XTOL = 1e-10
RESIDUAL_REL = 1e-8
DEFAULT_TAU_POINTS = 160

DOUBLE_POSITIVE = "double_positive"
DOUBLE_NEGATIVE = "double_negative"
STOP = "stop"


@dataclass(frozen=True)
class ExcludedPoint:
    value: float
    tags: tuple


@dataclass(frozen=True)
class Interval:
    """One open interval O_n between excluded points and its guarded core I_n."""

    index: int
    outer: tuple
    inner: tuple

    def contains(self, xi0: float) -> bool:
        return self.inner[0] < xi0 < self.inner[1]


@dataclass(frozen=True)
class IntervalDecomposition:
    excluded: tuple
    intervals: tuple
    scan_range: tuple
    kappa: tuple
    dropped: tuple = ()

    def interval(self, index: int) -> Interval:
        for iv in self.intervals:
            if iv.index == index:
                return iv
        raise KeyError(index)

    def locate(self, xi0: float) -> Interval | None:
        for iv in self.intervals:
            if iv.contains(xi0):
                return iv
        return None


def _excluded_sources(resp: EffectiveResponse, kappa, lo, hi):
    kap = tuple(_unit(kappa if kappa is not None else resp.electro.kappa))
    same = np.allclose(kap, _unit(resp.electro.kappa), rtol=0, atol=1e-15)
    if hi > resp.scan_max * (1 + 1e-12) + 1e-12:
        raise ValueError(f"zero registries cover (0, {resp.scan_max}); requested upper end {hi}")
    s_zeros = resp.s_zeros if same else locate_zeros(resp, (0.0, resp.scan_max), kap).s_zeros
    srcs = [(resp.zeta, "zeta"), (resp.dirichlet.eigenvalues, "nu"),
            (resp.mu_zeros, "mu*"), (s_zeros, "s*")]
    if resp.w > 0:
        srcs.append((np.array([resp.w]), "w"))
    return kap, srcs


def merge_points(sources, lo: float, hi: float, tol: float = MERGE_TOL) -> tuple:
    """Sorted union of tagged point sets restricted to [lo, hi]; points
    closer than tol (relative to max(1, |x|)) are merged with joint tags."""
    items = sorted((float(v), t) for vals, t in sources for v in np.asarray(vals, dtype=float)
                   if lo <= v <= hi)
    out = []
    for v, t in items:
        if out and v - out[-1][0] <= tol * max(1.0, abs(v)):
            if t not in out[-1][1]:
                out[-1][1].append(t)
            continue
        out.append((v, [t]))
    return tuple(ExcludedPoint(v, tuple(tags)) for v, tags in out)


def build_intervals(resp: EffectiveResponse, scan_range, kappa=None,
                    abs_guard: float = GUARD_ABS, rel_guard: float = GUARD_REL,
                    strict: bool = True) -> IntervalDecomposition:
    """Split ``scan_range`` at the excluded points and shrink by the guard.

    Each excluded point x gets the guard max(abs_guard, rel_guard * gap to
    its nearest excluded neighbour); the inner interval stays that far from
    both ends. Scan-range ends that are not excluded are kept as they are;
    an end that coincides with an excluded point is guarded like one.

    Args:
        strict: raise on an interval consumed by the guards; otherwise the
            interval is listed in ``dropped`` and the others keep their ids.

    Raises:
        EmptyInterval: if the guards consume an interval (strict mode).
        ValueError: if the zero registries do not cover the range.
    """
    lo, hi = float(scan_range[0]), float(scan_range[1])
    if not hi > lo:
        raise ValueError("empty scan range")
    kap, srcs = _excluded_sources(resp, kappa, lo, hi)
    closed = merge_points(srcs, lo, hi)
    g_all = guard_distances(np.array([e.value for e in closed]), abs_guard, rel_guard)
    at_lo = bool(closed) and closed[0].value - lo <= MERGE_TOL * max(1.0, abs(lo))
    at_hi = bool(closed) and hi - closed[-1].value <= MERGE_TOL * max(1.0, abs(hi))
    inner = slice(1 if at_lo else 0, len(closed) - 1 if at_hi else len(closed))
    excl = closed[inner]
    pts = np.array([e.value for e in excl])
    edges = [lo] + list(pts) + [hi]
    guards = ([g_all[0] if at_lo else 0.0] + list(g_all[inner])
              + [g_all[-1] if at_hi else 0.0])
    intervals, dropped = [], []
    for n in range(len(edges) - 1):
        a, b = edges[n], edges[n + 1]
        ia, ib = a + guards[n], b - guards[n + 1]
        if not ib > ia:
            if strict:
                raise EmptyInterval(f"guard consumes interval {n} = ({a!r}, {b!r})")
            dropped.append((n, (a, b)))
            continue
        intervals.append(Interval(n, (a, b), (ia, ib)))
    return IntervalDecomposition(excl, tuple(intervals), (lo, hi), kap, tuple(dropped))


# --- roots of the dispersion relation ------------------------------------

@dataclass(frozen=True)
class BranchRoot:
    xi0: float
    interval_id: int
    sub_index: int
    residual: float
    gamma: float


def _dispersion_scale(resp, x, tau, kappa):
    from .effective import eps_inv_raw, mu_eff_raw

    return max(abs(x * float(mu_eff_raw(resp, x))), tau * tau * abs(float(eps_inv_raw(resp, x, kappa))))


def solve_branch(resp: EffectiveResponse, tau: float, kappa, interval: Interval,
                 samples: int = ROOT_SAMPLES, xtol: float = ROOT_XTOL,
                 abs_guard: float = GUARD_ABS, rel_guard: float = GUARD_REL) -> list:
    """All roots of D = xi0 mu_eff - tau^2 eps_inv inside the interval.

    The interval is sign-scanned and every sign change refined with brentq.
    At a root, the solvability coefficient equals -(xi0 - w) D'(xi0), so it
    vanishes exactly where the root is double; a root is rejected when a
    zero of that coefficient lies within the guard of it.

    Returns:
        List of BranchRoot, empty when D has no sign change (a stop band or
        a pass band this tau does not reach).

    Raises:
        GammaCollision: if a returned root sits within the guard of a zero
            of the solvability coefficient.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    a, b = interval.inner
    x = scan_grid(a, b, samples)
    f = lambda t: dispersion_raw(resp, t, tau, kappa)  # noqa: E731
    y = f(x)
    found = []
    for i in range(len(x) - 1):
        if y[i] == 0.0:
            found.append(float(x[i]))
        elif y[i] * y[i + 1] < 0.0:
            r = scipy.optimize.brentq(lambda t: float(f(np.array(t))), x[i], x[i + 1],
                                      xtol=min(xtol, 1e-3 * (x[i + 1] - x[i])),
                                      rtol=4 * np.finfo(float).eps)
            found.append(float(r))
    if not found:
        return []
    G = lambda t: solvability_G_raw(resp, t, tau, kappa)  # noqa: E731
    gy = G(x)
    gz = [float(scipy.optimize.brentq(lambda t: float(G(np.array(t))), x[i], x[i + 1], xtol=xtol))
          for i in range(len(x) - 1) if gy[i] * gy[i + 1] < 0.0]
    out = []
    for k, r in enumerate(found):
        for z0 in gz:
            guard = max(abs_guard, rel_guard * (b - a))
            if abs(r - z0) < guard:
                raise GammaCollision(f"root {r!r} within {guard:.2e} of solvability zero {z0!r} "
                                     f"(tau={tau!r}, interval {interval.index})")
        res = abs(float(f(np.array(r))))
        out.append(BranchRoot(r, interval.index, k, res / max(_dispersion_scale(resp, r, tau, kappa), 1e-300),
                              float(G(np.array(r)))))
    return out


def classify(resp: EffectiveResponse, xi0: float, kappa=None) -> str:
    """double_positive, double_negative or stop from the signs of mu_eff and
    eps_inv at xi0.

    Raises:
        SignAmbiguity: if either value does not exceed its error estimate.
    """
    m = mu_eff(resp, xi0)
    e = eps_inv(resp, xi0, kappa)
    for name, est in (("mu_eff", m), ("eps_inv", e)):
        if abs(est.value) <= est.error:
            raise SignAmbiguity(f"{name}={est.value:.3e} within its error {est.error:.3e} at xi0={xi0!r}")
    if m.value > 0 and e.value > 0:
        return DOUBLE_POSITIVE
    if m.value < 0 and e.value < 0:
        return DOUBLE_NEGATIVE
    return STOP


def classify_interval(resp: EffectiveResponse, interval: Interval, kappa=None) -> str:
    """Class of an interval, evaluated at the midpoint of its core (signs are
    constant on the whole interval)."""
    a, b = interval.inner
    return classify(resp, 0.5 * (a + b), kappa)


def sign_table(resp: EffectiveResponse, decomp: IntervalDecomposition) -> list:
    """(interval id, inner range, sign of mu_eff, sign of eps_inv, class) per interval."""
    from .effective import eps_inv_raw, mu_eff_raw

    rows = []
    for iv in decomp.intervals:
        c = 0.5 * (iv.inner[0] + iv.inner[1])
        m = float(mu_eff_raw(resp, c))
        e = float(eps_inv_raw(resp, c, decomp.kappa))
        try:
            cls = classify(resp, c, decomp.kappa)
        except (SignAmbiguity, MetabandError):
            cls = "ambiguous"
        rows.append((iv.index, iv.inner, int(np.sign(m)), int(np.sign(e)), cls))
    return rows


# --- sweeps ---------------------------------------------------------------

@dataclass(frozen=True)
class RunParams:
    """Sweep parameters.

    Attributes:
        rho: cell size over wavelength ratio d / sqrt(eps_r).
        tau_min, tau_max: range of tau = |k| sqrt(eps_r) / (...) sampled
            geometrically.
        kappa: propagation direction (normalized on use).
        scan_range: frequency range (xi0) to decompose.
        n_tau: number of tau samples.
        M: series order used downstream.
        threads: workers for the (tau, interval) sweep.
        abs_guard, rel_guard: guard around excluded frequencies and
            solvability zeros.
    """

    rho: float
    tau_min: float
    tau_max: float
    kappa: tuple = (1.0, 0.0)
    scan_range: tuple | None = None
    n_tau: int = DEFAULT_TAU_POINTS
    M: int = 4
    threads: int = 1
    abs_guard: float = GUARD_ABS
    rel_guard: float = GUARD_REL

    def __post_init__(self):
        if not (self.rho > 0 and 0 < self.tau_min <= self.tau_max and self.n_tau >= 1):
            raise ValueError("need rho > 0, 0 < tau_min <= tau_max and n_tau >= 1")

    def tau_grid(self) -> np.ndarray:
        if self.n_tau == 1:
            return np.array([self.tau_min])
        return np.geomspace(self.tau_min, self.tau_max, self.n_tau)

    def admissible(self, tau: float) -> bool:
        """Sub-wavelength (0 < eta < 1) and first Brillouin zone."""
        eta = self.rho * tau
        k = _unit(self.kappa)
        return 0 < eta < 1 and bool(np.all(np.abs(tau * self.rho * k) <= 2 * math.pi))


@dataclass(frozen=True)
class BranchSample:
    tau: float
    xi0: float
    mu_eff: float
    eps_inv: float
    eta: float


@dataclass
class Branch:
    interval_id: int
    sub_index: int
    kappa: tuple
    classification: str
    samples: list = field(default_factory=list)

    @property
    def taus(self) -> np.ndarray:
        return np.array([s.tau for s in self.samples])

    @property
    def xi0(self) -> np.ndarray:
        return np.array([s.xi0 for s in self.samples])


@dataclass(frozen=True)
class SweepFailure:
    tau: float
    interval_id: int
    kind: str
    message: str


@dataclass
class BandSweep:
    decomposition: IntervalDecomposition
    interval_classes: dict
    branches: list
    failures: list
    skipped_tau: list


def _solve_point(resp, kappa, params, tau, iv):
    try:
        roots = solve_branch(resp, tau, kappa, iv, abs_guard=params.abs_guard, rel_guard=params.rel_guard)
    except MetabandError as exc:
        return tau, iv.index, [], SweepFailure(tau, iv.index, type(exc).__name__, str(exc))
    return tau, iv.index, roots, None


def trace_branches(resp: EffectiveResponse, params: RunParams) -> BandSweep:
    """Solve the dispersion relation for every admissible tau and interval.

    Per-point failures are collected in the result; the sweep never aborts.
    Pairs are processed in parallel when ``params.threads > 1`` and merged in
    (interval, sub index, tau) order.
    """
    from .effective import eps_inv_raw, mu_eff_raw

    rng = params.scan_range or (0.0, resp.scan_max)
    decomp = build_intervals(resp, rng, params.kappa, params.abs_guard, params.rel_guard, strict=False)
    kap = decomp.kappa
    classes = {}
    for iv in decomp.intervals:
        try:
            classes[iv.index] = classify_interval(resp, iv, kap)
        except MetabandError:
            classes[iv.index] = "ambiguous"
    taus = params.tau_grid()
    ok = [t for t in taus if params.admissible(t)]
    skipped = [float(t) for t in taus if not params.admissible(t)]
    jobs = [(float(t), iv) for t in ok for iv in decomp.intervals]
    if params.threads > 1:
        with concurrent.futures.ThreadPoolExecutor(params.threads) as ex:
            results = list(ex.map(lambda j: _solve_point(resp, kap, params, *j), jobs))
    else:
        results = [_solve_point(resp, kap, params, *j) for j in jobs]
    failures = [r[3] for r in results if r[3] is not None]
    branches = {}
    for tau, idx, roots, _ in results:
        for r in roots:
            key = (idx, r.sub_index)
            if key not in branches:
                branches[key] = Branch(idx, r.sub_index, kap, classes[idx])
            m = float(mu_eff_raw(resp, r.xi0))
            e = float(eps_inv_raw(resp, r.xi0, kap))
            branches[key].samples.append(BranchSample(tau, r.xi0, m, e, params.rho * tau))
    out = [branches[k] for k in sorted(branches)]
    for b in out:
        b.samples.sort(key=lambda s: s.tau)
    return BandSweep(decomp, classes, out, failures, skipped)


def continuity_flags(branch: Branch, factor: float = 10.0) -> list:
    """Indices k where the step xi0[k] - xi0[k-1] departs from the secant
    prediction of the previous two samples by more than ``factor`` times the
    predicted step (plus a small absolute floor); these flag pole crossings
    or root switching."""
    t, x = branch.taus, branch.xi0
    flags = []
    for k in range(2, len(x)):
        slope = (x[k - 1] - x[k - 2]) / (t[k - 1] - t[k - 2])
        pred = slope * (t[k] - t[k - 1])
        actual = x[k] - x[k - 1]
        if abs(actual - pred) > factor * abs(pred) + 1e-9 * (1 + abs(x[k])):
            flags.append(k)
    return flags
