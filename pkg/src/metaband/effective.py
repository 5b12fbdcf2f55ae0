"""Frequency-dependent effective permeability, inverse permittivity, index,
the solvability coefficient of the series recursion, and their poles and
zeros.

Notation: xi0 is the leading-order squared frequency, w the plasma
parameter, z = xi0/(xi0 - w) the inverse plasmonic permittivity, and
s_n = (lam_n + 1/2) w the poles contributed by the electrostatic
resonances.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.optimize

from .dirichlet import DirichletSpectrum
from .electrostatic import ElectrostaticSpectrum, W1Projection
from .errors import NumericalFailure, PoleProximity

GUARD_ABS = 1e-6
GUARD_REL = 1e-4
ROOT_XTOL = 1e-10


class MissedRoot(UserWarning):
    """Root count in a gap disagrees with the interleaving property."""


class ZeroDenominator(NumericalFailure):
    pass


class Estimate(NamedTuple):
    value: float
    error: float


def guard_distances(points: np.ndarray, abs_guard: float = GUARD_ABS, rel_guard: float = GUARD_REL) -> np.ndarray:
    """Guard radius max(abs, rel * local gap) for each point of a set."""
    p = np.asarray(points, dtype=float)
    if len(p) == 0:
        return p.copy()
    order = np.argsort(p)
    s = p[order]
    gaps = np.full(len(s), np.inf)
    if len(s) > 1:
        d = np.diff(s)
        gaps[:-1] = d
        gaps[1:] = np.minimum(gaps[1:], d)
    g = np.where(np.isfinite(gaps), np.maximum(abs_guard, rel_guard * gaps), abs_guard)
    out = np.empty_like(g)
    out[order] = g
    return out


@dataclass(frozen=True)
class EffectiveResponse:
    """Spectral data needed by the closed-form evaluators.

    Attributes:
        dirichlet: Dirichlet spectrum of R.
        electro: electrostatic resonances (possibly truncated to the
            strongest few).
        w1: projection onto gradients vanishing on P.
        w: plasma parameter.
        theta_H, theta_P, theta_R: areas (discrete ones for mesh spectra).
        mu_zeros: zeros of mu_eff inside the scan range.
        s_zeros: zeros of eps_inv inside the scan range.
        scan_max: upper end of the registry scan.
        missed_roots: number of gaps whose root count disagreed with the
            interleaving property.
    """

    dirichlet: DirichletSpectrum
    electro: ElectrostaticSpectrum
    w1: W1Projection
    w: float
    theta_H: float
    theta_P: float
    theta_R: float
    mu_zeros: np.ndarray = field(default_factory=lambda: np.zeros(0))
    s_zeros: np.ndarray = field(default_factory=lambda: np.zeros(0))
    scan_max: float = 0.0
    missed_roots: int = 0

    # --- pole sets -----------------------------------------------------
    @property
    def mu_poles(self) -> np.ndarray:
        return self.dirichlet.mu

    @property
    def zeta(self) -> np.ndarray:
        """(lam + 1/2) w for every stored resonance."""
        return (self.electro.eigenvalues + 0.5) * self.w

    def s_poles(self, kappa=None) -> np.ndarray:
        """Poles of eps_inv from resonances with nonzero weight."""
        a1, a2 = self._weights(kappa)
        thr = 1e-8 * math.sqrt(self.theta_H + self.theta_P)
        keep = (np.abs(a1) >= thr) | (np.abs(a2) >= thr)
        return self.zeta[keep]

    def _weights(self, kappa):
        if kappa is None:
            return self.electro.alpha1, self.electro.alpha2
        return self.electro.weights(_unit(kappa))

    @property
    def w1_value(self) -> float:
        return self.w1.value


def _unit(kappa):
    k = np.asarray(kappa, dtype=float)
    return k / np.linalg.norm(k)


def _check_poles(xi0, poles, what):
    if len(poles) == 0:
        return np.inf
    g = guard_distances(poles)
    d = np.abs(xi0 - poles)
    j = int(np.argmin(d - g))
    if d[j] < g[j]:
        raise PoleProximity(f"xi0={xi0!r} within guard {g[j]:.3e} of {what} pole {poles[j]!r}",
                            pole=float(poles[j]), distance=float(d[j]))
    return float(np.min(d))


def build_response(dirichlet: DirichletSpectrum, electro: ElectrostaticSpectrum, w1: W1Projection,
                   w: float, theta_H: float | None = None, theta_P: float | None = None,
                   theta_R: float | None = None, scan_max: float | None = None,
                   samples_per_gap: int = 200) -> EffectiveResponse:
    """Assemble an EffectiveResponse and populate the mu* and s* registries.

    Args:
        scan_max: upper end of the zero scan; defaults to the largest
            computed Dirichlet eigenvalue.
    """
    if w < 0:
        raise ValueError("plasma parameter w must be nonnegative")
    resp = EffectiveResponse(
        dirichlet, electro, w1, float(w),
        electro.theta_H if theta_H is None else theta_H,
        electro.theta_P if theta_P is None else theta_P,
        dirichlet.theta_R if theta_R is None else theta_R,
    )
    top = float(dirichlet.eigenvalues[-1]) if scan_max is None else float(scan_max)
    return locate_zeros(resp, (0.0, top), samples_per_gap=samples_per_gap)


# --- evaluators -----------------------------------------------------------

def mu_eff_raw(resp: EffectiveResponse, xi0, form: str = "completed"):
    """Vectorized mu_eff without guard checks.

    ``form="completed"`` uses theta_H + theta_P + theta_R + xi0 sum m^2/(mu - xi0),
    which equals the plain truncated sum theta_H + theta_P + sum mu m^2/(mu - xi0)
    plus xi0-independent Parseval defect, so mu_eff(0) is exactly 1.
    """
    x = np.asarray(xi0, dtype=float)
    mu = resp.dirichlet.mu
    m2 = resp.dirichlet.mu_means ** 2
    xs = x[..., None]
    if form == "completed":
        return resp.theta_H + resp.theta_P + resp.theta_R + (xs * m2 / (mu - xs)).sum(-1)
    if form == "literal":
        return resp.theta_H + resp.theta_P + (mu * m2 / (mu - xs)).sum(-1)
    raise ValueError("form must be 'completed' or 'literal'")


def mu_eff_derivative(resp: EffectiveResponse, xi0):
    x = np.asarray(xi0, dtype=float)[..., None]
    mu = resp.dirichlet.mu
    return (mu * resp.dirichlet.mu_means**2 / (mu - x) ** 2).sum(-1)


def mu_tail(resp: EffectiveResponse, xi0: float, form: str = "completed") -> float:
    d = resp.dirichlet
    nxt = d.next_eigenvalue
    if not math.isfinite(nxt):
        return 0.0
    if xi0 >= nxt:
        return math.inf
    defect = d.parseval_defect
    if form == "completed":
        return abs(xi0) * defect / (nxt - xi0)
    return defect * nxt / (nxt - xi0)


def mu_eff(resp: EffectiveResponse, xi0: float, form: str = "completed") -> Estimate:
    """Effective permeability with a truncation error estimate.

    Raises:
        PoleProximity: if xi0 lies within the guard of a nonzero-mean
            Dirichlet eigenvalue.
    """
    _check_poles(xi0, resp.mu_poles, "Dirichlet")
    return Estimate(float(mu_eff_raw(resp, xi0, form)), mu_tail(resp, xi0, form))


def eps_inv_raw(resp: EffectiveResponse, xi0, kappa=None):
    """Vectorized eps_inv without guard checks.

    eps_inv = theta_H - W1 + z theta_P - sum_n (xi0 - w)(alpha1 + z alpha2)^2 / (xi0 - s_n)
    """
    x = np.asarray(xi0, dtype=float)
    a1, a2 = resp._weights(kappa)
    w = resp.w
    s = resp.zeta
    xs = x[..., None]
    z, g = _z_g(xs, w, s)
    b = a1 + z * a2
    base = resp.theta_H - resp.w1_value + z[..., 0] * resp.theta_P
    return base - (g * b * b).sum(-1)


def _z_g(xs, w, s):
    """z = xi0/(xi0 - w) and g_n = (xi0 - w)/(xi0 - s_n); both are 1
    identically when the Drude term is off."""
    if w == 0.0:
        return np.ones_like(xs), np.ones(np.broadcast(xs, s).shape)
    return xs / (xs - w), (xs - w) / (xs - s)


def eps_inv_weight_defect(resp: EffectiveResponse) -> float:
    """Upper bound on the weight mass left out by the stored resonances.

    By Bessel's inequality the complete sum of (alpha1 + alpha2)^2 is at most
    theta_H + theta_P - W1, so that bound minus the stored sum bounds the
    neglected part.
    """
    a = resp.electro.alpha1 + resp.electro.alpha2
    return max(0.0, resp.theta_H + resp.theta_P - resp.w1_value - float(a @ a))


def eps_inv(resp: EffectiveResponse, xi0: float, kappa=None) -> Estimate:
    """Inverse effective permittivity in direction kappa.

    Raises:
        PoleProximity: near w or a nonzero-weight resonance pole.
    """
    poles = np.concatenate([resp.s_poles(kappa), [resp.w]])
    dmin = _check_poles(xi0, poles, "electrostatic")
    val = float(eps_inv_raw(resp, xi0, kappa))
    return Estimate(val, 1e-14 * (1.0 + abs(val)) / min(1.0, dmin))


def n_eff_sq(resp: EffectiveResponse, xi0: float, kappa=None) -> Estimate:
    """mu_eff / eps_inv.

    Raises:
        ZeroDenominator: if |eps_inv| does not exceed its error estimate.
    """
    m = mu_eff(resp, xi0)
    e = eps_inv(resp, xi0, kappa)
    if abs(e.value) <= max(e.error, 1e-14):
        raise ZeroDenominator(f"eps_inv vanishes at xi0={xi0!r}")
    val = m.value / e.value
    err = abs(val) * (m.error / max(abs(m.value), 1e-300) + e.error / abs(e.value))
    return Estimate(val, err)


def dispersion_raw(resp: EffectiveResponse, xi0, tau: float, kappa=None):
    """D(xi0) = xi0 mu_eff(xi0) - tau^2 eps_inv(xi0)."""
    x = np.asarray(xi0, dtype=float)
    return x * mu_eff_raw(resp, x) - tau * tau * eps_inv_raw(resp, x, kappa)


def solvability_G_raw(resp: EffectiveResponse, xi0, tau: float, kappa=None, variant: str = "derived"):
    """Vectorized solvability coefficient.

    ``variant="derived"`` is d/dxi0 of tau^2 (xi0 - w) eps_inv - xi0 (xi0 - w) mu_eff,
    i.e. the coefficient multiplying xi_k in the order-(k+2) solvability
    condition. ``variant="literal"`` is the alternative closed form with the
    leading theta_H + theta_P term and the 2(xi0 + w) mu_eff factor.
    """
    x = np.asarray(xi0, dtype=float)
    xs = x[..., None]
    a1, a2 = resp._weights(kappa)
    w = resp.w
    s = resp.zeta
    z, g = _z_g(xs, w, s)
    b = a1 + z * a2
    spec = (g * g * b * b - 2.0 * g * (a1 + a2) * b).sum(-1)
    mu_val = mu_eff_raw(resp, x)
    dmu = mu_eff_derivative(resp, x)
    if variant == "derived":
        return (tau * tau * (resp.theta_H + resp.theta_P - resp.w1_value + spec)
                - (2.0 * x - w) * mu_val - x * (x - w) * dmu)
    if variant == "literal":
        return (resp.theta_H + resp.theta_P + tau * tau * (resp.w1_value - spec)
                - 2.0 * (x + w) * mu_val + x * (x - w) * dmu)
    raise ValueError("variant must be 'derived' or 'literal'")


def solvability_G(resp: EffectiveResponse, xi0: float, tau: float, kappa=None, variant: str = "derived") -> Estimate:
    _check_poles(xi0, resp.mu_poles, "Dirichlet")
    poles = np.concatenate([resp.s_poles(kappa), [resp.w]]) if resp.w > 0 else resp.s_poles(kappa)
    _check_poles(xi0, poles, "electrostatic")
    val = float(solvability_G_raw(resp, xi0, tau, kappa, variant))
    return Estimate(val, (1.0 + tau * tau) * mu_tail(resp, xi0) + 1e-13 * (1 + abs(val)))


# --- zero registries ------------------------------------------------------

def scan_grid(lo: float, hi: float, samples: int) -> np.ndarray:
    """Uniform samples on [lo, hi] plus geometric clusters toward both ends,
    where zeros close to a pole of small residue live."""
    u = np.linspace(0.0, 1.0, samples)
    width = hi - lo
    smallest = max(1e-13, 1e-12 * (abs(lo) + abs(hi)) / width)
    if smallest < 0.5 / samples:
        g = np.geomspace(smallest, 1.0 / samples, max(8, samples // 5))
        u = np.concatenate([u, g, 1.0 - g])
    return lo + width * np.unique(np.clip(u, 0.0, 1.0))


def _gap_roots(f, lo, hi, samples):
    """Sign-scan f on (lo, hi) and refine every sign change with brentq."""
    if not hi > lo:
        return [], (0.0, 0.0)
    x = scan_grid(lo, hi, samples)
    y = f(x)
    roots = []
    for i in range(len(x) - 1):
        if y[i] == 0.0:
            roots.append(float(x[i]))
        elif y[i] * y[i + 1] < 0.0:
            roots.append(float(scipy.optimize.brentq(lambda t: float(f(np.array(t))), x[i], x[i + 1],
                                                     xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps)))
    return roots, (float(y[0]), float(y[-1]))


def _gaps(poles, lo, hi):
    """Open gaps between consecutive poles in (lo, hi), shrunk by a relative
    1e-10 so that evaluation stays finite. Zeros within the pole guard are
    still found: a pole of tiny residue has its neighbouring zero very close
    to it."""
    p_all = np.sort(np.asarray(poles, dtype=float))
    p = p_all[(p_all > lo) & (p_all < hi)]
    lo_pole = bool(np.any(p_all == lo))
    hi_pole = bool(np.any(p_all == hi))
    edges = [lo] + list(p) + [hi]
    out = []
    for j, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        left_pole = j > 0 or lo_pole
        right_pole = j < len(p) or hi_pole
        ea = 1e-10 * max(1.0, abs(a)) if left_pole else 0.0
        eb = 1e-10 * max(1.0, abs(b)) if right_pole else 0.0
        out.append((a + ea, b - eb, left_pole, right_pole))
    return out


def locate_zeros(resp: EffectiveResponse, scan_range, kappa=None, samples_per_gap: int = 200) -> EffectiveResponse:
    """Fill the mu* and s* registries on ``scan_range``.

    Every gap between consecutive poles is sampled and each sign change is
    refined to 1e-10. A MissedRoot warning is issued when a gap between two
    poles holds a number of roots different from one while the endpoint
    signs demand one (mu_eff always does: it increases from -inf to +inf).
    """
    import dataclasses

    lo, hi = float(scan_range[0]), float(scan_range[1])
    missed = 0
    mu_roots = []
    for a, b, left_pole, right_pole in _gaps(resp.mu_poles, lo, hi):
        roots, _ = _gap_roots(lambda t: mu_eff_raw(resp, t), a, b, samples_per_gap)
        mu_roots.extend(roots)
        if left_pole and right_pole and len(roots) != 1:
            missed += 1
            warnings.warn(f"{len(roots)} zeros of mu_eff in ({a}, {b})", MissedRoot)
    s_roots = []
    poles = np.concatenate([resp.s_poles(kappa), [resp.w]]) if resp.w > 0 else resp.s_poles(kappa)
    for a, b, left_pole, right_pole in _gaps(poles, lo, hi):
        roots, (ya, yb) = _gap_roots(lambda t: eps_inv_raw(resp, t, kappa), a, b, samples_per_gap)
        s_roots.extend(roots)
        if left_pole and right_pole and ya * yb < 0 and len(roots) != 1:
            missed += 1
            warnings.warn(f"{len(roots)} zeros of eps_inv in ({a}, {b})", MissedRoot)
    return dataclasses.replace(resp, mu_zeros=np.array(mu_roots), s_zeros=np.array(s_roots),
                               scan_max=hi, missed_roots=missed)


def gamma_zeros(resp: EffectiveResponse, tau: float, scan_range, kappa=None,
                samples_per_gap: int = 200, variant: str = "derived") -> np.ndarray:
    """Zeros of the solvability coefficient for one tau."""
    lo, hi = float(scan_range[0]), float(scan_range[1])
    poles = np.concatenate([resp.mu_poles, resp.s_poles(kappa), [resp.w] if resp.w > 0 else []])
    out = []
    for a, b, _, _ in _gaps(poles, lo, hi):
        roots, _ = _gap_roots(lambda t: solvability_G_raw(resp, t, tau, kappa, variant), a, b, samples_per_gap)
        out.extend(roots)
    return np.array(out)


# --- direct cell problems (independent of the spectral sums) -------------

def direct_eps_inv(mesh, xi0: float, w: float, kappa=(1.0, 0.0)) -> float:
    """Inverse effective permittivity from the two-phase cell problem.

    Solves int_H grad psi . grad v + z int_P grad psi . grad v
    = -int_H kappa . grad v - z int_P kappa . grad v on periodic fields over
    Y\\R with zero mean, and returns
    theta_H + z theta_P + int_H kappa . grad psi + z int_P kappa . grad psi.
    """
    from .fem import ConstrainedSolver, assemble_stiffness, gradient_integrals, load_vector
    from .geometry import Region

    kap = _unit(kappa)
    z = 1.0 if w == 0 else xi0 / (xi0 - w)
    o = np.union1d(mesh.region_dofs(Region.H), mesh.region_dofs(Region.P))
    B = assemble_stiffness(mesh, {Region.H: 1.0, Region.P: z})[o][:, o]
    gH = (gradient_integrals(mesh, (Region.H,)) @ kap)[o]
    gP = (gradient_integrals(mesh, (Region.P,)) @ kap)[o]
    c = load_vector(mesh, (Region.H, Region.P))[o]
    rhs = -(gH + z * gP)
    x, _ = ConstrainedSolver(B, c[None, :]).solve(rhs, compatibility_tol=1e-8)
    return float(mesh.region_area(Region.H) + z * mesh.region_area(Region.P) + (gH + z * gP) @ x)
