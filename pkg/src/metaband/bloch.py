"""Direct finite-eta Bloch solver: the quadratic eigenproblem in xi.

For the periodic factor u of a Bloch wave with shift eta k the discrete form

    tau^2 (xi - w) F_H + tau^2 xi F_P + eta^2 (xi - w) F_R - eta^2 xi (xi - w) M_Y

is a matrix polynomial Q(xi) = xi^2 A2 + xi A1 + A0 with Hermitian
coefficients. It is solved through its companion linearization with a
shift-invert Arnoldi iteration that only factors Q(sigma).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceFailure, ModeAmbiguity, ModeNotFound
from .fem import Field, RegionForms, load_vector, region_forms
from .geometry import Region
from .mesh import Mesh

RESIDUAL_TOL = 1e-7
IMAG_TOL = 1e-8
OVERLAP_THRESHOLD = 0.8


@dataclass(frozen=True)
class BlochProblem:
    """Quadratic pencil of one (rho, tau, kappa, w) configuration.

    Attributes:
        A2, A1, A0: Hermitian sparse coefficients of Q(xi).
        rho, tau, eta: eta = rho tau.
        kappa: unit direction.
        w: plasma parameter.
        mass: M_Y, used for field overlaps.
        mean_weights: int_{Y\\R} phi_j, used to normalize modes.
    """

    A2: sp.csr_matrix
    A1: sp.csr_matrix
    A0: sp.csr_matrix
    rho: float
    tau: float
    eta: float
    kappa: tuple
    w: float
    mass: sp.csr_matrix
    mean_weights: np.ndarray
    coords: np.ndarray

    @property
    def n(self) -> int:
        return self.A0.shape[0]

    def Q(self, xi: complex) -> sp.csr_matrix:
        return (xi * xi * self.A2 + xi * self.A1 + self.A0).tocsr()

    def hermitian_defect(self) -> float:
        """Largest relative deviation of a coefficient from Hermitian."""
        out = 0.0
        for A in (self.A2, self.A1, self.A0):
            d = abs(A - A.conj().T).max() if A.nnz else 0.0
            s = abs(A).max() if A.nnz else 1.0
            out = max(out, float(d / max(s, 1e-300)))
        return out


@dataclass(frozen=True)
class BlochMode:
    """One real eigenvalue of the pencil.

    Attributes:
        xi: eigenvalue (real part; the imaginary part is in ``imag``).
        imag: imaginary part of the computed eigenvalue.
        u: periodic factor normalized to mean 1 over Y\\R (or over Y when
            the mean there vanishes).
        amplitude: normalization factor applied to the raw eigenvector.
        residual: scaled residual of Q(xi) u.
    """

    xi: float
    imag: float
    u: Field
    amplitude: complex
    residual: float

    def bloch_field(self, prob: BlochProblem) -> np.ndarray:
        """u(y) exp(i eta k . y) at the dof coordinates."""
        phase = np.exp(1j * prob.eta * (prob.coords @ np.asarray(prob.kappa)))
        return self.u.values * phase


def assemble_bloch(mesh: Mesh, rho: float, tau: float, kappa=(1.0, 0.0), w: float = 0.0,
                   forms: RegionForms | None = None) -> BlochProblem:
    """Collect the Bloch form by powers of xi.

    Raises:
        ValueError: unless 0 < rho tau < 1.
    """
    eta = rho * tau
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta = rho * tau = {eta!r} must lie in (0, 1)")
    if forms is None:
        forms = region_forms(mesh, kappa)
    FH = forms.shifted(Region.H, eta)
    FP = forms.shifted(Region.P, eta)
    FR = forms.shifted(Region.R, eta)
    MY = forms.M_Y.tocsr()
    t2, e2 = tau * tau, eta * eta
    A2 = (-e2 * MY).astype(complex).tocsr()
    A1 = (t2 * (FH + FP) + e2 * FR + e2 * w * MY).tocsr()
    A0 = (-w * (t2 * FH + e2 * FR)).tocsr()
    mw = load_vector(mesh, (Region.H, Region.P))
    return BlochProblem(A2, A1, A0, float(rho), float(tau), float(eta), forms.kappa, float(w),
                        MY, mw, mesh.dof_coordinates())


def _residual(prob, xi, u):
    r = np.linalg.norm(prob.Q(xi) @ u)
    s = (abs(xi) ** 2 * np.linalg.norm(prob.A2 @ u) + abs(xi) * np.linalg.norm(prob.A1 @ u)
         + np.linalg.norm(prob.A0 @ u))
    return float(r / max(s, 1e-300))


def _normalize(prob, u):
    """Scale u to mean 1 over Y\\R (over Y if that mean vanishes, else to a
    unit largest entry). Returns (scaled u, factor removed)."""
    scale = float(np.abs(u).max())
    for weights in (prob.mean_weights, np.asarray(prob.mass.sum(axis=0)).ravel()):
        total = weights.sum()
        a = (weights @ u) / total if total > 0 else 0.0
        if abs(a) > 1e-8 * scale:
            return u / a, a
    a = u[np.argmax(np.abs(u))]
    return u / a, a


def rayleigh_roots(prob: BlochProblem, u: np.ndarray):
    """Roots of u^H Q(xi) u = 0 and the discriminant of that quadratic.

    The coefficients are real because each block is Hermitian, so the
    roots are real whenever the discriminant is positive.
    """
    a = np.vdot(u, prob.A2 @ u).real
    b = np.vdot(u, prob.A1 @ u).real
    c = np.vdot(u, prob.A0 @ u).real
    disc = b * b - 4.0 * a * c
    sq = np.sqrt(complex(disc))
    return ((-b - sq) / (2 * a), (-b + sq) / (2 * a)), disc


def _refine(prob, lu, x, u, steps):
    """Inverse iteration with the factored Q(sigma); the eigenvalue is
    updated by Newton steps on the Rayleigh functional u^H Q(x) u = 0."""
    for _ in range(steps):
        dQ = (2.0 * x) * (prob.A2 @ u) + prob.A1 @ u
        u = lu.solve(dQ)
        u /= np.linalg.norm(u)
        for _ in range(3):
            q = np.vdot(u, prob.Q(x) @ u)
            dq = np.vdot(u, (2.0 * x) * (prob.A2 @ u) + prob.A1 @ u)
            x = x - q / dq
    return x, u


def solve_bloch(prob: BlochProblem, n_modes: int = 6, sigma: float | None = None, extra: int = 6,
                spurious_tol: float = 1e-6, refine: int = 3) -> list:
    """Real eigenvalues of the pencil closest to ``sigma``.

    The companion pencil [[0, I], [-A0, -A1]] - xi [[I, 0], [0, A2]] is
    inverted at sigma by factoring Q(sigma) once. The eigenvalues 0 and w
    are discarded: their eigenvectors live in the kernels of the H+R and P
    coefficients (fields supported inside P, resp. vanishing on P's
    closure) and are artifacts of clearing the xi and xi - w denominators.

    Q(0) is singular whenever w > 0 (fields supported in P), so the
    default shift is 0.5 tau^2, below the light line of the empty cell.

    Each mode is polished by ``refine`` steps of inverse iteration with the
    same factorization, with the eigenvalue updated to the nearest root of
    the Rayleigh quadratic.

    Raises:
        ConvergenceFailure: if a returned mode misses the residual or
            realness target. The exception carries the modes as ``.modes``.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be at least 1")
    if sigma is None:
        sigma = 0.5 * prob.tau * prob.tau
    n = prob.n
    A1s = (prob.A1 + sigma * prob.A2).tocsr()
    lu = spla.splu(prob.Q(sigma).tocsc())

    def op(v):
        v1, v2 = v[:n], v[n:]
        b2 = prob.A2 @ v2
        x1 = -lu.solve(b2 + A1s @ v1)
        return np.concatenate([x1, v1 + sigma * x1])

    L = spla.LinearOperator((2 * n, 2 * n), matvec=op, dtype=complex)
    v0 = np.ones(2 * n, dtype=complex)
    spurious = (0.0, prob.w)
    k = min(n_modes + extra, 2 * n - 2)
    while True:
        theta, vecs = spla.eigs(L, k=k, which="LM", v0=v0, tol=1e-12, maxiter=20 * n)
        xi = sigma + 1.0 / theta
        keep = [j for j in np.argsort(np.abs(xi - sigma), kind="stable")
                if not any(abs(xi[j] - s) <= spurious_tol * (1.0 + abs(s)) for s in spurious)]
        if len(keep) >= n_modes or k >= min(2 * n - 2, 8 * (n_modes + extra)):
            break
        k = min(2 * k, 2 * n - 2)
    modes, bad = [], []
    for j in keep[:n_modes]:
        x, u = xi[j], vecs[:n, j]
        res = _residual(prob, x, u)
        if refine:
            x2, u2 = _refine(prob, lu, x, u, refine)
            res2 = _residual(prob, x2, u2)
            if res2 < res and abs(x2 - x) < 1e-6 * (1.0 + abs(x)):
                x, u, res = x2, u2, res2
        un, amp = _normalize(prob, u)
        mode = BlochMode(float(x.real), float(x.imag), Field(un), complex(amp), res)
        modes.append(mode)
        if res > RESIDUAL_TOL or abs(x.imag) > IMAG_TOL * (1.0 + abs(x)):
            bad.append(mode)
    modes.sort(key=lambda m: m.xi)
    if bad:
        err = ConvergenceFailure(f"{len(bad)} Bloch modes miss the residual or realness target")
        err.modes = modes
        raise err
    return modes


def overlap(prob: BlochProblem, a: BlochMode, b: BlochMode) -> float:
    """|<a, b>_M| / (|a|_M |b|_M)."""
    ua, ub = a.u.values, b.u.values
    num = abs(np.vdot(ua, prob.mass @ ub))
    den = math.sqrt(abs(np.vdot(ua, prob.mass @ ua)) * abs(np.vdot(ub, prob.mass @ ub)))
    return float(num / max(den, 1e-300))


def nearest_mode(modes, target: float, tol: float):
    """Mode closest to target; ModeAmbiguity if another lies within tol of it."""
    if not modes:
        raise ModeNotFound("no Bloch mode returned")
    d = np.array([abs(m.xi - target) for m in modes])
    order = np.argsort(d)
    if len(order) > 1 and abs(d[order[1]] - d[order[0]]) < tol:
        raise ModeAmbiguity(f"two modes within {tol:.3e} of {target!r}")
    return modes[int(order[0])]


@dataclass(frozen=True)
class TrackedBranch:
    """Oracle eigenvalue of one mode along an eta ladder."""

    eta: np.ndarray
    xi: np.ndarray
    residual: np.ndarray
    overlaps: np.ndarray


def track_mode(mesh: Mesh, tau: float, etas, kappa, w: float, start: float, n_modes: int = 6,
               forms: RegionForms | None = None, predictor=None) -> TrackedBranch:
    """Follow one mode over increasing eta at fixed tau (rho = eta / tau).

    The mode nearest to ``predictor(eta)`` (default: the previous value,
    initially ``start``) is selected and checked against the previous one
    by field overlap.

    Raises:
        ModeNotFound: if the selected mode has overlap below the threshold
            with its predecessor.
    """
    forms = region_forms(mesh, kappa) if forms is None else forms
    etas = np.asarray(etas, dtype=float)
    xs, rs, ovs = [], [], []
    prev_mode, target = None, float(start)
    for eta in etas:
        if predictor is not None:
            target = float(predictor(eta))
        prob = assemble_bloch(mesh, eta / tau, tau, kappa, w, forms)
        modes = solve_bloch(prob, n_modes, sigma=target * (1.0 - 1e-3) - 1e-6)
        d = np.array([abs(m.xi - target) for m in modes])
        mode = modes[int(np.argmin(d))]
        ov = 1.0 if prev_mode is None else overlap(prob, prev_mode, mode)
        if ov < OVERLAP_THRESHOLD:
            raise ModeNotFound(f"mode lost at eta={eta!r} (overlap {ov:.3f})")
        xs.append(mode.xi)
        rs.append(mode.residual)
        ovs.append(ov)
        prev_mode, target = mode, mode.xi
    return TrackedBranch(etas, np.array(xs), np.array(rs), np.array(ovs))


@dataclass(frozen=True)
class ConvergenceReport:
    """r_M(eta) = |xi_oracle(eta) - sum_{l<=M} eta^l xi_l| and fitted slopes."""

    eta: np.ndarray
    oracle: np.ndarray
    residuals: dict
    slopes: dict


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x (nan if any y is zero)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.any(y <= 0):
        return math.nan
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def compare_with_series(branch: TrackedBranch, series, orders=None) -> ConvergenceReport:
    """Tabulate series truncation errors against the oracle branch."""
    orders = range(series.order + 1) if orders is None else orders
    res, slopes = {}, {}
    for M in orders:
        r = np.abs(branch.xi - series.xi_of_eta(branch.eta, M))
        res[M] = r
        slopes[M] = loglog_slope(branch.eta, r)
    return ConvergenceReport(branch.eta, branch.xi, res, slopes)
