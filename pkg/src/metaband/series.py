"""Order-by-order power series of a Bloch branch in the cell size eta.

With u = sum eta^m u_m, u_m = i^m u0bar psi_m and xi = sum eta^m xi_m, the
discrete Bloch form

    a(u, v) = tau^2 (xi - w) F_H + tau^2 xi F_P + eta^2 (xi - w) F_R
              - eta^2 xi (xi - w) M_Y,      F_X = S_X + i eta C_X + eta^2 M_X,

is expanded in powers of eta. The coefficient of eta^k applied to the
partial series (a Cauchy product) is the order-k residual. Each order is
then closed in three steps:

* Step I: rows interior to R at order m+2 fix u_m inside R from its trace,
  up to the multiple xi_m of psi_star.
* Step II: rows on Y\\R at order m fix u_m there (zero mean), up to the
  multiple xi_{m-1} of psi_hat. Their compatibility condition is the sum of
  all rows at order m, which the previous Step III made zero.
* Step III: the sum of all rows at order m+2 is affine in xi_m; its slope is
  the solvability coefficient and its root is xi_m.

All boundary value problems are solved directly on the mesh; the spectral
representations of the same fields are computed as cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.sparse.linalg as spla

from .errors import CompatibilityFailure, GammaCollision, PoleProximity, SeriesFailure
from .fem import ConstrainedSolver, Field, RegionForms, load_vector, region_forms
from .geometry import Region
from .mesh import Mesh

COMPAT_TOL = 1e-7
IMAG_TOL = 1e-8
GAMMA_REL_TOL = 1e-10


class _RealLU:
    """splu of a real matrix applied to complex right-hand sides."""

    def __init__(self, matrix):
        self.lu = spla.splu(matrix.tocsc())

    def solve(self, b):
        b = np.asarray(b)
        if np.iscomplexobj(b):
            return self.lu.solve(np.ascontiguousarray(b.real)) + 1j * self.lu.solve(np.ascontiguousarray(b.imag))
        return self.lu.solve(b)


@dataclass
class LeadingFields:
    """psi_0 on Y and psi_1 on Y\\R at a given xi0 (u-convention, u0bar=1)."""

    xi0: float
    z: float
    u0: np.ndarray
    u1: np.ndarray
    helm: _RealLU
    bz: ConstrainedSolver
    eps_inv: float
    mu_eff: float


@dataclass
class SeriesContext:
    """Everything fixed by the branch point.

    Attributes:
        mesh: triangulation of the cell.
        forms: region blocks for the direction kappa.
        xi0: branch point used by the recursion (the root of the discrete
            quasistatic dispersion relation when refined).
        xi0_input: branch point supplied by the caller.
        tau, w, kappa, amplitude: problem parameters.
        z: xi0 / (xi0 - w).
        o_dofs, ri_dofs, rb_dofs: dofs of Y\\R, interior of R, boundary of R.
        lead: psi_0 and psi_1 with their factorizations.
        psi_star: zero-trace solution of (-Laplace - xi0) psi_star = psi_0 in R.
        chi_hat: xi_{m-1} coefficient of u_m on Y\\R (chi_hat = i psi_hat).
    """

    mesh: Mesh
    forms: RegionForms
    xi0: float
    xi0_input: float
    tau: float
    w: float
    kappa: tuple
    amplitude: complex
    z: float
    o_dofs: np.ndarray
    ri_dofs: np.ndarray
    rb_dofs: np.ndarray
    c_O: np.ndarray
    lead: LeadingFields
    psi_star: np.ndarray
    chi_hat: np.ndarray

    @property
    def e0(self) -> float:
        return self.xi0 - self.w

    @property
    def psi_hat(self) -> np.ndarray:
        return -1j * self.chi_hat


@dataclass
class SeriesState:
    """Coefficients of the series.

    Attributes:
        u: u_m = i^m u0bar psi_m on all dofs; u[M+1] holds only the Y\\R part.
        xi: complex xi_m.
        compat: scaled compatibility residual of each Step II order.
        gamma: slope of the order-(m+2) solvability sum in xi_m, per m.
        radius: ratio-test radius estimate 1 / max |xi_m|^(1/m).
    """

    u: list
    xi: list
    amplitude: complex
    compat: dict = field(default_factory=dict)
    gamma: dict = field(default_factory=dict)
    radius: float = math.inf

    @property
    def order(self) -> int:
        return len(self.xi) - 1

    def psi(self, m: int) -> np.ndarray:
        return (-1j) ** m * self.u[m] / self.amplitude

    def xi_real(self) -> np.ndarray:
        return np.array([complex(x).real for x in self.xi])

    def max_imag(self) -> float:
        return max((abs(complex(x).imag) / (1.0 + abs(x)) for x in self.xi), default=0.0)

    def xi_of_eta(self, eta, M: int | None = None) -> np.ndarray:
        """Truncated sum of eta^l xi_l for l <= M (real part)."""
        M = self.order if M is None else M
        e = np.asarray(eta, dtype=float)
        return sum(complex(self.xi[l]).real * e**l for l in range(M + 1))


# --- residual of the expanded form -------------------------------------------

def _coef(xi, w, l, shifted):
    x = xi[l] if l < len(xi) else 0.0
    return x - w if (shifted and l == 0) else x


def order_residual(forms, u, xi, k, tau, w, with_scale=False):
    """Vector of the eta^k coefficient of a(u, phi_i) over all test basis
    functions phi_i, for partial coefficient lists u (None or missing
    entries count as zero) and xi.

    With ``with_scale`` the sum of the moduli of the individual
    contributions is returned as well, as a size reference.
    """
    F = forms
    ndof = F.M[Region.H].shape[0]
    t2 = tau * tau
    cache = {}

    def get(n):
        if n < 0 or n >= len(u) or u[n] is None:
            return None
        return u[n]

    def A(reg, n):
        key = (reg, n)
        if key not in cache:
            out = np.zeros(ndof, dtype=complex)
            hit = False
            for mat, j, c in ((F.S[reg], n, 1.0), (F.C[reg], n - 1, 1j), (F.M[reg], n - 2, 1.0)):
                v = get(j)
                if v is not None:
                    out += c * (mat @ v)
                    hit = True
            cache[key] = out if hit else None
        return cache[key]

    r = np.zeros(ndof, dtype=complex)
    mag = 0.0

    def add(c, a):
        nonlocal r, mag
        if a is not None and c != 0.0:
            r += c * a
            if with_scale:
                mag += abs(c) * float(np.abs(a).sum())

    for l in range(k + 1):
        el = _coef(xi, w, l, True)
        xl = _coef(xi, w, l, False)
        if el != 0.0:
            add(t2 * el, A(Region.H, k - l))
            add(el, A(Region.R, k - 2 - l))
        if xl != 0.0:
            add(t2 * xl, A(Region.P, k - l))
    for j in range(k - 1):
        v = get(k - 2 - j)
        if v is None:
            continue
        pj = sum(_coef(xi, w, l, False) * _coef(xi, w, j - l, True) for l in range(j + 1))
        add(-pj, F.M_Y @ v if pj != 0.0 else None)
    return (r, mag) if with_scale else r


# --- leading order ------------------------------------------------------------

def _dof_sets(mesh):
    o = np.union1d(mesh.region_dofs(Region.H), mesh.region_dofs(Region.P))
    ri = mesh.interior_dofs(Region.R)
    rb = mesh.boundary_dofs(Region.R)
    return o, ri, rb


def leading_fields(mesh: Mesh, forms: RegionForms, xi0: float, w: float) -> LeadingFields:
    """psi_0 (Helmholtz extension of 1 into R) and psi_1 (two-phase cell
    problem with coefficient z in P), both by direct solves."""
    o, ri, _ = _dof_sets(mesh)
    if w > 0 and xi0 == w:
        raise PoleProximity("xi0 equals the plasma parameter", pole=w, distance=0.0)
    z = 1.0 if w == 0 else xi0 / (xi0 - w)
    ndof = mesh.ndof
    u0 = np.zeros(ndof, dtype=complex)
    u0[o] = 1.0
    helm = None
    if len(ri):
        K = (forms.S[Region.R] - xi0 * forms.M[Region.R]).tocsr()
        helm = _RealLU(K[ri][:, ri])
        rhs = -(K[ri] @ u0.real)
        u0[ri] = helm.solve(rhs)
        if not np.all(np.isfinite(u0)):
            raise PoleProximity(f"xi0={xi0!r} is a discrete Dirichlet eigenvalue")
    Bz = (forms.S[Region.H] + z * forms.S[Region.P]).tocsr()[o][:, o]
    c_O = load_vector(mesh, (Region.H, Region.P))[o]
    bz = ConstrainedSolver(Bz, c_O[None, :])
    # B_z u1 = -i (C_H + z C_P) u0 on rows of Y\R
    rhs = -1j * ((forms.C[Region.H] + z * forms.C[Region.P]) @ u0)[o]
    x, _ = bz.solve(rhs)
    u1 = np.zeros(ndof, dtype=complex)
    u1[o] = x
    psi1 = -1j * u1
    kap = np.asarray(forms.kappa)
    from .fem import gradient_integrals

    gH = gradient_integrals(mesh, (Region.H,)) @ kap
    gP = gradient_integrals(mesh, (Region.P,)) @ kap
    eps = (mesh.region_area(Region.H) + z * mesh.region_area(Region.P)
           + gH @ psi1.real + z * (gP @ psi1.real))
    mu = float((forms.M_Y @ u0.real).sum())
    return LeadingFields(xi0, z, u0, u1, helm, bz, float(eps), mu)


def discrete_dispersion(mesh: Mesh, forms: RegionForms, xi0: float, tau: float, w: float) -> float:
    """xi0 mu_eff - tau^2 eps_inv with both factors from direct cell solves."""
    lf = leading_fields(mesh, forms, xi0, w)
    return xi0 * lf.mu_eff - tau * tau * lf.eps_inv


def refine_branch_point(mesh: Mesh, forms: RegionForms, xi0: float, tau: float, w: float,
                        bounds=None, xtol: float = 1e-13) -> float:
    """Root of the discrete dispersion relation nearest to ``xi0``.

    Raises:
        SeriesFailure: if no root is found inside ``bounds``.
    """
    f = lambda x: discrete_dispersion(mesh, forms, x, tau, w)
    lo, hi = (-math.inf, math.inf) if bounds is None else bounds
    step = 1e-4 * max(abs(xi0), 1e-3)
    try:
        sol = scipy.optimize.root_scalar(f, x0=xi0, x1=xi0 + step, method="secant", xtol=xtol, maxiter=60)
        if sol.converged and lo < sol.root < hi:
            return float(sol.root)
    except (ArithmeticError, PoleProximity):
        pass
    # Fall back to an expanding bracket.
    f0 = f(xi0)
    d = step
    for _ in range(60):
        for a, b in ((xi0 - d, xi0), (xi0, xi0 + d)):
            a, b = max(a, lo), min(b, hi)
            if b > a and f(a) * f(b) < 0:
                return float(scipy.optimize.brentq(f, a, b, xtol=xtol))
        d *= 2.0
    raise SeriesFailure(f"no root of the discrete dispersion relation near {xi0!r} (D={f0:.3e})")


def build_context(mesh: Mesh, xi0: float, tau: float, kappa=(1.0, 0.0), w: float = 0.0,
                  amplitude: complex = 1.0, refine: bool = True, bounds=None,
                  forms: RegionForms | None = None, resp=None) -> SeriesContext:
    """Factor the operators at a branch point.

    Args:
        xi0: branch point (typically from the spectral dispersion solver).
        refine: replace xi0 by the nearby root of the discrete dispersion
            relation so that the order-2 compatibility holds exactly.
        bounds: interval the refined root must stay in.
        resp: optional EffectiveResponse used for pole guard checks.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if forms is None:
        forms = region_forms(mesh, kappa)
    if resp is not None:
        from .effective import _check_poles

        _check_poles(xi0, resp.dirichlet.eigenvalues, "Dirichlet")
        if resp.w > 0:
            _check_poles(xi0, np.concatenate([resp.zeta, [resp.w]]), "electrostatic")
    x = refine_branch_point(mesh, forms, xi0, tau, w, bounds) if refine else float(xi0)
    lead = leading_fields(mesh, forms, x, w)
    o, ri, rb = _dof_sets(mesh)
    ndof = mesh.ndof
    amp = complex(amplitude)
    psi_star = np.zeros(ndof)
    if len(ri):
        rhs = (forms.M[Region.R] @ lead.u0.real)[ri]
        psi_star[ri] = lead.helm.solve(rhs)
    # tau^2 e0 B_z chi = -tau^2 [(S_H + S_P) u1 + i (C_H + C_P) u0] on Y\R rows
    e0 = x - w
    src = ((forms.S[Region.H] + forms.S[Region.P]) @ lead.u1
           + 1j * ((forms.C[Region.H] + forms.C[Region.P]) @ lead.u0))[o]
    y, _ = lead.bz.solve(-src / e0)
    chi = np.zeros(ndof, dtype=complex)
    chi[o] = y
    kap = forms.kappa
    return SeriesContext(mesh, forms, x, float(xi0), float(tau), float(w), kap, amp, lead.z,
                         o, ri, rb, load_vector(mesh, (Region.H, Region.P))[o], lead,
                         psi_star, chi)


# --- the three steps ----------------------------------------------------------

def _residual(ctx, u, xi, k):
    return order_residual(ctx.forms, u, xi, k, ctx.tau, ctx.w)


def step_I(ctx: SeriesContext, state: SeriesState, m: int) -> np.ndarray:
    """psi~_m inside R: u_m with the xi_m contribution removed.

    Uses the rows interior to R at order m+2 with trace u_m on the boundary
    of R. Returns the full u-convention vector (Y\\R part unchanged).
    """
    um = state.u[m].copy()
    um[ctx.ri_dofs] = 0.0
    if len(ctx.ri_dofs) == 0:
        return um
    u = list(state.u[:m]) + [um]
    xi = list(state.xi[:m]) + [0.0]
    r = _residual(ctx, u, xi, m + 2)[ctx.ri_dofs]
    um[ctx.ri_dofs] = ctx.lead.helm.solve(-r) / ctx.e0
    return um


def step_II(ctx: SeriesContext, state: SeriesState, m: int, check: bool = True,
            tol: float = COMPAT_TOL):
    """psi'_m on Y\\R for m >= 2 (u-convention), with xi_{m-1} set to zero.

    Returns (u'_m, scaled compatibility residual).

    Raises:
        CompatibilityFailure: if the sum of the right-hand side exceeds
            ``tol`` relative to its l1 norm.
    """
    if m < 2:
        raise ValueError("step II applies to m >= 2")
    u = list(state.u[:m])
    xi = list(state.xi[: m - 1]) + [0.0]
    r = _residual(ctx, u, xi, m)[ctx.o_dofs]
    scale = float(np.abs(r).sum())
    compat = abs(r.sum()) / scale if scale > 0 else 0.0
    if check and compat > tol:
        raise CompatibilityFailure(f"order {m}: compatibility residual {compat:.3e}", compat, m)
    y, _ = ctx.lead.bz.solve(-r / (ctx.tau**2 * ctx.e0))
    out = np.zeros(ctx.mesh.ndof, dtype=complex)
    out[ctx.o_dofs] = y
    return out, compat


def step_III(ctx: SeriesContext, state: SeriesState, m: int, u_tilde: np.ndarray, u_prime: np.ndarray):
    """xi_m from the sum of all rows at order m+2, which is affine in xi_m.

    Returns (xi_m, slope). The slope is the discrete solvability coefficient.

    Raises:
        GammaCollision: if the slope vanishes relative to the size of the
            terms it is made of.
    """
    base = list(state.u[:m])
    xi = list(state.xi[:m])
    r0 = _residual(ctx, base + [u_tilde, u_prime], xi + [0.0], m + 2)
    a = state.amplitude
    r1 = _residual(ctx, base + [u_tilde + a * ctx.psi_star, u_prime + a * ctx.chi_hat], xi + [1.0], m + 2)
    s0, s1 = r0.sum(), r1.sum()
    g = s1 - s0
    scale = float(np.abs(r1 - r0).sum())
    if abs(g) <= GAMMA_REL_TOL * max(scale, 1e-300):
        raise GammaCollision(f"solvability coefficient vanishes at xi0={ctx.xi0!r}")
    return -s0 / g, g


def run_series(ctx: SeriesContext, M: int = 4, compat_tol: float = COMPAT_TOL) -> SeriesState:
    """Coefficients xi_0..xi_M and u_0..u_M (plus u_{M+1} on Y\\R).

    Raises:
        SeriesFailure: (or a subclass) tagged with the failing order.
    """
    if M < 0:
        raise ValueError("M must be nonnegative")
    amp = ctx.amplitude
    state = SeriesState([amp * ctx.lead.u0, amp * ctx.lead.u1], [complex(ctx.xi0)], amp)
    for m in range(1, M + 1):
        try:
            u_t = step_I(ctx, state, m)
            u_p, compat = step_II(ctx, state, m + 1, tol=compat_tol)
            state.compat[m + 1] = compat
            xi_m, g = step_III(ctx, state, m, u_t, u_p)
        except SeriesFailure as exc:
            exc.order = m
            raise
        state.gamma[m] = g
        state.u[m] = u_t + xi_m * amp * ctx.psi_star
        state.u[m + 1:] = [u_p + xi_m * amp * ctx.chi_hat]
        state.xi.append(complex(xi_m))
    state.radius = ratio_radius(state.xi)
    return state


def ratio_radius(xi) -> float:
    """1 / max_{m>=1} |xi_m|^(1/m) over the nonzero computed orders."""
    vals = [abs(complex(x)) ** (1.0 / m) for m, x in enumerate(xi) if m >= 1 and abs(complex(x)) > 0]
    vals = [v for v in vals if v > 1e-300]
    return 1.0 / max(vals) if vals else math.inf


# --- diagnostics --------------------------------------------------------------

def trace_mismatch(ctx: SeriesContext, state: SeriesState) -> float:
    """Largest jump of u_m across the boundary of R between the Y\\R part
    and the R part. Both parts share the boundary dofs in this
    discretization, so the jump is the difference of the stored values."""
    worst = 0.0
    for m in range(state.order + 1):
        outer = state.u[m][ctx.rb_dofs]
        inner = _inner_part(ctx, state.u[m])[ctx.rb_dofs]
        worst = max(worst, float(np.max(np.abs(outer - inner), initial=0.0)))
    return worst


def _inner_part(ctx, u):
    v = np.zeros_like(u)
    idx = np.union1d(ctx.ri_dofs, ctx.rb_dofs)
    v[idx] = u[idx]
    return v


def mean_outside(ctx: SeriesContext, state: SeriesState) -> np.ndarray:
    """|int_{Y\\R} psi_m| for every m >= 1."""
    return np.array([abs(ctx.c_O @ state.u[m][ctx.o_dofs]) for m in range(1, len(state.u))])


def solvability_residuals(ctx: SeriesContext, state: SeriesState) -> np.ndarray:
    """|sum of all rows| at orders 1..M+1 (each should vanish), scaled by
    the total size of the contributions."""
    out = []
    for k in range(1, state.order + 2):
        r, mag = order_residual(ctx.forms, state.u, state.xi, k, ctx.tau, ctx.w, with_scale=True)
        out.append(abs(r.sum()) / mag if mag > 0 else 0.0)
    return np.array(out)


def series_residual(ctx: SeriesContext, state: SeriesState, eta: float, n_test: int = 50,
                    seed: int = 0) -> float:
    """Scaled residual of the discrete Bloch form for the truncated series.

    The form is applied to u = sum_{m<=M} eta^m u_m at xi = sum eta^m xi_m
    and tested against ``n_test`` random fields; the result is the largest
    |a(u, v)| over the tests divided by the sum of the magnitudes of the
    individual terms.
    """
    F = ctx.forms
    M = state.order
    U = sum(eta**m * state.u[m] for m in range(M + 1))
    X = sum(eta**m * state.xi[m] for m in range(M + 1))
    w, t2 = ctx.w, ctx.tau**2
    terms = [
        t2 * (X - w) * (F.shifted(Region.H, eta) @ U),
        t2 * X * (F.shifted(Region.P, eta) @ U),
        eta**2 * (X - w) * (F.shifted(Region.R, eta) @ U),
        -(eta**2) * X * (X - w) * (F.M_Y @ U),
    ]
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((ctx.mesh.ndof, n_test))
    total = sum(terms) @ V
    mags = sum(np.abs(t @ V) for t in terms)
    return float(np.max(np.abs(total) / np.maximum(mags, 1e-300)))


# --- spectral cross-checks ---------------------------------------------------

def _l2(mesh_mass, v):
    return float(math.sqrt(max(0.0, np.real(np.vdot(v, mesh_mass @ v)))))


def psi0_spectral(ctx: SeriesContext, dirichlet, form: str = "completed") -> np.ndarray:
    """psi_0 in R from the Dirichlet eigenpairs on the same mesh.

    ``completed``: 1 + xi0 sum m_n phi_n / (nu_n - xi0), which is exact for
    the complete discrete spectrum. ``literal``: sum nu_n m_n phi_n / (nu_n - xi0).
    Returns values on the interior R dofs.
    """
    nu, m, phi = dirichlet.eigenvalues, dirichlet.means, dirichlet.fields
    if form == "completed":
        return 1.0 + phi @ (ctx.xi0 * m / (nu - ctx.xi0))
    if form == "literal":
        return phi @ (nu * m / (nu - ctx.xi0))
    raise ValueError("form must be 'completed' or 'literal'")


def psi_star_spectral(ctx: SeriesContext, dirichlet) -> np.ndarray:
    nu, m, phi = dirichlet.eigenvalues, dirichlet.means, dirichlet.fields
    return phi @ (nu * m / (nu - ctx.xi0) ** 2)


def dirichlet_tail_bounds(ctx: SeriesContext, dirichlet) -> dict:
    """L2 bounds on the neglected Dirichlet modes of psi_0 and psi_star."""
    nxt = dirichlet.next_eigenvalue
    d = math.sqrt(dirichlet.parseval_defect)
    if not math.isfinite(nxt):
        return {"psi0": 0.0, "psi_star": 0.0}
    g = abs(nxt - ctx.xi0)
    return {"psi0": abs(ctx.xi0) * d / g, "psi_star": nxt * d / g**2}


def _w3_coefficients(ctx, electro, variant):
    lam = electro.eigenvalues
    a1, a2 = electro.weights(ctx.kappa)
    z = ctx.z
    if variant == "operator":
        den = 1.0 + (z - 1.0) * (0.5 - lam)
    elif variant == "expansion":
        den = 1.0 + (z - 1.0) * (1.0 - lam)
    else:
        raise ValueError("variant must be 'operator' or 'expansion'")
    return -(a1 + z * a2) / den


def psi1_spectral(ctx: SeriesContext, electro, w1, variant: str = "operator") -> np.ndarray:
    """psi_1 on Y\\R from the complete discrete resonance spectrum.

    The resonant part uses the denominator 1 + (z-1)(1/2 - lam) of the
    operator representation (``operator``) or 1 + (z-1)(1 - lam)
    (``expansion``). The part along gradients vanishing on P is minus the
    projection field ``w1.field``. Values on ``electro.dofs``, zero mean.
    """
    c = _w3_coefficients(ctx, electro, variant)
    out = np.zeros(ctx.mesh.ndof)
    out[electro.dofs] = electro.fields @ c
    if w1.field is not None:
        out -= w1.field.full(ctx.mesh.ndof)
    v = out[ctx.o_dofs]
    v -= (ctx.c_O @ v) / ctx.c_O.sum()
    return v


def psi_hat_spectral(ctx: SeriesContext, electro) -> np.ndarray:
    """psi_hat = sum psi_n (g_n (a1 + z a2) - (a1 + a2)) / (xi0 - s_n) on Y\\R."""
    lam = electro.eigenvalues
    a1, a2 = electro.weights(ctx.kappa)
    s = (lam + 0.5) * ctx.w
    g = 1.0 if ctx.w == 0 else (ctx.xi0 - ctx.w) / (ctx.xi0 - s)
    coef = (g * (a1 + ctx.z * a2) - (a1 + a2)) / (ctx.xi0 - s)
    out = np.zeros(ctx.mesh.ndof)
    out[electro.dofs] = electro.fields @ coef
    v = out[ctx.o_dofs]
    v -= (ctx.c_O @ v) / ctx.c_O.sum()
    return v


def cross_checks(ctx: SeriesContext, dirichlet=None, electro=None, w1=None) -> dict:
    """L2 discrepancies between direct solves and spectral representations."""
    out = {}
    MR = ctx.forms.M[Region.R].tocsr()
    MO = (ctx.forms.M[Region.H] + ctx.forms.M[Region.P]).tocsr()
    ri, o = ctx.ri_dofs, ctx.o_dofs
    MRi = MR[ri][:, ri]
    MOo = MO[o][:, o]
    if dirichlet is not None and dirichlet.fields is not None and len(ri):
        direct0 = ctx.lead.u0.real[ri]
        tails = dirichlet_tail_bounds(ctx, dirichlet)
        out["psi0_completed"] = _l2(MRi, direct0 - psi0_spectral(ctx, dirichlet, "completed"))
        out["psi0_literal"] = _l2(MRi, direct0 - psi0_spectral(ctx, dirichlet, "literal"))
        out["psi_star"] = _l2(MRi, ctx.psi_star[ri] - psi_star_spectral(ctx, dirichlet))
        out["psi0_tail"] = tails["psi0"]
        out["psi_star_tail"] = tails["psi_star"]
    if electro is not None and electro.fields is not None:
        psi1 = (-1j * ctx.lead.u1).real[o]
        if w1 is not None:
            for variant in ("operator", "expansion"):
                out[f"psi1_{variant}"] = _l2(MOo, psi1 - psi1_spectral(ctx, electro, w1, variant))
        ph = ctx.psi_hat.real[o]
        out["psi_hat"] = _l2(MOo, ph - psi_hat_spectral(ctx, electro))
        out["psi1_norm"] = _l2(MOo, psi1)
        out["psi_hat_norm"] = _l2(MOo, ph)
    return out


def spectral_gamma(ctx: SeriesContext) -> float:
    """Discrete solvability coefficient (the xi_1 slope). It does not depend
    on the order and does not require xi0 to be a root."""
    state = SeriesState([ctx.lead.u0, ctx.lead.u1], [complex(ctx.xi0)], 1.0)
    u_t = step_I(ctx, state, 1)
    u_p, _ = step_II(ctx, state, 2, check=False)
    _, g = step_III(ctx, state, 1, u_t, u_p)
    return g


# --- named leading fields -----------------------------------------------------

@dataclass(frozen=True)
class CheckedField:
    """A directly solved field with its optional spectral cross-check.

    Attributes:
        field: direct solve (primary path).
        spectral: spectral reconstruction on the same dofs, or None.
        discrepancy: L2 distance between the two, or None.
        bound: truncation bound the discrepancy should respect, or None.
    """

    field: Field
    spectral: np.ndarray | None = None
    discrepancy: float | None = None
    bound: float | None = None


def _mass(ctx, regions, dofs):
    M = sum(ctx.forms.M[r] for r in regions).tocsr()
    return M[dofs][:, dofs]


def psi0_in_R(ctx: SeriesContext, dirichlet=None) -> CheckedField:
    """psi_0 on the interior dofs of R (Helmholtz extension of 1)."""
    ri = ctx.ri_dofs
    direct = ctx.lead.u0.real[ri]
    if dirichlet is None or dirichlet.fields is None:
        return CheckedField(Field(direct, ri, "R"))
    spec = psi0_spectral(ctx, dirichlet, "completed")
    return CheckedField(Field(direct, ri, "R"), spec, _l2(_mass(ctx, (Region.R,), ri), direct - spec),
                        dirichlet_tail_bounds(ctx, dirichlet)["psi0"])


def psi1_outside(ctx: SeriesContext, electro=None, w1=None) -> CheckedField:
    """psi_1 on Y\\R (zero mean), with the operator-form spectral check."""
    o = ctx.o_dofs
    direct = (-1j * ctx.lead.u1).real[o]
    if electro is None or electro.fields is None or w1 is None:
        return CheckedField(Field(direct, o, "Y\\R"))
    spec = psi1_spectral(ctx, electro, w1, "operator")
    return CheckedField(Field(direct, o, "Y\\R"), spec, _l2(_mass(ctx, (Region.H, Region.P), o), direct - spec))


def psi_star(ctx: SeriesContext, dirichlet=None) -> CheckedField:
    """psi_star on the interior dofs of R (zero trace)."""
    ri = ctx.ri_dofs
    direct = ctx.psi_star[ri]
    if dirichlet is None or dirichlet.fields is None:
        return CheckedField(Field(direct, ri, "R"))
    spec = psi_star_spectral(ctx, dirichlet)
    return CheckedField(Field(direct, ri, "R"), spec, _l2(_mass(ctx, (Region.R,), ri), direct - spec),
                        dirichlet_tail_bounds(ctx, dirichlet)["psi_star"])


def psi_hat(ctx: SeriesContext, electro=None) -> CheckedField:
    """psi_hat on Y\\R (zero mean)."""
    o = ctx.o_dofs
    direct = ctx.psi_hat.real[o]
    if electro is None or electro.fields is None:
        return CheckedField(Field(direct, o, "Y\\R"))
    spec = psi_hat_spectral(ctx, electro)
    return CheckedField(Field(direct, o, "Y\\R"), spec, _l2(_mass(ctx, (Region.H, Region.P), o), direct - spec))
