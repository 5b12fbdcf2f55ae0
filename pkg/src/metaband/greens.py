"""Periodic Laplace Green's function for the cell with a Neumann corrector on R.

F is the periodic fundamental solution with Laplace F = delta - 1 and zero
cell average. It is evaluated by Ewald summation; the plain truncated
Fourier series is kept as an independent (slowly convergent) reference.

The corrector phi*(., y) is harmonic in Y\\R and makes G = F + phi* satisfy
dG/dn = |R|/|dR| on the boundary of R, with n pointing into R. It is
represented by a single layer density on the boundary of R.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.special

from .errors import CorrectorFailure
from .geometry import BoundaryQuadrature, CellGeometry, boundary_quadrature

EWALD_SPLIT = 4.5
_REAL_IMAGES = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float)


def _recip_vectors(split):
    nmax = int(math.ceil(math.sqrt(4.0 * split * split * 40.0) / (2.0 * math.pi)))
    n = np.array([(i, j) for i in range(-nmax, nmax + 1) for j in range(-nmax, nmax + 1) if (i, j) != (0, 0)], dtype=float)
    k = 2.0 * np.pi * n
    k2 = np.einsum("ij,ij->i", k, k)
    coef = np.exp(-k2 / (4.0 * split * split)) / k2
    keep = coef > 1e-20
    return k[keep], coef[keep]


_RECIP_K, _RECIP_C = _recip_vectors(EWALD_SPLIT)


def _wrap(d):
    return d - np.round(d)


def ewald_F(d, split: float = EWALD_SPLIT, recip=None) -> np.ndarray:
    """F at displacements d (shape (..., 2)); singular at lattice points."""
    k, c = recip if recip is not None else (_RECIP_K, _RECIP_C) if split == EWALD_SPLIT else _recip_vectors(split)
    d = _wrap(np.asarray(d, dtype=float))
    shape = d.shape[:-1]
    d = d.reshape(-1, 2)
    out = np.full(len(d), 1.0 / (4.0 * split * split))
    for L in _REAL_IMAGES:
        r2 = np.einsum("ij,ij->i", d + L, d + L)
        out -= scipy.special.exp1(split * split * r2) / (4.0 * np.pi)
    out -= np.cos(d @ k.T) @ c
    return out.reshape(shape)


def ewald_F_regular(d, split: float = EWALD_SPLIT) -> np.ndarray:
    """F(d) - log|d|/(2 pi) for small |d| (|d| < 0.5), smooth at d = 0."""
    d = _wrap(np.asarray(d, dtype=float))
    shape = d.shape[:-1]
    d = d.reshape(-1, 2)
    r2 = np.einsum("ij,ij->i", d, d)
    u = split * split * r2
    # Ein(u) = E1(u) + gamma + log u, entire; use its series for small u.
    ein = np.where(u < 1.0, _ein_series(np.minimum(u, 1.0)),
                   scipy.special.exp1(np.maximum(u, 1.0)) + np.euler_gamma + np.log(np.maximum(u, 1.0)))
    out = (np.euler_gamma + math.log(split * split) - ein) / (4.0 * np.pi)
    out += 1.0 / (4.0 * split * split)
    for L in _REAL_IMAGES:
        if not L.any():
            continue
        q = np.einsum("ij,ij->i", d + L, d + L)
        out -= scipy.special.exp1(split * split * q) / (4.0 * np.pi)
    out -= np.cos(d @ _RECIP_K.T) @ _RECIP_C
    return out.reshape(shape)


def _ein_series(u):
    total = np.zeros_like(u)
    term = np.ones_like(u)
    for k in range(1, 30):
        term = term * (-u) / k
        total -= term / k
    return total


def ewald_grad_F(d, split: float = EWALD_SPLIT) -> np.ndarray:
    """Gradient of F with respect to x at displacement d = x - y."""
    k, c = (_RECIP_K, _RECIP_C) if split == EWALD_SPLIT else _recip_vectors(split)
    d = _wrap(np.asarray(d, dtype=float))
    shape = d.shape
    d = d.reshape(-1, 2)
    out = np.zeros_like(d)
    for L in _REAL_IMAGES:
        x = d + L
        r2 = np.einsum("ij,ij->i", x, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.exp(-split * split * r2) / (2.0 * np.pi * r2)
        out += f[:, None] * x
    out += (np.sin(d @ k.T) * c) @ k
    return out.reshape(shape)


def fourier_F(d, truncation: int) -> np.ndarray:
    """Truncated Fourier series -sum cos(2 pi n.d)/(4 pi^2 |n|^2) over
    0 < max(|n1|,|n2|) <= truncation, accumulated shell by shell with Kahan
    compensation."""
    d = np.atleast_2d(np.asarray(d, dtype=float))
    total = np.zeros(len(d))
    comp = np.zeros(len(d))
    for s in range(1, truncation + 1):
        r = np.arange(-s, s + 1)
        ring = np.concatenate([
            np.column_stack([r, np.full_like(r, s)]),
            np.column_stack([r, np.full_like(r, -s)]),
            np.column_stack([np.full(2 * s - 1, s), np.arange(-s + 1, s)]),
            np.column_stack([np.full(2 * s - 1, -s), np.arange(-s + 1, s)]),
        ]).astype(float)
        n2 = np.einsum("ij,ij->i", ring, ring)
        shell = -(np.cos(2.0 * np.pi * d @ ring.T) / (4.0 * np.pi**2 * n2)).sum(axis=1)
        y = shell - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


def _kernel_matrix(targets, normals, sources, weights, self_diag=None):
    """K[i,j] = n_i . grad F(x_i - t_j) w_j; diagonal replaced by self_diag."""
    d = targets[:, None, :] - sources[None, :, :]
    if self_diag is not None:
        idx = np.arange(len(targets))
        d[idx, idx] = 0.25  # placeholder, overwritten below
    g = ewald_grad_F(d)
    K = np.einsum("ijk,ik->ij", g, normals) * weights[None, :]
    if self_diag is not None:
        K[idx, idx] = self_diag
    return K


@dataclass(frozen=True)
class PeriodicGreens:
    """Periodic Green's function with Neumann corrector on a disk R.

    Attributes:
        truncation: order of the reference Fourier series.
        quad_R: trapezoid quadrature on the boundary of R.
        system: matrix of the boundary equation (1/2 I + K*_R).
        area_R: area of R.
    """

    truncation: int
    quad_R: BoundaryQuadrature
    system: np.ndarray
    area_R: float
    radius_R: float
    center_R: tuple

    def fourier_error_estimate(self) -> float:
        """Size of the first omitted Fourier shell in sup norm."""
        t = self.truncation + 1
        return 8.0 * t / (4.0 * np.pi**2 * t * t)

    def density(self, y) -> np.ndarray:
        """Corrector densities sigma_y on the R nodes, one column per source."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        q = self.quad_R
        d = q.nodes[:, None, :] - y[None, :, :]
        g = np.einsum("ijk,ik->ij", ewald_grad_F(d), q.normals)
        rhs = -g - self.area_R / q.perimeter
        return np.linalg.solve(self.system, rhs)

    def grad_corrector(self, x, y, sigma=None) -> np.ndarray:
        """grad_x phi*(x, y) for x (m,2) and sources y (p,2): shape (m, p, 2)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        sig = self.density(y) if sigma is None else sigma
        q = self.quad_R
        g = ewald_grad_F(x[:, None, :] - q.nodes[None, :, :])  # (m, nR, 2)
        return np.einsum("mtk,tp->mpk", g * q.weights[None, :, None], sig)

    def normal_derivative(self, x, normals, y) -> np.ndarray:
        """d G(x, y) / d n_x for x off the boundary of R and x != y."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        g = ewald_grad_F(x[:, None, :] - y[None, :, :]) + self.grad_corrector(x, y)
        return np.einsum("mpk,mk->mp", g, normals)

    def corrector_constant(self, y, sigma=None) -> np.ndarray:
        """c_y making the boundary average of phi*(., y) over dR vanish."""
        q = self.quad_R
        sig = self.density(y) if sigma is None else sigma
        # oint_dR F(x, t) ds_x for every node t: log part exact on a circle
        d = q.nodes[:, None, :] - q.nodes[None, :, :]
        reg = ewald_F_regular(d)
        ring = q.weights @ reg + q.perimeter * math.log(self.radius_R) / (2.0 * np.pi)
        return -(ring * q.weights) @ sig / q.perimeter

    def G(self, x, y) -> np.ndarray:
        """G(x, y) for x away from the boundary of R."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        q = self.quad_R
        sig = self.density(y)
        F = ewald_F(x[:, None, :] - y[None, :, :])
        S = ewald_F(x[:, None, :] - q.nodes[None, :, :]) * q.weights[None, :]
        return F + S @ sig + self.corrector_constant(y, sig)[None, :]

    def neumann_residual(self, y, n_test: int = 37) -> float:
        """Max deviation of dG/dn from its imposed value at off-node points
        of the boundary of R, using the Nystrom interpolant of the density."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        q = self.quad_R
        sig = self.density(y)
        n = len(q.weights)
        t = 2.0 * np.pi * (np.arange(n_test) + 0.37) / n_test
        nrm = np.column_stack([np.cos(t), np.sin(t)])
        xt = np.asarray(self.center_R) + self.radius_R * nrm
        g = np.einsum("mtk,mk->mt", ewald_grad_F(xt[:, None, :] - q.nodes[None, :, :]), nrm) * q.weights
        # density at the test points from the trigonometric interpolant
        coef = np.fft.fft(sig, axis=0) / n
        m = np.fft.fftfreq(n, 1.0 / n)
        if n % 2 == 0:
            coef[n // 2] *= 0.5
            m = np.concatenate([m, [n // 2]])
            coef = np.vstack([coef, coef[n // 2][None]])
        sig_t = np.real(np.exp(1j * np.outer(t, m)) @ coef)
        lhs = 0.5 * sig_t + g @ sig
        src = np.einsum("mpk,mk->mp", ewald_grad_F(xt[:, None, :] - y[None, :, :]), nrm)
        res = lhs + src + self.area_R / q.perimeter
        return float(np.max(np.abs(res)))

    def flux(self, y) -> np.ndarray:
        """oint_dR dG/dn ds with n pointing into R (equals |R|)."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        q = self.quad_R
        sig = self.density(y)
        g = np.einsum("mpk,mk->mp", ewald_grad_F(q.nodes[:, None, :] - y[None, :, :]), q.normals)
        dn_out = self.system @ sig + g
        return -(q.weights @ dn_out)


def build_periodic_greens(cell: CellGeometry, truncation: int = 64, n_R: int = 128) -> PeriodicGreens:
    """Prepare the corrector for a disk R.

    Raises:
        ValueError: if truncation < 16 or R is not a disk.
        CorrectorFailure: if the boundary system is numerically singular.
    """
    if truncation < 16:
        raise ValueError("truncation must be at least 16")
    shape = cell.shape_R
    if shape is None or shape.kind != "disk":
        raise ValueError("the layer potential backend supports a disk R only")
    q = boundary_quadrature(shape, n_R)
    K = _kernel_matrix(q.nodes, q.normals, q.nodes, q.weights,
                       self_diag=q.weights / (4.0 * np.pi * shape.radius))
    A = 0.5 * np.eye(n_R) + K
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e10:
        raise CorrectorFailure(f"corrector system ill conditioned (cond={cond:.3e})")
    return PeriodicGreens(truncation, q, A, shape.area, shape.radius, shape.center)


@dataclass(frozen=True)
class NystromResult:
    eigenvalues: np.ndarray
    max_imag: float
    nodes: int


def compute_resonances_nystrom(cell: CellGeometry, greens: PeriodicGreens, n: int = 128,
                               residual_tol: float = 1e-6) -> NystromResult:
    """Eigenvalues of the periodic Neumann-Poincare operator of a disk P on
    mean-zero densities, by the trapezoid Nystrom method.

    Raises:
        CorrectorFailure: if the corrector misses its Neumann condition.
    """
    shape = cell.shape_P
    if shape is None or shape.kind != "disk":
        raise ValueError("the layer potential backend supports a disk P only")
    q = boundary_quadrature(shape, n)
    res = greens.neumann_residual(q.nodes[:: max(1, n // 8)])
    if res > residual_tol:
        raise CorrectorFailure(f"corrector Neumann residual {res:.3e} above {residual_tol:.1e}")
    K = _kernel_matrix(q.nodes, q.normals, q.nodes, q.weights,
                       self_diag=q.weights / (4.0 * np.pi * shape.radius))
    K += np.einsum("mpk,mk->mp", greens.grad_corrector(q.nodes, q.nodes), q.normals) * q.weights[None, :]
    # The weights are uniform, so the orthogonal complement of constants is
    # the mean-zero subspace and is invariant under K.
    Q = np.linalg.svd(np.ones((1, n)))[2][1:].T
    lam = np.linalg.eigvals(Q.T @ K @ Q)
    order = np.argsort(lam.real, kind="stable")
    lam = lam[order]
    return NystromResult(lam.real.copy(), float(np.max(np.abs(lam.imag))), n)
