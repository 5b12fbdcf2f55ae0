"""Piecewise-linear assembly, constrained solves and generalized eigensolves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceFailure, SingularSystem
from .geometry import Region
from .mesh import Mesh


@dataclass(frozen=True)
class Field:
    """Nodal values over a set of degrees of freedom.

    Attributes:
        values: nodal coefficients (real or complex).
        dofs: dof indices the values refer to, or None for all dofs.
        region: optional label of the region the field lives on.
    """

    values: np.ndarray
    dofs: np.ndarray | None = None
    region: str | None = None

    def full(self, ndof: int) -> np.ndarray:
        if self.dofs is None:
            return self.values
        out = np.zeros(ndof, dtype=self.values.dtype)
        out[self.dofs] = self.values
        return out


@dataclass(frozen=True)
class SparseSystem:
    """Sparse symmetric matrix with optional affine constraints C x = d."""

    matrix: sp.spmatrix
    rhs: np.ndarray | None = None
    constraints: np.ndarray | None = None
    constraint_rhs: np.ndarray | None = None


def _local_geometry(mesh: Mesh, regions):
    sel = np.isin(mesh.tags, [int(r) for r in regions])
    tris = mesh.triangles[sel]
    p = mesh.vertices[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    area = 0.5 * det
    # Gradients of the barycentric basis functions.
    grads = np.empty((len(tris), 3, 2))
    for k in range(3):
        a = p[:, (k + 1) % 3]
        b = p[:, (k + 2) % 3]
        grads[:, k, 0] = (a[:, 1] - b[:, 1]) / det
        grads[:, k, 1] = (b[:, 0] - a[:, 0]) / det
    return mesh.dof[tris], area, grads, mesh.tags[sel]


def _scatter(mesh, dofs, local):
    rows = np.repeat(dofs, 3, axis=1).ravel()
    cols = np.tile(dofs, (1, 3)).ravel()
    m = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.ndof, mesh.ndof)).tocsr()
    m.sum_duplicates()
    return m


def assemble_stiffness(mesh: Mesh, coefficients: dict) -> sp.csr_matrix:
    """Stiffness matrix of sum_X c_X int_X grad u . grad v.

    Args:
        mesh: the triangulation.
        coefficients: mapping Region -> coefficient (may be negative).
    """
    regions = list(coefficients)
    dofs, area, grads, tags = _local_geometry(mesh, regions)
    coef = np.zeros(len(tags))
    for r, c in coefficients.items():
        coef[tags == int(r)] = c
    local = np.einsum("t,tid,tjd->tij", coef * area, grads, grads)
    return _scatter(mesh, dofs, local)


def assemble_mass(mesh: Mesh, regions) -> sp.csr_matrix:
    dofs, area, _, _ = _local_geometry(mesh, list(regions))
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _scatter(mesh, dofs, area[:, None, None] * ref[None])


def assemble_cross(mesh: Mesh, regions, kappa) -> sp.csr_matrix:
    """Antisymmetric matrix C[i,j] = int_X (phi_j k.grad phi_i - phi_i k.grad phi_j)."""
    dofs, area, grads, _ = _local_geometry(mesh, list(regions))
    kg = grads @ np.asarray(kappa, dtype=float)
    local = (area / 3.0)[:, None, None] * (kg[:, :, None] - kg[:, None, :])
    return _scatter(mesh, dofs, local)


def gradient_integrals(mesh: Mesh, regions) -> np.ndarray:
    """(ndof, 2) array of int_X grad phi_j."""
    dofs, area, grads, _ = _local_geometry(mesh, list(regions))
    out = np.zeros((mesh.ndof, 2))
    np.add.at(out, dofs.ravel(), (area[:, None, None] * grads).reshape(-1, 2))
    return out


def load_vector(mesh: Mesh, regions) -> np.ndarray:
    """int_X phi_j."""
    dofs, area, _, _ = _local_geometry(mesh, list(regions))
    out = np.zeros(mesh.ndof)
    np.add.at(out, dofs.ravel(), np.repeat(area / 3.0, 3))
    return out


def interpolate(mesh: Mesh, func) -> np.ndarray:
    """Nodal interpolant of ``func(x, y)`` on the independent dofs."""
    xy = mesh.dof_coordinates()
    return np.asarray(func(xy[:, 0], xy[:, 1]))


class ConstrainedSolver:
    """Factorization of the bordered matrix [[A, C^T], [C, 0]].

    The factorization is reused for many right-hand sides. Real matrices are
    factored once and complex right-hand sides are split into real and
    imaginary parts.
    """

    def __init__(self, matrix, constraints=None):
        a = sp.csc_matrix(matrix)
        n = a.shape[0]
        if constraints is None or len(constraints) == 0:
            c = np.zeros((0, n))
        else:
            c = np.atleast_2d(np.asarray(constraints))
        self.n, self.k = n, c.shape[0]
        self.constraints = c
        big = sp.bmat([[a, sp.csc_matrix(c.T)], [sp.csc_matrix(c), None]], format="csc") if self.k else a
        self.matrix = a
        self.complex = np.iscomplexobj(big.data)
        try:
            self.lu = spla.splu(big)
        except RuntimeError as exc:
            raise SingularSystem(f"factorization failed: {exc}") from exc

    def _solve_real(self, b):
        if not self.complex and np.iscomplexobj(b):
            return self.lu.solve(np.ascontiguousarray(b.real)) + 1j * self.lu.solve(np.ascontiguousarray(b.imag))
        return self.lu.solve(b)

    def solve(self, rhs, constraint_rhs=None, compatibility_tol=None):
        """Solve and return (x, multipliers).

        Args:
            rhs: right-hand side of length n (or n x m).
            constraint_rhs: values d in C x = d (default zero).
            compatibility_tol: when given, raise SingularSystem if the
                multiplier contribution C^T lambda exceeds this fraction of
                the right-hand side norm.
        """
        rhs = np.asarray(rhs)
        d = np.zeros((self.k,) + rhs.shape[1:], dtype=rhs.dtype) if constraint_rhs is None else np.asarray(constraint_rhs)
        full = np.concatenate([rhs, d.astype(np.result_type(rhs, d))]) if self.k else rhs
        sol = self._solve_real(full)
        x, lam = sol[: self.n], sol[self.n:]
        if not np.all(np.isfinite(x)):
            raise SingularSystem("non-finite solution")
        if compatibility_tol is not None and self.k:
            defect = np.linalg.norm(self.constraints.T @ lam)
            scale = max(np.linalg.norm(rhs), 1e-300)
            if defect > compatibility_tol * scale:
                raise SingularSystem(f"right-hand side incompatible, defect {defect / scale:.3e}", defect / scale)
        return x, lam


def solve_constrained(system: SparseSystem, compatibility_tol: float = 1e-8) -> np.ndarray:
    """Solve a SparseSystem by a bordered factorization.

    Raises:
        SingularSystem: if the factorization breaks down, or the right-hand
            side is incompatible with the constraints (the Lagrange multiplier
            absorbs more than ``compatibility_tol`` of the rhs norm).
    """
    solver = ConstrainedSolver(system.matrix, system.constraints)
    rhs = np.zeros(system.matrix.shape[0]) if system.rhs is None else system.rhs
    x, _ = solver.solve(rhs, system.constraint_rhs, compatibility_tol)
    return x


@dataclass(frozen=True)
class EigenResult:
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    converged: np.ndarray


def solve_gevp(A, B, k=None, window=None, dense_limit=4000, tol=1e-8) -> EigenResult:
    """Generalized symmetric eigenproblem A x = lambda B x.

    Small problems are solved densely (all eigenpairs, or those in
    ``window`` = (lo, hi)). Larger problems use shift-invert Lanczos around
    ``window`` given as a float shift.

    Raises:
        ConvergenceFailure: if an eigenpair misses the residual target. The
            exception carries the partial EigenResult as ``.result``.
    """
    n = A.shape[0]
    if n <= dense_limit:
        a = A.toarray() if sp.issparse(A) else np.asarray(A)
        b = B.toarray() if sp.issparse(B) else np.asarray(B)
        if isinstance(window, tuple):
            vals, vecs = scipy.linalg.eigh(a, b, subset_by_value=window)
        elif k is not None and k < n:
            vals, vecs = scipy.linalg.eigh(a, b)
            if window is not None:
                order = np.argsort(np.abs(vals - window), kind="stable")[:k]
                order.sort()
            else:
                order = np.arange(k)
            vals, vecs = vals[order], vecs[:, order]
        else:
            vals, vecs = scipy.linalg.eigh(a, b)
    else:
        shift = 0.0 if window is None else float(window if not isinstance(window, tuple) else 0.5 * sum(window))
        vals, vecs = spla.eigsh(A, k=k, M=B, sigma=shift, which="LM")
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    Av = A @ vecs
    Bv = B @ vecs
    res = np.linalg.norm(Av - Bv * vals[None], axis=0)
    scale = np.maximum(np.linalg.norm(Bv, axis=0) * np.maximum(1.0, np.abs(vals)), 1e-300)
    rel = res / scale
    ok = rel <= tol
    result = EigenResult(vals, vecs, rel, ok)
    if not ok.all():
        err = ConvergenceFailure(f"{int((~ok).sum())} eigenpairs above residual target")
        err.result = result
        raise err
    return result


def full_region_set():
    return (Region.H, Region.P, Region.R)


@dataclass(frozen=True)
class RegionForms:
    """Per-region stiffness S, cross C and mass M matrices on all dofs.

    For a real test function v the shifted form over a region X is
    int_X (grad + i eta k) u . conj((grad + i eta k) v)
    = S u + i eta C u + eta^2 M u (row v).
    """

    S: dict
    C: dict
    M: dict
    kappa: tuple

    @property
    def M_Y(self):
        return self.M[Region.H] + self.M[Region.P] + self.M[Region.R]

    def shifted(self, region: Region, eta: float) -> sp.csr_matrix:
        return (self.S[region] + 1j * eta * self.C[region] + eta * eta * self.M[region]).tocsr()


def region_forms(mesh: Mesh, kappa=(1.0, 0.0)) -> RegionForms:
    k = np.asarray(kappa, dtype=float)
    k = k / np.linalg.norm(k)
    regs = full_region_set()
    return RegionForms(
        S={r: assemble_stiffness(mesh, {r: 1.0}) for r in regs},
        C={r: assemble_cross(mesh, [r], k) for r in regs},
        M={r: assemble_mass(mesh, [r]) for r in regs},
        kappa=(float(k[0]), float(k[1])),
    )
