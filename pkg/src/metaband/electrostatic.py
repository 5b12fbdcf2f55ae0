"""Generalized electrostatic resonances on the complement of the dielectric rod.

The finite element backend solves

    1/2 (int_H - int_P) grad u . grad v = lam int_{Y\\R} grad u . grad v

on periodic fields over Y\\R. Fields vanishing on the closure of P (the
+1/2 family) or supported inside P (the -1/2 family) are eliminated exactly
by static condensation onto the nodes of the boundary of P, which leaves a
dense problem of the size of that boundary whose eigenvalues are exactly the
interior resonances of the discrete problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .errors import NumericalFailure
from .fem import Field, assemble_stiffness, gradient_integrals, load_vector
from .geometry import Region
from .mesh import Mesh

ZERO_WEIGHT_REL = 1e-8


class ClusterAmbiguity(NumericalFailure):
    pass


@dataclass(frozen=True)
class ElectrostaticSpectrum:
    """Interior resonances with normalized eigenfields and direction weights.

    Attributes:
        eigenvalues: resonances lam_n in (-1/2, 1/2), sorted ascending.
        fields: (n_dofs, n) eigenfields on ``dofs`` (zero mean over Y\\R,
            unit norm in the gradient inner product), or None.
        dofs: dofs of Y\\R.
        grad_H: (n, 2) integrals of grad psi_n over H.
        grad_P: (n, 2) integrals of grad psi_n over P.
        kappa: unit direction used for ``alpha1``/``alpha2``.
        cluster_gap: half width of the bands around +-1/2 treated as the
            degenerate families.
        w1_dim: dimension of the discrete +1/2 family.
        w2_dim: dimension of the discrete -1/2 family.
        backend: "fem" or "nystrom".
        theta_H, theta_P: areas used by the evaluators (discrete for FEM).
    """

    eigenvalues: np.ndarray
    fields: np.ndarray | None
    dofs: np.ndarray | None
    grad_H: np.ndarray
    grad_P: np.ndarray
    kappa: tuple
    cluster_gap: float
    w1_dim: int
    w2_dim: int
    backend: str
    theta_H: float
    theta_P: float

    @property
    def count(self) -> int:
        return len(self.eigenvalues)

    @property
    def alpha1(self) -> np.ndarray:
        return self.grad_H @ np.asarray(self.kappa)

    @property
    def alpha2(self) -> np.ndarray:
        return self.grad_P @ np.asarray(self.kappa)

    def weights(self, kappa) -> tuple[np.ndarray, np.ndarray]:
        k = np.asarray(kappa, dtype=float)
        return self.grad_H @ k, self.grad_P @ k

    @property
    def zero_weight(self) -> np.ndarray:
        thr = ZERO_WEIGHT_REL * math.sqrt(self.theta_H + self.theta_P)
        return (np.abs(self.alpha1) < thr) & (np.abs(self.alpha2) < thr)

    def field(self, n: int) -> Field:
        return Field(self.fields[:, n], self.dofs, "Y\\R")

    def with_kappa(self, kappa) -> "ElectrostaticSpectrum":
        k = np.asarray(kappa, dtype=float)
        k = k / np.linalg.norm(k)
        return _replace(self, kappa=(float(k[0]), float(k[1])))

    def strongest(self, k: int) -> "ElectrostaticSpectrum":
        """The k resonances of largest alpha1^2 + alpha2^2, in ascending lam."""
        score = self.alpha1**2 + self.alpha2**2
        order = np.argsort(-score, kind="stable")[:k]
        order.sort()
        return _replace(
            self,
            eigenvalues=self.eigenvalues[order],
            fields=None if self.fields is None else self.fields[:, order],
            grad_H=self.grad_H[order],
            grad_P=self.grad_P[order],
        )


def _replace(spec, **kw):
    import dataclasses

    return dataclasses.replace(spec, **kw)


def cluster_gap(h: float) -> float:
    return max(1e-3, 10.0 * h * h)


class _Condensed:
    """Harmonic extension operators from the boundary of P."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.gamma = mesh.boundary_dofs(Region.P)
        self.h_dofs = np.setdiff1d(mesh.region_dofs(Region.H), self.gamma)
        self.p_dofs = mesh.interior_dofs(Region.P)
        self.outside = np.union1d(mesh.region_dofs(Region.H), mesh.region_dofs(Region.P))
        self.S_H = assemble_stiffness(mesh, {Region.H: 1.0}).tocsr()
        self.S_P = assemble_stiffness(mesh, {Region.P: 1.0}).tocsr()
        self.X_H, self.Sigma_H = self._schur(self.S_H, self.h_dofs)
        self.X_P, self.Sigma_P = self._schur(self.S_P, self.p_dofs)

    def _schur(self, S, inner):
        g = self.gamma
        Sgg = S[g][:, g].toarray()
        if len(inner) == 0:
            return np.zeros((0, len(g))), Sgg
        Sii = S[inner][:, inner].tocsc()
        Sig = S[inner][:, g].toarray()
        X = spla.splu(Sii).solve(Sig)
        sigma = Sgg - Sig.T @ X
        return X, 0.5 * (sigma + sigma.T)

    def extend(self, g: np.ndarray) -> np.ndarray:
        """Full-dof field equal to g on the boundary of P and discrete
        harmonic in H and in P."""
        u = np.zeros((self.mesh.ndof,) + g.shape[1:])
        u[self.gamma] = g
        u[self.h_dofs] = -self.X_H @ g
        u[self.p_dofs] = -self.X_P @ g
        return u


def compute_resonances_fem(mesh: Mesh, k: int | None = None, kappa=(1.0, 0.0)) -> ElectrostaticSpectrum:
    """Interior electrostatic resonances on the mesh.

    Args:
        mesh: conforming mesh containing a rod P.
        k: keep only the k resonances of largest weight (None keeps all).
        kappa: direction for the weights.

    Raises:
        ClusterAmbiguity: if a condensed eigenvalue falls inside the cluster
            bands around +-1/2.
    """
    kap = np.asarray(kappa, dtype=float)
    kap = kap / np.linalg.norm(kap)
    c = _Condensed(mesh)
    n_g = len(c.gamma)
    Q = scipy.linalg.null_space(np.ones((1, n_g)))
    A = Q.T @ (0.5 * (c.Sigma_H - c.Sigma_P)) @ Q
    B = Q.T @ (c.Sigma_H + c.Sigma_P) @ Q
    lam, Y = scipy.linalg.eigh(0.5 * (A + A.T), 0.5 * (B + B.T))
    gap = cluster_gap(mesh.h)
    if np.any(np.abs(np.abs(lam) - 0.5) < gap):
        raise ClusterAmbiguity("condensed resonance inside a cluster band around +-1/2")
    U = c.extend(Q @ Y)
    Mo = load_vector(mesh, (Region.H, Region.P))
    area = Mo.sum()
    U -= (Mo @ U)[None, :] / area
    GH = gradient_integrals(mesh, (Region.H,))
    GP = gradient_integrals(mesh, (Region.P,))
    gH = U.T @ GH
    gP = U.T @ GP
    # deterministic sign: largest |boundary value| positive
    sgn = np.sign(U[c.gamma][np.argmax(np.abs(U[c.gamma]), axis=0), np.arange(U.shape[1])])
    sgn[sgn == 0] = 1.0
    U *= sgn[None]
    gH *= sgn[:, None]
    gP *= sgn[:, None]
    spec = ElectrostaticSpectrum(
        eigenvalues=lam,
        fields=U[c.outside],
        dofs=c.outside,
        grad_H=gH,
        grad_P=gP,
        kappa=(float(kap[0]), float(kap[1])),
        cluster_gap=gap,
        w1_dim=len(c.h_dofs),
        w2_dim=len(c.p_dofs),
        backend="fem",
        theta_H=mesh.region_area(Region.H),
        theta_P=mesh.region_area(Region.P),
    )
    return spec if k is None else spec.strongest(k)


def resonances_full_gevp(mesh: Mesh) -> np.ndarray:
    """All eigenvalues of the uncondensed discrete problem (dense; for
    small meshes only). Periodic constants are removed by restricting to
    fields orthogonal to 1."""
    o = np.union1d(mesh.region_dofs(Region.H), mesh.region_dofs(Region.P))
    SH = assemble_stiffness(mesh, {Region.H: 1.0})[o][:, o].toarray()
    SP = assemble_stiffness(mesh, {Region.P: 1.0})[o][:, o].toarray()
    Q = scipy.linalg.null_space(np.ones((1, len(o))))
    A = Q.T @ (0.5 * (SH - SP)) @ Q
    B = Q.T @ (SH + SP) @ Q
    return scipy.linalg.eigh(0.5 * (A + A.T), 0.5 * (B + B.T), eigvals_only=True)


@dataclass(frozen=True)
class W1Projection:
    """Projection value int_H P kappa . kappa onto gradients vanishing on P.

    Attributes:
        kappa: unit direction.
        value: the projection value.
        field: cell solution w (zero on the closure of P).
    """

    kappa: tuple
    value: float
    field: Field | None


def compute_w1_projection(mesh: Mesh, kappa=(1.0, 0.0)) -> W1Projection:
    """Solve int_H grad w . grad v = int_H kappa . grad v for w vanishing on P.

    The field is free on the boundary of R (natural condition). A cell
    without a plasmonic rod has no constraint set, and the degenerate value 0
    is returned.
    """
    kap = np.asarray(kappa, dtype=float)
    kap = kap / np.linalg.norm(kap)
    gamma = mesh.boundary_dofs(Region.P)
    if len(gamma) == 0:
        return W1Projection((float(kap[0]), float(kap[1])), 0.0, None)
    free = np.setdiff1d(mesh.region_dofs(Region.H), gamma)
    S = assemble_stiffness(mesh, {Region.H: 1.0})[free][:, free].tocsc()
    b = (gradient_integrals(mesh, (Region.H,)) @ kap)[free]
    w = spla.splu(S).solve(b)
    return W1Projection((float(kap[0]), float(kap[1])), float(b @ w), Field(w, free, "H"))
