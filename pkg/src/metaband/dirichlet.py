"""Dirichlet spectrum of the Laplacian on the dielectric rod R."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.special

from .errors import InsufficientSpectrum
from .fem import Field, assemble_mass, assemble_stiffness, solve_gevp
from .geometry import Region
from .mesh import Mesh

MEAN_THRESHOLD_REL = 1e-6


@dataclass(frozen=True)
class DirichletSpectrum:
    """Eigenpairs of -Laplace on R with zero boundary values.

    Attributes:
        eigenvalues: nondecreasing array of nu_j.
        means: int_R phi_j for L2(R)-orthonormal phi_j.
        nonzero_mean_index: indices with |mean| above the threshold.
        zero_mean_index: the remaining indices.
        theta_R: area of R used for the Parseval bound (the discrete area for
            mesh spectra).
        fields: (n_interior, N) eigenvectors on ``dofs`` or None.
        dofs: interior R dofs carrying the eigenvectors.
        next_eigenvalue: estimate of nu_{N+1} (inf when the spectrum is
            complete).
        complete_total: value the sum of squared means tends to as N grows
            (theta_R for the continuum, the discrete total for mesh spectra).
        backend: "fem" or "analytic".
    """

    eigenvalues: np.ndarray
    means: np.ndarray
    nonzero_mean_index: np.ndarray
    zero_mean_index: np.ndarray
    theta_R: float
    fields: np.ndarray | None
    dofs: np.ndarray | None
    next_eigenvalue: float
    complete_total: float
    backend: str

    @property
    def count(self) -> int:
        return len(self.eigenvalues)

    @property
    def mu(self) -> np.ndarray:
        """Eigenvalues with nonzero mean."""
        return self.eigenvalues[self.nonzero_mean_index]

    @property
    def mu_means(self) -> np.ndarray:
        return self.means[self.nonzero_mean_index]

    @property
    def parseval_defect(self) -> float:
        return max(0.0, self.complete_total - float(np.sum(self.means**2)))

    def field(self, j: int) -> Field:
        return Field(self.fields[:, j], self.dofs, "R")

    def truncated(self, n: int) -> "DirichletSpectrum":
        nxt = self.eigenvalues[n] if n < self.count else self.next_eigenvalue
        return _make(self.eigenvalues[:n], self.means[:n], self.theta_R,
                     None if self.fields is None else self.fields[:, :n], self.dofs,
                     float(nxt), self.complete_total, self.backend)


def _split(means, theta_R):
    big = np.abs(means) > MEAN_THRESHOLD_REL * math.sqrt(theta_R)
    return np.flatnonzero(big), np.flatnonzero(~big)


def _make(vals, means, theta_R, fields, dofs, nxt, total, backend):
    nz, z = _split(means, theta_R)
    return DirichletSpectrum(np.asarray(vals), np.asarray(means), nz, z, theta_R,
                             fields, dofs, nxt, total, backend)


def parseval_count(means: np.ndarray, total: float, defect: float = 1e-3) -> int:
    """Smallest N with total - sum_{j<=N} mean_j^2 < defect (or len(means))."""
    partial = np.cumsum(means**2)
    hit = np.flatnonzero(total - partial < defect)
    return int(hit[0] + 1) if len(hit) else len(means)


def compute_dirichlet(mesh: Mesh, N: int | None = None, parseval_defect: float = 1e-3) -> DirichletSpectrum:
    """First N Dirichlet eigenpairs of R on the mesh.

    The generalized problem S_R phi = nu M_R phi is solved on the interior
    R dofs. With ``N=None`` the full discrete spectrum is computed and then
    truncated to the smallest count whose Parseval defect, measured against
    the discrete complete total, is below ``parseval_defect``.
    """
    if N is not None and N < 1:
        raise ValueError("N must be at least 1")
    idx = mesh.interior_dofs(Region.R)
    S = assemble_stiffness(mesh, {Region.R: 1.0})[idx][:, idx]
    Mfull = assemble_mass(mesh, [Region.R])
    M = Mfull[idx][:, idx]
    load = np.asarray(Mfull[idx].sum(axis=1)).ravel()
    k = None if N is None else min(N + 1, len(idx))
    res = solve_gevp(S, M, k=k)
    vecs = res.vectors
    # Deterministic signs: positive mean, else positive first large entry.
    means = load @ vecs
    for j in range(vecs.shape[1]):
        ref = means[j] if abs(means[j]) > 1e-12 else vecs[np.argmax(np.abs(vecs[:, j]) > 0.5 * np.abs(vecs[:, j]).max()), j]
        if ref < 0:
            vecs[:, j] *= -1.0
            means[j] *= -1.0
    # Parseval total of the discrete problem: squared M-norm of the
    # projection of 1 onto span of interior basis functions.
    import scipy.sparse.linalg as spla

    total = float(load @ spla.spsolve(M.tocsc(), load))
    theta = mesh.region_area(Region.R)
    if N is None:
        n = parseval_count(means, total, parseval_defect)
    else:
        n = min(N, len(res.values))
    nxt = float(res.values[n]) if n < len(res.values) else math.inf
    return _make(res.values[:n], means[:n], theta, vecs[:, :n], idx, nxt, total, "fem")


def analytic_disk_spectrum(r: float, N: int, modes: str = "all") -> DirichletSpectrum:
    """Dirichlet spectrum of a disk of radius r from Bessel zeros.

    Args:
        r: radius.
        N: number of eigenvalues.
        modes: "all" returns the first N eigenvalues counted with
            multiplicity; "radial" returns the first N angularly symmetric
            modes, which are the only ones with nonzero mean.
    """
    theta = math.pi * r * r
    if modes == "radial":
        j = scipy.special.jn_zeros(0, N + 1)
        vals = (j / r) ** 2
        means = 2.0 * math.sqrt(math.pi) * r / j
        return _make(vals[:N], means[:N], theta, None, None, float(vals[N]), theta, "analytic")
    if modes != "all":
        raise ValueError("modes must be 'all' or 'radial'")
    # Enough zeros of each order to cover the first N+1 eigenvalues.
    m0 = N + 2
    j0 = scipy.special.jn_zeros(0, m0)
    cap = j0[-1]
    vals, means = [], []
    for k in range(0, 4 * N + 8):
        count = m0 if k == 0 else max(1, int(N / max(k, 1)) + 2)
        z = scipy.special.jn_zeros(k, count)
        z = z[z <= cap]
        if len(z) == 0:
            break
        for zz in z:
            if k == 0:
                vals.append(zz)
                means.append(2.0 * math.sqrt(math.pi) * r / zz)
            else:
                vals.extend([zz, zz])
                means.extend([0.0, 0.0])
    order = np.argsort(vals, kind="stable")
    vals = (np.asarray(vals)[order] / r) ** 2
    means = np.asarray(means)[order]
    return _make(vals[:N], means[:N], theta, None, None, float(vals[N]), theta, "analytic")


def mu_series_tail_bound(spec: DirichletSpectrum, xi0: float) -> float:
    """Bound on the neglected part of sum_n mu_n <phi_n>^2 / (mu_n - xi0).

    Every neglected term has mu_n >= nu_{N+1}, so mu/(mu - xi0) is at most
    nu_{N+1}/(nu_{N+1} - xi0), and the neglected squared means sum to the
    Parseval defect.
    """
    if spec.count == 0 or xi0 >= spec.eigenvalues[-1]:
        raise InsufficientSpectrum(f"xi0={xi0} is not below the largest computed eigenvalue")
    nxt = spec.next_eigenvalue
    defect = spec.parseval_defect
    if not math.isfinite(nxt):
        return 0.0 if defect == 0.0 else defect
    return defect * nxt / (nxt - xi0)
