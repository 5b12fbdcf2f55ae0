import dataclasses

import numpy as np
import pytest

from metaband.electrostatic import cluster_gap, compute_resonances_fem, compute_w1_projection
from metaband.fem import assemble_stiffness
from metaband.geometry import Region, ShapeSpec, build_cell, empty_cell
from metaband.mesh import generate_mesh


def test_interior_resonances(electro):
    lam = electro.eigenvalues
    assert lam.size > 0
    assert np.all(np.abs(lam) < 0.5 - electro.cluster_gap)
    assert np.all(np.diff(lam) >= 0)
    assert electro.w1_dim > 0 and electro.w2_dim > 0


def test_gradient_gram_is_identity(mesh, electro):
    o = electro.dofs
    S = assemble_stiffness(mesh, {Region.H: 1.0, Region.P: 1.0})[o][:, o]
    G = electro.fields.T @ (S @ electro.fields)
    assert np.abs(G - np.eye(electro.count)).max() < 1e-8


def test_fields_zero_mean(mesh, electro):
    from metaband.fem import load_vector

    c = load_vector(mesh, (Region.H, Region.P))[electro.dofs]
    assert np.abs(c @ electro.fields).max() < 1e-10


def test_weights_are_linear_in_direction(electro):
    k1, k2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    a1, b1 = electro.weights(k1)
    a2, b2 = electro.weights(k2)
    theta = 0.7
    k3 = np.cos(theta) * k1 + np.sin(theta) * k2
    a3, b3 = electro.weights(k3)
    assert np.allclose(a3, np.cos(theta) * a1 + np.sin(theta) * a2, atol=1e-14)
    assert np.allclose(b3, np.cos(theta) * b1 + np.sin(theta) * b2, atol=1e-14)
    rot = electro.with_kappa(k3)
    assert np.allclose(rot.alpha1, a3)


def test_bessel_inequality(electro):
    for kap in ((1.0, 0.0), (0.0, 1.0), (0.6, 0.8)):
        a1, a2 = electro.weights(kap)
        assert np.sum((a1 + a2) ** 2) <= electro.theta_H + electro.theta_P


def test_strongest_subset(electro):
    top = electro.strongest(12)
    assert top.count == 12
    assert set(top.eigenvalues).issubset(set(electro.eigenvalues))
    score = electro.alpha1**2 + electro.alpha2**2
    assert np.min(top.alpha1**2 + top.alpha2**2) >= np.sort(score)[-12] - 1e-15


def test_zero_weight_flag(electro):
    gH = electro.grad_H.copy()
    gP = electro.grad_P.copy()
    gH[0] = gP[0] = 0.0
    gH[1] = 1e-12
    gP[1] = 0.0
    spec = dataclasses.replace(electro, grad_H=gH, grad_P=gP)
    flags = spec.zero_weight
    assert flags[0] and flags[1]
    assert not flags[2:].any()


@pytest.mark.xfail(strict=True, reason="FEM bias of the nearly degenerate interior spectrum dominates the "
                   "interaction-induced resonances at h=1/32 (max |lam| 0.085, 0.032, 0.040 for r=0.15, 0.1, 0.05)")
def test_dilute_limit_trend():
    R = ShapeSpec.disk((0.7, 0.5), 0.2)
    tops = []
    for r in (0.15, 0.1, 0.05):
        mesh = generate_mesh(build_cell(ShapeSpec.disk((0.25, 0.5), r), R), 1 / 32)
        spec = compute_resonances_fem(mesh)
        tops.append(np.abs(spec.eigenvalues).max())
    assert tops[0] > tops[1] > tops[2]


def test_cluster_gap_rule():
    assert cluster_gap(1 / 64) == pytest.approx(max(1e-3, 10 / 64**2))
    assert cluster_gap(1 / 256) == 1e-3


def test_w1_projection(mesh, cell, w1):
    assert 0.0 <= w1.value < cell.theta_H
    flipped = compute_w1_projection(mesh, (-1.0, 0.0))
    assert flipped.value == pytest.approx(w1.value, rel=1e-12)
    assert compute_w1_projection(generate_mesh(empty_cell(), 1 / 16)).value == 0.0
