import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hexbp.basis import QuadKind, build_basis
from hexbp.geometry import (DegenerateElementError, FactorKind, compute_jacobians,
                            diffusion_factors, mass_factors)
from hexbp.mesh import HexMesh, build_box_mesh

RULES = [(QuadKind.GLL, 1), (QuadKind.GL, 2), (QuadKind.GL, 1)]


def _reference_mesh(p):
    # [0, 2]^3 is the reference cube shifted, so J = I
    return build_box_mesh((1, 1, 1), p, extent=(2.0, 2.0, 2.0))


@pytest.mark.parametrize("p", [1, 2, 3])
def test_identity_map(p):
    basis = build_basis(p, p + 2, QuadKind.GL)
    J, detj = compute_jacobians(_reference_mesh(p), basis)
    np.testing.assert_allclose(J, np.broadcast_to(np.eye(3), J.shape), atol=1e-13)
    np.testing.assert_allclose(detj, 1.0, atol=1e-13)
    w = basis.weights3d()
    np.testing.assert_allclose(mass_factors(_reference_mesh(p), basis).data[0], w, atol=1e-13)
    G = diffusion_factors(_reference_mesh(p), basis)
    assert G.kind is FactorKind.DIFFUSION
    for k, diag in enumerate((True, False, False, True, False, True)):
        np.testing.assert_allclose(G.data[0, k], w if diag else 0.0, atol=1e-13)


@pytest.mark.parametrize("h", [0.5, 1.0, 3.0])
@pytest.mark.parametrize("kind,extra", RULES)
def test_affine_cube(h, kind, extra):
    p = 2
    basis = build_basis(p, p + extra, kind)
    mesh = build_box_mesh((1, 1, 1), p, extent=(h, h, h))
    J, detj = compute_jacobians(mesh, basis)
    np.testing.assert_allclose(J, np.broadcast_to(0.5 * h * np.eye(3), J.shape), atol=1e-13)
    np.testing.assert_allclose(detj, h ** 3 / 8, rtol=1e-13)
    w = basis.weights3d()
    np.testing.assert_allclose(mass_factors(mesh, basis).data[0], w * h ** 3 / 8, rtol=1e-13)
    G = diffusion_factors(mesh, basis).data[0]
    for k in (0, 3, 5):
        np.testing.assert_allclose(G[k], w * h / 2, rtol=1e-13)
    for k in (1, 2, 4):
        np.testing.assert_allclose(G[k], 0.0, atol=1e-14)


@pytest.mark.parametrize("kind,extra", RULES)
@pytest.mark.parametrize("p", [1, 2, 4])
def test_unit_cube_volume(kind, extra, p):
    basis = build_basis(p, p + extra, kind)
    mesh = build_box_mesh((1, 1, 1), p)
    assert abs(mass_factors(mesh, basis).data.sum() - 1.0) <= 1e-13


@pytest.mark.parametrize("dims", [(2, 2, 2), (3, 2, 1)])
@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_deformed_mesh_positive_and_spd(dims, p):
    for a in (0.1, 0.15):
        mesh = build_box_mesh(dims, p, deform=a)
        for basis in (build_basis(p, p + 1, QuadKind.GLL), build_basis(p, p + 2, QuadKind.GL)):
            _, detj = compute_jacobians(mesh, basis)
            assert np.all(detj > 0)
            G = diffusion_factors(mesh, basis).matrix()
            m1 = G[..., 0, 0]
            m2 = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] ** 2
            m3 = np.linalg.det(G)
            assert np.all(m1 > 0) and np.all(m2 > 0) and np.all(m3 > 0)


def test_deformed_volume_preserved():
    # the displacement vanishes on the surface, so the volume is unchanged
    p = 4
    mesh = build_box_mesh((3, 3, 3), p, deform=0.1)
    vol = mass_factors(mesh, build_basis(p, p + 3, QuadKind.GL)).data.sum()
    assert abs(vol - 1.0) < 1e-6


@settings(max_examples=25, deadline=None)
@given(s=st.floats(0.25, 4.0), p=st.integers(1, 3), a=st.sampled_from([0.0, 0.1]))
def test_scaling_covariance(s, p, a):
    basis = build_basis(p, p + 2, QuadKind.GL)
    m1 = build_box_mesh((2, 1, 1), p, deform=a)
    m2 = build_box_mesh((2, 1, 1), p, extent=(s, s, s), deform=a)
    np.testing.assert_allclose(mass_factors(m2, basis).data, s ** 3 * mass_factors(m1, basis).data,
                               rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(diffusion_factors(m2, basis).data,
                               s * diffusion_factors(m1, basis).data, rtol=1e-10, atol=1e-14)


def test_degenerate_element_reported():
    good = build_box_mesh((1, 1, 1), 1)
    coords = good.coords.copy()
    coords[:, 0] *= -1.0  # mirror: orientation flips
    bad = HexMesh(good.dims, 1, good.extent, 0.0, coords, good.elem_nodes)
    with pytest.raises(DegenerateElementError) as info:
        compute_jacobians(bad, build_basis(1, 2, QuadKind.GLL))
    assert info.value.element == 0
    assert info.value.qpt == (0, 0, 0)
    assert info.value.detj < 0


def test_degree_mismatch():
    with pytest.raises(ValueError):
        compute_jacobians(build_box_mesh((1, 1, 1), 2), build_basis(1))


def test_mass_factor_has_no_tensor():
    f = mass_factors(build_box_mesh((1, 1, 1), 1), build_basis(1))
    with pytest.raises(TypeError):
        f.matrix()
