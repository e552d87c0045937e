import numpy as np
import pytest
import scipy.sparse.linalg as spla

from crbm.fem import (
    MaterialParams,
    UnsupportedDegree,
    apply_dirichlet,
    assemble_elasticity,
    assemble_h1_gram,
    assemble_load,
    assemble_mass,
    assemble_vector_laplacian,
    boundary_stress_trace,
    build_fe_space,
    shape_functions,
    triangle_rule,
)
from crbm.mesh import GeometricMapping, apply_mapping, build_reference_halfdisk

MAT = MaterialParams()


@pytest.fixture(scope="module")
def space():
    return build_fe_space(build_reference_halfdisk(0.02), 2)


def test_lame_constants():
    m = MaterialParams(15.0, 0.35)
    assert m.lame_mu == pytest.approx(15.0 / 2.7, rel=1e-15)
    assert m.lame_lambda == pytest.approx(15.0 * 0.35 / (1.35 * 0.3), rel=1e-15)
    with pytest.raises(ValueError):
        MaterialParams(15.0, 0.5)
    with pytest.raises(ValueError):
        MaterialParams(-1.0, 0.3)


@pytest.mark.parametrize("degree", [1, 2, 4, 6, 8])
def test_triangle_rule_exactness(degree):
    pts, w = triangle_rule(degree)
    assert w.sum() == pytest.approx(0.5, rel=1e-14)
    # int_T x^a y^b = a! b! / (a + b + 2)!
    from math import factorial
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            assert np.dot(w, pts[:, 0] ** a * pts[:, 1] ** b) == pytest.approx(exact, rel=1e-12)


def test_shape_functions_partition_of_unity():
    pts, _ = triangle_rule(6)
    for degree in (1, 2):
        vals, grads = shape_functions(degree, pts)
        assert np.allclose(vals.sum(axis=1), 1.0, atol=1e-14)
        assert np.allclose(grads.sum(axis=1), 0.0, atol=1e-13)
    with pytest.raises(UnsupportedDegree):
        shape_functions(3, pts)


def test_space_sizes_and_frames(space):
    assert space.n_dof == 2 * len(space.dof_coords)
    n, t = space.boundary_frames
    assert np.allclose(np.linalg.norm(n, axis=-1), 1.0, atol=1e-14)
    assert np.allclose(np.linalg.norm(t, axis=-1), 1.0, atol=1e-14)
    assert np.allclose(np.sum(n * t, axis=-1), 0.0, atol=1e-14)


def test_rigid_motions_in_kernel(space):
    K = assemble_elasticity(space, MAT)
    x, y = space.dof_coords.T
    for field in (np.stack([np.ones_like(x), 0 * x], 1), np.stack([0 * x, np.ones_like(x)], 1),
                  np.stack([-y, x], 1)):
        u = field.ravel()
        assert np.linalg.norm(K @ u) <= 1e-10 * np.linalg.norm(K.data)


def test_pure_dirichlet_translation(space):
    K = assemble_elasticity(space, MAT)
    x, y = space.dof_coords.T
    on_circle = np.isclose(np.hypot(x, y), 1.0) | np.isclose(y, 0.0)
    nodes = np.flatnonzero(on_circle)
    dofs = (2 * nodes[:, None] + np.arange(2)).ravel()
    values = np.tile([0.3, -0.09], len(nodes))
    A, b = apply_dirichlet(K, np.zeros(space.n_dof), dofs, values)
    u = spla.spsolve(A.tocsc(), b)
    assert np.allclose(u[0::2], 0.3, atol=1e-10)
    assert np.allclose(u[1::2], -0.09, atol=1e-10)


def test_apply_dirichlet_keeps_symmetry(space):
    K = assemble_elasticity(space, MAT)
    A, _ = apply_dirichlet(K, np.zeros(space.n_dof), space.dirichlet_dofs, 1.0)
    assert abs(A - A.T).max() <= 1e-14 * abs(A).max()


def test_galerkin_consistency_with_body_load(space):
    K = assemble_elasticity(space, MAT)
    F = assemble_load(space, lambda p: np.stack([np.sin(p[:, 0]), -1.0 + p[:, 1]], axis=1))
    A, b = apply_dirichlet(K, F, space.dirichlet_dofs, 0.0)
    u = spla.spsolve(A.tocsc(), b)
    r = K @ u - F
    free = space.free_dofs
    assert np.linalg.norm(r[free]) <= 1e-10 * np.linalg.norm(F)
    assert np.all(u[space.dirichlet_dofs] == 0.0)


def test_quadrature_order_is_exact_for_p2(space):
    for assemble in (assemble_elasticity, assemble_mass, assemble_vector_laplacian):
        args = (space, MAT) if assemble is assemble_elasticity else (space,)
        a = assemble(*args, quad_degree=4)
        b = assemble(*args, quad_degree=8)
        assert abs(a - b).max() <= 1e-12 * abs(b).max()


def _poly(x, y):
    u = np.stack([x * x + y, x * y - 2 * y * y], axis=-1)
    g = np.stack([np.stack([2 * x, np.ones_like(x)], -1), np.stack([y, x - 4 * y], -1)], axis=-2)
    return u, g


def test_h1_norm_matches_direct_quadrature(space):
    ell = 0.7
    W = assemble_h1_gram(space, ell)
    U = _poly(*space.dof_coords.T)[0].ravel()
    via_gram = U @ (W @ U)
    # independent evaluation: analytic field at physical quadrature points of a higher rule
    pts, w = triangle_rule(10)
    tri = space.mesh.nodes[space.mesh.triangles]
    d1, d2 = tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    X = tri[:, None, 0] + pts[None, :, 0:1] * d1[:, None] + pts[None, :, 1:2] * d2[:, None]
    u, g = _poly(X[..., 0], X[..., 1])
    integrand = np.sum(u * u, axis=-1) + ell**2 * np.sum(g * g, axis=(-1, -2))
    direct = np.sum(det[:, None] * w[None, :] * integrand)
    assert via_gram == pytest.approx(direct, rel=1e-12)


def test_boundary_stress_of_linear_field_is_exact(space):
    eps = np.array([[0.01, 0.003], [0.003, -0.02]])
    X = space.dof_coords
    U = (X @ eps.T).ravel()
    quad, nodal = boundary_stress_trace(space, MAT, U)
    lam, mu = MAT.lame_lambda, MAT.lame_mu
    sigma = lam * np.trace(eps) * np.eye(2) + 2 * mu * eps
    n, t = space.boundary_frames
    expect_nn = np.einsum("eqi,ij,eqj->eq", n, sigma, n)
    expect_nt = np.einsum("eqi,ij,eqj->eq", t, sigma, n)
    assert np.allclose(quad.sigma_nn, expect_nn, atol=1e-12)
    assert np.allclose(quad.sigma_ntau, expect_nt, atol=1e-12)
    sn = space.sampler.normals
    assert np.allclose(nodal.sigma_nn, np.einsum("ni,ij,nj->n", sn, sigma, sn), atol=1e-12)


def test_mapping_scales_operators(space):
    mu = 1.27
    mapped = build_fe_space(apply_mapping(space.mesh, GeometricMapping(mu)), 2)
    assert mapped.n_dof == space.n_dof
    K0, K1 = assemble_elasticity(space, MAT), assemble_elasticity(mapped, MAT)
    assert abs(K1 - K0).max() <= 1e-12 * abs(K0).max()
    M0, M1 = assemble_mass(space), assemble_mass(mapped)
    assert abs(M1 - mu**2 * M0).max() <= 1e-12 * abs(M1).max()


def test_p1_space_builds():
    sp1 = build_fe_space(build_reference_halfdisk(0.05), 1)
    assert sp1.n_dof == 2 * sp1.mesh.n_nodes
    with pytest.raises(UnsupportedDegree):
        build_fe_space(build_reference_halfdisk(0.05), 3)
