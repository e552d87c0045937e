import math

import numpy as np
import pytest

from crbm.mesh import (
    BoundaryTag,
    GeometricMapping,
    InvalidArc,
    apply_mapping,
    build_reference_halfdisk,
)


@pytest.fixture(scope="module")
def mesh():
    return build_reference_halfdisk(0.01)


def test_node_count_in_desk_range(mesh):
    assert 400 <= mesh.n_nodes <= 700


def test_triangles_counterclockwise(mesh):
    assert np.all(mesh.signed_areas() > 0)


def test_boundary_tags_partition_every_edge(mesh):
    tri = mesh.triangles
    edges = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    boundary = {tuple(e) for e in uniq[counts == 1]}
    tagged = [tuple(sorted(e)) for e in mesh.boundary_edges]
    assert len(tagged) == len(set(tagged))
    assert set(tagged) == boundary
    assert set(np.unique(mesh.boundary_tags)) <= {int(t) for t in BoundaryTag}


def test_tags_follow_geometry(mesh):
    p = mesh.nodes
    flat = mesh.edges_with(BoundaryTag.DIRICHLET)
    assert np.allclose(p[flat][:, :, 1], 0.0)
    for tag in (BoundaryTag.CONTACT, BoundaryTag.NEUMANN):
        e = mesh.edges_with(tag)
        assert np.allclose(np.linalg.norm(p[e], axis=2), 1.0, atol=1e-12)
    mid = p[mesh.edges_with(BoundaryTag.CONTACT)].mean(axis=1)
    ang = np.arctan2(mid[:, 1], mid[:, 0])
    assert np.all((ang > -5 * math.pi / 8) & (ang < -3 * math.pi / 8))


def test_mirror_permutation_maps_triangles_to_triangles(mesh):
    perm = mesh.mirror_permutation()
    assert np.allclose(mesh.nodes[perm], mesh.nodes * [-1, 1], atol=1e-12)
    tris = {tuple(sorted(t)) for t in mesh.triangles}
    assert {tuple(sorted(perm[t])) for t in mesh.triangles} == tris


def test_outward_orientation_of_boundary_edges(mesh):
    p = mesh.nodes[mesh.boundary_edges]
    d = p[:, 1] - p[:, 0]
    normal = np.stack([d[:, 1], -d[:, 0]], axis=1)
    mid = p.mean(axis=1)
    curved = mesh.boundary_tags != BoundaryTag.DIRICHLET
    assert np.all(np.sum(normal[curved] * mid[curved], axis=1) > 0)
    assert np.all(normal[~curved][:, 1] > 0)


def test_mapping_scales_areas_and_radius(mesh):
    m = apply_mapping(mesh, GeometricMapping(0.7))
    assert np.allclose(m.signed_areas(), 0.49 * mesh.signed_areas(), rtol=1e-12)
    curved = np.unique(mesh.boundary_edges[mesh.boundary_tags != BoundaryTag.DIRICHLET])
    assert np.allclose(np.linalg.norm(m.nodes[curved], axis=1), 0.7, atol=1e-12)


def test_mapping_identity_and_inverse(mesh):
    assert np.array_equal(apply_mapping(mesh, GeometricMapping(1.0)).nodes, mesh.nodes)
    back = apply_mapping(apply_mapping(mesh, GeometricMapping(2.0)), GeometricMapping(0.5))
    assert np.allclose(back.nodes, mesh.nodes, atol=1e-12)


def test_mapping_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        GeometricMapping(0.0)


@pytest.mark.parametrize("arc", [(0.1, 0.2), (-1.0, -1.0), (-4.0, -1.0)])
def test_invalid_contact_arc(arc):
    with pytest.raises(InvalidArc):
        build_reference_halfdisk(0.05, arc)


def test_refinement_increases_node_count():
    assert build_reference_halfdisk(0.02).n_nodes < build_reference_halfdisk(0.01).n_nodes
