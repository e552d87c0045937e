"""Vector P1/P2 Lagrange spaces, assembly and boundary traces in plane strain."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import kernels
from .mesh import BoundaryTag, Mesh

DIM = 2
TRIANGLE_QUAD_DEGREE = 4
EDGE_QUAD_POINTS = 4


class UnsupportedDegree(ValueError):
    pass


@dataclass(frozen=True)
class MaterialParams:
    young_E: float = 15.0
    poisson_nu: float = 0.35

    def __post_init__(self):
        if not self.young_E > 0:
            raise ValueError("Young modulus must be positive")
        if not 0.0 < self.poisson_nu < 0.5:
            raise ValueError("Poisson ratio must lie in (0, 0.5)")

    @property
    def lame_mu(self) -> float:
        return self.young_E / (2.0 * (1.0 + self.poisson_nu))

    @property
    def lame_lambda(self) -> float:
        nu = self.poisson_nu
        return self.young_E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    def voigt(self) -> np.ndarray:
        lam, mu = self.lame_lambda, self.lame_mu
        return np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])


# -- quadrature -------------------------------------------------------------------

def gauss_legendre_01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule with ``n`` points on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the unit triangle, exact for polynomials of ``degree``.

    Returns points ``(Q, 2)`` and weights summing to 1/2.
    """
    nu = max(1, math.ceil((degree + 2) / 2))
    nv = max(1, math.ceil((degree + 1) / 2))
    u, wu = gauss_legendre_01(nu)
    v, wv = gauss_legendre_01(nv)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.stack([uu.ravel(), (vv * (1.0 - uu)).ravel()], axis=1)
    w = (wu[:, None] * wv[None, :] * (1.0 - u)[:, None]).ravel()
    pts.flags.writeable = False
    w.flags.writeable = False
    return pts, w


def shape_functions(degree: int, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values ``(Q, n_loc)`` and reference gradients ``(Q, n_loc, 2)``.

    Local order: vertices 0, 1, 2, then midpoints of edges 01, 12, 20.
    """
    xi = np.atleast_2d(xi)
    x, y = xi[:, 0], xi[:, 1]
    l0, l1, l2 = 1.0 - x - y, x, y
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    if degree == 1:
        vals = np.stack([l0, l1, l2], axis=1)
        grads = np.broadcast_to(dl, (len(x), 3, 2)).copy()
        return vals, grads
    if degree != 2:
        raise UnsupportedDegree(f"degree {degree} not supported")
    lam = (l0, l1, l2)
    vals = [lam[i] * (2 * lam[i] - 1) for i in range(3)]
    grads = [(4 * lam[i] - 1)[:, None] * dl[i] for i in range(3)]
    for i, j in ((0, 1), (1, 2), (2, 0)):
        vals.append(4 * lam[i] * lam[j])
        grads.append(4 * (lam[j][:, None] * dl[i] + lam[i][:, None] * dl[j]))
    return np.stack(vals, axis=1), np.stack(grads, axis=1)


# -- space ------------------------------------------------------------------------

@dataclass(frozen=True)
class ContactPoints:
    """Evaluation points on contact edges, each attached to one triangle.

    ``grads`` are physical gradients, ``points`` lie on the straight mesh
    edge, ``normals`` are radial (the exact normal of the circle through the
    contact arc) and ``weights`` are quadrature weights on the straight edge
    (zero for pure sampling sets).
    """

    element: np.ndarray
    dofs: np.ndarray
    values: np.ndarray
    grads: np.ndarray
    weights: np.ndarray
    points: np.ndarray
    normals: np.ndarray

    @property
    def tangents(self) -> np.ndarray:
        return np.stack([-self.normals[..., 1], self.normals[..., 0]], axis=-1)

    @property
    def n_sets(self) -> int:
        return len(self.element)

    def scaled(self, mu: float) -> "ContactPoints":
        """Same points seen through the map ``x -> mu x``."""
        return ContactPoints(
            self.element, self.dofs, self.values, self.grads / mu,
            self.weights * mu, self.points * mu, self.normals,
        )

    def subset(self, idx: np.ndarray) -> "ContactPoints":
        return ContactPoints(
            self.element[idx], self.dofs[idx], self.values[idx], self.grads[idx],
            self.weights[idx], self.points[idx], self.normals[idx],
        )


@dataclass(frozen=True)
class NodalSampler:
    """Lagrange nodes on the contact boundary, ordered by polar angle.

    Each (node, adjacent contact edge) pair is one entry of ``pairs``; nodal
    stresses are the arithmetic mean over the pairs of a node (``average``).
    """

    nodes: np.ndarray
    coords: np.ndarray
    normals: np.ndarray
    pairs: ContactPoints
    average: sp.csr_matrix

    def scaled(self, mu: float) -> "NodalSampler":
        return NodalSampler(self.nodes, self.coords * mu, self.normals, self.pairs.scaled(mu), self.average)


@dataclass(frozen=True, eq=False)
class FeSpace:
    mesh: Mesh
    degree: int
    dof_coords: np.ndarray
    element_nodes: np.ndarray
    element_dofs: np.ndarray
    dirichlet_dofs: np.ndarray
    contact_dofs: np.ndarray
    contact: ContactPoints
    sampler: NodalSampler

    @property
    def n_nodes(self) -> int:
        return len(self.dof_coords)

    @property
    def n_dof(self) -> int:
        return DIM * len(self.dof_coords)

    @property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dof, dtype=bool)
        mask[self.dirichlet_dofs] = False
        return np.flatnonzero(mask)

    @property
    def boundary_frames(self) -> tuple[np.ndarray, np.ndarray]:
        return self.contact.normals, self.contact.tangents

    def element_geometry(self) -> tuple[np.ndarray, np.ndarray]:
        """Inverse-transposed Jacobians ``(T, 2, 2)`` and determinants ``(T,)``."""
        p = self.mesh.nodes[self.mesh.triangles]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv_t = np.empty_like(jac)
        inv_t[:, 0, 0] = jac[:, 1, 1] / det
        inv_t[:, 0, 1] = -jac[:, 1, 0] / det
        inv_t[:, 1, 0] = -jac[:, 0, 1] / det
        inv_t[:, 1, 1] = jac[:, 0, 0] / det
        return inv_t, det

    def mirror_dofs(self) -> tuple[np.ndarray, np.ndarray]:
        """DOF permutation and signs of the reflection ``x -> -x``.

        ``(perm, sign)`` satisfies ``reflected[i] = sign[i] * U[perm[i]]``.
        """
        key = np.round(self.dof_coords / 1e-11).astype(np.int64)
        lookup = {tuple(k): i for i, k in enumerate(key)}
        mk = key.copy()
        mk[:, 0] *= -1
        node_perm = np.array([lookup[tuple(k)] for k in mk])
        perm = (DIM * node_perm[:, None] + np.arange(DIM)).ravel()
        sign = np.tile([-1.0, 1.0], len(node_perm))
        return perm, sign


def _edge_table(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted unique edges and, per triangle, the edge ids of local edges 01, 12, 20."""
    local = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.sort(local, axis=1)
    edges, inv = np.unique(key, axis=0, return_inverse=True)
    return edges, inv.ravel().reshape(3, -1).T


def _locate_boundary_edges(mesh: Mesh, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Owning triangle and local edge number (0: 01, 1: 12, 2: 20) of each boundary edge."""
    owner = {}
    for t, tri in enumerate(mesh.triangles):
        for k, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
            owner[(tri[a], tri[b])] = (t, k)
    found = [owner[(a, b)] for a, b in edges]
    arr = np.array(found, dtype=np.int64).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


_EDGE_REF = {0: (np.array([0.0, 0.0]), np.array([1.0, 0.0])),
             1: (np.array([1.0, 0.0]), np.array([0.0, 1.0])),
             2: (np.array([0.0, 1.0]), np.array([0.0, 0.0]))}


def _contact_points(space_parts, mesh, degree, elems, local_edge, ref_params, weights_1d):
    """ContactPoints at edge parameters ``ref_params`` ``(E, Q)`` along each local edge."""
    element_dofs, inv_t = space_parts
    n_el, n_q = ref_params.shape
    xi = np.empty((n_el, n_q, 2))
    for k, (a, b) in _EDGE_REF.items():
        sel = local_edge == k
        xi[sel] = a + ref_params[sel][..., None] * (b - a)
    vals, grads_ref = shape_functions(degree, xi.reshape(-1, 2))
    n_loc = vals.shape[1]
    vals = vals.reshape(n_el, n_q, n_loc)
    grads = np.einsum("eqlk,ejk->eqlj", grads_ref.reshape(n_el, n_q, n_loc, 2), inv_t[elems])
    tri = mesh.nodes[mesh.triangles[elems]]
    x = (tri[:, None, 0] * (1 - xi[..., 0:1] - xi[..., 1:2])
         + tri[:, None, 1] * xi[..., 0:1] + tri[:, None, 2] * xi[..., 1:2])
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    normals = x / r
    a_pt = np.array([mesh.nodes[mesh.triangles[e, i]] for e, i in zip(elems, local_edge)])
    b_pt = np.array([mesh.nodes[mesh.triangles[e, (i + 1) % 3]] for e, i in zip(elems, local_edge)])
    length = np.linalg.norm(b_pt - a_pt, axis=1)
    return ContactPoints(
        element=elems,
        dofs=element_dofs[elems],
        values=vals,
        grads=grads,
        weights=length[:, None] * weights_1d,
        points=x,
        normals=normals,
    )


def build_fe_space(mesh: Mesh, degree: int = 2, edge_points: int = EDGE_QUAD_POINTS) -> FeSpace:
    if degree not in (1, 2):
        raise UnsupportedDegree(f"degree {degree} not supported (use 1 or 2)")
    nv = mesh.n_nodes
    edges, tri_edges = _edge_table(mesh.triangles)
    if degree == 2:
        coords = np.concatenate([mesh.nodes, 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])])
        element_nodes = np.concatenate([mesh.triangles, nv + tri_edges], axis=1)
    else:
        coords = mesh.nodes.copy()
        element_nodes = mesh.triangles.copy()
    element_dofs = (DIM * element_nodes[:, :, None] + np.arange(DIM)).reshape(len(element_nodes), -1)
    edge_id = {tuple(e): i for i, e in enumerate(edges)}

    def edge_nodes(tag):
        be = mesh.edges_with(tag)
        nodes = [be.ravel()]
        if degree == 2:
            nodes.append(nv + np.array([edge_id[tuple(sorted(e))] for e in be], dtype=np.int64))
        return np.unique(np.concatenate(nodes)) if len(be) else np.zeros(0, dtype=np.int64)

    def dofs_of(nodes):
        return (DIM * nodes[:, None] + np.arange(DIM)).ravel()

    dirichlet = dofs_of(edge_nodes(BoundaryTag.DIRICHLET))
    contact_nodes = edge_nodes(BoundaryTag.CONTACT)

    space0 = FeSpace(mesh, degree, coords, element_nodes, element_dofs, dirichlet,
                     dofs_of(contact_nodes), None, None)
    inv_t, _ = space0.element_geometry()

    cedges = mesh.edges_with(BoundaryTag.CONTACT)
    elems, local_edge = _locate_boundary_edges(mesh, cedges)
    t1, w1 = gauss_legendre_01(edge_points)
    contact = _contact_points((element_dofs, inv_t), mesh, degree, elems, local_edge,
                              np.tile(t1, (len(elems), 1)), w1)
    sampler = _build_sampler(mesh, degree, element_dofs, inv_t, element_nodes, elems, local_edge,
                             contact_nodes, coords)
    return FeSpace(mesh, degree, coords, element_nodes, element_dofs, dirichlet,
                   dofs_of(contact_nodes), contact, sampler)


def _build_sampler(mesh, degree, element_dofs, inv_t, element_nodes, elems, local_edge,
                   contact_nodes, coords) -> NodalSampler:
    theta = np.arctan2(coords[contact_nodes, 1], coords[contact_nodes, 0])
    nodes = contact_nodes[np.argsort(theta, kind="stable")]
    position = {n: i for i, n in enumerate(nodes)}
    # edge parameter of each Lagrange node along local edge k: start, end, midpoint
    local_of_edge = {0: ((0, 0.0), (1, 1.0), (3, 0.5)), 1: ((1, 0.0), (2, 1.0), (4, 0.5)),
                     2: ((2, 0.0), (0, 1.0), (5, 0.5))}
    pair_el, pair_edge, pair_t, pair_node = [], [], [], []
    for e, (t, k) in enumerate(zip(elems, local_edge)):
        for loc, par in local_of_edge[k]:
            if loc >= element_nodes.shape[1]:
                continue
            pair_el.append(t)
            pair_edge.append(k)
            pair_t.append(par)
            pair_node.append(position[element_nodes[t, loc]])
    pair_el = np.array(pair_el, dtype=np.int64)
    order = np.lexsort((pair_el, np.array(pair_node)))
    pair_el = pair_el[order]
    pair_edge = np.array(pair_edge, dtype=np.int64)[order]
    pair_t = np.array(pair_t)[order][:, None]
    pair_node = np.array(pair_node, dtype=np.int64)[order]
    pts = _contact_points((element_dofs, inv_t), mesh, degree, pair_el, pair_edge, pair_t, np.zeros(1))
    counts = np.bincount(pair_node, minlength=len(nodes))
    average = sp.csr_matrix((1.0 / counts[pair_node], (pair_node, np.arange(len(pair_node)))),
                            shape=(len(nodes), len(pair_node)))
    xy = coords[nodes]
    normals = xy / np.linalg.norm(xy, axis=1, keepdims=True)
    return NodalSampler(nodes, xy, normals, pts, average)


# -- assembly ---------------------------------------------------------------------

def _element_gradients(space: FeSpace, degree_q: int):
    pts, w = triangle_rule(degree_q)
    vals, grads_ref = shape_functions(space.degree, pts)
    inv_t, det = space.element_geometry()
    grads = np.einsum("qlk,ejk->eqlj", grads_ref, inv_t)
    return vals, grads, w[None, :] * det[:, None]


def _scatter(space: FeSpace, local: np.ndarray) -> sp.csr_matrix:
    dofs = space.element_dofs
    n_loc = dofs.shape[1]
    rows = np.repeat(dofs, n_loc, axis=1).ravel()
    cols = np.tile(dofs, (1, n_loc)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(space.n_dof, space.n_dof)).tocsr()
    mat.sum_duplicates()
    return mat


def _symmetrize(mat: sp.csr_matrix) -> sp.csr_matrix:
    out = (0.5 * (mat + mat.T)).tocsr()
    out.sort_indices()
    return out


def strain_matrices(grads: np.ndarray) -> np.ndarray:
    """Voigt strain-displacement matrices ``(..., 3, 2 n_loc)`` from gradients ``(..., n_loc, 2)``."""
    shape = grads.shape[:-2]
    n_loc = grads.shape[-2]
    b = np.zeros(shape + (3, DIM * n_loc))
    b[..., 0, 0::2] = grads[..., 0]
    b[..., 1, 1::2] = grads[..., 1]
    b[..., 2, 0::2] = grads[..., 1]
    b[..., 2, 1::2] = grads[..., 0]
    return b


def assemble_elasticity(space: FeSpace, mat: MaterialParams, quad_degree: int = TRIANGLE_QUAD_DEGREE):
    """Stiffness matrix of ``a(u, v) = int sigma(u) : eps(v)``."""
    _, grads, wdet = _element_gradients(space, quad_degree)
    b = strain_matrices(grads)
    local = np.einsum("eq,eqki,kl,eqlj->eij", wdet, b, mat.voigt(), b)
    return _symmetrize(_scatter(space, local))


def assemble_mass(space: FeSpace, quad_degree: int = TRIANGLE_QUAD_DEGREE):
    vals, _, wdet = _element_gradients(space, quad_degree)
    scalar = np.einsum("eq,qi,qj->eij", wdet, vals, vals)
    local = np.einsum("eij,cd->eicjd", scalar, np.eye(DIM)).reshape(len(wdet), *(2 * (DIM * vals.shape[1],)))
    return _symmetrize(_scatter(space, local))


def assemble_vector_laplacian(space: FeSpace, quad_degree: int = TRIANGLE_QUAD_DEGREE):
    """Matrix of ``int grad u : grad v``."""
    _, grads, wdet = _element_gradients(space, quad_degree)
    scalar = np.einsum("eq,eqik,eqjk->eij", wdet, grads, grads)
    n = DIM * grads.shape[2]
    local = np.einsum("eij,cd->eicjd", scalar, np.eye(DIM)).reshape(len(wdet), n, n)
    return _symmetrize(_scatter(space, local))


def assemble_h1_gram(space: FeSpace, char_length: float = 1.0, quad_degree: int = TRIANGLE_QUAD_DEGREE):
    """Gram matrix of ``|v|^2 = |v|_L2^2 + char_length^2 |grad v|_L2^2``."""
    if char_length < 0:
        raise ValueError("characteristic length must be non-negative")
    mass = assemble_mass(space, quad_degree)
    if char_length == 0:
        return mass
    return (mass + char_length**2 * assemble_vector_laplacian(space, quad_degree)).tocsr()


def assemble_load(space: FeSpace, body_force, quad_degree: int = TRIANGLE_QUAD_DEGREE) -> np.ndarray:
    """Load vector of ``int f . v``; ``body_force`` maps points ``(n, 2)`` to forces ``(n, 2)``."""
    pts, w = triangle_rule(quad_degree)
    vals, _ = shape_functions(space.degree, pts)
    _, det = space.element_geometry()
    tri = space.mesh.nodes[space.mesh.triangles]
    x = (tri[:, None, 0] * (1 - pts[None, :, 0:1] - pts[None, :, 1:2])
         + tri[:, None, 1] * pts[None, :, 0:1] + tri[:, None, 2] * pts[None, :, 1:2])
    f = np.asarray(body_force(x.reshape(-1, 2)), dtype=float).reshape(x.shape)
    local = np.einsum("q,e,ql,eqc->elc", w, det, vals, f).reshape(len(det), -1)
    out = np.zeros(space.n_dof)
    np.add.at(out, space.element_dofs.ravel(), local.ravel())
    return out


def apply_dirichlet(A, rhs: np.ndarray, dofs: np.ndarray, values) -> tuple[sp.csr_matrix, np.ndarray]:
    """Symmetric elimination of the constraints ``U[dofs] = values``."""
    n = A.shape[0]
    g = np.zeros(n)
    g[dofs] = values
    fixed = np.zeros(n)
    fixed[dofs] = 1.0
    keep = sp.diags(1.0 - fixed)
    b = rhs - A @ g
    b[dofs] = g[dofs]
    out = (keep @ A @ keep + sp.diags(fixed)).tocsr()
    out.eliminate_zeros()
    return out, b


# -- boundary traces --------------------------------------------------------------

@dataclass(frozen=True)
class OperatorRows:
    """Linear maps from local DOFs to ``sigma_nn``, ``sigma_ntau``, ``v_n``, ``v_tau``, shape ``(E, Q, L)``."""

    sigma_nn: np.ndarray
    sigma_ntau: np.ndarray
    v_n: np.ndarray
    v_tau: np.ndarray


def operator_rows(pts: ContactPoints, mat: MaterialParams) -> OperatorRows:
    n = pts.normals
    t = pts.tangents
    g = pts.grads
    gn = np.einsum("eqlk,eqk->eql", g, n)
    gt = np.einsum("eqlk,eqk->eql", g, t)
    lam, mu = mat.lame_lambda, mat.lame_mu
    shape = g.shape[:3] + (DIM,)
    snn = np.empty(shape)
    snt = np.empty(shape)
    vn = np.empty(shape)
    vt = np.empty(shape)
    for c in range(DIM):
        snn[..., c] = lam * g[..., c] + 2 * mu * n[..., None, c] * gn
        snt[..., c] = mu * (t[..., None, c] * gn + n[..., None, c] * gt)
        vn[..., c] = pts.values * n[..., None, c]
        vt[..., c] = pts.values * t[..., None, c]
    flat = shape[:2] + (-1,)
    return OperatorRows(snn.reshape(flat), snt.reshape(flat), vn.reshape(flat), vt.reshape(flat))


@dataclass(frozen=True)
class StressTrace:
    """``sigma_nn``, ``sigma_ntau``, ``v_n``, ``v_tau`` at quadrature points ``(E, Q)`` or nodes ``(Ns,)``."""

    sigma_nn: np.ndarray
    sigma_ntau: np.ndarray
    v_n: np.ndarray
    v_tau: np.ndarray


def trace_at(pts: ContactPoints, rows: OperatorRows, U: np.ndarray) -> StressTrace:
    u_loc = np.asarray(U, dtype=float)[pts.dofs]
    return StressTrace(
        kernels.row_dot(rows.sigma_nn, u_loc),
        kernels.row_dot(rows.sigma_ntau, u_loc),
        kernels.row_dot(rows.v_n, u_loc),
        kernels.row_dot(rows.v_tau, u_loc),
    )


def nodal_trace(sampler: NodalSampler, rows: OperatorRows, U: np.ndarray) -> StressTrace:
    """Nodal values; stresses averaged over the adjacent contact edges."""
    raw = trace_at(sampler.pairs, rows, U)
    avg = sampler.average
    return StressTrace(*(avg @ f[:, 0] for f in (raw.sigma_nn, raw.sigma_ntau, raw.v_n, raw.v_tau)))


def boundary_stress_trace(space: FeSpace, mat: MaterialParams, U: np.ndarray) -> tuple[StressTrace, StressTrace]:
    """Traces at the contact quadrature points and at the contact Lagrange nodes."""
    quad = trace_at(space.contact, operator_rows(space.contact, mat), U)
    nodal = nodal_trace(space.sampler, operator_rows(space.sampler.pairs, mat), U)
    return quad, nodal
