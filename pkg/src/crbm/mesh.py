"""Half-disk triangulation, boundary tagging and the radial scaling map."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay


class InvalidArc(ValueError):
    pass


class MeshFailure(RuntimeError):
    pass


class BoundaryTag(enum.IntEnum):
    DIRICHLET = 0
    NEUMANN = 1
    CONTACT = 2


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation.

    ``triangles`` are counterclockwise. ``boundary_edges`` are oriented so the
    domain lies to their left, i.e. the outward normal is ``(dy, -dx)``.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    mesh_size_h: float
    contact_arc: tuple[float, float] = (-5 * math.pi / 8, -3 * math.pi / 8)
    radius: float = 1.0

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edges_with(self, tag: BoundaryTag) -> np.ndarray:
        return self.boundary_edges[self.boundary_tags == tag]

    def mirror_permutation(self, tol: float = 1e-12) -> np.ndarray:
        """Node permutation induced by ``x -> -x``; raises if the node set is not symmetric."""
        key = np.round(self.nodes / tol).astype(np.int64)
        lookup = {tuple(k): i for i, k in enumerate(key)}
        mirrored = key.copy()
        mirrored[:, 0] *= -1
        try:
            return np.array([lookup[tuple(k)] for k in mirrored], dtype=np.int64)
        except KeyError as exc:
            raise MeshFailure("node set is not mirror-symmetric") from exc


@dataclass(frozen=True)
class GeometricMapping:
    mu: float
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mapping scale must be positive, got {self.mu}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        return c + self.mu * (np.asarray(x, dtype=float) - c)


def apply_mapping(mesh: Mesh, mapping: GeometricMapping) -> Mesh:
    return Mesh(
        nodes=mapping(mesh.nodes),
        triangles=mesh.triangles,
        boundary_edges=mesh.boundary_edges,
        boundary_tags=mesh.boundary_tags,
        mesh_size_h=mesh.mesh_size_h * mapping.mu,
        contact_arc=mesh.contact_arc,
        radius=mesh.radius * mapping.mu,
    )


# -- generation -----------------------------------------------------------------

# Element size grows linearly away from the contact arc (and its mirror image)
# up to a cap; this gives ~2000 vertices at h = 2.5 mm.
SIZE_GRADIENT = 0.2
SIZE_CAP = 0.1
QUADTREE_CELL_FACTOR = 1.5


@dataclass
class _SizeField:
    h: float
    arcs: list[tuple[float, float]]
    gradient: float = SIZE_GRADIENT
    cap: float = SIZE_CAP
    _ends: np.ndarray = field(init=False)

    def __post_init__(self):
        self.cap = max(self.cap, self.h)
        ends = [(math.cos(t), math.sin(t)) for arc in self.arcs for t in arc]
        self._ends = np.array(ends)

    def __call__(self, p: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(p)
        r = np.hypot(p[:, 0], p[:, 1])
        theta = np.arctan2(p[:, 1], p[:, 0])
        # the point at angle exactly pi is the same as -pi on the closed half-disk
        theta = np.where(theta > 0.5 * math.pi, theta - 2 * math.pi, theta)
        inside = np.zeros(len(p), dtype=bool)
        for a, b in self.arcs:
            inside |= (theta >= a) & (theta <= b)
        d_end = np.min(
            np.hypot(p[:, None, 0] - self._ends[None, :, 0], p[:, None, 1] - self._ends[None, :, 1]),
            axis=1,
        )
        dist = np.where(inside, np.minimum(np.abs(1.0 - r), d_end), d_end)
        return np.minimum(self.cap, self.h + self.gradient * dist)


def _equidistribute(curve, size: _SizeField, n_sample: int = 4000) -> np.ndarray:
    """Parameters in [0, 1] of nodes spaced by the local size along ``curve``."""
    t = np.linspace(0.0, 1.0, n_sample + 1)
    pts = curve(t)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    mid = curve(0.5 * (t[1:] + t[:-1]))
    density = seg / size(mid)
    cum = np.concatenate([[0.0], np.cumsum(density)])
    n = max(1, int(math.ceil(cum[-1] - 1e-9)))
    targets = np.linspace(0.0, cum[-1], n + 1)
    params = np.interp(targets, cum, t)
    params[0], params[-1] = 0.0, 1.0
    return params


def _arc_nodes(a: float, b: float, size: _SizeField) -> np.ndarray:
    def curve(t):
        th = a + (b - a) * np.asarray(t)
        return np.stack([np.cos(th), np.sin(th)], axis=-1)

    th = a + (b - a) * _equidistribute(curve, size)
    pts = np.stack([np.cos(th), np.sin(th)], axis=-1)
    # snap the points that must be exact for mirror symmetry and the flat edge
    pts[np.isclose(th, -math.pi, atol=1e-14)] = (-1.0, 0.0)
    pts[np.isclose(th, -0.5 * math.pi, atol=1e-14)] = (0.0, -1.0)
    return pts


def _segment_nodes(p0, p1, size: _SizeField) -> np.ndarray:
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)

    def curve(t):
        t = np.asarray(t)[..., None]
        return p0 + t * (p1 - p0)

    pts = curve(_equidistribute(curve, size))
    pts[0], pts[-1] = p0, p1
    return pts


def _quadtree_points(size: _SizeField, cell_factor: float) -> np.ndarray:
    """Corners of a size-adapted quadtree over the box [-1, 0]^2."""
    pts = []
    stack = [(-1.0, -1.0, 1.0)]
    while stack:
        x0, y0, c = stack.pop()
        cx, cy = x0 + 0.5 * c, y0 + 0.5 * c
        # skip cells entirely outside the unit disk
        nx = max(x0, min(0.0, x0 + c))
        ny = max(y0, min(0.0, y0 + c))
        if math.hypot(nx, ny) > 1.0:
            continue
        if c > cell_factor * size(np.array([[cx, cy]]))[0]:
            h2 = 0.5 * c
            stack.extend(
                [(x0, y0, h2), (x0 + h2, y0, h2), (x0, y0 + h2, h2), (x0 + h2, y0 + h2, h2)]
            )
        else:
            pts.extend([(x0, y0), (x0 + c, y0), (x0, y0 + c), (x0 + c, y0 + c)])
    pts = np.unique(np.array(pts), axis=0)
    s = size(pts)
    r = np.hypot(pts[:, 0], pts[:, 1])
    margin = 0.45 * s
    keep = (pts[:, 0] < -margin) & (pts[:, 1] < -margin) & (r < 1.0 - margin)
    return pts[keep]


def _quarter_points(size: _SizeField, contact_arc, cell_factor: float) -> np.ndarray:
    a, b = contact_arc
    breaks = {-math.pi, -0.5 * math.pi}
    for t in (a, b, -math.pi - a, -math.pi - b):
        if -math.pi < t < -0.5 * math.pi:
            breaks.add(t)
    breaks = sorted(breaks)
    arc = [_arc_nodes(t0, t1, size)[:-1] for t0, t1 in zip(breaks[:-1], breaks[1:])]
    arc.append(np.array([[0.0, -1.0]]))
    axis = _segment_nodes((0.0, -1.0), (0.0, 0.0), size)[1:]
    top = _segment_nodes((0.0, 0.0), (-1.0, 0.0), size)[1:-1]
    boundary = np.concatenate(arc + [axis, top])
    return np.concatenate([boundary, _quadtree_points(size, cell_factor)])


def _boundary_edges(triangles: np.ndarray) -> np.ndarray:
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    if np.any(counts > 2):
        raise MeshFailure("non-manifold edge in triangulation")
    return e[counts[inv] == 1]


def build_reference_halfdisk(
    h_target: float,
    contact_arc: tuple[float, float] = (-5 * math.pi / 8, -3 * math.pi / 8),
    *,
    gradient: float = SIZE_GRADIENT,
    cap: float = SIZE_CAP,
    cell_factor: float = QUADTREE_CELL_FACTOR,
) -> Mesh:
    """Graded, mirror-symmetric triangulation of the unit lower half-disk.

    The quarter ``x <= 0`` is triangulated (boundary nodes by size
    equidistribution, interior nodes from a quadtree, Delaunay connectivity)
    and reflected about ``x = 0``. The flat edge ``y = 0`` is Dirichlet, the
    curved edges whose midpoint angle lies in ``contact_arc`` are Contact,
    everything else on the circle is Neumann.
    """
    if not h_target > 0:
        raise ValueError("h_target must be positive")
    a, b = map(float, contact_arc)
    if not (-math.pi <= a < b <= 0.0):
        raise InvalidArc(f"contact arc {contact_arc} is empty or outside [-pi, 0]")

    size = _SizeField(h_target, [(a, b), (-math.pi - b, -math.pi - a)], gradient, cap)
    quarter = _quarter_points(size, (a, b), cell_factor)
    tri = Delaunay(quarter)
    if len(tri.coplanar):
        raise MeshFailure("Delaunay dropped input points")
    qt = tri.simplices.astype(np.int64)
    p = quarter[qt]
    area = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    qt[area < 0] = qt[area < 0][:, [0, 2, 1]]
    qt = qt[np.abs(area) > 1e-10 * h_target**2]

    on_axis = quarter[:, 0] == 0.0
    n_q = len(quarter)
    off = np.flatnonzero(~on_axis)
    mirror_id = np.arange(n_q)
    mirror_id[off] = n_q + np.arange(len(off))
    mirrored = quarter[off].copy()
    mirrored[:, 0] *= -1.0
    nodes = np.concatenate([quarter, mirrored])
    triangles = np.concatenate([qt, mirror_id[qt][:, [0, 2, 1]]])

    edges = _boundary_edges(triangles)
    mid = 0.5 * (nodes[edges[:, 0]] + nodes[edges[:, 1]])
    on_top = (nodes[edges[:, 0], 1] == 0.0) & (nodes[edges[:, 1], 1] == 0.0)
    theta = np.arctan2(mid[:, 1], mid[:, 0])
    rr = np.hypot(nodes[edges, 0], nodes[edges, 1])
    on_circle = np.all(np.abs(rr - 1.0) < 1e-12, axis=1)
    tags = np.full(len(edges), BoundaryTag.NEUMANN, dtype=np.int8)
    tags[on_top] = BoundaryTag.DIRICHLET
    tags[on_circle & ~on_top & (theta >= a) & (theta <= b)] = BoundaryTag.CONTACT
    if np.any(~on_top & ~on_circle):
        raise MeshFailure("boundary edge off the half-disk boundary")

    order = np.lexsort((edges[:, 1], edges[:, 0]))
    mesh = Mesh(
        nodes=nodes,
        triangles=triangles,
        boundary_edges=edges[order],
        boundary_tags=tags[order],
        mesh_size_h=float(h_target),
        contact_arc=(a, b),
    )
    if np.any(mesh.signed_areas() <= 0):
        raise MeshFailure("degenerate triangle")
    return mesh
