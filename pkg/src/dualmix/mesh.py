"""Triangulations of rectangles, barycentric refinement and macroelement patches.

Edges are stored with a global orientation running from the lower to the
higher vertex index.  The edge normal is the unit tangent rotated by 90
degrees clockwise, so both triangles sharing an edge see the same normal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

INTERIOR, DIRICHLET, TRACTION = 0, 1, 2
TAG_NAMES = {INTERIOR: "interior", DIRICHLET: "dirichlet", TRACTION: "traction"}

# local edge k of a triangle joins local vertices LOCAL_EDGES[k] (opposite vertex k)
LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


@dataclass(frozen=True, eq=False)
class Triangulation:
    """Immutable 2D triangle mesh with edge connectivity.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    edges : (ne, 2) int array, ``edges[e, 0] < edges[e, 1]``
    tri_edges : (nt, 3) int array, local edge k is opposite local vertex k
    tri_edge_sign : (nt, 3) +1 where the global edge normal points out of the triangle
    edge_tris : (ne, 2) adjacent triangles, ``-1`` in column 1 on the boundary
    edge_tags : (ne,) one of INTERIOR, DIRICHLET, TRACTION
    parent : (nt,) parent triangle index for refined meshes, else None
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    tri_edge_sign: np.ndarray
    edge_tris: np.ndarray
    edge_tags: np.ndarray
    parent: Optional[np.ndarray] = None
    parent_mesh: Optional["Triangulation"] = field(default=None, repr=False)

    @classmethod
    def from_triangles(
        cls,
        vertices,
        triangles,
        boundary_tag: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        parent=None,
        parent_mesh=None,
    ) -> "Triangulation":
        """Build connectivity for a list of counterclockwise triangles.

        ``boundary_tag`` maps an (m, 2) array of boundary edge midpoints to
        tags; the default tags every boundary edge as Dirichlet.
        """
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        nt = len(triangles)
        local = triangles[:, LOCAL_EDGES]  # (nt, 3, 2)
        lo = local.min(axis=2).ravel()
        hi = local.max(axis=2).ravel()
        pairs = np.stack([lo, hi], axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        tri_edges = inverse.reshape(nt, 3)

        # orientation: the normal of edge (a, b) is the clockwise rotation of b - a,
        # which points out of the triangle iff the triangle traverses a -> b
        tri_edge_sign = np.where(local[:, :, 0] < local[:, :, 1], 1, -1)

        ne = len(edges)
        edge_tris = -np.ones((ne, 2), dtype=np.int64)
        owner = np.repeat(np.arange(nt), 3)
        order = np.argsort(inverse, kind="stable")
        sorted_edges = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_edges[1:] != sorted_edges[:-1]
        edge_tris[sorted_edges[first], 0] = owner[order[first]]
        edge_tris[sorted_edges[~first], 1] = owner[order[~first]]
        counts = np.bincount(inverse, minlength=ne)
        if counts.max() > 2:
            raise ValueError("non-manifold mesh: an edge is shared by more than two triangles")

        tags = np.zeros(ne, dtype=np.int64)
        boundary = edge_tris[:, 1] < 0
        if boundary.any():
            if boundary_tag is None:
                tags[boundary] = DIRICHLET
            else:
                mid = 0.5 * (vertices[edges[boundary, 0]] + vertices[edges[boundary, 1]])
                tags[boundary] = np.asarray(boundary_tag(mid), dtype=np.int64)
                if np.any(tags[boundary] == INTERIOR):
                    raise ValueError("boundary_tag returned INTERIOR for a boundary edge")

        mesh = cls(
            vertices=vertices,
            triangles=triangles,
            edges=edges,
            tri_edges=tri_edges,
            tri_edge_sign=tri_edge_sign,
            edge_tris=edge_tris,
            edge_tags=tags,
            parent=None if parent is None else np.asarray(parent, dtype=np.int64),
            parent_mesh=parent_mesh,
        )
        for arr in (vertices, triangles, edges, tri_edges, tri_edge_sign, edge_tris, tags):
            arr.setflags(write=False)
        return mesh

    # -- sizes -----------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def is_refined(self) -> bool:
        return self.parent is not None

    # -- geometry --------------------------------------------------------
    def signed_areas(self) -> np.ndarray:
        x = self.vertices[self.triangles]
        d1 = x[:, 1] - x[:, 0]
        d2 = x[:, 2] - x[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def edge_normals(self) -> np.ndarray:
        """Unit normals, clockwise rotation of the lower-to-higher tangent."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        d = d / np.hypot(d[:, 0], d[:, 1])[:, None]
        return np.stack([d[:, 1], -d[:, 0]], axis=1)

    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    def mesh_size(self) -> float:
        return float(self.edge_lengths().max())

    def boundary_edges(self, tag: Optional[int] = None) -> np.ndarray:
        mask = self.edge_tris[:, 1] < 0
        if tag is not None:
            mask &= self.edge_tags == tag
        return np.flatnonzero(mask)

    def interior_vertices(self) -> np.ndarray:
        on_boundary = np.zeros(self.n_vertices, dtype=bool)
        on_boundary[self.edges[self.boundary_edges()].ravel()] = True
        return np.flatnonzero(~on_boundary)

    def with_vertices(self, vertices) -> "Triangulation":
        """Same combinatorics and tags, new coordinates (e.g. an affine image)."""
        tags = self.edge_tags
        mesh = Triangulation.from_triangles(
            vertices, self.triangles, None, parent=self.parent, parent_mesh=self.parent_mesh
        )
        object.__setattr__(mesh, "edge_tags", tags)
        return mesh

    def check(self, rtol: float = 1e-12) -> None:
        """Raise ``ValueError`` if an invariant of the triangulation fails."""
        area = self.signed_areas()
        scale = self.edge_lengths().max() ** 2
        if np.any(area <= rtol * scale):
            raise ValueError("triangle with non-positive signed area")
        counts = np.bincount(self.tri_edges.ravel(), minlength=self.n_edges)
        interior = self.edge_tags == INTERIOR
        if np.any(counts[interior] != 2) or np.any(counts[~interior] != 1):
            raise ValueError("edge incidence inconsistent with boundary tags")


@dataclass(frozen=True)
class MacroElement:
    kind: str  # "vertex", "facet" or "parent"
    triangles: tuple
    anchor: int


def _default_domain(domain):
    if domain is None:
        return (-1.0, 1.0, -1.0, 1.0)
    return tuple(float(v) for v in domain)


def traction_right(domain=None, tol: float = 1e-12):
    """Boundary tagger marking the edges on x = x_max as traction edges."""
    x0, x1, y0, y1 = _default_domain(domain)

    def tag(mid):
        right = np.abs(mid[:, 0] - x1) <= tol * max(1.0, abs(x1))
        return np.where(right, TRACTION, DIRICHLET)

    return tag


def uniform_square_mesh(N: int, domain=None, traction: bool = False) -> Triangulation:
    """Split ``domain`` = (x0, x1, y0, y1) into N x N squares, each cut along
    the lower-left to upper-right diagonal."""
    if N < 1:
        raise ValueError("N must be positive")
    x0, x1, y0, y1 = _default_domain(domain)
    xs = np.linspace(x0, x1, N + 1)
    ys = np.linspace(y0, y1, N + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
    i, j = np.meshgrid(np.arange(N), np.arange(N))
    i, j = i.ravel(), j.ravel()
    v00 = j * (N + 1) + i
    v10 = v00 + 1
    v01 = v00 + N + 1
    v11 = v01 + 1
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    tagger = traction_right((x0, x1, y0, y1)) if traction else None
    return Triangulation.from_triangles(vertices, triangles, tagger)


def perturbed_square_mesh(N: int, amplitude: float, rng, domain=None, traction=False) -> Triangulation:
    """Uniform mesh with interior vertices moved randomly by up to ``amplitude * h``."""
    mesh = uniform_square_mesh(N, domain, traction)
    x0, x1, y0, y1 = _default_domain(domain)
    h = min(x1 - x0, y1 - y0) / N
    verts = mesh.vertices.copy()
    inner = mesh.interior_vertices()
    verts[inner] += rng.uniform(-amplitude * h, amplitude * h, size=(len(inner), 2))
    out = Triangulation.from_triangles(verts, mesh.triangles, traction_right(domain) if traction else None)
    out.check()
    return out


def barycentric_refine(mesh: Triangulation) -> Triangulation:
    """Split every triangle into three sharing its centroid.

    Child ``3 * t + k`` of parent ``t`` is opposite parent edge k (it contains
    local edge k of the parent), so the children of a parent are contiguous.
    """
    nt, nv = mesh.n_triangles, mesh.n_vertices
    verts = np.vstack([mesh.vertices, mesh.centroids()])
    g = nv + np.arange(nt)
    t = mesh.triangles
    children = np.empty((nt, 3, 3), dtype=np.int64)
    for k in range(3):
        a, b = LOCAL_EDGES[k]
        children[:, k] = np.stack([t[:, a], t[:, b], g], axis=1)
    children = children.reshape(-1, 3)
    parent = np.repeat(np.arange(nt), 3)

    tag_of = {tuple(e): tag for e, tag in zip(mesh.edges.tolist(), mesh.edge_tags.tolist()) if tag != INTERIOR}

    def tagger(mid):
        # refined boundary edges coincide with parent boundary edges
        return _lookup_tags(mesh, mid, tag_of)

    return Triangulation.from_triangles(verts, children, tagger, parent=parent, parent_mesh=mesh)


def _lookup_tags(mesh, mid, tag_of):
    b = mesh.boundary_edges()
    pm = mesh.edge_midpoints()[b]
    tags = np.array([tag_of[tuple(mesh.edges[e])] for e in b])
    d = np.abs(mid[:, None, :] - pm[None, :, :]).sum(axis=2)
    return tags[d.argmin(axis=1)]


def extract_macroelements(mesh: Triangulation, kind: str) -> list[MacroElement]:
    """Vertex patches around interior vertices, facet patches around triangles
    with three interior edges, or the children of each parent of a refined mesh."""
    if kind == "vertex":
        out = []
        inner = mesh.interior_vertices()
        tri_ids = np.repeat(np.arange(mesh.n_triangles), 3)
        verts = mesh.triangles.ravel()
        order = np.argsort(verts, kind="stable")
        starts = np.searchsorted(verts[order], inner, side="left")
        stops = np.searchsorted(verts[order], inner, side="right")
        for v, a, b in zip(inner, starts, stops):
            out.append(MacroElement("vertex", tuple(int(i) for i in np.sort(tri_ids[order[a:b]])), int(v)))
        return out
    if kind == "facet":
        out = []
        interior = mesh.edge_tags[mesh.tri_edges] == INTERIOR
        for t in np.flatnonzero(interior.all(axis=1)):
            nbrs = []
            for e in mesh.tri_edges[t]:
                a, b = mesh.edge_tris[e]
                nbrs.append(int(b if a == t else a))
            out.append(MacroElement("facet", (int(t), *nbrs), int(t)))
        return out
    if kind == "parent":
        if mesh.parent is None:
            raise ValueError("parent patches require a barycentrically refined mesh")
        n = mesh.parent_mesh.n_triangles
        return [MacroElement("parent", (3 * p, 3 * p + 1, 3 * p + 2), p) for p in range(n)]
    raise ValueError(f"unknown macroelement kind {kind!r}")


def collinearity_margin(points) -> float:
    """Smallest singular value of the mean-centred point matrix (0 iff collinear)."""
    p = np.asarray(points, dtype=float)
    p = p - p.mean(axis=0)
    return float(np.linalg.svd(p, compute_uv=False)[-1])


def centroid_collinearity_margin(patch: MacroElement, mesh: Triangulation) -> float:
    if len(patch.triangles) != 4:
        raise ValueError("a facet patch has exactly four triangles")
    return collinearity_margin(mesh.centroids()[list(patch.triangles)])


# -- plain text I/O ---------------------------------------------------------

def write_mesh(mesh: Triangulation, fh) -> None:
    """Header ``ntri nvert nedge``, then vertices, triangles and ``v0 v1 tag`` edge records."""
    fh.write(f"{mesh.n_triangles} {mesh.n_vertices} {mesh.n_edges}\n")
    for x, y in mesh.vertices:
        fh.write(f"{x:.17g} {y:.17g}\n")
    for a, b, c in mesh.triangles:
        fh.write(f"{a} {b} {c}\n")
    for (a, b), tag in zip(mesh.edges, mesh.edge_tags):
        fh.write(f"{a} {b} {TAG_NAMES[int(tag)]}\n")


def read_mesh(fh) -> Triangulation:
    lines = [ln.split() for ln in fh.read().splitlines() if ln.strip()]
    nt, nv, ne = (int(v) for v in lines[0])
    verts = np.array([[float(v) for v in ln] for ln in lines[1 : 1 + nv]])
    tris = np.array([[int(v) for v in ln] for ln in lines[1 + nv : 1 + nv + nt]])
    names = {v: k for k, v in TAG_NAMES.items()}
    recs = lines[1 + nv + nt : 1 + nv + nt + ne]
    tag_of = {(int(a), int(b)): names[t] for a, b, t in recs}
    mesh = Triangulation.from_triangles(verts, tris)
    tags = np.array([tag_of[tuple(e)] for e in mesh.edges.tolist()], dtype=np.int64)
    tags.setflags(write=False)
    object.__setattr__(mesh, "edge_tags", tags)
    return mesh


def affine_image(mesh: Triangulation, A: Sequence, b: Sequence) -> Triangulation:
    """Apply x -> A x + b; orientation-reversing maps are rejected."""
    A = np.asarray(A, dtype=float)
    if np.linalg.det(A) <= 0:
        raise ValueError("affine map must preserve orientation")
    return mesh.with_vertices(mesh.vertices @ A.T + np.asarray(b, dtype=float))
