"""Discrete spaces for the gradient G, velocity u and stress S.

Three element families are provided:

* ``peers`` - continuous P1 skew + discontinuous P1 symmetric trace-free G,
  piecewise constant u, rows of S in RT0 enriched by curl bubbles.
* ``afw``   - P0 skew + P1 symmetric trace-free G, piecewise constant u,
  rows of S in BDM1.
* ``svrt``  - trace-free discontinuous P1 G and discontinuous P1 u on the
  barycentric refinement, rows of S in RT1 on the refinement.

H(div) rows are built per cell from a polynomial prime basis in scaled local
coordinates and the inverse of the degree-of-freedom matrix.  Edge moments
are taken against the globally oriented edge normal, so shared edge DOFs need
no sign correction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .mesh import INTERIOR, LOCAL_EDGES, TRACTION, Triangulation
from .quadrature import edge_rule

# pointwise trace-free basis: deviatoric diagonal, symmetric shear, skew
E_DEV = np.array([[1.0, 0.0], [0.0, -1.0]])
E_SHEAR = np.array([[0.0, 1.0], [1.0, 0.0]])
E_SKEW = np.array([[0.0, 1.0], [-1.0, 0.0]])


def sym(T):
    return 0.5 * (T + np.swapaxes(T, -1, -2))


def skw(T):
    return 0.5 * (T - np.swapaxes(T, -1, -2))


@dataclass(frozen=True)
class ElementFamily:
    name: str  # "peers", "afw" or "svrt"
    k: int = 1

    def __post_init__(self):
        if self.name not in ("peers", "afw", "svrt"):
            raise ValueError(f"unknown element family {self.name!r}")
        if self.name == "svrt" and self.k != 1:
            raise ValueError("only the lowest order (k = 1) composite element is available")

    @classmethod
    def parse(cls, text: str) -> "ElementFamily":
        t = text.strip().lower()
        if t in ("svrt", "svrt1"):
            return cls("svrt", 1)
        return cls(t)

    @property
    def tag(self) -> str:
        return "svrt1" if self.name == "svrt" else self.name

    @property
    def needs_refined_mesh(self) -> bool:
        return self.name == "svrt"


class CellGeometry:
    """Affine data for a batch of triangles."""

    def __init__(self, mesh: Triangulation, cells):
        self.cells = np.asarray(cells, dtype=np.int64)
        self.X = mesh.vertices[mesh.triangles[self.cells]]  # (nc, 3, 2)
        d1 = self.X[:, 1] - self.X[:, 0]
        d2 = self.X[:, 2] - self.X[:, 0]
        self.det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        self.area = 0.5 * self.det
        inv = np.empty((len(self.cells), 2, 2))
        inv[:, 0, 0] = d2[:, 1]
        inv[:, 0, 1] = -d2[:, 0]
        inv[:, 1, 0] = -d1[:, 1]
        inv[:, 1, 1] = d1[:, 0]
        self.Binv = inv / self.det[:, None, None]
        g = np.empty((len(self.cells), 3, 2))
        g[:, 1] = self.Binv[:, 0]
        g[:, 2] = self.Binv[:, 1]
        g[:, 0] = -g[:, 1] - g[:, 2]
        self.grad_bary = g
        self.center = self.X.mean(axis=1)
        self.scale = np.sqrt(2.0 * self.area)

    def points(self, bary) -> np.ndarray:
        return np.einsum("qk,ckd->cqd", bary, self.X)

    def bary(self, x) -> np.ndarray:
        """Barycentric coordinates of physical points x (nc, nq, 2)."""
        rel = x - self.X[:, None, 0, :]
        l12 = np.einsum("cij,cqj->cqi", self.Binv, rel)
        return np.concatenate([1.0 - l12.sum(axis=2, keepdims=True), l12], axis=2)


# -- shared base -------------------------------------------------------------

class FESpace:
    role: str
    family: ElementFamily
    mesh: Triangulation
    ndof: int
    cell_dofs: np.ndarray

    @property
    def nloc(self) -> int:
        return self.cell_dofs.shape[1]

    def geometry(self, cells=None) -> CellGeometry:
        if cells is None:
            cells = np.arange(self.mesh.n_triangles)
        return CellGeometry(self.mesh, cells)

    def evaluate(self, coeffs, geom: CellGeometry, x):
        """Value of the finite element function with ``coeffs`` at points x."""
        vals = self.tabulate(geom, x)[0]
        c = np.asarray(coeffs)[self.cell_dofs[geom.cells]]
        return np.einsum("cqj...,cj->cq...", vals, c)

    def __repr__(self):
        return f"<{type(self).__name__} {self.role} {self.family.tag} ndof={self.ndof}>"


def _check_mesh(family: ElementFamily, mesh: Triangulation):
    if family.needs_refined_mesh and not mesh.is_refined:
        raise ValueError("the composite element needs a barycentrically refined mesh")


# -- gradient space ------------------------------------------------------------

class GSpace(FESpace):
    """Trace-free tensors. ``layout`` is one of ``"peers"``, ``"afw"``, ``"p1"``."""

    role = "G"

    def __init__(self, family: ElementFamily, mesh: Triangulation, layout: str):
        self.family, self.mesh, self.layout = family, mesh, layout
        nt = mesh.n_triangles
        if layout == "afw":
            # [W], [D l0, D l1, D l2], [E l0, E l1, E l2]
            self.cell_dofs = 7 * np.arange(nt)[:, None] + np.arange(7)
            self.ndof = 7 * nt
        elif layout == "peers":
            loc = 6 * np.arange(nt)[:, None] + np.arange(6)
            self.cell_dofs = np.hstack([loc, 6 * nt + mesh.triangles])
            self.ndof = 6 * nt + mesh.n_vertices
        elif layout == "p1":
            self.cell_dofs = 9 * np.arange(nt)[:, None] + np.arange(9)
            self.ndof = 9 * nt
        else:
            raise ValueError(layout)
        # pointwise kind of each local function: 0 symmetric, 1 skew
        self.local_kind = np.array(
            {"afw": [1] + [0] * 6, "peers": [0] * 6 + [1] * 3, "p1": [0] * 6 + [1] * 3}[layout]
        )

    def reference_values(self, lam):
        """Local basis at barycentric points ``lam`` (..., 3); no cell dependence."""
        vals = np.zeros(lam.shape[:-1] + (self.nloc, 2, 2))
        if self.layout == "afw":
            vals[..., 0, :, :] = E_SKEW
            vals[..., 1:4, :, :] = lam[..., None, None] * E_DEV
            vals[..., 4:7, :, :] = lam[..., None, None] * E_SHEAR
        else:
            vals[..., 0:3, :, :] = lam[..., None, None] * E_DEV
            vals[..., 3:6, :, :] = lam[..., None, None] * E_SHEAR
            vals[..., 6:9, :, :] = lam[..., None, None] * E_SKEW
        return vals

    def tabulate(self, geom: CellGeometry, x):
        return self.reference_values(geom.bary(x)), None

    def transpose_coeffs(self, coeffs) -> np.ndarray:
        """Coefficients of the pointwise transpose (skew coefficients flip sign)."""
        out = np.array(coeffs, dtype=float)
        skew_dofs = np.unique(self.cell_dofs[:, self.local_kind == 1])
        out[skew_dofs] *= -1.0
        return out


def build_G_space(family: ElementFamily, mesh: Triangulation) -> GSpace:
    _check_mesh(family, mesh)
    layout = {"peers": "peers", "afw": "afw", "svrt": "p1"}[family.name]
    return GSpace(family, mesh, layout)


# -- velocity space --------------------------------------------------------------

class USpace(FESpace):
    """Discontinuous vector fields of degree 0 or 1.

    For degree 1 the local functions are ``lam_i e_c`` ordered as ``3 c + i``.
    """

    role = "U"

    def __init__(self, family: ElementFamily, mesh: Triangulation, degree: int):
        self.family, self.mesh, self.degree = family, mesh, degree
        n = 2 if degree == 0 else 6
        self.cell_dofs = n * np.arange(mesh.n_triangles)[:, None] + np.arange(n)
        self.ndof = n * mesh.n_triangles

    def reference_values(self, lam):
        vals = np.zeros(lam.shape[:-1] + (self.nloc, 2))
        if self.degree == 0:
            vals[..., 0, 0] = 1.0
            vals[..., 1, 1] = 1.0
        else:
            vals[..., 0:3, 0] = lam
            vals[..., 3:6, 1] = lam
        return vals

    def tabulate(self, geom: CellGeometry, x):
        return self.reference_values(geom.bary(x)), None


def build_U_space(family: ElementFamily, mesh: Triangulation) -> USpace:
    _check_mesh(family, mesh)
    return USpace(family, mesh, 1 if family.name == "svrt" else 0)


# -- stress space ------------------------------------------------------------------

_ROW_KINDS = {
    # kind: (edge dofs per edge, interior dofs per cell)
    "rt0b": (1, 1),
    "bdm1": (2, 0),
    "rt1": (2, 2),
}

_MONO_EXP = np.array([[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]])


def _prime_basis(kind):
    """Vector polynomial prime basis as (nprime, 2, 6) monomial coefficients."""
    P = []

    def vec(c0, c1):
        v = np.zeros((2, 6))
        for m, a in c0:
            v[0, m] += a
        for m, a in c1:
            v[1, m] += a
        P.append(v)

    if kind == "rt0b":
        vec([(0, 1)], [])
        vec([], [(0, 1)])
        vec([(1, 1)], [(2, 1)])
    else:
        for m in range(3):
            vec([(m, 1)], [])
        for m in range(3):
            vec([], [(m, 1)])
        if kind == "rt1":
            vec([(3, 1)], [(4, 1)])
            vec([(4, 1)], [(5, 1)])
    return np.array(P)


def _monomials(xi):
    """Monomials and their xi-derivatives at scaled points xi (..., 2)."""
    a, b = xi[..., 0], xi[..., 1]
    one = np.ones_like(a)
    zero = np.zeros_like(a)
    m = np.stack([one, a, b, a * a, a * b, b * b], axis=-1)
    da = np.stack([zero, one, zero, 2 * a, b, zero], axis=-1)
    db = np.stack([zero, zero, one, zero, a, 2 * b], axis=-1)
    return m, da, db


def _legendre_edge(t):
    """Orthonormal Legendre polynomials of degree 0, 1 on [0, 1]."""
    return np.stack([np.ones_like(t), np.sqrt(3.0) * (2.0 * t - 1.0)], axis=-1)


class SSpace(FESpace):
    """Tensors whose rows lie in an H(div) element.

    Row DOFs are numbered edges first (``e * ke + i``) then cell interiors
    (``ne * ke + c * ki + i``).  Tensor DOF ``r * nrow + j`` belongs to row r.
    Local order is row 0 then row 1, each with edge DOFs by local edge then
    interior DOFs.
    """

    role = "S"

    def __init__(self, family: ElementFamily, mesh: Triangulation, kind: str, traction_edges=None):
        self.family, self.mesh, self.kind = family, mesh, kind
        self.ke, self.ki = _ROW_KINDS[kind]
        ne, nt = mesh.n_edges, mesh.n_triangles
        self.nrow = ne * self.ke + nt * self.ki
        self.ndof = 2 * self.nrow
        ke, ki = self.ke, self.ki
        edge_part = (mesh.tri_edges[:, :, None] * ke + np.arange(ke)).reshape(nt, 3 * ke)
        inner_part = ne * ke + ki * np.arange(nt)[:, None] + np.arange(ki)
        self.row_dofs = np.hstack([edge_part, inner_part])
        self.nloc_row = self.row_dofs.shape[1]
        self.cell_dofs = np.hstack([self.row_dofs, self.nrow + self.row_dofs])
        self._prime = _prime_basis(kind)

        if traction_edges is None:
            traction_edges = mesh.boundary_edges(TRACTION)
        traction_edges = np.asarray(traction_edges, dtype=np.int64)
        if np.any(mesh.edge_tags[traction_edges] == INTERIOR):
            raise ValueError("traction edges must lie on the boundary")
        self.traction_edges = traction_edges
        # the pressure level is fixed by traction data; otherwise mean trace vanishes
        self.mean_trace_constraint = len(traction_edges) == 0

    # -- degrees of freedom -------------------------------------------------
    @cached_property
    def traction_dofs(self) -> np.ndarray:
        e = self.traction_edges
        row = (e[:, None] * self.ke + np.arange(self.ke)).ravel()
        return np.concatenate([row, self.nrow + row])

    def edge_dofs(self, edges) -> np.ndarray:
        edges = np.asarray(edges, dtype=np.int64)
        row = (edges[:, None] * self.ke + np.arange(self.ke)).ravel()
        return np.concatenate([row, self.nrow + row])

    def _edge_points(self, geom: CellGeometry, npts: int):
        """Points on each local edge ordered along the global edge orientation."""
        mesh = self.mesh
        rule = edge_rule(npts)
        e = mesh.tri_edges[geom.cells]  # (nc, 3)
        lo = mesh.vertices[mesh.edges[e, 0]]
        hi = mesh.vertices[mesh.edges[e, 1]]
        x = lo[:, :, None, :] + rule.points[None, None, :, None] * (hi - lo)[:, :, None, :]
        normals = mesh.edge_normals()[e]
        return x, normals, rule

    def _prime_values(self, geom: CellGeometry, x):
        xi = (x - geom.center[:, None, :]) / geom.scale[:, None, None]
        m, da, db = _monomials(xi)
        vals = np.einsum("pdm,cqm->cqpd", self._prime, m)
        div = (np.einsum("pm,cqm->cqp", self._prime[:, 0], da) + np.einsum("pm,cqm->cqp", self._prime[:, 1], db))
        return vals, div / geom.scale[:, None, None]

    def _coefficients(self, geom: CellGeometry) -> np.ndarray:
        """(nc, nprime, nloc_prime): prime-basis expansion of the local row basis."""
        nc = len(geom.cells)
        npr = len(self._prime)
        x, normals, rule = self._edge_points(geom, 3)
        pv, _ = self._prime_values(geom, x.reshape(nc, -1, 2))
        pv = pv.reshape(nc, 3, len(rule.weights), npr, 2)
        flux = np.einsum("ceqpd,ced->ceqp", pv, normals)
        q = _legendre_edge(rule.points)[:, : self.ke]  # (nq, ke)
        D = np.einsum("ceqp,qi,q->ceip", flux, q, rule.weights).reshape(nc, 3 * self.ke, npr)
        if self.kind == "rt1":
            from .quadrature import triangle_rule

            tr = triangle_rule(4)
            pvk, _ = self._prime_values(geom, geom.points(tr.points))
            D = np.concatenate([D, np.einsum("cqpd,q->cdp", pvk, tr.weights)], axis=1)
        return np.linalg.inv(D)

    # -- evaluation ------------------------------------------------------------
    def tabulate_rows(self, geom: CellGeometry, x):
        """Row basis values (nc, nq, nloc_row, 2) and divergences (nc, nq, nloc_row)."""
        C = self._coefficients(geom)
        pv, pd = self._prime_values(geom, x)
        vals = np.einsum("cqpd,cpj->cqjd", pv, C)
        div = np.einsum("cqp,cpj->cqj", pd, C)
        if self.kind == "rt0b":
            lam = geom.bary(x)
            g = geom.grad_bary
            grad_b = 27.0 * (
                g[:, None, 0] * (lam[..., 1] * lam[..., 2])[..., None]
                + g[:, None, 1] * (lam[..., 0] * lam[..., 2])[..., None]
                + g[:, None, 2] * (lam[..., 0] * lam[..., 1])[..., None]
            )
            curl_b = np.stack([-grad_b[..., 1], grad_b[..., 0]], axis=-1)
            vals = np.concatenate([vals, curl_b[:, :, None, :]], axis=2)
            div = np.concatenate([div, np.zeros(div.shape[:2] + (1,))], axis=2)
        return vals, div

    def tabulate(self, geom: CellGeometry, x):
        rv, rd = self.tabulate_rows(geom, x)
        nc, nq, nr = rd.shape
        vals = np.zeros((nc, nq, 2 * nr, 2, 2))
        div = np.zeros((nc, nq, 2 * nr, 2))
        for r in range(2):
            vals[:, :, r * nr : (r + 1) * nr, r, :] = rv
            div[:, :, r * nr : (r + 1) * nr, r] = rd
        return vals, div

    def evaluate_div(self, coeffs, geom: CellGeometry, x):
        div = self.tabulate(geom, x)[1]
        c = np.asarray(coeffs)[self.cell_dofs[geom.cells]]
        return np.einsum("cqjd,cj->cqd", div, c)

    # -- interpolation -----------------------------------------------------------
    def edge_moments(self, func, edges, npts: int = 6) -> np.ndarray:
        """Edge DOF values of the tensor field ``func(x) -> (..., 2, 2)``.

        Returns an array (len(edges), 2 rows, ke) of averaged moments of
        ``func(x) n_e`` against the orthonormal Legendre polynomials.
        """
        mesh = self.mesh
        edges = np.asarray(edges, dtype=np.int64)
        rule = edge_rule(npts)
        lo = mesh.vertices[mesh.edges[edges, 0]]
        hi = mesh.vertices[mesh.edges[edges, 1]]
        x = lo[:, None, :] + rule.points[None, :, None] * (hi - lo)[:, None, :]
        n = mesh.edge_normals()[edges]
        T = func(x)
        tn = np.einsum("eqrd,ed->eqr", T, n)
        q = _legendre_edge(rule.points)[:, : self.ke]
        return np.einsum("eqr,qi,q->eri", tn, q, rule.weights)

    def interpolate(self, func, qdeg: int = 8) -> np.ndarray:
        """Canonical interpolant; the PEERS bubble coefficient is the local L2
        projection of the remainder onto the curl bubble."""
        from .quadrature import triangle_rule

        mesh = self.mesh
        out = np.zeros(self.ndof)
        mom = self.edge_moments(func, np.arange(mesh.n_edges))  # (ne, 2, ke)
        for r in range(2):
            out[r * self.nrow : r * self.nrow + mesh.n_edges * self.ke] = mom[:, r, :].ravel()
        if self.ki:
            geom = self.geometry()
            tr = triangle_rule(qdeg)
            x = geom.points(tr.points)
            T = func(x)  # (nc, nq, 2, 2)
            ne_k = mesh.n_edges * self.ke
            if self.kind == "rt1":
                avg = np.einsum("cqrd,q->crd", T, tr.weights)
                for r in range(2):
                    out[r * self.nrow + ne_k : r * self.nrow + self.nrow] = avg[:, r, :].ravel()
            else:
                rv, _ = self.tabulate_rows(geom, x)
                for r in range(2):
                    edge_c = out[r * self.nrow + self.row_dofs[:, :3]]
                    rem = T[:, :, r, :] - np.einsum("cqjd,cj->cqd", rv[:, :, :3], edge_c)
                    bub = rv[:, :, 3]
                    num = np.einsum("cqd,cqd,q->c", rem, bub, tr.weights)
                    den = np.einsum("cqd,cqd,q->c", bub, bub, tr.weights)
                    out[r * self.nrow + ne_k + np.arange(mesh.n_triangles)] = num / den
        return out


def build_S_space(family: ElementFamily, mesh: Triangulation, traction_edges=None) -> SSpace:
    _check_mesh(family, mesh)
    kind = {"peers": "rt0b", "afw": "bdm1", "svrt": "rt1"}[family.name]
    return SSpace(family, mesh, kind, traction_edges)


@dataclass
class SpaceTriple:
    family: ElementFamily
    mesh: Triangulation  # mesh the spaces live on (refined for svrt)
    G: GSpace
    U: USpace
    S: SSpace
    base_mesh: Optional[Triangulation] = field(default=None, repr=False)

    @property
    def sizes(self) -> dict:
        return {"G": self.G.ndof, "U": self.U.ndof, "S": self.S.ndof,
                "multiplier": int(self.S.mean_trace_constraint)}


def build_spaces(family: ElementFamily, mesh: Triangulation) -> SpaceTriple:
    """Spaces for ``family`` on ``mesh``; the composite element refines it first."""
    from .mesh import barycentric_refine

    base = mesh
    if family.needs_refined_mesh and not mesh.is_refined:
        mesh = barycentric_refine(mesh)
    return SpaceTriple(family, mesh, build_G_space(family, mesh), build_U_space(family, mesh),
                       build_S_space(family, mesh), base_mesh=base)
