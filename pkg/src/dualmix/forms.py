"""Assembly of the bilinear forms a, b, the skew trilinear form c and data terms.

Unknowns are ordered ``[G | u | S | multiplier]``.  The block system is

    [ A + C(w)   -B^T      0 ] [G, u]   [ 0, f ]
    [   -B         0       l ] [  S ] = [  -g   ]
    [    0        l^T      0 ] [ mu ]   [   0   ]

with ``B[T, (G, u)] = (G, T) + (u, div T)``, ``l`` the mean-trace functional
(present only without traction edges) and ``g`` the Dirichlet functional
``T -> int_{Gamma_D} gD . (T n)``.  Traction DOFs are eliminated.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .mesh import DIRICHLET
from .quadrature import ASSEMBLY_DEGREE, DATA_DEGREE, edge_rule, triangle_rule
from .spaces import CellGeometry, FESpace, SpaceTriple, SSpace, sym

CHUNK = 2048


@dataclass(frozen=True)
class ConstitutiveLaw:
    """Newtonian law G -> nu (G + G^T)."""

    nu: float

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("viscosity must be positive")

    def __call__(self, G):
        G = np.asarray(G)
        return self.nu * (G + np.swapaxes(G, -1, -2))

    @property
    def continuity(self) -> float:
        return 2.0 * self.nu


def _chunks(n, size=CHUNK):
    for start in range(0, n, size):
        yield np.arange(start, min(start + size, n))


def _scatter(rows, cols, local, shape):
    """Sum per-cell dense blocks into a CSR matrix."""
    nc, ni, nj = local.shape
    r = np.broadcast_to(rows[:, :, None], (nc, ni, nj)).ravel()
    c = np.broadcast_to(cols[:, None, :], (nc, ni, nj)).ravel()
    return sp.csr_matrix((local.ravel(), (r, c)), shape=shape)


def _weights(geom: CellGeometry, rule):
    return geom.area[:, None] * rule.weights[None, :]  # (nc, nq)


# -- local matrices on a batch of cells ----------------------------------------

def local_a(G: FESpace, law: ConstitutiveLaw, geom, rule):
    g = sym(G.reference_values(rule.points))  # (nq, nloc, 2, 2)
    ref = np.einsum("qiab,qjab,q->ij", g, g, rule.weights)
    return 2.0 * law.nu * geom.area[:, None, None] * ref


def local_b(S: SSpace, G: FESpace, U: FESpace, geom, rule):
    """Blocks (T, G) and (T, u) of b on each cell."""
    x = geom.points(rule.points)
    sv, sd = S.tabulate(geom, x)
    gv = G.tabulate(geom, x)[0]
    uv = U.tabulate(geom, x)[0]
    w = _weights(geom, rule)
    bg = np.einsum("cqiab,cqjab,cq->cij", sv, gv, w, optimize=True)
    bu = np.einsum("cqia,cqja,cq->cij", sd, uv, w, optimize=True)
    return bg, bu


_TENSORS: dict = {}


def _convection_tensors(G: FESpace, U: FESpace, rule):
    """Reference integrals for the convection blocks; G and U values do not
    depend on the cell, so each block is a cell-area multiple of a fixed
    contraction of the state coefficients."""
    key = (G.layout, U.degree, rule.degree, len(rule.weights))
    if key in _TENSORS:
        return _TENSORS[key]
    gv = G.reference_values(rule.points)  # (nq, nG, 2, 2)
    uv = U.reference_values(rule.points)  # (nq, nU, 2)
    w = rule.weights
    out = {
        # (G_j w, v_i) = sum_q,b w_b(q) K1[q, b, i, j]
        "K1": np.einsum("q,qia,qjab->qbij", w, uv, gv),
        # (G_w v_j, v_i) = sum_q,a,b G_w[q, a, b] K2[q, a, b, i, j]
        "K2": np.einsum("q,qia,qjb->qabij", w, uv, uv),
        # (H_i v_j, w) = sum_q,a w_a(q) K3[q, a, i, j]
        "K3": np.einsum("q,qiab,qjb->qaij", w, gv, uv),
        "gv": gv,
        "uv": uv,
    }
    return _TENSORS.setdefault(key, out)


def local_c(G: FESpace, U: FESpace, w_state, geom, rule, mode="picard"):
    """Linearised convection blocks (GU, UG, UU) on each cell.

    picard: trial (G, u) -> c((., w), (G, u), (H, v)) with w the state velocity.
    newton adds the derivative with respect to the first slot.
    """
    Gc, uc = w_state
    t = _convection_tensors(G, U, rule)
    nq, nG, nU = t["gv"].shape[0], G.nloc, U.nloc
    nc = len(geom.cells)
    area = geom.area[:, None, None]
    u_w = uc[U.cell_dofs[geom.cells]] @ t["uv"].transpose(1, 0, 2).reshape(nU, nq * 2)  # (nc, nq*2)
    # (1/2)(G_j w, v_i) in the v rows, -(1/2)(H_i w, u_j) in the H rows
    ug = 0.5 * area * (u_w @ t["K1"].reshape(nq * 2, nU * nG)).reshape(nc, nU, nG)
    gu = -np.swapaxes(ug, 1, 2)
    uu = None
    if mode == "newton":
        gvf = t["gv"].transpose(1, 0, 2, 3).reshape(nG, nq * 4)
        G_w = Gc[G.cell_dofs[geom.cells]] @ gvf  # (nc, nq*4)
        uu = 0.5 * area * (G_w @ t["K2"].reshape(nq * 4, nU * nU)).reshape(nc, nU, nU)
        gu = gu - 0.5 * area * (u_w @ t["K3"].reshape(nq * 2, nG * nU)).reshape(nc, nG, nU)
    elif mode != "picard":
        raise ValueError(f"unknown linearisation {mode!r}")
    return gu, ug, uu


# -- global assembly -------------------------------------------------------------

def assemble_a(G: FESpace, U: FESpace, law: ConstitutiveLaw, degree=ASSEMBLY_DEGREE):
    """Matrix of a((G,u),(H,v)) = (A(G), H) on the (G, u) index space."""
    rule = triangle_rule(degree)
    n = G.ndof + U.ndof
    out = sp.csr_matrix((n, n))
    for cells in _chunks(G.mesh.n_triangles):
        geom = G.geometry(cells)
        d = G.cell_dofs[cells]
        out = out + _scatter(d, d, local_a(G, law, geom, rule), (n, n))
    return out


def assemble_b(S: SSpace, G: FESpace, U: FESpace, degree=ASSEMBLY_DEGREE):
    """Matrix of b(T, (G, u)) = (T, G) + (div T, u), rows T, columns (G, u)."""
    rule = triangle_rule(degree)
    shape = (S.ndof, G.ndof + U.ndof)
    out = sp.csr_matrix(shape)
    for cells in _chunks(S.mesh.n_triangles):
        geom = S.geometry(cells)
        ds = S.cell_dofs[cells]
        bg, bu = local_b(S, G, U, geom, rule)
        out = out + _scatter(ds, G.cell_dofs[cells], bg, shape)
        out = out + _scatter(ds, G.ndof + U.cell_dofs[cells], bu, shape)
    return out


def assemble_c_linearized(w_state, G: FESpace, U: FESpace, mode="picard", degree=ASSEMBLY_DEGREE):
    """Linearised trilinear form as a matrix on the (G, u) index space."""
    Gc, uc = (np.asarray(v, dtype=float) for v in w_state)
    if Gc.shape != (G.ndof,) or uc.shape != (U.ndof,):
        raise ValueError("state coefficients do not match the spaces")
    rule = triangle_rule(degree)
    n = G.ndof + U.ndof
    out = sp.csr_matrix((n, n))
    for cells in _chunks(G.mesh.n_triangles):
        geom = G.geometry(cells)
        dg = G.cell_dofs[cells]
        du = G.ndof + U.cell_dofs[cells]
        gu, ug, uu = local_c(G, U, (Gc, uc), geom, rule, mode)
        out = out + _scatter(dg, du, gu, (n, n)) + _scatter(du, dg, ug, (n, n))
        if uu is not None:
            out = out + _scatter(du, du, uu, (n, n))
    return out


def assemble_load(f: Callable, U: FESpace, degree=DATA_DEGREE) -> np.ndarray:
    """Vector of (f, v_i); ``f`` maps points (..., 2) to vectors (..., 2)."""
    rule = triangle_rule(degree)
    out = np.zeros(U.ndof)
    for cells in _chunks(U.mesh.n_triangles):
        geom = U.geometry(cells)
        x = geom.points(rule.points)
        loc = np.einsum("cqja,cqa,cq->cj", U.tabulate(geom, x)[0], f(x), _weights(geom, rule))
        np.add.at(out, U.cell_dofs[cells], loc)
    return out


def _boundary_cells(S: SSpace, edges):
    mesh = S.mesh
    cells = mesh.edge_tris[edges, 0]
    local = np.argmax(mesh.tri_edges[cells] == edges[:, None], axis=1)
    sign = mesh.tri_edge_sign[cells, local]
    return cells, sign


def assemble_dirichlet_term(g: Callable, S: SSpace, dirichlet_edges=None, npts: int = 8) -> np.ndarray:
    """Vector of int_{Gamma_D} g . (T_i n) ds with the outward normal n."""
    mesh = S.mesh
    if dirichlet_edges is None:
        dirichlet_edges = mesh.boundary_edges(DIRICHLET)
    edges = np.asarray(dirichlet_edges, dtype=np.int64)
    out = np.zeros(S.ndof)
    if len(edges) == 0:
        return out
    rule = edge_rule(npts)
    cells, sign = _boundary_cells(S, edges)
    lo = mesh.vertices[mesh.edges[edges, 0]]
    hi = mesh.vertices[mesh.edges[edges, 1]]
    x = lo[:, None, :] + rule.points[None, :, None] * (hi - lo)[:, None, :]
    n_out = mesh.edge_normals()[edges] * sign[:, None]
    length = mesh.edge_lengths()[edges]
    geom = S.geometry(cells)
    vals = S.tabulate(geom, x)[0]  # (ne, nq, nloc, 2, 2)
    loc = np.einsum("eqjab,eqa,eb,q,e->ej", vals, g(x), n_out, rule.weights, length)
    np.add.at(out, S.cell_dofs[cells], loc)
    return out


def assemble_mean_trace(S: SSpace, degree=ASSEMBLY_DEGREE) -> np.ndarray:
    rule = triangle_rule(degree)
    out = np.zeros(S.ndof)
    for cells in _chunks(S.mesh.n_triangles):
        geom = S.geometry(cells)
        x = geom.points(rule.points)
        vals = S.tabulate(geom, x)[0]
        loc = np.einsum("cqjaa,cq->cj", vals, _weights(geom, rule))
        np.add.at(out, S.cell_dofs[cells], loc)
    return out


def traction_values(S: SSpace, stress: Callable, edges=None) -> np.ndarray:
    """Edge-moment interpolant of ``stress(x) n`` on the traction DOFs."""
    if edges is None:
        edges = S.traction_edges
    mom = S.edge_moments(stress, edges)  # (ne, 2, ke)
    return np.concatenate([mom[:, 0, :].ravel(), mom[:, 1, :].ravel()])


# -- assembled system ---------------------------------------------------------------

@dataclass
class AssembledSystem:
    spaces: SpaceTriple
    law: ConstitutiveLaw
    A: sp.csr_matrix  # on (G, u)
    B: sp.csr_matrix  # (S, (G, u))
    ell: Optional[np.ndarray]
    load: np.ndarray  # on u
    dirichlet: np.ndarray  # on S
    fixed_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    fixed_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_gu(self) -> int:
        return self.A.shape[0]

    @property
    def n_s(self) -> int:
        return self.B.shape[0]

    @property
    def n_total(self) -> int:
        return self.n_gu + self.n_s + (self.ell is not None)

    def matrix(self, C=None) -> sp.csr_matrix:
        K = self.A if C is None else self.A + C
        blocks = [[K, -self.B.T], [-self.B, None]]
        if self.ell is not None:
            ell = sp.csr_matrix(self.ell[None, :])
            blocks = [[K, -self.B.T, None], [-self.B, None, ell.T], [None, ell, None]]
        return sp.bmat(blocks, format="csr")

    def apply(self, C, x) -> np.ndarray:
        """``matrix(C) @ x`` without forming the block matrix."""
        n_gu, n_s = self.n_gu, self.n_s
        gu, s = x[:n_gu], x[n_gu : n_gu + n_s]
        top = self.A @ gu - self.B.T @ s
        if C is not None:
            top = top + C @ gu
        mid = -(self.B @ gu)
        out = [top, mid]
        if self.ell is not None:
            mid += self.ell * x[-1]
            out.append([self.ell @ s])
        return np.concatenate(out)

    def rhs(self) -> np.ndarray:
        r = np.zeros(self.n_total)
        G = self.spaces.G
        r[G.ndof : self.n_gu] = self.load
        r[self.n_gu : self.n_gu + self.n_s] = -self.dirichlet
        return r

    def fixed_global(self) -> np.ndarray:
        return self.n_gu + np.asarray(self.fixed_dofs, dtype=np.int64)

    def free_global(self) -> np.ndarray:
        mask = np.ones(self.n_total, dtype=bool)
        mask[self.fixed_global()] = False
        return np.flatnonzero(mask)

    def split(self, x):
        G, U = self.spaces.G, self.spaces.U
        return (x[: G.ndof], x[G.ndof : self.n_gu], x[self.n_gu : self.n_gu + self.n_s],
                x[self.n_gu + self.n_s :])


def assemble_system(spaces: SpaceTriple, law: ConstitutiveLaw, f: Optional[Callable] = None,
                    g: Optional[Callable] = None) -> AssembledSystem:
    """Stokes part of the system with load ``f`` and Dirichlet data ``g``."""
    G, U, S = spaces.G, spaces.U, spaces.S
    A = assemble_a(G, U, law)
    B = assemble_b(S, G, U)
    ell = assemble_mean_trace(S) if S.mean_trace_constraint else None
    load = assemble_load(f, U) if f is not None else np.zeros(U.ndof)
    dirichlet = assemble_dirichlet_term(g, S) if g is not None else np.zeros(S.ndof)
    return AssembledSystem(spaces, law, A, B, ell, load, dirichlet)


def apply_traction_bc(system: AssembledSystem, stress: Optional[Callable] = None,
                      traction_edges=None) -> AssembledSystem:
    """Fix the normal-trace DOFs on traction edges to the edge moments of
    ``stress(x) n``; ``stress=None`` imposes zero traction."""
    S = system.spaces.S
    if traction_edges is None:
        traction_edges = S.traction_edges
    edges = np.asarray(traction_edges, dtype=np.int64)
    dofs = S.edge_dofs(edges)
    if stress is None:
        vals = np.zeros(len(dofs))
    else:
        vals = traction_values(S, stress, edges)
        if not np.all(np.isfinite(vals)):
            raise ValueError("traction data is not finite on a traction edge")
    return replace(system, fixed_dofs=dofs, fixed_values=vals)
