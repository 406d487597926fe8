"""Static condensation for the composite SVRT(1) element.

On each parent triangle K the unknowns of the barycentric refinement K^r
split into

* local: G (27), the part u_perp of u that is L2-orthogonal to P1(K)^2 (12)
  and the stress DOFs interior to K, S^0 with S n = 0 on the boundary of K (24);
* global: the parent average u_bar in P1(K)^2 (6), the normal-trace DOFs of
  S on the parent edges (4 per edge) and the mean-trace multiplier.

Every linearised (Picard or Newton) system is reduced to the global unknowns
by a batched dense Schur complement over the parents, solved, and the local
unknowns are recovered by back substitution.  The result equals the
uncondensed solve up to rounding.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .forms import AssembledSystem
from .linalg import DirectSolver, SingularSystemError
from .mesh import LOCAL_EDGES, Triangulation, barycentric_refine
from .solver import SolutionFields, SolverConfig, StabilityError, _context, solve_navier_stokes, solve_stokes
from .spaces import E_SKEW, CellGeometry, ElementFamily, build_spaces

log = logging.getLogger(__name__)

N_LOCAL = 63  # 27 G + 12 u_perp + 24 S^0
CHUNK = 1024


def _velocity_transform() -> np.ndarray:
    """18 x 18 map from (u_bar, u_perp) coordinates to child P1 coefficients.

    Old coordinates are ``6 k + 3 c + i`` (child k, component c, child
    vertex i).  New ones are ``3 c + j`` for the parent barycentric functions
    lambda_j e_c, followed by ``6 + 6 c + m`` for an L2-orthogonal complement.
    The children of a parent have equal areas, so one matrix serves every
    parent.
    """
    V = np.zeros((9, 3))  # parent barycentrics at child vertices, row 3 k + i
    for k, (a, b) in enumerate(LOCAL_EDGES):
        V[3 * k + 0, a] = 1.0
        V[3 * k + 1, b] = 1.0
        V[3 * k + 2, :] = 1.0 / 3.0
    m = (np.ones((3, 3)) + np.eye(3)) / 12.0
    M = np.kron(np.eye(3), m)
    W = sla.null_space(V.T @ M)  # (9, 6), M-orthogonal to span V
    T = np.zeros((18, 18))
    for c in range(2):
        rows = [6 * k + 3 * c + i for k in range(3) for i in range(3)]
        T[rows, 3 * c : 3 * c + 3] = V
        T[rows, 6 + 6 * c : 12 + 6 * c] = W
    return T


@dataclass
class CondensationLayout:
    """DOF bookkeeping for one assembled SVRT(1) system."""

    n_parents: int
    T: np.ndarray  # (18, 18)
    gu_perm: np.ndarray  # (np, 45): G then u DOFs of each parent
    s_dofs: np.ndarray  # (np, 36): 12 parent-edge DOFs then 24 interior DOFs
    gamma: np.ndarray  # (np, ng): global-unknown ids of u_bar, edge S, multiplier
    edge_s_dofs: np.ndarray  # S DOF of each edge-S global unknown
    n_gamma: int
    has_multiplier: bool

    @property
    def n_edge_s(self) -> int:
        return len(self.edge_s_dofs)


def condensation_layout(system: AssembledSystem) -> CondensationLayout:
    spaces = system.spaces
    if spaces.family.name != "svrt" or spaces.base_mesh is None:
        raise ValueError("static condensation needs the SVRT(1) family on a refined mesh")
    mesh, base = spaces.mesh, spaces.base_mesh
    G, U, S = spaces.G, spaces.U, spaces.S
    npar = base.n_triangles
    if G.ndof != 27 * npar or U.ndof != 18 * npar:
        raise ValueError("unexpected G/U layout for condensation")
    nG = G.ndof
    gu_perm = np.hstack([27 * np.arange(npar)[:, None] + np.arange(27),
                         nG + 18 * np.arange(npar)[:, None] + np.arange(18)])

    # parent-edge S DOFs are those on refined edges between two base vertices
    nvb = base.n_vertices
    on_parent_edge = np.all(mesh.edges < nvb, axis=1)
    ke = S.ke
    row_is_edge = np.zeros(S.nrow, dtype=bool)
    row_is_edge[: mesh.n_edges * ke] = np.repeat(on_parent_edge, ke)
    is_gamma = np.concatenate([row_is_edge, row_is_edge])
    edge_s_dofs = np.flatnonzero(is_gamma)
    gid_of_s = -np.ones(S.ndof, dtype=np.int64)
    gid_of_s[edge_s_dofs] = 6 * npar + np.arange(len(edge_s_dofs))

    # S DOFs of each parent: union over its three children
    child = S.cell_dofs.reshape(npar, 3 * S.cell_dofs.shape[1])
    s_dofs = np.empty((npar, 36), dtype=np.int64)
    for p0 in range(0, npar, 8192):
        blk = np.sort(child[p0 : p0 + 8192], axis=1)
        keep = np.ones_like(blk, dtype=bool)
        keep[:, 1:] = blk[:, 1:] != blk[:, :-1]
        uniq = blk[keep].reshape(len(blk), -1)
        if uniq.shape[1] != 36:
            raise ValueError("expected 36 stress DOFs per parent")
        g = is_gamma[uniq]
        order = np.argsort(~g, axis=1, kind="stable")  # edge DOFs first
        s_dofs[p0 : p0 + 8192] = np.take_along_axis(uniq, order, axis=1)
    if not np.all(is_gamma[s_dofs[:, :12]]) or np.any(is_gamma[s_dofs[:, 12:]]):
        raise ValueError("inconsistent parent-edge stress DOFs")

    has_mult = system.ell is not None
    n_gamma = 6 * npar + len(edge_s_dofs) + int(has_mult)
    parts = [6 * np.arange(npar)[:, None] + np.arange(6), gid_of_s[s_dofs[:, :12]]]
    if has_mult:
        parts.append(np.full((npar, 1), n_gamma - 1))
    gamma = np.hstack(parts)
    return CondensationLayout(npar, _velocity_transform(), gu_perm, s_dofs, gamma, edge_s_dofs,
                              n_gamma, has_mult)


def _diagonal_blocks(M: sp.spmatrix, perm: np.ndarray, size: int) -> np.ndarray:
    """Dense diagonal blocks of ``M[perm][:, perm]``; entries off the blocks
    must vanish."""
    Mp = sp.csr_matrix(M)[perm][:, perm].tocoo()
    nb = len(perm) // size
    rb, cb = Mp.row // size, Mp.col // size
    if np.any(rb != cb):
        raise ValueError("matrix couples different parents")
    idx = rb * size * size + (Mp.row % size) * size + Mp.col % size
    return np.bincount(idx, weights=Mp.data, minlength=nb * size * size).reshape(nb, size, size)


def _row_blocks(B: sp.spmatrix, rows: np.ndarray, perm: np.ndarray, size: int,
                chunk: int = 4096) -> np.ndarray:
    """Dense blocks ``B[rows[p], perm[p]]`` where each column block of ``B``
    only touches the rows listed for its parent."""
    npar, nr = rows.shape
    Bc = sp.csc_matrix(B)
    out = np.empty((npar, nr, size))
    order = np.argsort(rows, axis=1)
    srows = np.take_along_axis(rows, order, axis=1)
    for p0 in range(0, npar, chunk):
        p1 = min(p0 + chunk, npar)
        sub = Bc[:, perm[p0:p1].ravel()].tocoo()
        p = sub.col // size
        keys = p.astype(np.int64) * B.shape[0] + sub.row
        flat = (np.arange(p1 - p0, dtype=np.int64)[:, None] * B.shape[0] + srows[p0:p1]).ravel()
        pos = np.minimum(np.searchsorted(flat, keys), len(flat) - 1)
        if not np.all(flat[pos] == keys):
            raise ValueError("stress DOF coupled to a foreign parent")
        local_row = order[p0:p1].ravel()[pos]
        idx = (p * nr + local_row) * size + sub.col % size
        out[p0:p1] = np.bincount(idx, weights=sub.data, minlength=(p1 - p0) * nr * size).reshape(-1, nr, size)
    return out


class CondensedSolves:
    """Linearised solves through the condensed system; drop-in for
    :class:`dualmix.solver.LinearizedSolves`."""

    def __init__(self, system: AssembledSystem):
        self.system = system
        self.layout = lay = condensation_layout(system)
        self.B_blocks = _row_blocks(system.B, lay.s_dofs, lay.gu_perm, 45)  # (np, 36, 45)
        self.direct = DirectSolver()
        fixed_gid = np.searchsorted(lay.edge_s_dofs, np.asarray(system.fixed_dofs, dtype=np.int64))
        if len(system.fixed_dofs) and not np.all(lay.edge_s_dofs[fixed_gid] == system.fixed_dofs):
            raise ValueError("fixed stress DOFs must lie on parent edges")
        self.fixed_gamma = 6 * lay.n_parents + fixed_gid
        self.free_gamma = np.setdiff1d(np.arange(lay.n_gamma), self.fixed_gamma)
        self.ell_local = None if system.ell is None else system.ell[lay.s_dofs[:, 12:]]
        self._schur_pattern()

    def _entries(self):
        """Row and column ids of every Schur entry in assembly order: dense
        parent blocks, then the multiplier couplings of the edge stresses."""
        lay = self.layout
        g = lay.gamma
        ng = g.shape[1]
        rows = [np.repeat(g, ng, axis=1).ravel()]
        cols = [np.tile(g, (1, ng)).ravel()]
        if lay.has_multiplier:
            ge = 6 * lay.n_parents + np.arange(lay.n_edge_s)
            mult = np.full(lay.n_edge_s, lay.n_gamma - 1)
            rows += [ge, mult]
            cols += [mult, ge]
        return np.concatenate(rows), np.concatenate(cols)

    def _schur_pattern(self):
        """Fixed CSR pattern of the free-free Schur matrix and the scatter maps
        into it; built once so every step only accumulates values."""
        lay = self.layout
        nfree = len(self.free_gamma)
        fid = -np.ones(lay.n_gamma, dtype=np.int64)
        fid[self.free_gamma] = np.arange(nfree)
        rows, cols = self._entries()
        r, c = fid[rows], fid[cols]
        del rows
        self._mat_mask = (r >= 0) & (c >= 0)
        keys = r[self._mat_mask] * nfree + c[self._mat_mask]
        uniq, self._mat_inv = np.unique(keys, return_inverse=True)
        del keys
        self._indices = (uniq % nfree).astype(np.int32)
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(uniq // nfree, minlength=nfree))]).astype(np.int32)
        self._nnz = len(uniq)
        self._fix_mask = (r >= 0) & (c < 0)
        self._fix_row = r[self._fix_mask]
        self._fix_col = cols[self._fix_mask]
        self._fid = fid

    @property
    def n_global(self) -> int:
        return self.layout.n_gamma - len(self.fixed_gamma)

    def __call__(self, C, rhs) -> np.ndarray:
        system, lay = self.system, self.layout
        npar, T = lay.n_parents, lay.T
        ng = lay.gamma.shape[1]
        M = sp.csr_matrix(system.A if C is None else system.A + C)
        # parent matrix in order [G 27, u 18, S 36, mult]; u in new coordinates
        n_gu, n_s = system.n_gu, system.n_s
        rhs_gu = rhs[:n_gu][lay.gu_perm]  # (np, 45)
        rhs_s = rhs[n_gu : n_gu + n_s]

        Tb = np.eye(45)
        Tb[27:, 27:] = T
        loc = np.r_[0:27, 33:45]  # G and u_perp within the transformed 45 block
        gl = np.r_[27:33]  # u_bar
        X_all = []
        vals = []
        rhs_gamma = np.zeros(lay.n_gamma)
        # gamma right-hand side: u_bar rows, edge-S rows, multiplier row
        rhs_gamma[: 6 * npar] = (rhs_gu[:, 27:] @ T)[:, :6].ravel()
        rhs_gamma[6 * npar : 6 * npar + lay.n_edge_s] = rhs_s[lay.edge_s_dofs]
        if lay.has_multiplier:
            rhs_gamma[-1] = rhs[-1]
        for p0 in range(0, npar, CHUNK):
            sl = slice(p0, min(p0 + CHUNK, npar))
            nc = sl.stop - sl.start
            Mt = Tb.T @ _diagonal_blocks(M, lay.gu_perm[sl].ravel(), 45) @ Tb  # (nc, 45, 45)
            Bt = self.B_blocks[sl] @ Tb  # (nc, 36, 45)
            bt = rhs_gu[sl] @ Tb  # (nc, 45)
            # local: [G, u_perp] (39) + S^0 (24); gamma: u_bar (6) + edge S (12) + mult
            D = np.zeros((nc, N_LOCAL + ng, N_LOCAL + ng))
            D[:, :39, :39] = Mt[:, loc][:, :, loc]
            D[:, :39, 39:63] = -np.swapaxes(Bt[:, 12:, :][:, :, loc], 1, 2)
            D[:, 39:63, :39] = -Bt[:, 12:, :][:, :, loc]
            # couplings with u_bar
            D[:, :39, 63:69] = Mt[:, loc][:, :, gl]
            D[:, 63:69, :39] = Mt[:, gl][:, :, loc]
            D[:, 39:63, 63:69] = -Bt[:, 12:, :][:, :, gl]
            D[:, 63:69, 39:63] = -np.swapaxes(Bt[:, 12:, :][:, :, gl], 1, 2)
            D[:, 63:69, 63:69] = Mt[:, gl][:, :, gl]
            # couplings with the parent-edge stresses
            D[:, :39, 69:81] = -np.swapaxes(Bt[:, :12, :][:, :, loc], 1, 2)
            D[:, 69:81, :39] = -Bt[:, :12, :][:, :, loc]
            D[:, 69:81, 63:69] = -Bt[:, :12, :][:, :, gl]
            D[:, 63:69, 69:81] = -np.swapaxes(Bt[:, :12, :][:, :, gl], 1, 2)
            if lay.has_multiplier:
                D[:, 39:63, 81] = self.ell_local[sl]
                D[:, 81, 39:63] = self.ell_local[sl]
            b_loc = np.concatenate([bt[:, loc], rhs_s[lay.s_dofs[sl, 12:]]], axis=1)
            Dll, Dlg = D[:, :N_LOCAL, :N_LOCAL], D[:, :N_LOCAL, N_LOCAL:]
            Dgl, Dgg = D[:, N_LOCAL:, :N_LOCAL], D[:, N_LOCAL:, N_LOCAL:]
            try:
                X = np.linalg.solve(Dll, np.concatenate([Dlg, b_loc[:, :, None]], axis=2))
            except np.linalg.LinAlgError as exc:
                raise StabilityError(f"singular local problem on parents {sl.start}..{sl.stop - 1}",
                                     context=_context(system)) from exc
            X_all.append(X)
            vals.append((Dgg - Dgl @ X[:, :, :ng]).ravel())
            g = lay.gamma[sl]
            np.add.at(rhs_gamma, g.ravel(), -np.einsum("pgl,pl->pg", Dgl, X[:, :, ng]).ravel())
        if lay.has_multiplier:
            ell_e = system.ell[lay.edge_s_dofs]
            vals += [ell_e, ell_e]
        vals = np.concatenate(vals)
        nfree = len(self.free_gamma)
        data = np.bincount(self._mat_inv, weights=vals[self._mat_mask], minlength=self._nnz)
        K = sp.csr_matrix((data, self._indices, self._indptr), shape=(nfree, nfree))
        z_gamma = np.zeros(lay.n_gamma)
        free = self.free_gamma
        z_gamma[self.fixed_gamma] = system.fixed_values
        b = rhs_gamma[free] - np.bincount(self._fix_row, weights=vals[self._fix_mask] * z_gamma[self._fix_col],
                                          minlength=nfree)
        del vals
        try:
            z_gamma[free] = self.direct.factorize(K).solve(b)
        except SingularSystemError as exc:
            raise StabilityError(f"singular condensed system: {exc}", context=_context(system)) from exc

        # back substitution and return to the original coordinates
        x = np.zeros(system.n_total)
        gu = np.zeros((npar, 45))
        s = np.zeros(n_s)
        for i, p0 in enumerate(range(0, npar, CHUNK)):
            sl = slice(p0, min(p0 + CHUNK, npar))
            X = X_all[i]
            zl = X[:, :, ng] - np.einsum("plg,pg->pl", X[:, :, :ng], z_gamma[lay.gamma[sl]])
            zt = np.zeros((sl.stop - sl.start, 45))
            zt[:, loc] = zl[:, :39]
            zt[:, gl] = z_gamma[lay.gamma[sl][:, :6]]
            gu[sl] = zt @ Tb.T
            s[lay.s_dofs[sl, 12:]] = zl[:, 39:]
        s[lay.edge_s_dofs] = z_gamma[6 * npar : 6 * npar + lay.n_edge_s]
        x[:n_gu][lay.gu_perm] = gu
        x[n_gu : n_gu + n_s] = s
        if lay.has_multiplier:
            x[-1] = z_gamma[-1]
        return x


def static_condense_solve(system: AssembledSystem, config: Optional[SolverConfig] = None,
                          convection: bool = True) -> SolutionFields:
    """Solve the SVRT(1) system through the condensed global unknowns.

    Each Picard or Newton step is linear, so its local problems are linear
    and condensation is an exact Schur complement; the iteration therefore
    follows the uncondensed one step by step.
    """
    linear = CondensedSolves(system)
    log.info("condensed system: %d global unknowns (uncondensed %d)", linear.n_global,
             len(system.free_global()))
    if not convection:
        return solve_stokes(system, linear=linear)
    return solve_navier_stokes(system, config, linear=linear)


def condensed_sizes(system: AssembledSystem) -> dict:
    lay = condensation_layout(system)
    nfix = len(system.fixed_dofs)
    return {"condensed": lay.n_gamma - nfix, "uncondensed": system.n_total - nfix,
            "parents": lay.n_parents}


# -- local dimension counts ------------------------------------------------------------

def reference_composite() -> Triangulation:
    """Barycentric refinement of the unit reference triangle."""
    base = Triangulation.from_triangles(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
    return barycentric_refine(base)


def _gram(space, geom, x, w):
    vals = space.tabulate(geom, x)[0]
    vals = vals.reshape(vals.shape[:3] + (-1,))
    return np.einsum("cqia,cqja,cq->ij", vals, vals, w)


def local_space_dims(tol: float = 1e-10) -> dict:
    """Dimensions of the composite SVRT(1) spaces on one parent triangle.

    Every count is a numerical rank: of the Gram matrices of G, U and S on
    K^r, of S^sym (S orthogonal to the skew part of G), and of the condensed
    space of weakly symmetric S with div S in P1(K)^2.
    """
    from .quadrature import triangle_rule

    mesh = reference_composite()
    spaces = build_spaces(ElementFamily.parse("svrt1"), mesh)
    G, U, S = spaces.G, spaces.U, spaces.S
    rule = triangle_rule(6)
    geom = CellGeometry(mesh, np.arange(3))
    x = geom.points(rule.points)
    w = geom.area[:, None] * rule.weights[None, :]

    def rank(M):
        s = np.linalg.svd(M, compute_uv=False)
        return int(np.sum(s > tol * max(s.max(initial=0.0), 1e-300)))

    def glob(space, vals):
        # local (cell, q, loc, ...) values to global columns
        out = np.zeros(vals.shape[:2] + vals.shape[3:] + (space.ndof,))
        for c in range(3):
            for i, d in enumerate(space.cell_dofs[c]):
                out[c, ..., d] += vals[c, :, i]
        return out

    Gv = glob(G, G.tabulate(geom, x)[0])  # (3, q, 2, 2, nG)
    Uv = glob(U, U.tabulate(geom, x)[0])  # (3, q, 2, nU)
    Sv_, Sd_ = S.tabulate(geom, x)
    Sv, Sd = glob(S, Sv_), glob(S, Sd_)
    dims = {}
    dims["G"] = rank(np.einsum("cqabi,cqabj,cq->ij", Gv, Gv, w))
    dims["U"] = rank(np.einsum("cqai,cqaj,cq->ij", Uv, Uv, w))
    dims["S"] = rank(np.einsum("cqabi,cqabj,cq->ij", Sv, Sv, w))

    # skew part of G: coefficients along E_SKEW
    Gskw = 0.5 * (Gv - np.swapaxes(Gv, 2, 3))
    skw_basis = sla.orth(np.einsum("cqabi,cqabj,cq->ij", Gskw, Gskw, w))
    Hs = np.einsum("cqabi,ik->cqabk", Gskw, skw_basis)
    Bskw = np.einsum("cqabk,cqabj,cq->kj", Hs, Sv, w)  # (9, nS)
    Z_sym = sla.null_space(Bskw, rcond=tol)
    dims["S_sym"] = Z_sym.shape[1]

    # div S must be orthogonal to the complement of P1(K)^2 in P1(K^r)^2
    Tm = _velocity_transform()
    Uperp = Uv @ Tm[:, 6:]  # U is one parent: old coords are the 18 DOFs
    Bdiv = np.einsum("cqai,cqaj,cq->ij", Uperp, Sd, w)  # (12, nS)
    Z_bar = sla.null_space(Bdiv @ Z_sym, rcond=tol)
    dims["S_bar"] = Z_bar.shape[1]
    return dims
