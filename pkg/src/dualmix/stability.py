"""Eigenvalue diagnostics for the discrete stability conditions.

All constants are measured with Hilbertian surrogates of the natural norms:

* (G, u) in L2 x L2, Gram matrix ``X``;
* S in ``|S|^2 + |div S|^2``, Gram matrix ``Y``.

Without traction edges the stress space contains the identity I, which lies
in the kernel of the coupling and is excluded by the mean-trace constraint.
Since ``Y I_h`` is exactly the mean-trace functional, the constrained minimum
of a Rayleigh quotient with I in its null space is the second generalized
eigenvalue of the unconstrained pencil.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .forms import _chunks, _scatter, _weights, assemble_b, assemble_mean_trace
from .linalg import DirectSolver
from .mesh import MacroElement, Triangulation, extract_macroelements, uniform_square_mesh
from .quadrature import ASSEMBLY_DEGREE, triangle_rule
from .spaces import (ElementFamily, FESpace, GSpace, SpaceTriple, SSpace, USpace, build_spaces, skw,
                     sym)

log = logging.getLogger(__name__)

# above this many unknowns the sparse shift-invert eigensolver is used
DENSE_LIMIT = 2500
# residual accepted from the shifted solves inside the eigensolvers
SHIFT_RTOL = 1e-9
# kernel and rank decisions: singular values below RANK_TOL * largest
RANK_TOL = 1e-10


def _dev(T):
    return T - 0.5 * np.trace(T, axis1=-2, axis2=-1)[..., None, None] * np.eye(2)


_PARTS = {"full": lambda T: T, "sym": sym, "skw": skw, "dev": _dev}


def gram_matrix(space: FESpace, part: str = "full", degree: int = ASSEMBLY_DEGREE) -> sp.csr_matrix:
    """L2 Gram matrix of ``part`` of the basis functions.

    ``part`` is one of ``full``, ``sym``, ``skw``, ``dev`` (deviatoric) or
    ``div`` (rowwise divergence, stress spaces only).
    """
    rule = triangle_rule(degree)
    n = space.ndof
    out = sp.csr_matrix((n, n))
    for cells in _chunks(space.mesh.n_triangles):
        geom = space.geometry(cells)
        vals, div = space.tabulate(geom, geom.points(rule.points))
        if part == "div":
            if div is None:
                raise ValueError("divergence Gram matrix needs a stress space")
            v = div
        else:
            v = _PARTS[part](vals) if vals.ndim == 5 else vals
        v = v.reshape(v.shape[:3] + (-1,))
        loc = np.einsum("cqir,cqjr,cq->cij", v, v, _weights(geom, rule), optimize=True)
        d = space.cell_dofs[cells]
        out = out + _scatter(d, d, loc, (n, n))
    return out


def _free_stress(S: SSpace) -> np.ndarray:
    mask = np.ones(S.ndof, dtype=bool)
    mask[S.traction_dofs] = False
    return np.flatnonzero(mask)


# -- generalized eigenvalue helpers ----------------------------------------------------

def _dense(M):
    return M.toarray() if sp.issparse(M) else np.asarray(M)


def _lowest_dense(K, M, Z=None) -> float:
    """Smallest eigenvalue of K x = lam M x on range(Z)."""
    K, M = _dense(K), _dense(M)
    if Z is not None:
        K, M = Z.T @ K @ Z, Z.T @ M @ Z
    return float(sla.eigh(0.5 * (K + K.T), 0.5 * (M + M.T), eigvals_only=True, subset_by_index=[0, 0])[0])


def _lowest_sparse(K_apply, M, shift_solve, n, k: int, sigma: float, seed: int = 0) -> np.ndarray:
    """The ``k`` generalized eigenvalues nearest ``sigma`` (all above it),
    by ARPACK in shift-invert mode with a user-supplied shifted solve."""
    A = spla.LinearOperator((n, n), matvec=K_apply, dtype=float)
    OPinv = spla.LinearOperator((n, n), matvec=shift_solve, dtype=float)
    v0 = np.random.default_rng(seed).standard_normal(n)
    vals = spla.eigsh(A, k=k, M=M, sigma=sigma, OPinv=OPinv, which="LM", v0=v0,
                      tol=1e-13, return_eigenvectors=False, maxiter=5000)
    return np.sort(vals)


def _saddle_solver(top: sp.spmatrix, B: sp.spmatrix, ell: Optional[np.ndarray], corner=None):
    """Factorisation of [[top, B^T, 0], [B, corner, ell], [0, ell^T, 0]]."""
    blocks = [[top, B.T], [B, corner]]
    if ell is not None:
        e = sp.csr_matrix(ell[None, :])
        blocks = [[top, B.T, None], [B, corner, e.T], [None, e, None]]
    return DirectSolver().factorize(sp.bmat(blocks, format="csr"))


# -- inf-sup -----------------------------------------------------------------------------

def _triple_data(G: FESpace, U: FESpace, S: SSpace):
    free = _free_stress(S)
    B = assemble_b(S, G, U).tocsr()[free]
    X = sp.block_diag([gram_matrix(G), gram_matrix(U)], format="csr")
    Y = (gram_matrix(S) + gram_matrix(S, "div")).tocsr()[free][:, free]
    ell = assemble_mean_trace(S)[free] if S.mean_trace_constraint else None
    return B, X, Y, ell


def infsup_constant(G: FESpace, U: FESpace, S: SSpace, method: str = "auto") -> float:
    """Discrete inf-sup constant of b.

    Square root of the smallest eigenvalue of ``B X^-1 B^T s = lam Y s`` over
    stresses with zero mean trace (no traction edges) or zero normal trace on
    the traction edges.

    Parameters
    ----------
    method : {"auto", "dense", "sparse", "power"}
        ``dense`` restricts to the constraint explicitly and calls LAPACK;
        ``sparse`` uses ARPACK; ``power`` is shifted inverse iteration.
    """
    B, X, Y, ell = _triple_data(G, U, S)
    n = B.shape[0]
    method = _pick(method, n)
    if method == "dense":
        Xd = _dense(X)
        Bd = _dense(B)
        K = Bd @ np.linalg.solve(Xd, Bd.T)
        Z = sla.null_space(ell[None, :]) if ell is not None else None
        lam = _lowest_dense(K, Y, Z)
    else:
        Xlu = DirectSolver().factorize(X)

        def K_apply(s):
            return B @ Xlu.solve(B.T @ s, rtol=SHIFT_RTOL)

        sigma = -1e-3 * _scale(Y)
        # [[X, -B^T], [B, -sigma Y]] [w; s] = [0; r] gives (B X^-1 B^T - sigma Y) s = r
        lu = DirectSolver().factorize(sp.bmat([[X, -B.T], [B, -sigma * Y]], format="csr"))
        m = X.shape[0]

        def shift_solve(r):
            return lu.solve(np.concatenate([np.zeros(m), r]), rtol=SHIFT_RTOL)[m:]

        if method == "power":
            lam = _inverse_iteration(K_apply, Y, shift_solve, n, _identity_direction(S, ell, Y))
        else:
            vals = _lowest_sparse(K_apply, Y, shift_solve, n, 2 if ell is not None else 1, sigma)
            lam = vals[-1]
    return float(np.sqrt(max(lam, 0.0)))


def _pick(method, n):
    if method == "auto":
        return "dense" if n <= DENSE_LIMIT else "sparse"
    if method not in ("dense", "sparse", "power"):
        raise ValueError(f"unknown eigen method {method!r}")
    return method


def _scale(M) -> float:
    return float(abs(M).max()) if sp.issparse(M) else float(np.abs(M).max())


def _identity_direction(S: SSpace, ell, Y):
    """Y-normalised coefficient vector of the identity, or None under traction."""
    if ell is None:
        return None
    v = S.interpolate(lambda x: np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)))[_free_stress(S)]
    return v / np.sqrt(v @ (Y @ v))


def _inverse_iteration(K_apply, M, shift_solve, n, deflate=None, tol=1e-14, maxiter=2000, seed=0):
    """Smallest eigenvalue of K x = lam M x by inverse iteration, keeping the
    iterate M-orthogonal to ``deflate``."""
    x = np.random.default_rng(seed).standard_normal(n)
    lam_old = np.inf
    for _ in range(maxiter):
        if deflate is not None:
            x = x - deflate * (deflate @ (M @ x))
        x = x / np.sqrt(x @ (M @ x))
        lam = float(x @ K_apply(x))
        if abs(lam - lam_old) <= tol * max(abs(lam), 1e-300):
            return lam
        lam_old = lam
        x = shift_solve(M @ x)
    log.warning("inverse iteration stopped after %d steps", maxiter)
    return lam


# -- discrete Korn ---------------------------------------------------------------------

class EmptyKernelError(ValueError):
    """The coupling has a trivial kernel, so the Korn constant is undefined."""


def korn_constant(G: GSpace, U: USpace, S: SSpace, method: str = "auto") -> float:
    """Smallest C with |(G^skw, u)| <= C |G^sym| on the discrete kernel.

    With ``theta`` the smallest eigenvalue of ``P x = theta (P + Q) x`` on
    ker B (P the G^sym mass, Q the G^skw and u mass), C^2 = (1 - theta) / theta.
    Returns ``inf`` when the kernel holds a nonzero member with G^sym = 0.
    """
    free = _free_stress(S)
    B = assemble_b(S, G, U).tocsr()[free]
    P = sp.block_diag([gram_matrix(G, "sym"), sp.csr_matrix((U.ndof, U.ndof))], format="csr")
    Q = sp.block_diag([gram_matrix(G, "skw"), gram_matrix(U)], format="csr")
    M = (P + Q).tocsr()
    ell = assemble_mean_trace(S)[free] if S.mean_trace_constraint else None
    n = M.shape[0]
    method = _pick(method, n)
    if method == "dense":
        Z = sla.null_space(_dense(B), rcond=RANK_TOL)
        if Z.shape[1] == 0:
            raise EmptyKernelError("the kernel of b is trivial")
        theta = _lowest_dense(P, M, Z)
    else:
        sigma = -0.05
        lu = _saddle_solver((P - sigma * M).tocsr(), B, ell)

        def shift_solve(r):
            rhs = np.zeros(lu._K.shape[0])
            rhs[:n] = r
            return lu.solve(rhs, rtol=SHIFT_RTOL)[:n]

        if method == "power":
            theta = _inverse_iteration(lambda x: P @ x, M, shift_solve, n)
        else:
            theta = _lowest_sparse(lambda x: P @ x, M, shift_solve, n, 1, sigma)[0]
    if theta <= RANK_TOL:
        return float("inf")
    return float(np.sqrt((1.0 - theta) / theta))


# -- norm equivalence on the stress space ---------------------------------------------------

def trace_equivalence_constants(S: SSpace, method: str = "auto") -> tuple[float, float]:
    """Extreme eigenvalues of |S_0|^2 + |div S|^2 against |S|^2 + |div S|^2
    on the mean-trace-free stresses.

    Raises
    ------
    ValueError
        if the space has traction edges (no mean-trace constraint).
    """
    if not S.mean_trace_constraint:
        raise ValueError("trace equivalence needs the mean-trace constraint")
    D = gram_matrix(S, "div")
    Y = (gram_matrix(S) + D).tocsr()
    Y0 = (gram_matrix(S, "dev") + D).tocsr()
    ell = assemble_mean_trace(S)
    n = S.ndof
    method = _pick(method, n)
    if method == "dense":
        Z = sla.null_space(ell[None, :])
        Yd, Y0d = Z.T @ _dense(Y) @ Z, Z.T @ _dense(Y0) @ Z
        vals = sla.eigh(0.5 * (Y0d + Y0d.T), 0.5 * (Yd + Yd.T), eigvals_only=True)
        return float(vals[0]), float(vals[-1])
    sigma = -0.05
    lu = DirectSolver().factorize((Y0 - sigma * Y).tocsr())
    shift_solve = lambda r: lu.solve(r, rtol=SHIFT_RTOL)  # noqa: E731
    if method == "power":
        lower = _inverse_iteration(lambda x: Y0 @ x, Y, shift_solve, n, _identity_direction(S, ell, Y))
    else:
        lower = _lowest_sparse(lambda x: Y0 @ x, Y, shift_solve, n, 2, sigma)[-1]
    # Y - Y0 is the trace Gram matrix, so the upper constant is at most 1, and
    # a pointwise trace-free stress attains it; the spectrum has a huge
    # cluster at 1 that ARPACK resolves poorly, so try that witness first
    w = S.interpolate(lambda x: np.broadcast_to(np.diag([1.0, -1.0]), x.shape[:-1] + (2, 2)))
    upper = float(w @ (Y0 @ w)) / float(w @ (Y @ w))
    if upper < 1.0 - 1e-12:
        Ylu = DirectSolver().factorize(Y)
        Minv = spla.LinearOperator((n, n), matvec=lambda r: Ylu.solve(r, rtol=SHIFT_RTOL), dtype=float)
        upper = spla.eigsh(Y0, k=1, M=Y, Minv=Minv, which="LA", tol=1e-12, return_eigenvectors=False,
                           v0=np.random.default_rng(0).standard_normal(n))[0]
    return float(lower), float(upper)


def check_mean_trace(S: SSpace, coeffs, tol: float = 1e-12) -> np.ndarray:
    """Return ``coeffs`` if they satisfy the mean-trace constraint of ``S``.

    Raises
    ------
    ValueError
        for a stress with nonzero mean trace, such as delta I.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if S.mean_trace_constraint:
        ell = assemble_mean_trace(S)
        scale = np.abs(ell).sum() * max(np.abs(coeffs).max(initial=0.0), 1e-300)
        if abs(ell @ coeffs) > tol * scale:
            raise ValueError("stress violates the mean-trace-zero constraint")
    return coeffs


# -- macroelements -----------------------------------------------------------------------------

MACRO_KIND = {"peers": "vertex", "afw": "facet", "svrt": "parent"}


@dataclass
class MacroKernel:
    dimension: int
    identity_residual: float  # distance of I from the kernel, relative
    proportional_to_identity: bool

    @property
    def classification(self) -> list:
        labels = ["identity"] if self.identity_residual < 1e-10 else []
        return labels + ["other"] * (self.dimension - len(labels))


def patch_mesh(mesh: Triangulation, patch: MacroElement) -> tuple[Triangulation, np.ndarray]:
    """The patch triangles as a stand-alone mesh, plus the original vertex ids."""
    tris = mesh.triangles[list(patch.triangles)]
    verts, local = np.unique(tris, return_inverse=True)
    sub = Triangulation.from_triangles(mesh.vertices[verts], local.reshape(-1, 3))
    if patch.kind == "parent":
        parent = Triangulation.from_triangles(mesh.parent_mesh.vertices[mesh.parent_mesh.triangles[patch.anchor]],
                                              np.array([[0, 1, 2]]))
        sub = Triangulation.from_triangles(sub.vertices, sub.triangles, parent=np.zeros(3, dtype=np.int64),
                                           parent_mesh=parent)
    return sub, verts


def _patch_spaces(family: ElementFamily, sub: Triangulation):
    layout = {"peers": "peers", "afw": "afw", "svrt": "p1"}[family.name]
    kind = {"peers": "rt0b", "afw": "bdm1", "svrt": "rt1"}[family.name]
    G = GSpace(family, sub, layout)
    U = USpace(family, sub, 1 if family.name == "svrt" else 0)
    S = SSpace(family, sub, kind, traction_edges=np.zeros(0, dtype=np.int64))
    return G, U, S


def macroelement_kernel_dim(family: ElementFamily, patch: MacroElement, mesh: Triangulation,
                            drop_skew: bool = False) -> MacroKernel:
    """Stresses on the patch that are divergence free against the local
    velocities and orthogonal to the local gradients.

    Local means supported in the patch: for the continuous PEERS rotations
    only the hat functions of interior patch vertices qualify.  With
    ``drop_skew`` the orthogonality to skew gradients is not imposed.
    """
    sub, _ = patch_mesh(mesh, patch)
    G, U, S = _patch_spaces(family, sub)
    B = assemble_b(S, G, U).toarray()
    skew_cols = np.unique(G.cell_dofs[:, G.local_kind == 1])
    keep = np.ones(G.ndof + U.ndof, dtype=bool)
    if drop_skew:
        keep[skew_cols] = False
    elif G.layout == "peers":
        inner = sub.interior_vertices()
        keep[6 * sub.n_triangles + np.setdiff1d(np.arange(sub.n_vertices), inner)] = False
    K = sla.null_space(B[:, keep].T, rcond=RANK_TOL)
    ident = S.interpolate(lambda x: np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)))
    ident = ident / np.linalg.norm(ident)
    res = float(np.linalg.norm(ident - K @ (K.T @ ident))) if K.shape[1] else 1.0
    dim = K.shape[1]
    return MacroKernel(dim, res, dim == 1 and res < 1e-10)


# -- studies -------------------------------------------------------------------------------------

def broken_triple(mesh: Triangulation) -> SpaceTriple:
    """Negative control: RT1 stress rows with discontinuous P1 gradients and
    velocities on an unrefined mesh (the composite element without its
    barycentric refinement)."""
    fam = ElementFamily("svrt")
    return SpaceTriple(fam, mesh, GSpace(fam, mesh, "p1"), USpace(fam, mesh, 1),
                       SSpace(fam, mesh, "rt1"), base_mesh=mesh)


@dataclass
class StabilityReport:
    family: str
    h: np.ndarray
    infsup: np.ndarray
    korn: np.ndarray
    trace_lo: np.ndarray
    trace_hi: np.ndarray
    macro_dims: list = field(default_factory=list)

    @staticmethod
    def ratio(values) -> float:
        v = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(v)):
            return 0.0
        return float(v.min() / v.max())

    @property
    def stable(self) -> bool:
        return self.ratio(self.infsup) >= 0.8 and self.ratio(self.korn) >= 0.8

    def rows(self):
        return [(h, a, b, c, d) for h, a, b, c, d in
                zip(self.h, self.infsup, self.korn, self.trace_lo, self.trace_hi)]


def stability_study(family: ElementFamily, Ns: Sequence[int], broken: bool = False,
                    macro: bool = True) -> StabilityReport:
    """Constants on uniform meshes of (-1, 1)^2 with h = 2 / N, all-Dirichlet
    boundary (mean-trace constraint active)."""
    tag = "broken" if broken else family.tag
    rows = []
    for N in Ns:
        mesh = uniform_square_mesh(N)
        spaces = broken_triple(mesh) if broken else build_spaces(family, mesh)
        G, U, S = spaces.G, spaces.U, spaces.S
        beta = infsup_constant(G, U, S)
        C = korn_constant(G, U, S)
        lo, hi = trace_equivalence_constants(S)
        dims = []
        if macro and not broken:
            patches = extract_macroelements(spaces.mesh, MACRO_KIND[family.name])
            dims = sorted({macroelement_kernel_dim(family, p, spaces.mesh).dimension for p in patches[:8]})
        log.info("%s N=%d: infsup %.4g korn %.4g trace %.4g %.4g", tag, N, beta, C, lo, hi)
        rows.append((2.0 / N, beta, C, lo, hi, dims))
    cols = list(zip(*rows))
    return StabilityReport(tag, *(np.array(c, dtype=float) for c in cols[:5]), macro_dims=list(cols[5]))
