"""Sparse direct solves.

Small systems go through SuperLU.  Large ones use MKL Pardiso (via
pypardiso) when it is importable, because its nested-dissection ordering
keeps the fill of the saddle-point factors within memory at N = 128 and its
symbolic analysis can be reused across nonlinear iterations.
"""

from __future__ import annotations

import glob
import logging
import os
import site
import sys
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

# systems below this size are factorised by SuperLU
PARDISO_THRESHOLD = 60_000

# 1-based Pardiso iparm settings: user values, METIS ordering, eight-digit
# pivot perturbation, scaling and weighted matching (needed for the zero
# diagonal blocks), up to ten refinement steps
_PARDISO_IPARM = {1: 1, 2: 2, 8: 10, 10: 8, 11: 1, 13: 1}


class SingularSystemError(RuntimeError):
    pass


def _locate_mkl():
    if "PYPARDISO_MKL_RT" in os.environ:
        return
    roots = [sys.prefix, os.path.join(sys.prefix, "local"), site.USER_BASE or ""]
    for root in roots:
        hits = sorted(glob.glob(os.path.join(root, "lib*", "**", "*mkl_rt*"), recursive=True), key=len)
        hits = [h for h in hits if ".so" in h or h.endswith((".dylib", ".dll"))]
        if hits:
            os.environ["PYPARDISO_MKL_RT"] = hits[0]
            return


_PYPARDISO = None


def _pardiso_module():
    global _PYPARDISO
    if _PYPARDISO is None:
        _locate_mkl()
        import pypardiso

        _PYPARDISO = pypardiso
    return _PYPARDISO


def pardiso_available() -> bool:
    try:
        _pardiso_module()
    except ImportError:
        return False
    return True


def _pattern_key(K: sp.csr_matrix):
    return K.shape, K.nnz, hash(K.indptr.tobytes()), hash(K.indices.tobytes())


class DirectSolver:
    """Reusable LU factorisation.

    ``factorize`` may be called repeatedly; with Pardiso the ordering and
    symbolic analysis are redone only when the sparsity pattern changes.

    Parameters
    ----------
    backend : {"auto", "superlu", "pardiso"}
        ``auto`` (default, or the ``DUALMIX_SOLVER`` variable) picks Pardiso
        for systems with at least ``PARDISO_THRESHOLD`` unknowns.
    """

    def __init__(self, backend: Optional[str] = None):
        self._pardiso = None
        self.backend = backend or os.environ.get("DUALMIX_SOLVER", "auto")
        if self.backend not in ("auto", "superlu", "pardiso"):
            raise ValueError(f"unknown solver backend {self.backend!r}")
        self._lu = None
        self._pardiso = None
        self._pattern = None
        self._K = None
        self.analyses = 0
        self.factorizations = 0

    def _use_pardiso(self, n):
        if self.backend == "superlu":
            return False
        if self.backend == "auto" and n < PARDISO_THRESHOLD:
            return False
        if pardiso_available():
            return True
        if self.backend == "pardiso":
            raise ImportError("pypardiso is not available")
        return False

    def factorize(self, K) -> "DirectSolver":
        K = sp.csr_matrix(K, dtype=float)
        K.sort_indices()
        self._K = K
        self.factorizations += 1
        self._lu = None
        if self._use_pardiso(K.shape[0]):
            self._factorize_pardiso(K)
        else:
            try:
                self._lu = spla.splu(sp.csc_matrix(K), permc_spec="COLAMD")
            except RuntimeError as exc:  # "Factor is exactly singular"
                raise SingularSystemError(str(exc)) from exc
        return self

    def _factorize_pardiso(self, K):
        key = _pattern_key(K)
        if self._pardiso is None or key != self._pattern:
            self.release()
            solver = _pardiso_module().PyPardisoSolver()
            for i, v in _PARDISO_IPARM.items():
                solver.set_iparm(i, v)
            solver.set_phase(11)
            solver._call_pardiso(K, np.zeros(K.shape[0]))
            self._pardiso, self._pattern = solver, key
            self.analyses += 1
        self._pardiso.set_phase(22)
        self._pardiso._call_pardiso(K, np.zeros(K.shape[0]))

    def _raw_solve(self, b):
        if self._lu is not None:
            return self._lu.solve(b)
        self._pardiso.set_phase(33)
        return np.asarray(self._pardiso._call_pardiso(self._K, b)).reshape(b.shape)

    def solve(self, b, rtol: float = 1e-11, refine: int = 3) -> np.ndarray:
        """Solve with up to ``refine`` steps of iterative refinement.

        Raises
        ------
        SingularSystemError
            if the solution is not finite or the relative residual stays
            above ``rtol``.
        """
        if self._K is None:
            raise RuntimeError("factorize must be called before solve")
        b = np.asarray(b, dtype=float)
        x = self._raw_solve(b)
        scale = max(np.abs(b).max(initial=0.0), 1e-300)
        for _ in range(refine + 1):
            if not np.all(np.isfinite(x)):
                raise SingularSystemError("non-finite solution of the linear system")
            r = b - self._K @ x
            res = np.abs(r).max(initial=0.0)
            if res <= rtol * scale or res <= 1e-14:
                return x
            x = x + self._raw_solve(r)
        raise SingularSystemError(f"relative linear residual {res / scale:.3e} too large; singular system?")

    def release(self):
        if self._pardiso is not None:
            try:
                self._pardiso.remove_stored_factorization()
            except Exception:  # best effort at interpreter shutdown
                pass
        self._pardiso = None
        self._pattern = None

    def __del__(self):
        self.release()


def factorize(K, backend: Optional[str] = None) -> DirectSolver:
    return DirectSolver(backend).factorize(K)


def solve(K, b: np.ndarray, rtol: float = 1e-11, backend: Optional[str] = None) -> np.ndarray:
    """One-shot direct solve with a residual check."""
    return DirectSolver(backend).factorize(K).solve(b, rtol=rtol)


def embed(K, pattern: sp.csr_matrix) -> sp.csr_matrix:
    """Copy of ``K`` stored on the (larger) sparsity pattern of ``pattern``.

    Keeps the pattern fixed across nonlinear iterations so the symbolic
    factorisation can be reused.  Raises ``ValueError`` if ``K`` has an
    entry outside the pattern.
    """
    K = sp.coo_matrix(K)
    n = pattern.shape[1]
    pattern = sp.csr_matrix(pattern)
    pattern.sort_indices()
    rows = np.repeat(np.arange(pattern.shape[0]), np.diff(pattern.indptr))
    keys = rows.astype(np.int64) * n + pattern.indices
    kk = K.row.astype(np.int64) * n + K.col
    pos = np.searchsorted(keys, kk)
    pos = np.minimum(pos, len(keys) - 1)
    if len(kk) and not np.all(keys[pos] == kk):
        raise ValueError("matrix has entries outside the given pattern")
    data = np.bincount(pos, weights=K.data, minlength=len(keys))
    return sp.csr_matrix((data, pattern.indices.copy(), pattern.indptr.copy()), shape=pattern.shape)
