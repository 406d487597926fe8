"""Nonlinear solution of the discrete dual-mixed Navier-Stokes system."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .forms import AssembledSystem, ConstitutiveLaw, assemble_c_linearized
from .linalg import DirectSolver, SingularSystemError, embed
from .quadrature import ASSEMBLY_DEGREE, triangle_rule

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, message, history=None, context=None):
        super().__init__(message)
        self.history = list(history or [])
        self.context = dict(context or {})


class StabilityError(SolverError):
    """The linear saddle-point system is singular for these spaces."""


@dataclass
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 50
    mode: str = "newton"  # "picard" or "newton"
    damping: float = 1.0
    newton_switch: float = 1e-2  # Newton once the residual is below this

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.mode not in ("picard", "newton"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class SolutionFields:
    system: AssembledSystem
    x: np.ndarray  # full coefficient vector [G, u, S, multiplier]
    history: list = field(default_factory=list)
    converged: bool = True

    @property
    def G(self):
        return self.system.split(self.x)[0]

    @property
    def u(self):
        return self.system.split(self.x)[1]

    @property
    def S(self):
        return self.system.split(self.x)[2]

    @property
    def multiplier(self):
        return self.system.split(self.x)[3]

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def spaces(self):
        return self.system.spaces


def _context(system):
    sp_ = system.spaces
    return {"family": sp_.family.tag, "h": sp_.base_mesh.mesh_size() if sp_.base_mesh else None,
            "ntri": sp_.mesh.n_triangles}


class LinearizedSolves:
    """Direct solves of the linearised systems ``matrix(C) x = rhs``.

    The traction DOFs are eliminated and every matrix is stored on one fixed
    sparsity pattern (the union of the Stokes, Picard and Newton patterns),
    so the symbolic factorisation is computed once per mesh.
    """

    def __init__(self, system: AssembledSystem, fixed_pattern: bool = True):
        self.system = system
        self.fixed = system.fixed_global()
        self.free = system.free_global()
        self.direct = DirectSolver()
        self.pattern = _sparsity_pattern(system)[self.free][:, self.free] if fixed_pattern else None

    def __call__(self, C, rhs) -> np.ndarray:
        system = self.system
        x = np.zeros(system.n_total)
        x[self.fixed] = system.fixed_values
        Kr = system.matrix(C)[self.free]
        b = rhs[self.free] - Kr[:, self.fixed] @ x[self.fixed]
        Kff = Kr[:, self.free]
        if self.pattern is not None:
            try:
                Kff = embed(Kff, self.pattern)
            except ValueError:
                log.warning("matrix left the precomputed sparsity pattern")
        try:
            x[self.free] = self.direct.factorize(Kff).solve(b)
        except SingularSystemError as exc:
            raise StabilityError(f"singular saddle-point system: {exc}", context=_context(system)) from exc
        return x


def _sparsity_pattern(system: AssembledSystem) -> sp.csr_matrix:
    rng = np.random.default_rng(0)
    x = rng.standard_normal(system.n_total)
    C = abs(_convection(system, x, "picard")) + abs(_convection(system, x, "newton"))
    P = replace(system, A=abs(system.A) + C, B=abs(system.B),
                ell=None if system.ell is None else np.abs(system.ell) + 1.0)
    return P.matrix()


def _convection(system, x, mode):
    G, U = system.spaces.G, system.spaces.U
    g, u = system.split(x)[:2]
    return assemble_c_linearized((g, u), G, U, mode)


def residual(system: AssembledSystem, x, C=None) -> np.ndarray:
    """Nonlinear residual on the free rows; ``C`` is the Picard matrix at x."""
    if C is None:
        C = _convection(system, x, "picard")
    r = system.apply(C, x) - system.rhs()
    return r[system.free_global()]


def solve_stokes(system: AssembledSystem, linear=None) -> SolutionFields:
    """The linear problem without convection.

    ``linear`` is a callable ``(C, rhs) -> x`` solving the linearised system;
    the default is a direct solve of the assembled saddle-point matrix.
    """
    linear = linear or LinearizedSolves(system, fixed_pattern=False)
    x = linear(None, system.rhs())
    r = (system.apply(None, x) - system.rhs())[system.free_global()]
    return SolutionFields(system, x, [float(np.abs(r).max(initial=0.0))])


def solve_navier_stokes(system: AssembledSystem, config: Optional[SolverConfig] = None,
                        initial: Optional[np.ndarray] = None, linear=None) -> SolutionFields:
    """Picard iteration started from the Stokes solution, switching to Newton
    steps once the residual drops below ``config.newton_switch`` in Newton mode.

    The residual is the algebraic infinity norm over the free rows.
    """
    config = config or SolverConfig()
    rhs = system.rhs()
    free = system.free_global()
    linear = linear or LinearizedSolves(system)
    x = linear(None, rhs) if initial is None else np.array(initial, float)
    history = []
    theta = config.damping
    increases = 0
    for it in range(config.max_iter):
        Cp = _convection(system, x, "picard")
        r = system.apply(Cp, x) - rhs
        res = float(np.abs(r[free]).max(initial=0.0))
        history.append(res)
        log.debug("iteration %d residual %.3e", it, res)
        if res <= config.tol:
            return SolutionFields(system, x, history)
        if len(history) > 1 and history[-1] > history[-2]:
            increases += 1
            if increases >= 2:
                theta *= 0.5
                increases = 0
        else:
            increases = 0
        if config.mode == "newton" and res < config.newton_switch:
            Cn = _convection(system, x, "newton")
            r[system.fixed_global()] = 0.0
            step = linear(Cn, system.apply(Cn, x) - r) - x
        else:
            step = linear(Cp, rhs) - x
        x = x + theta * step
        if not np.all(np.isfinite(x)):
            break
    raise SolverError(f"no convergence after {config.max_iter} iterations", history, _context(system))


# -- pressure ---------------------------------------------------------------------

# P2 Lagrange nodes: vertices then edge midpoints opposite vertex 0, 1, 2
P2_NODES = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]])


def _p2_basis(lam):
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                     4 * l1 * l2, 4 * l0 * l2, 4 * l0 * l1], axis=-1)


@dataclass
class PressureField:
    """Piecewise quadratic pressure stored by nodal values per cell."""

    mesh: object
    nodal: np.ndarray  # (ntri, 6)

    def evaluate(self, geom, x):
        return np.einsum("cqj,cj->cq", _p2_basis(geom.bary(x)), self.nodal[geom.cells])


def pressure_at(fields: SolutionFields, geom, x):
    """p = -(tr S + |u|^2 / 2) / 2, from the trace of the constitutive relation."""
    sp_ = fields.spaces
    S = sp_.S.evaluate(fields.S, geom, x)
    u = sp_.U.evaluate(fields.u, geom, x)
    return -0.5 * (np.trace(S, axis1=-2, axis2=-1) + 0.5 * np.einsum("...a,...a->...", u, u))


def recover_pressure(fields: SolutionFields, law: Optional[ConstitutiveLaw] = None) -> PressureField:
    """Elementwise pressure; exact in P2 since tr S_h and |u_h|^2 are at most quadratic.

    The trace-free G drops out because tr A(G) = 2 nu tr G = 0, so ``law``
    is not needed for the Newtonian law.
    """
    mesh = fields.spaces.mesh
    geom = fields.spaces.S.geometry()
    x = geom.points(P2_NODES)
    return PressureField(mesh, pressure_at(fields, geom, x))


# -- diagnostics --------------------------------------------------------------------

def energy_balance(fields: SolutionFields) -> dict:
    """Terms of (A(G), G) = (f, u) + Dirichlet work + traction work.

    The Dirichlet work uses the third equation on the free stress DOFs; the
    traction work is b(S_N, (G, u)) for the prescribed stress DOFs S_N.
    """
    system = fields.system
    g, u, s, mu = system.split(fields.x)
    gu = fields.x[: system.n_gu]
    dissipation = float(gu @ (system.A @ gu))
    load = float(system.load @ u)
    fixed = np.asarray(system.fixed_dofs, dtype=np.int64)
    free = np.ones(system.n_s, dtype=bool)
    free[fixed] = False
    dirichlet = float(system.dirichlet[free] @ s[free])
    traction = float(s[fixed] @ (system.B[fixed] @ gu)) if len(fixed) else 0.0
    lhs = dissipation
    rhs = load + dirichlet + traction
    scale = max(abs(dissipation), abs(load), abs(dirichlet), abs(traction), 1e-300)
    return {"dissipation": dissipation, "load": load, "dirichlet": dirichlet,
            "traction": traction, "relative_residual": abs(lhs - rhs) / scale}


def mean_trace(fields: SolutionFields) -> float:
    from .forms import assemble_mean_trace

    return float(assemble_mean_trace(fields.spaces.S) @ fields.S)
