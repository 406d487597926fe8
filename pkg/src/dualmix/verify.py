"""Error norms, convergence studies and stability diagnostics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .forms import ConstitutiveLaw, apply_traction_bc, assemble_system
from .manufactured import ManufacturedSolution
from .mesh import Triangulation, uniform_square_mesh
from .quadrature import DATA_DEGREE, triangle_rule
from .solver import SolutionFields, SolverConfig, solve_navier_stokes, solve_stokes
from .spaces import ElementFamily, build_spaces, skw, sym
from .stability import (EmptyKernelError, MacroKernel, StabilityReport, broken_triple, check_mean_trace,
                        gram_matrix, infsup_constant, korn_constant, macroelement_kernel_dim,
                        stability_study, trace_equivalence_constants)

log = logging.getLogger(__name__)

COLUMNS = ("Gsym", "Gskw", "u", "S", "divS")


def setup_problem(family: ElementFamily, mesh: Triangulation, exact: ManufacturedSolution,
                  convection: bool = True):
    """Assembled system for the manufactured solution: Dirichlet data on the
    Dirichlet edges, edge-moment traction data on the traction edges."""
    spaces = build_spaces(family, mesh)
    law = ConstitutiveLaw(exact.nu)
    system = assemble_system(spaces, law, f=exact.f, g=exact.u)
    if len(spaces.S.traction_edges):
        system = apply_traction_bc(system, exact.S)
    return system


def solve_manufactured(family, mesh, exact, config: Optional[SolverConfig] = None,
                       convection: bool = True, condense: bool = False) -> SolutionFields:
    system = setup_problem(family, mesh, exact)
    if condense:
        from .condense import static_condense_solve

        return static_condense_solve(system, config, convection=convection)
    if not convection:
        return solve_stokes(system)
    return solve_navier_stokes(system, config)


def error_norms(fields: SolutionFields, exact: ManufacturedSolution, degree: int = DATA_DEGREE) -> np.ndarray:
    """L2 errors of (G - grad u)^sym, (G - grad u)^skw, u, S and div S."""
    sp_ = fields.spaces
    rule = triangle_rule(degree)
    sq = np.zeros(5)
    n = sp_.mesh.n_triangles
    for start in range(0, n, 2048):
        cells = np.arange(start, min(start + 2048, n))
        geom = sp_.S.geometry(cells)
        x = geom.points(rule.points)
        w = geom.area[:, None] * rule.weights[None, :]
        dG = sp_.G.evaluate(fields.G, geom, x) - exact.grad_u(x)
        du = sp_.U.evaluate(fields.u, geom, x) - exact.u(x)
        dS = sp_.S.evaluate(fields.S, geom, x) - exact.S(x)
        dd = sp_.S.evaluate_div(fields.S, geom, x) - exact.div_S(x)
        for i, e in enumerate((sym(dG), skw(dG))):
            sq[i] += np.einsum("cqab,cqab,cq->", e, e, w)
        sq[2] += np.einsum("cqa,cqa,cq->", du, du, w)
        sq[3] += np.einsum("cqab,cqab,cq->", dS, dS, w)
        sq[4] += np.einsum("cqa,cqa,cq->", dd, dd, w)
    return np.sqrt(sq)


def exact_norms(exact: ManufacturedSolution, N: int = 32, degree: int = DATA_DEGREE,
                domain=None) -> np.ndarray:
    """L2 norms of (grad u)^sym, (grad u)^skw, u, S, div S on the domain,
    (-1, 1)^2 by default."""
    mesh = uniform_square_mesh(N, domain)
    rule = triangle_rule(degree)
    from .spaces import CellGeometry

    geom = CellGeometry(mesh, np.arange(mesh.n_triangles))
    x = geom.points(rule.points)
    w = geom.area[:, None] * rule.weights[None, :]
    g = exact.grad_u(x)
    fields = (sym(g), skw(g), exact.u(x), exact.S(x), exact.div_S(x))
    return np.array([np.sqrt(np.sum(v.reshape(v.shape[:2] + (-1,)) ** 2 * w[..., None])) for v in fields])


def fit_rate(h, errors) -> np.ndarray:
    """Least-squares slope of log(error) against log(h), per column."""
    h = np.asarray(h, dtype=float)
    E = np.asarray(errors, dtype=float)
    A = np.stack([np.log(h), np.ones_like(h)], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(E), rcond=None)
    return coef[0]


@dataclass
class ConvergenceReport:
    family: str
    h: np.ndarray
    errors: np.ndarray  # (nmesh, 5)
    norms: np.ndarray
    rate_window: tuple
    iterations: list = field(default_factory=list)

    @property
    def rates(self) -> np.ndarray:
        lo, hi = self.rate_window
        sel = (self.h <= hi * (1 + 1e-12)) & (self.h >= lo * (1 - 1e-12))
        return fit_rate(self.h[sel], self.errors[sel])

    def rows(self):
        """Table rows as (label, values) pairs: one per mesh, then norm and rate."""
        out = [(f"{h:.5e}", e) for h, e in zip(self.h, self.errors)]
        out.append(("norm", self.norms))
        out.append(("rate", self.rates))
        return out


def convergence_study(family: ElementFamily, Ns: Sequence[int], config: Optional[SolverConfig] = None,
                      exact: Optional[ManufacturedSolution] = None, traction: bool = True,
                      rate_window: Optional[tuple] = None, condense: bool = False,
                      workers: int = 1, domain=None) -> ConvergenceReport:
    """Errors on uniform N x N meshes of ``domain``, (-1, 1)^2 by default, so
    that h = 2 / N there.

    The rate is fitted over ``rate_window`` = (h_min, h_max); by default all
    rows for the lowest-order families and h <= 1/16 for the composite element.
    """
    exact = exact or ManufacturedSolution()
    Ns = list(Ns)
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ValueError("mesh sizes must be strictly increasing")
    x0, x1 = (-1.0, 1.0) if domain is None else domain[:2]
    h = np.array([(x1 - x0) / N for N in Ns])
    if rate_window is None:
        rate_window = (h.min(), 1.0 / 16.0) if family.name == "svrt" and h.min() < 1 / 16 else (h.min(), h.max())

    def run(N):
        mesh = uniform_square_mesh(N, domain, traction=traction)
        fields = solve_manufactured(family, mesh, exact, config, condense=condense)
        log.info("%s N=%d: %d iterations", family.tag, N, fields.iterations)
        return error_norms(fields, exact), fields.iterations

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, Ns))
    else:
        results = [run(N) for N in Ns]
    errors = np.array([r[0] for r in results])
    return ConvergenceReport(family.tag, h, errors, exact_norms(exact, domain=domain), rate_window, [r[1] for r in results])
