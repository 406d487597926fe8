"""Command line driver for convergence, stability and single-solve studies.

Configuration files hold one ``key = value`` pair per line; ``#`` starts a
comment and keys are the long flag names without dashes (``mesh = 8, 16``,
``condense = true``).  Command line flags override file values.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .manufactured import ManufacturedSolution
from .mesh import uniform_square_mesh, write_mesh
from .solver import SolverConfig, SolverError
from .spaces import ElementFamily, build_spaces

log = logging.getLogger("dualmix")

FAMILIES = ("peers", "afw", "svrt1")
STUDIES = ("convergence", "stability", "solve")
BCS = ("dirichlet", "traction-right")
FORMATS = ("csv", "md")
ERR_HEADER = ("h", "err_Gsym", "err_Gskw", "err_u", "err_S", "err_divS")
STAB_HEADER = ("h", "infsup", "korn", "trace_lo", "trace_hi")

EXIT_FAILURE = 1
EXIT_USAGE = 2


@dataclass
class RunConfig:
    family: Optional[str] = None
    mesh: list = field(default_factory=lambda: [8, 16, 32, 64, 128])
    domain: tuple = (-1.0, 1.0, -1.0, 1.0)
    bc: str = "traction-right"
    nu: float = 1.0 / 20.0
    k: float = float(np.pi)
    m: float = float(np.pi / 2)
    tol: float = 1e-10
    max_iter: int = 50
    newton: bool = True
    condense: bool = False
    study: str = "convergence"
    format: str = "csv"
    out: str = "results"
    dump_mesh: bool = False
    dump_dofs: bool = False
    dump_solution: bool = False

    def validate(self) -> list:
        """All violations at once; an empty list means the config is usable."""
        errs = []
        if self.family is None:
            errs.append("family is required (--family or 'family = ...')")
        elif self.family not in FAMILIES:
            errs.append(f"family must be one of {', '.join(FAMILIES)}, got {self.family!r}")
        if not self.mesh:
            errs.append("mesh needs at least one size")
        elif any(int(n) < 1 for n in self.mesh):
            errs.append("mesh sizes must be positive")
        elif any(b <= a for a, b in zip(self.mesh, self.mesh[1:])):
            errs.append("mesh sizes must be strictly increasing")
        for name in ("nu", "k", "m", "tol"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                errs.append(f"{name} must be positive, got {v}")
        if self.max_iter < 1:
            errs.append("max_iter must be at least 1")
        x0, x1, y0, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            errs.append("domain must be (x0, x1, y0, y1) with x1 > x0 and y1 > y0")
        for name, allowed in (("study", STUDIES), ("bc", BCS), ("format", FORMATS)):
            if getattr(self, name) not in allowed:
                errs.append(f"{name} must be one of {', '.join(allowed)}")
        if self.condense and self.family not in (None, "svrt1"):
            errs.append("static condensation is only available for svrt1")
        return errs

    @property
    def solver(self) -> SolverConfig:
        return SolverConfig(tol=self.tol, max_iter=self.max_iter, mode="newton" if self.newton else "picard")

    @property
    def exact(self) -> ManufacturedSolution:
        return ManufacturedSolution(self.k, self.m, self.nu)


class ConfigError(ValueError):
    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


_BOOL = {"true": True, "yes": True, "on": True, "1": True, "false": False, "no": False, "off": False, "0": False}


def _convert(name: str, text: str):
    text = text.strip()
    if name == "mesh":
        return [int(v) for v in text.replace(",", " ").split()]
    if name == "domain":
        vals = tuple(float(v) for v in text.replace(",", " ").split())
        if len(vals) != 4:
            raise ValueError("domain needs four numbers")
        return vals
    default = getattr(RunConfig(), name)
    if isinstance(default, bool):
        if text.lower() not in _BOOL:
            raise ValueError(f"expected a boolean, got {text!r}")
        return _BOOL[text.lower()]
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; raises ConfigError listing every bad line."""
    known = {f.name for f in fields(RunConfig)}
    out, problems = {}, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        try:
            out[key] = _convert(key, value)
        except ValueError as exc:
            problems.append(f"line {lineno}: {key}: {exc}")
    if problems:
        raise ConfigError(problems)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualmix", description=__doc__.split("\n")[0])
    p.add_argument("--config", type=Path, help="key = value configuration file")
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--mesh", help="comma separated list of N (h = 2/N)")
    p.add_argument("--study", choices=STUDIES)
    p.add_argument("--bc", choices=BCS)
    p.add_argument("--nu", type=float)
    p.add_argument("--k", type=float)
    p.add_argument("--m", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--newton", action=argparse.BooleanOptionalAction, default=None,
                   help="Newton steps once the Picard residual is small (default on)")
    p.add_argument("--condense", action="store_true", default=None)
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--out", help="output directory")
    p.add_argument("--dump-mesh", action="store_true", default=None)
    p.add_argument("--dump-dofs", action="store_true", default=None)
    p.add_argument("--dump-solution", action="store_true", default=None)
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values = {}
    problems = []
    if args.config is not None:
        try:
            values.update(parse_config_text(args.config.read_text()))
        except OSError as exc:
            problems.append(f"cannot read config file: {exc}")
        except ConfigError as exc:
            problems.extend(exc.problems)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is None:
            continue
        if f.name == "mesh":
            try:
                v = _convert("mesh", v)
            except ValueError:
                problems.append(f"mesh: cannot parse {v!r}")
                continue
        values[f.name] = v
    cfg = RunConfig(**values)
    problems.extend(cfg.validate())
    if problems:
        raise ConfigError(problems)
    return cfg


# -- output -----------------------------------------------------------------------

def fmt(v) -> str:
    """Six significant digits in scientific notation."""
    v = float(v)
    if not np.isfinite(v):
        raise ValueError("non-finite value in a report table")
    return f"{v:.5e}"


def render(header, rows, style: str) -> str:
    """``rows`` are (label, values) pairs; the label fills the first column."""
    lines = []
    if style == "md":
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "---|" * len(header))
        for label, vals in rows:
            lines.append("| " + " | ".join([label] + [fmt(v) for v in vals]) + " |")
    else:
        lines.append(",".join(header))
        for label, vals in rows:
            lines.append(",".join([label] + [fmt(v) for v in vals]))
    return "\n".join(lines) + "\n"


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    log.info("wrote %s", path)
    return path


def _workers(n: int) -> int:
    cap = os.environ.get("DUALMIX_THREADS")
    try:
        cap = int(cap) if cap else 1
    except ValueError:
        cap = 1
    return max(1, min(cap, n))


# -- studies ------------------------------------------------------------------------

def _mesh(cfg: RunConfig, N: int):
    return uniform_square_mesh(N, cfg.domain, traction=cfg.bc == "traction-right")


def _dumps(cfg: RunConfig, family: ElementFamily, out: Path):
    for N in cfg.mesh:
        mesh = _mesh(cfg, N)
        if cfg.dump_mesh:
            out.mkdir(parents=True, exist_ok=True)
            with open(out / f"mesh_N{N}.txt", "w") as fh:
                write_mesh(mesh, fh)
        if cfg.dump_dofs:
            sizes = build_spaces(family, mesh).sizes
            print(f"N={N} " + " ".join(f"{k}={v}" for k, v in sizes.items()))


def run_convergence(cfg: RunConfig, family: ElementFamily, out: Path) -> Path:
    from .verify import convergence_study

    report = convergence_study(family, cfg.mesh, cfg.solver, exact=cfg.exact,
                               traction=cfg.bc == "traction-right", condense=cfg.condense,
                               workers=_workers(len(cfg.mesh)), domain=cfg.domain)
    ext = "md" if cfg.format == "md" else "csv"
    return _write(out, f"convergence_{family.tag}.{ext}", render(ERR_HEADER, report.rows(), cfg.format))


def run_stability(cfg: RunConfig, family: ElementFamily, out: Path) -> Path:
    from .stability import stability_study

    report = stability_study(family, cfg.mesh, macro=False)
    rows = [(fmt(r[0]), r[1:]) for r in report.rows()]
    ext = "md" if cfg.format == "md" else "csv"
    return _write(out, f"stability_{family.tag}.{ext}", render(STAB_HEADER, rows, cfg.format))


def run_solve(cfg: RunConfig, family: ElementFamily, out: Path) -> Path:
    from .verify import error_norms, solve_manufactured

    rows = []
    for N in cfg.mesh:
        fields_ = solve_manufactured(family, _mesh(cfg, N), cfg.exact, cfg.solver, condense=cfg.condense)
        rows.append((fmt((cfg.domain[1] - cfg.domain[0]) / N), error_norms(fields_, cfg.exact)))
        if cfg.dump_solution:
            _write(out, f"solution_{family.tag}_N{N}.txt", solution_text(fields_))
    ext = "md" if cfg.format == "md" else "csv"
    return _write(out, f"solve_{family.tag}.{ext}", render(ERR_HEADER, rows, cfg.format))


def solution_text(fields_) -> str:
    """Per-cell coefficients: ``cell G... | u... | S...`` with the local
    orderings of the spaces."""
    sp_ = fields_.spaces
    G, u, S = fields_.G, fields_.u, fields_.S
    lines = [f"# ncell {sp_.mesh.n_triangles} nG {sp_.G.nloc} nU {sp_.U.nloc} nS {sp_.S.nloc}"]
    for c in range(sp_.mesh.n_triangles):
        parts = [G[sp_.G.cell_dofs[c]], u[sp_.U.cell_dofs[c]], S[sp_.S.cell_dofs[c]]]
        lines.append(f"{c} " + " | ".join(" ".join(f"{v:.17g}" for v in p) for p in parts))
    return "\n".join(lines) + "\n"


STUDY_RUNNERS = {"convergence": run_convergence, "stability": run_stability, "solve": run_solve}


def failure_record(exc: BaseException, cfg: RunConfig) -> dict:
    rec = {"status": "failed", "error": type(exc).__name__, "message": str(exc),
           "family": cfg.family, "study": cfg.study, "mesh": cfg.mesh}
    if isinstance(exc, SolverError):
        rec["history"] = [float(r) for r in exc.history]
        rec["context"] = exc.context
    return rec


def run(cfg: RunConfig) -> int:
    """Run the configured study; returns the process exit status."""
    family = ElementFamily.parse(cfg.family)
    out = Path(cfg.out)
    try:
        _dumps(cfg, family, out)
        path = STUDY_RUNNERS[cfg.study](cfg, family, out)
    except (SolverError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        rec = failure_record(exc, cfg)
        text = json.dumps(rec, sort_keys=True, default=str)
        print(text, file=sys.stderr)
        _write(out, "failure.json", text + "\n")
        return EXIT_FAILURE
    print(path)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        for p in exc.problems:
            print(f"dualmix: error: {p}", file=sys.stderr)
        return EXIT_USAGE
    log.debug("config %s", asdict(cfg))
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
