"""Inf-sup, Korn and trace-equivalence constants on uniform meshes.

    python scripts/stability.py peers afw svrt1 broken --mesh 4 8 16 32
"""

import argparse
import logging

from dualmix.cli import STAB_HEADER, fmt, render
from dualmix.spaces import ElementFamily
from dualmix.stability import stability_study


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("families", nargs="+", choices=["peers", "afw", "svrt1", "broken"])
    p.add_argument("--mesh", type=int, nargs="+", default=[4, 8, 16])
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    for tag in args.families:
        broken = tag == "broken"
        fam = ElementFamily.parse("svrt1" if broken else tag)
        rep = stability_study(fam, args.mesh, broken=broken, macro=not broken)
        print(f"## {rep.family}")
        print(render(STAB_HEADER, [(fmt(r[0]), r[1:]) for r in rep.rows()], "md"))
        print(f"min/max inf-sup {rep.ratio(rep.infsup):.3f}, Korn {rep.ratio(rep.korn):.3f}\n")


if __name__ == "__main__":
    main()
