"""Reproduce the AFW error table (h = 1/4 ... 1/64, optionally 1/128).

    python scripts/table1.py [--max-n 128] [--out results]
"""

import argparse
import logging
from pathlib import Path

from dualmix.cli import ERR_HEADER, render
from dualmix.spaces import ElementFamily
from dualmix.verify import convergence_study


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--max-n", type=int, default=128)
    p.add_argument("--out", type=Path, default=Path("results"))
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    Ns = [N for N in (8, 16, 32, 64, 128) if N <= args.max_n]
    report = convergence_study(ElementFamily.parse("afw"), Ns)
    text = render(ERR_HEADER, report.rows(), "md")
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "table1_afw.md").write_text(text)
    print(text)


if __name__ == "__main__":
    main()
