"""CLI: torchrunner --case <dir> --mode eager|compiled --out <file>.

Exit 0 on success; any exception leaves a traceback on stderr and a nonzero
exit. Stdout carries only the compile sentinel.
"""

from __future__ import annotations

import argparse
import sys

from . import run


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="torchrunner")
    parser.add_argument("--case", required=True)
    parser.add_argument("--mode", required=True, choices=("eager", "compiled"))
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    run(args.case, args.mode, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
