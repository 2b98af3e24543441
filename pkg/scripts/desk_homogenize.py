#!/usr/bin/env python3
"""Effective-response sweep of a periodic desk-scale cell.

Sweeps the mean deformation gradient along the reference direction and
writes the effective strain/stress/energy table.  Seed with a restart file
(first argument) to start from a relaxed microstructure instead of the
homogeneous branch.
"""

import os
import sys
import tempfile

from triwell.cli import main

CELL_SPEC = """\
[mesh]
elements = 8
periodic = true

[loading]
eta_start = -0.2
eta_stop = 0.2
eta_step = 0.1

[output]
directory = out/cell
"""


if __name__ == "__main__":
    args = sys.argv[1:]
    with tempfile.NamedTemporaryFile("w", suffix=".spec", delete=False) as f:
        f.write(CELL_SPEC)
        spec = f.name
    try:
        argv = ["homogenize", spec]
        if args:
            argv += ["--seed", args[0]]
        sys.exit(main(argv))
    finally:
        os.unlink(spec)
