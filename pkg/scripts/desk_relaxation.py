#!/usr/bin/env python3
"""Damped desk-scale relaxation with the energy ledger written to CSV.

Equivalent to `triwell run scripts/desk.spec` with the output directory
overridable from the command line.
"""

import os
import sys

from triwell.cli import main

HERE = os.path.dirname(os.path.abspath(__file__))


if __name__ == "__main__":
    if len(sys.argv) > 1:
        os.environ["TRIWELL_OUTPUT_ROOT"] = sys.argv[1]
    sys.exit(main(["run", os.path.join(HERE, "desk.spec")]))
