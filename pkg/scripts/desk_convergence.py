#!/usr/bin/env python3
"""Timestep-refinement study at desk scale (expect a slope near 2).

Runs the scheme configured in desk.spec over three step sizes against a
16x finer reference; takes a while on one core.
"""

import os
import sys

from triwell.cli import main

HERE = os.path.dirname(os.path.abspath(__file__))


if __name__ == "__main__":
    if len(sys.argv) > 1:
        os.environ["TRIWELL_OUTPUT_ROOT"] = sys.argv[1]
    sys.exit(
        main(
            [
                "converge", os.path.join(HERE, "desk.spec"),
                "--dt", "4e-4", "--dt", "2e-4", "--dt", "1e-4",
                "--reference", "2.5e-5",
            ]
        )
    )
