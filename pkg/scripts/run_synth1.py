"""Moving-rectangles experiment with the acceptance budget; extra flags pass through to `chmc synth1`.

    python scripts/run_synth1.py --output-dir results/synth1 --workers 4
"""
import sys

from chmc.cli import main

DEFAULTS = ["--epochs", "20000", "--n-runs", "10", "--output-dir", "results/synth1"]

if __name__ == "__main__":
    sys.exit(main(["synth1", *DEFAULTS, *sys.argv[1:]]))
