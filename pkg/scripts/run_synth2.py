"""Nine-rectangles experiment (C-HMCNN against h+MCM); extra flags pass through to `chmc synth2`."""
import sys

from chmc.cli import main

DEFAULTS = ["--epochs", "20000", "--n-runs", "10", "--output-dir", "results/synth2"]

if __name__ == "__main__":
    sys.exit(main(["synth2", *DEFAULTS, *sys.argv[1:]]))
