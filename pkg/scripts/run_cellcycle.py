"""Full pipeline on cellcycle_FUN with the preset hyperparameters, 10 seeds. Needs $CHMC_DATA_ROOT."""
import sys

from chmc.cli import main

if __name__ == "__main__":
    sys.exit(main(["train", "--dataset", "cellcycle_FUN", "--n-runs", "10",
                   "--output-dir", "results/cellcycle_FUN", *sys.argv[1:]]))
