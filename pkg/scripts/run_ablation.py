"""h+ / h+MCM / C-HMCNN on the eight FunCat validation sets. Needs $CHMC_DATA_ROOT."""
import sys

from chmc.cli import main

if __name__ == "__main__":
    sys.exit(main(["ablation", "--n-runs", "1", "--output-dir", "results/ablation", *sys.argv[1:]]))
