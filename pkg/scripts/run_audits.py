"""Equivariance audits and the forward-cost benchmark in one go.

    python scripts/run_audits.py --out-dir runs/audit
"""

import argparse
import sys

from bcnn.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="runs/audit")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    base = ["--seed", str(args.seed), "--out-dir", args.out_dir]
    steps = [
        ["certify", "--cases", "100"] + base,
        ["audit", "--group", "so2", "--filter-sizes", "5,9,13",
         "--angles", "15,30,45,90", "--images", "32", "--svg"] + base,
        ["audit", "--group", "o2", "--filter-sizes", "9",
         "--angles", "30,90", "--images", "16"] + base,
        ["audit", "--group", "conv", "--filter-sizes", "9",
         "--angles", "90", "--images", "16"] + base,
        ["bench", "--filter-sizes", "5,9,13,17", "--spatial", "32",
         "--channels", "8,8", "--repeats", "9", "--svg"] + base,
    ]
    for argv in steps:
        code = cli_main(argv)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
