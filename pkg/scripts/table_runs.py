#!/usr/bin/env python3
"""Enumerate the CLI invocations for the MNIST experiment grid.

Each entry is a complete single-command experiment: the main error
comparison across methods and bias treatments, the posterior-sample count
comparison (nst 0 vs 5), and the prior-scale comparison (sigma 1.0 vs
0.01).  Print them (default), or execute sequentially with --run.

MNIST IDX files are resolved via --data-dir / $BNN_MNIST_DIR, and a reduced
smoke profile is available for quick checks:

    python scripts/table_runs.py --profile smoke --run
"""

from __future__ import annotations

import argparse
import shlex
import subprocess
import sys

PROFILES = {
    "full": "--hidden 1000,1000,1000 --epochs 100",
    "smoke": "--hidden 256,256 --epochs 20",
}

BASE = "--dataset mnist --lr 1e-2 --momentum 0.5 --batch-size 128 --patience 10 --seed 0"

ERROR_GRID = [
    ("vanilla-wd0", "--method vanilla --wd 0"),
    ("vanilla-wd1e4-bias-penalty", "--method vanilla --wd 1e-4 --bias penalty"),
    ("vanilla-wd1e4-bias-ignore", "--method vanilla --wd 1e-4 --bias ignore"),
    ("vi-bias-informative", "--method vi --bias informative"),
    ("vi-bias-uninformative", "--method vi --bias uninformative"),
    ("mcd-bias-gaussian", "--method mc_dropout --bias gaussian"),
    ("mcd-bias-spikymix", "--method mc_dropout --bias spikymix"),
    ("mcd-bias-ignore", "--method mc_dropout --bias ignore"),
    ("sgld-bias-informative", "--method sgld --bias informative --burnin 5 --thin 10 --ninflate 1e3"),
    ("sgld-bias-uninformative", "--method sgld --bias uninformative --burnin 5 --thin 10 --ninflate 1e3"),
    ("la-bias-informative", "--method la --bias informative --ninflate 1e3"),
    ("la-bias-uninformative", "--method la --bias uninformative --ninflate 1e3"),
]

SAMPLE_COUNT_GRID = [
    ("vanilla-wd0-nst", "--method vanilla --wd 0"),
    ("vanilla-wd1e4-nst", "--method vanilla --wd 1e-4"),
    ("vi-nst5", "--method vi --nst 5"),
    ("mcd-nst5", "--method mc_dropout --nst 5"),
    ("sgld-nst5", "--method sgld --nst 5 --burnin 5 --thin 10 --ninflate 1e3"),
    ("la-nst5", "--method la --nst 5 --ninflate 1e3"),
]

PRIOR_SCALE_GRID = [
    ("vi-sig001-nst5", "--method vi --prior-sig 0.01 --nst 5"),
    ("mcd-sig001-nst5", "--method mc_dropout --prior-sig 0.01 --nst 5"),
    ("sgld-sig001-nst5", "--method sgld --prior-sig 0.01 --nst 5 --burnin 5 --thin 10 --ninflate 1e3"),
]

ALL_RUNS = ERROR_GRID + SAMPLE_COUNT_GRID + PRIOR_SCALE_GRID


def invocations(profile: str = "full", out_root: str = "runs/mnist") -> list[list[str]]:
    cmds = []
    for name, flags in ALL_RUNS:
        cmd = f"{flags} {BASE} {PROFILES[profile]} --out-dir {out_root}/{name}"
        cmds.append(shlex.split(cmd))
    return cmds


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--profile", choices=PROFILES, default="full")
    ap.add_argument("--out-root", default="runs/mnist")
    ap.add_argument("--data-dir", default=None)
    ap.add_argument("--run", action="store_true", help="execute instead of printing")
    args = ap.parse_args()

    for argv in invocations(args.profile, args.out_root):
        if args.data_dir:
            argv += ["--data-dir", args.data_dir]
        line = "bnnkit " + " ".join(argv)
        print(line)
        if args.run:
            rc = subprocess.call([sys.executable, "-m", "bnnkit", *argv])
            if rc != 0:
                return rc
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
