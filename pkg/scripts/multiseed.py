"""Run generate --mini -> run -> evaluate over several seeds and summarize.

    python3 scripts/multiseed.py --seeds 0 1 2 3 4 --detector ae --work /tmp/asd
"""

import argparse
import json
import time
from pathlib import Path

from asdbench.cli import main
from asdbench.synth import GROUND_TRUTH_NAME


def run_seed(work: Path, seed: int, detector: str, epochs: int | None) -> dict:
    root = work / f"{detector}_seed{seed}"
    root.mkdir(parents=True)
    start = time.perf_counter()
    argv_run = ["run", str(root / "data"), "--detector", detector, "--seed", str(seed), "--out", str(root / "sub")]
    if epochs:
        argv_run += ["--epochs", str(epochs)]
    for argv in (
        ["generate", "--mini", "--seed", str(seed), "--out", str(root / "data")],
        argv_run,
        ["evaluate", str(root / "sub"), "--ground-truth", str(root / "data" / GROUND_TRUTH_NAME),
         "--out", str(root / "report.json")],
    ):
        code = main(argv)
        if code:
            raise SystemExit(f"seed {seed}: {argv[0]} exited {code}")
    report = json.loads((root / "report.json").read_text())
    cells = report["sections"]
    return {
        "seed": seed,
        "omega": report["official_score"],
        "source_beats_target": sum(c["auc_source"] > c["auc_target"] for c in cells),
        "cells": len(cells),
        "seconds": time.perf_counter() - start,
    }


def main_cli(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--detector", choices=("ae", "classifier"), default="ae")
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--work", type=Path, required=True, help="empty scratch directory")
    args = ap.parse_args(argv)
    rows = [run_seed(args.work, s, args.detector, args.epochs) for s in args.seeds]
    print("seed  omega   src>tgt  seconds")
    for r in rows:
        print(f"{r['seed']:>4}  {r['omega']:.3f}   {r['source_beats_target']}/{r['cells']}      {r['seconds']:.1f}")
    print(f"min omega {min(r['omega'] for r in rows):.3f}")


if __name__ == "__main__":
    main_cli()
