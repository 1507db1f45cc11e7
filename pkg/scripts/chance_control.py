"""Uniform random scores against synthetic ground truth: every AUC should sit near 0.5.

    python3 scripts/chance_control.py --seeds 0 1 2 3 4 --work /tmp/chance
"""

import argparse
from pathlib import Path

import numpy as np

from asdbench import cli
from asdbench.cli import DECISION_FILE, SCORE_FILE, format_score
from asdbench.synth import GROUND_TRUTH_NAME, SynthConfig, generate_dataset, read_ground_truth


def chance_report(work: Path, seed: int, per_condition: int, clip_seconds: float):
    data = work / f"data_seed{seed}"
    cfg = SynthConfig.mini(seed=seed, n_test_per_domain_per_condition=per_condition, clip_seconds=clip_seconds)
    generate_dataset(cfg, data)
    truth = read_ground_truth(data / GROUND_TRUTH_NAME)
    rng = np.random.default_rng(seed)
    sub = work / f"chance_seed{seed}"
    sub.mkdir()
    for machine, section in sorted({(r["machine"], r["section"]) for r in truth}):
        rows = [r for r in truth if (r["machine"], r["section"]) == (machine, section)]
        scores = rng.uniform(0.0, 1.0, len(rows))
        (sub / SCORE_FILE.format(machine=machine, section=section)).write_text(
            "".join(f"{r['filename']},{format_score(s)}\n" for r, s in zip(rows, scores)))
        (sub / DECISION_FILE.format(machine=machine, section=section)).write_text(
            "".join(f"{r['filename']},0\n" for r in rows))
    return cli.evaluate_submission(sub, data / GROUND_TRUTH_NAME, cli.load_config())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--per-condition", type=int, default=50, help="test clips per domain and condition")
    ap.add_argument("--clip-seconds", type=float, default=2.0)
    ap.add_argument("--work", type=Path, required=True, help="empty scratch directory")
    args = ap.parse_args(argv)
    args.work.mkdir(parents=True, exist_ok=True)
    total = outside = 0
    for seed in args.seeds:
        report = chance_report(args.work, seed, args.per_condition, args.clip_seconds)
        values = np.array(list(report.auc.values()))
        bad = int(((values < 0.4) | (values > 0.6)).sum())
        total += values.size
        outside += bad
        print(f"seed {seed}: AUC min {values.min():.3f} max {values.max():.3f}, outside [0.4, 0.6]: {bad}/{values.size}")
    print(f"overall outside [0.4, 0.6]: {outside}/{total}")


if __name__ == "__main__":
    main()
