"""Acceptance suite: one group of tests per numbered criterion.

Run ``pytest tests/test_acceptance.py -v``; a per-criterion PASS/FAIL line is
printed in the terminal summary.
"""

import csv
import hashlib
import json
import math
import random
import time
from fractions import Fraction

import numpy as np
import pytest

from asdbench import cli
from asdbench.calibration import GammaParams, Threshold, decide, gamma_cdf, gamma_fit, gamma_quantile, read_thresholds
from asdbench.cli import DECISION_FILE, SCORE_FILE, main
from asdbench.metrics import (
    EvalReport,
    MetricsConfig,
    ScoredClip,
    auc_domain,
    auc_section,
    evaluate,
    official_score,
    pauc_section,
    rank_submissions,
)
from asdbench.synth import GROUND_TRUTH_NAME, read_ground_truth
from oracles import auc_domain_oracle, pauc_oracle, random_section
from test_nnet import gradient_check_case

# ---------------------------------------------------------------- 1


@pytest.mark.acceptance(1, "metric-oracle equivalence, 1000 cases, < 10 s")
def test_metric_oracle_equivalence():
    rng = random.Random(2024)
    start = time.perf_counter()
    for _ in range(1000):
        clips = random_section(rng, max_clips=50)
        for domain in ("source", "target"):
            assert auc_domain(clips, domain) == auc_domain_oracle(clips, domain)
        n_normals = sum(c.condition == "normal" for c in clips)
        # any p on the grid that keeps at least one top normal (N >= 2 always)
        p = rng.choice([q for q in (0.1, 0.2, 0.25, 0.5) if math.floor(q * n_normals + 1e-9) >= 1])
        assert pauc_section(clips, MetricsConfig(p)) == pauc_oracle(clips, p)
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"{elapsed:.2f} s"


# ---------------------------------------------------------------- 2

# AE baseline results on the DCASE 2022 Task 2 development set, percent:
# (machine, section, source AUC, target AUC, pAUC)
BASELINE_TABLE = [
    ("ToyCar", 0, "86.42", "41.48", "51.31"), ("ToyCar", 1, "89.85", "41.93", "54.08"),
    ("ToyCar", 2, "98.84", "26.50", "52.79"),
    ("ToyTrain", 0, "67.54", "33.68", "52.72"), ("ToyTrain", 1, "79.32", "29.87", "50.64"),
    ("ToyTrain", 2, "84.08", "15.52", "48.33"),
    ("Bearing", 0, "67.85", "60.17", "54.41"), ("Bearing", 1, "59.67", "64.65", "55.09"),
    ("Bearing", 2, "61.71", "60.55", "64.18"),
    ("Fan", 0, "84.69", "39.35", "59.95"), ("Fan", 1, "71.69", "44.74", "51.12"),
    ("Fan", 2, "80.54", "63.49", "62.88"),
    ("Gearbox", 0, "64.63", "64.79", "60.93"), ("Gearbox", 1, "67.66", "58.12", "53.74"),
    ("Gearbox", 2, "75.38", "65.57", "61.51"),
    ("Slide rail", 0, "81.92", "58.04", "61.65"), ("Slide rail", 1, "67.85", "50.30", "53.06"),
    ("Slide rail", 2, "86.66", "38.78", "53.44"),
    ("Valve", 0, "54.24", "52.73", "52.15"), ("Valve", 1, "50.45", "53.01", "49.78"),
    ("Valve", 2, "51.56", "43.84", "49.24"),
]


def _one_off_harmonic_mean(decimal_strings):
    """Exact rational harmonic mean of percent strings, rounded once at the end."""
    values = [Fraction(s) / 100 for s in decimal_strings]
    return float(len(values) / sum(1 / v for v in values))


@pytest.mark.acceptance(2, "baseline table aggregation reproduces an independent harmonic mean to 1e-12")
def test_baseline_table_aggregation():
    assert len(BASELINE_TABLE) == 21
    report = EvalReport()
    strings = []
    for machine, section, src, tgt, pauc in BASELINE_TABLE:
        report.auc[(machine, section, "source")] = float(src) / 100
        report.auc[(machine, section, "target")] = float(tgt) / 100
        report.pauc[(machine, section)] = float(pauc) / 100
        strings += [src, tgt, pauc]
    assert len(strings) == 63
    assert report.auc[("ToyCar", 0, "source")] == 0.8642
    omega = official_score(report, [(m, s) for m, s, *_ in BASELINE_TABLE])
    assert abs(omega - _one_off_harmonic_mean(strings)) <= 1e-12


# ---------------------------------------------------------------- 3


@pytest.mark.acceptance(3, "gamma MLE, quantile and cdf-quantile identity, < 5 s")
def test_gamma_machinery():
    start = time.perf_counter()
    fit = gamma_fit(np.random.default_rng(2025).gamma(2.5, 1.3, 100_000))
    assert abs(fit.shape / 2.5 - 1) <= 0.05
    assert abs(fit.scale / 1.3 - 1) <= 0.05
    assert abs(gamma_quantile(GammaParams(1.0, 2.0), 0.9) - 4.60517) <= 1e-5
    assert abs(gamma_quantile(GammaParams(1.0, 2.0), 0.9) - (-2 * math.log(0.1))) <= 1e-9
    rng = np.random.default_rng(7)
    for _ in range(100):
        params = GammaParams(float(np.exp(rng.uniform(np.log(0.2), np.log(50)))),
                             float(np.exp(rng.uniform(np.log(0.01), np.log(100)))))
        q = float(rng.uniform(0.01, 0.99))
        assert abs(gamma_cdf(params, gamma_quantile(params, q)) - q) <= 1e-9
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"{elapsed:.2f} s"


# ---------------------------------------------------------------- 4


@pytest.mark.acceptance(4, "analytic gradients match central differences over 10 shapes, < 30 s")
def test_gradient_correctness():
    start = time.perf_counter()
    errors = [gradient_check_case(seed) for seed in range(10)]
    elapsed = time.perf_counter() - start
    assert max(errors) < 1e-5, errors
    assert elapsed < 30.0, f"{elapsed:.2f} s"


# ---------------------------------------------------------------- 5


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def _pipeline(base, name):
    """generate --mini -> run (AE) -> evaluate; returns (seconds, directory)."""
    root = base / name
    root.mkdir()
    start = time.perf_counter()
    assert main(["generate", "--mini", "--seed", "0", "--out", str(root / "data")]) == 0
    assert main(["run", str(root / "data"), "--detector", "ae", "--seed", "0", "--out", str(root / "sub")]) == 0
    assert main(["evaluate", str(root / "sub"), "--ground-truth", str(root / "data" / GROUND_TRUTH_NAME),
                 "--out", str(root / "report.json")]) == 0
    return time.perf_counter() - start, root


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("e2e")
    return [_pipeline(base, "first"), _pipeline(base, "second")]


@pytest.mark.slow
@pytest.mark.acceptance(5, "end-to-end mini run: < 5 min, deterministic, omega > 0.6, source > target, chance control")
def test_end_to_end_runtime(pipeline_runs):
    for seconds, _ in pipeline_runs:
        assert seconds < 300, f"{seconds:.1f} s"


@pytest.mark.slow
@pytest.mark.acceptance(5, "end-to-end mini run: < 5 min, deterministic, omega > 0.6, source > target, chance control")
def test_end_to_end_is_byte_deterministic(pipeline_runs):
    (_, a), (_, b) = pipeline_runs
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert _digest(a / "sub") == _digest(b / "sub")
    assert _digest(a / "data") == _digest(b / "data")


@pytest.mark.slow
@pytest.mark.acceptance(5, "end-to-end mini run: < 5 min, deterministic, omega > 0.6, source > target, chance control")
def test_end_to_end_quality(pipeline_runs):
    report = json.loads((pipeline_runs[0][1] / "report.json").read_text())
    assert report["official_score"] > 0.6
    cells = report["sections"]
    better = sum(c["auc_source"] > c["auc_target"] for c in cells)
    assert better > len(cells) / 2, f"{better} of {len(cells)} cells"


@pytest.mark.slow
@pytest.mark.acceptance(5, "end-to-end mini run: < 5 min, deterministic, omega > 0.6, source > target, chance control")
def test_chance_scores_give_chance_auc(tmp_path):
    # 200 test clips per section (50 per domain and condition), uniform random scores
    index_cfg = tmp_path / "big.json"
    index_cfg.write_text(json.dumps({"synth": {"mini": True, "n_test_per_domain_per_condition": 50}}))
    assert main(["generate", "--config", str(index_cfg), "--seed", "0", "--out", str(tmp_path / "big")]) == 0
    truth = read_ground_truth(tmp_path / "big" / GROUND_TRUTH_NAME)
    rng = np.random.default_rng(0)
    sub = tmp_path / "chance"
    sub.mkdir()
    for machine, section in sorted({(r["machine"], r["section"]) for r in truth}):
        rows = [r for r in truth if (r["machine"], r["section"]) == (machine, section)]
        assert len(rows) == 200
        scores = rng.uniform(0, 1, len(rows))
        (sub / SCORE_FILE.format(machine=machine, section=section)).write_text(
            "".join(f"{r['filename']},{cli.format_score(s)}\n" for r, s in zip(rows, scores)))
        (sub / DECISION_FILE.format(machine=machine, section=section)).write_text(
            "".join(f"{r['filename']},0\n" for r in rows))
    report = cli.evaluate_submission(sub, tmp_path / "big" / GROUND_TRUTH_NAME, cli.load_config())
    outside = {k: round(v, 4) for k, v in report.auc.items() if not 0.4 <= v <= 0.6}
    assert not outside, outside


# ---------------------------------------------------------------- 6


def _read_rows(path):
    with open(path, newline="") as fh:
        return {name: value for name, value in csv.reader(fh)}


@pytest.mark.slow
@pytest.mark.acceptance(6, "decision files equal score > per-section gamma threshold, ties normal")
def test_decision_files_follow_thresholds(pipeline_runs):
    root = pipeline_runs[0][1]
    thresholds = read_thresholds(root / "sub" / "workspace" / "thresholds.csv")
    assert len(thresholds) == 6
    for t in thresholds:
        assert t.percentile == 0.9
        assert t.value == gamma_quantile(t.fitted, 0.9)
        scores = _read_rows(root / "sub" / SCORE_FILE.format(machine=t.machine, section=t.section))
        decisions = _read_rows(root / "sub" / DECISION_FILE.format(machine=t.machine, section=t.section))
        assert scores.keys() == decisions.keys()
        for name, text in scores.items():
            assert decisions[name] == ("1" if float(text) > t.value else "0")


@pytest.mark.acceptance(6, "decision files equal score > per-section gamma threshold, ties normal")
def test_threshold_equality_is_normal():
    fitted = GammaParams(2.0, 0.5)
    phi = gamma_quantile(fitted, 0.9)
    t = Threshold(phi, "fan", 0, 0.9, fitted)
    assert decide(phi, t) == "normal"
    assert decide(math.nextafter(phi, math.inf), t) == "anomaly"
    assert decide(math.nextafter(phi, -math.inf), t) == "normal"


@pytest.mark.acceptance(6, "decision files equal score > per-section gamma threshold, ties normal")
def test_run_writes_normal_for_a_score_equal_to_phi(tmp_path, monkeypatch):
    # a constant detector scores every clip exactly at the threshold it calibrates to
    (tmp_path / "tiny.json").write_text(json.dumps({
        "synth": {"mini": True, "machines": 1, "sections": 1, "n_source_train": 10, "n_target_train": 1,
                  "n_test_per_domain_per_condition": 2, "clip_seconds": 0.5},
        "features": {"n_mels": 16, "stack_frames": 1}, "train": {"epochs": 1},
    }))
    assert main(["generate", "--config", str(tmp_path / "tiny.json"), "--out", str(tmp_path / "data")]) == 0
    phi_holder = {}

    real_calibrate = cli.calibration.calibrate

    def calibrate_and_pin(det, index, machine, section, percentile):
        t = real_calibrate(det, index, machine, section, percentile)
        value = float(cli.format_score(t.value))
        phi_holder["phi"] = value
        det.score = lambda clip, section=None: value
        return Threshold(value, t.machine, t.section, t.percentile, t.fitted)

    monkeypatch.setattr(cli.calibration, "calibrate", calibrate_and_pin)
    assert main(["run", str(tmp_path / "data"), "--config", str(tmp_path / "tiny.json"),
                 "--out", str(tmp_path / "sub")]) == 0
    scores = _read_rows(tmp_path / "sub" / SCORE_FILE.format(machine="fan", section=0))
    decisions = _read_rows(tmp_path / "sub" / DECISION_FILE.format(machine="fan", section=0))
    assert {float(v) for v in scores.values()} == {phi_holder["phi"]}
    assert set(decisions.values()) == {"0"}


# ---------------------------------------------------------------- 7


def _random_submission(rng):
    clips = []
    for machine in ("fan", "valve"):
        for section in (0, 1):
            for domain in ("source", "target"):
                for i in range(rng.randint(10, 20)):
                    condition = "normal" if i % 2 == 0 or i < 2 else "anomaly"
                    shift = rng.uniform(0, 1.5) if condition == "anomaly" else 0.0
                    score = rng.gauss(shift, 1.0) if rng.random() < 0.8 else round(rng.gauss(shift, 1.0), 1)
                    clips.append(ScoredClip(f"{domain}_{i:03d}.wav", machine, section, domain, condition, score))
    return clips


def _exp(clips):
    return [ScoredClip(c.filename, c.machine, c.section, c.domain, c.condition, math.exp(c.score), c.decision)
            for c in clips]


@pytest.mark.acceptance(7, "exp() of every score changes no AUC, pAUC, omega or rank (100 submissions)")
def test_monotone_transform_invariance():
    rng = random.Random(77)
    plain, moved = [], []
    for k in range(100):
        clips = _random_submission(rng)
        a, b = evaluate(clips), evaluate(_exp(clips))
        assert a.auc == b.auc
        assert a.pauc == b.pauc
        assert a.official_score == b.official_score
        plain.append((f"team{k:03d}", a))
        moved.append((f"team{k:03d}", b))
    assert [t for _, t, _ in rank_submissions(plain)] == [t for _, t, _ in rank_submissions(moved)]


# ---------------------------------------------------------------- 8


@pytest.mark.acceptance(8, "pooled section AUC equals the mean of domain AUCs with equal normal counts")
def test_decomposition_identity():
    rng = np.random.default_rng(8)
    for _ in range(500):
        n = int(rng.integers(1, 30))
        m = int(rng.integers(1, 30))
        clips = [ScoredClip(f"s{i}", "fan", 0, "source", "normal", float(v))
                 for i, v in enumerate(rng.normal(0, 1, n).round(int(rng.integers(1, 4))))]
        clips += [ScoredClip(f"t{i}", "fan", 0, "target", "normal", float(v))
                  for i, v in enumerate(rng.normal(0.3, 1.2, n).round(int(rng.integers(1, 4))))]
        clips += [ScoredClip(f"a{i}", "fan", 0, str(rng.choice(["source", "target"])), "anomaly", float(v))
                  for i, v in enumerate(rng.normal(1, 1, m).round(int(rng.integers(1, 4))))]
        mean = (auc_domain(clips, "source") + auc_domain(clips, "target")) / 2
        assert abs(auc_section(clips) - mean) <= 1e-12
