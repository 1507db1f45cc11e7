"""Command-line pipeline: generate -> run -> evaluate -> rank.

Exit codes: 0 success, 2 input/config error, 3 data-integrity error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import calibration, detectors, metrics, synth
from .dataset import build_index, load_wav
from .errors import AsdError, ConfigError, DataError, ParseError, ReconciliationError
from .features import FeatureConfig
from .nnet import TrainConfig

log = logging.getLogger("asdbench")

SCORE_FILE = "anomaly_score_{machine}_section_{section:02d}_test.csv"
DECISION_FILE = "decision_result_{machine}_section_{section:02d}_test.csv"
REPORT_NAME = "evaluation_report.json"


@dataclass
class SynthOptions:
    machines: int = 2
    sections: int = 3
    mini: bool = False
    n_source_train: int | None = None
    n_target_train: int | None = None
    n_test_per_domain_per_condition: int | None = None
    clip_seconds: float | None = None


@dataclass
class PipelineConfig:
    dataset_root: str | None = None
    workspace: str | None = None
    out: str | None = None
    detector: str = "ae"
    seed: int = 0
    percentile: float = 0.9
    features: FeatureConfig = field(default_factory=FeatureConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=10, batch_size=128, learning_rate=1e-3))
    metrics: metrics.MetricsConfig = field(default_factory=metrics.MetricsConfig)
    synth: SynthOptions = field(default_factory=SynthOptions)

    def __post_init__(self):
        if self.detector not in ("ae", "classifier"):
            raise ConfigError(f"detector must be 'ae' or 'classifier', got {self.detector!r}")
        if not 0.0 < self.percentile < 1.0:
            raise ConfigError(f"percentile must lie in (0, 1), got {self.percentile}")


_NESTED = {"features": FeatureConfig, "train": TrainConfig, "metrics": metrics.MetricsConfig, "synth": SynthOptions}


def _build(cls, values: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Read a JSON config (optional) and apply flat or dotted-key overrides on top."""
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in key:
            outer, inner = key.split(".", 1)
            raw.setdefault(outer, {})[inner] = value
        else:
            raw[key] = value
    top = {k: v for k, v in raw.items() if k not in _NESTED}
    nested = {}
    for name, cls in _NESTED.items():
        section = raw.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"'{name}' must be an object")
        if name == "train":
            section = {"epochs": 10, "batch_size": 128, "learning_rate": 1e-3, **section}
        nested[name] = _build(cls, section, name)
    return _build(PipelineConfig, {**top, **nested}, "config")


def derive_seed(master: int, machine: str, section: int = -1) -> int:
    seq = np.random.SeedSequence([master & 0xFFFFFFFF, zlib.crc32(machine.encode()), section + 1])
    return int(seq.generate_state(1)[0])


def format_score(score: float) -> str:
    return f"{score:.9g}"


# ---------------------------------------------------------------- generate

def cmd_generate(config: PipelineConfig) -> synth.DatasetIndex:
    if not config.out:
        raise ConfigError("generate needs --out")
    opts = config.synth
    machines = tuple(synth.default_machines(opts.machines, opts.sections))
    counts = {
        k: getattr(opts, k)
        for k in ("n_source_train", "n_target_train", "n_test_per_domain_per_condition", "clip_seconds")
        if getattr(opts, k) is not None
    }
    if opts.mini:
        sc = synth.SynthConfig.mini(config.seed, opts.machines, opts.sections, **counts)
    else:
        sc = synth.SynthConfig(seed=config.seed, machines=machines, sections_per_machine=opts.sections, **counts)
    out = Path(config.out)
    if not out.parent.is_dir():
        raise FileNotFoundError(f"output parent directory does not exist: {out.parent}")
    index = synth.generate_dataset(sc, out)
    log.info("wrote %d clips for %d machine(s) to %s", len(index), len(index.machines), out)
    return index


# ---------------------------------------------------------------- run

def _train_detector(config, index, machine, section, classifier_cache):
    if config.detector == "ae":
        tc = dataclasses.replace(config.train, seed=derive_seed(config.seed, machine, section), loss="mse")
        return detectors.train_ae(index, machine, section, tc, config.features)
    if machine not in classifier_cache:
        tc = dataclasses.replace(config.train, seed=derive_seed(config.seed, machine), loss="cross_entropy")
        classifier_cache[machine] = detectors.train_classifier(index, machine, tc, config.features)
    return classifier_cache[machine]


def cmd_run(config: PipelineConfig) -> list:
    """Train, calibrate, score the test split and write submission CSVs. Returns the thresholds."""
    if not config.dataset_root or not config.out:
        raise ConfigError("run needs a dataset root and --out")
    index = build_index(config.dataset_root)
    if not index.machines:
        raise DataError(f"no clips found under {config.dataset_root}")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    work = Path(config.workspace) if config.workspace else out / "workspace"
    work.mkdir(parents=True, exist_ok=True)

    thresholds = []
    classifiers: dict = {}
    for machine, section in index.cells():
        tests = index.select(machine=machine, section=section, split="test")
        if not tests:
            raise DataError(f"{machine} section {section:02d}: no test clips")
        if not detectors.section_training_paths(index, machine, section):
            raise DataError(f"{machine} section {section:02d}: no training clips")
        det = _train_detector(config, index, machine, section, classifiers)
        threshold = calibration.calibrate(det, index, machine, section, config.percentile)
        thresholds.append(threshold)
        stem = work / (f"model_{machine}" if det.kind == "classifier" else f"model_{machine}_section_{section:02d}")
        detectors.save_detector(det, stem)

        score_rows, decision_rows = [], []
        for path, _ in tests:
            text = format_score(det.score(load_wav(path), section))
            # decide on the serialized value so the files agree with each other exactly
            verdict = calibration.decide(float(text), threshold)
            score_rows.append(f"{path.name},{text}\n")
            decision_rows.append(f"{path.name},{1 if verdict == 'anomaly' else 0}\n")
        (out / SCORE_FILE.format(machine=machine, section=section)).write_text("".join(score_rows))
        (out / DECISION_FILE.format(machine=machine, section=section)).write_text("".join(decision_rows))
        log.info("%s section %02d: threshold %.6g, %d test clips", machine, section, threshold.value, len(tests))
    calibration.write_thresholds(work / "thresholds.csv", thresholds)
    return thresholds


# ---------------------------------------------------------------- evaluate

def _read_two_column(path: Path, parse):
    rows = {}
    with open(path, newline="") as fh:
        for lineno, line in enumerate(csv.reader(fh), start=1):
            if not line:
                continue
            if len(line) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 columns, got {len(line)}")
            name, value = line
            if name in rows:
                raise ReconciliationError(f"{path}:{lineno}: duplicate row for {name}")
            try:
                rows[name] = parse(value)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: cannot parse {value!r}") from None
    return rows


def _parse_score(text):
    value = float(text)
    if not np.isfinite(value):
        raise ValueError(text)
    return value


def _parse_decision(text):
    if text.strip() not in ("0", "1"):
        raise ValueError(text)
    return int(text)


def load_submission(sub_dir, truth_rows) -> list:
    """Join a submission directory with ground truth into ScoredClips."""
    sub_dir = Path(sub_dir)
    if not sub_dir.is_dir():
        raise FileNotFoundError(f"submission directory not found: {sub_dir}")
    cells: dict = {}
    for row in truth_rows:
        cells.setdefault((row["machine"], row["section"]), []).append(row)
    expected = {SCORE_FILE.format(machine=m, section=s) for m, s in cells}
    expected |= {DECISION_FILE.format(machine=m, section=s) for m, s in cells}
    present = {p.name for p in sub_dir.glob("anomaly_score_*_test.csv")}
    present |= {p.name for p in sub_dir.glob("decision_result_*_test.csv")}
    problems = []
    if present - expected:
        problems.append("unexpected files: " + ", ".join(sorted(present - expected)))

    clips = []
    for (machine, section), rows in sorted(cells.items()):
        spath = sub_dir / SCORE_FILE.format(machine=machine, section=section)
        dpath = sub_dir / DECISION_FILE.format(machine=machine, section=section)
        missing_files = [p.name for p in (spath, dpath) if not p.exists()]
        if missing_files:
            problems.append("missing files: " + ", ".join(missing_files))
            continue
        scores = _read_two_column(spath, _parse_score)
        decisions = _read_two_column(dpath, _parse_decision)
        names = {r["filename"] for r in rows}
        for label, table in (("score", scores), ("decision", decisions)):
            if set(table) - names:
                problems.append(f"extra {label} rows in {spath.name if label == 'score' else dpath.name}: "
                                + ", ".join(sorted(set(table) - names)))
            if names - set(table):
                problems.append(f"missing {label} rows for {machine} section {section:02d}: "
                                + ", ".join(sorted(names - set(table))))
        if problems:
            continue
        for r in rows:
            clips.append(
                metrics.ScoredClip(
                    r["filename"], machine, section, r["domain"], r["condition"],
                    scores[r["filename"]], "anomaly" if decisions[r["filename"]] else "normal",
                )
            )
    if problems:
        raise ReconciliationError("; ".join(problems))
    return clips


def evaluate_submission(sub_dir, ground_truth, config: PipelineConfig) -> metrics.EvalReport:
    truth = synth.read_ground_truth(ground_truth)
    clips = load_submission(sub_dir, truth)
    cells = sorted({(r["machine"], r["section"]) for r in truth})
    return metrics.evaluate(clips, config.metrics, cells)


def cmd_evaluate(sub_dir, ground_truth, config: PipelineConfig) -> metrics.EvalReport:
    report = evaluate_submission(sub_dir, ground_truth, config)
    out = Path(config.out) if config.out else Path(sub_dir) / REPORT_NAME
    out.write_text(metrics.report_to_json(report))
    sys.stdout.write(metrics.report_table(report))
    return report


# ---------------------------------------------------------------- rank

def cmd_rank(sub_dirs, ground_truth, config: PipelineConfig) -> list:
    if not sub_dirs:
        raise ConfigError("rank needs at least one submission directory")
    reports, failed = [], []
    for d in sub_dirs:
        team = Path(d).name
        try:
            reports.append((team, evaluate_submission(d, ground_truth, config)))
        except (AsdError, OSError) as exc:
            failed.append(team)
            log.error("team %s excluded: %s", team, exc)
    board = metrics.rank_submissions(reports)
    text = "rank,team,omega\n" + "".join(f"{r},{t},{o:.6f}\n" for r, t, o in board)
    if config.out:
        Path(config.out).write_text(text)
    else:
        sys.stdout.write(text)
    if not board:
        raise DataError("no submission could be evaluated: " + ", ".join(failed))
    return board


# ---------------------------------------------------------------- entry point

def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its keys")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory or file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="asdbench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    g.add_argument("--mini", action="store_true", default=None, help="desk-scale clip counts")
    g.add_argument("--machines", type=int)
    g.add_argument("--sections", type=int)

    r = sub.add_parser("run", parents=[common], help="train, calibrate and write submission CSVs")
    r.add_argument("dataset_root", nargs="?")
    r.add_argument("--detector", choices=("ae", "classifier"))
    r.add_argument("--workspace", help="where models and thresholds go (default <out>/workspace)")
    r.add_argument("--epochs", type=int)

    e = sub.add_parser("evaluate", parents=[common], help="score a submission against ground truth")
    e.add_argument("submission")
    e.add_argument("--ground-truth", required=True)

    k = sub.add_parser("rank", parents=[common], help="leaderboard over several submissions")
    k.add_argument("submissions", nargs="+")
    k.add_argument("--ground-truth", required=True)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    overrides = {"seed": args.seed, "out": args.out}
    if args.command == "generate":
        overrides.update({"synth.mini": args.mini, "synth.machines": args.machines, "synth.sections": args.sections})
    elif args.command == "run":
        overrides.update(
            {"dataset_root": args.dataset_root, "detector": args.detector,
             "workspace": args.workspace, "train.epochs": args.epochs}
        )
    try:
        config = load_config(args.config, overrides)
        if args.command == "generate":
            cmd_generate(config)
        elif args.command == "run":
            cmd_run(config)
        elif args.command == "evaluate":
            cmd_evaluate(args.submission, args.ground_truth, config)
        else:
            cmd_rank(args.submissions, args.ground_truth, config)
    except AsdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0
