"""Challenge scoring: per-domain AUC, per-section pAUC, the harmonic-mean official score, ranking.

Pair comparisons use a strict step, H(x) = 1 iff x > 0, so tied pairs earn
nothing (no Mann-Whitney half credit). Counts are integers until the final
division, which keeps results identical to a brute-force double loop.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field

import numpy as np

from .dataset import DOMAINS
from .errors import CompletenessError, ConfigError, MetricUndefinedError


@dataclass(frozen=True)
class ScoredClip:
    filename: str
    machine: str
    section: int
    domain: str
    condition: str
    score: float
    decision: str = "normal"

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"{self.filename}: score must be finite")
        if self.condition not in ("normal", "anomaly"):
            raise ValueError(f"{self.filename}: ground truth must be normal|anomaly, got {self.condition!r}")
        if self.decision not in ("normal", "anomaly"):
            raise ValueError(f"{self.filename}: decision must be normal|anomaly, got {self.decision!r}")


@dataclass(frozen=True)
class MetricsConfig:
    p: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ConfigError(f"p must lie in (0, 1), got {self.p}")


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class EvalReport:
    auc: dict = field(default_factory=dict)  # (machine, section, domain) -> float
    pauc: dict = field(default_factory=dict)  # (machine, section) -> float
    official_score: float | None = None
    confusion: dict = field(default_factory=dict)  # (machine, section) -> Confusion
    p: float = 0.1


def count_exceeding(anomalous, normal) -> int:
    """Number of (anomalous, normal) pairs with anomalous > normal."""
    normal = np.sort(np.asarray(normal, dtype=np.float64))
    return int(np.searchsorted(normal, np.asarray(anomalous, dtype=np.float64), side="left").sum())


def _split(clips):
    normals = [c for c in clips if c.condition == "normal"]
    anomalies = [c for c in clips if c.condition == "anomaly"]
    return normals, anomalies


def auc_domain(clips, domain: str) -> float:
    """AUC of one domain's normals against every anomaly of the section."""
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}")
    normals, anomalies = _split(clips)
    normals = [c.score for c in normals if c.domain == domain]
    if not normals or not anomalies:
        raise MetricUndefinedError(
            f"AUC[{domain}] needs >= 1 normal in the domain and >= 1 anomaly; got {len(normals)} and {len(anomalies)}"
        )
    hits = count_exceeding([c.score for c in anomalies], normals)
    return hits / (len(normals) * len(anomalies))


def auc_section(clips) -> float:
    """AUC with both domains' normals pooled."""
    normals, anomalies = _split(clips)
    if not normals or not anomalies:
        raise MetricUndefinedError("section AUC needs at least one normal and one anomalous clip")
    hits = count_exceeding([c.score for c in anomalies], [c.score for c in normals])
    return hits / (len(normals) * len(anomalies))


def n_top_normals(n_normals: int, p: float) -> int:
    # round away representation noise such as 0.1 * 30 = 3.0000000000000004 before flooring
    return math.floor(round(p * n_normals, 9))


def pauc_section(clips, config: MetricsConfig = MetricsConfig()) -> float:
    """Partial AUC over FPR in [0, p]: the top floor(p * N-) normals against all anomalies."""
    normals, anomalies = _split(clips)
    n_top = n_top_normals(len(normals), config.p)
    if n_top < 1:
        need = math.ceil(1.0 / config.p - 1e-9)
        raise MetricUndefinedError(
            f"pAUC needs floor(p * N-) >= 1: have N- = {len(normals)}, need at least {need} normals at p={config.p}"
        )
    if not anomalies:
        raise MetricUndefinedError("pAUC needs at least one anomalous clip")
    ranked = sorted(normals, key=lambda c: (-c.score, c.filename))[:n_top]
    hits = count_exceeding([c.score for c in anomalies], [c.score for c in ranked])
    return hits / (n_top * len(anomalies))


def harmonic_mean(values) -> float:
    values = list(values)
    if not values:
        raise ValueError("harmonic mean of nothing")
    if any(v == 0 for v in values):
        return 0.0
    return statistics.harmonic_mean(values)


def official_score(report: EvalReport, cells) -> float:
    """Harmonic mean over every per-domain AUC and per-section pAUC.

    ``cells`` is an iterable of (machine, section) or a DatasetIndex.
    """
    if hasattr(cells, "cells"):
        cells = cells.cells()
    cells = list(cells)
    values, missing = [], []
    for machine, section in cells:
        for domain in DOMAINS:
            key = (machine, section, domain)
            if key in report.auc:
                values.append(report.auc[key])
            else:
                missing.append(f"AUC{key}")
        if (machine, section) in report.pauc:
            values.append(report.pauc[(machine, section)])
        else:
            missing.append(f"pAUC{(machine, section)}")
    if missing:
        raise CompletenessError("missing metric cells: " + ", ".join(missing))
    return harmonic_mean(values)


def decision_stats(clips) -> dict:
    """Confusion counts per (machine, section); 'anomaly' is the positive class."""
    out: dict = {}
    for c in clips:
        key = (c.machine, c.section)
        tp, fp, tn, fn = out.get(key, (0, 0, 0, 0))
        said_anomaly = c.decision == "anomaly"
        is_anomaly = c.condition == "anomaly"
        if said_anomaly and is_anomaly:
            tp += 1
        elif said_anomaly:
            fp += 1
        elif is_anomaly:
            fn += 1
        else:
            tn += 1
        out[key] = (tp, fp, tn, fn)
    return {k: Confusion(*v) for k, v in sorted(out.items())}


def evaluate(clips, config: MetricsConfig = MetricsConfig(), cells=None) -> EvalReport:
    by_cell: dict = {}
    for c in clips:
        by_cell.setdefault((c.machine, c.section), []).append(c)
    if cells is None:
        cells = sorted(by_cell)
    report = EvalReport(p=config.p)
    for cell in cells:
        group = by_cell.get(cell, [])
        for domain in DOMAINS:
            report.auc[(*cell, domain)] = auc_domain(group, domain)
        report.pauc[cell] = pauc_section(group, config)
    report.official_score = official_score(report, cells)
    report.confusion = decision_stats(clips)
    return report


def rank_submissions(reports) -> list:
    """[(rank, team, omega)] by omega descending, ties by team id ascending."""
    ordered = sorted(reports, key=lambda tr: (-tr[1].official_score, tr[0]))
    return [(i + 1, team, rep.official_score) for i, (team, rep) in enumerate(ordered)]


# Report serialization: fixed key order, every real printed with 6 decimals.

def _fmt(x: float) -> str:
    return f"{x:.6f}"


def report_to_json(report: EvalReport) -> str:
    lines = ["{"]
    lines.append(f'  "p": {_fmt(report.p)},')
    lines.append(f'  "official_score": {_fmt(report.official_score)},')
    lines.append('  "sections": [')
    cells = sorted(report.pauc)
    for i, (machine, section) in enumerate(cells):
        conf = report.confusion.get((machine, section), Confusion())
        entry = (
            f'    {{"machine": "{machine}", "section": {section}, '
            f'"auc_source": {_fmt(report.auc[(machine, section, "source")])}, '
            f'"auc_target": {_fmt(report.auc[(machine, section, "target")])}, '
            f'"pauc": {_fmt(report.pauc[(machine, section)])}, '
            f'"tp": {conf.tp}, "fp": {conf.fp}, "tn": {conf.tn}, "fn": {conf.fn}, '
            f'"precision": {_fmt(conf.precision)}, "recall": {_fmt(conf.recall)}, "f1": {_fmt(conf.f1)}}}'
        )
        lines.append(entry + ("," if i < len(cells) - 1 else ""))
    lines.append("  ]")
    lines.append("}")
    return "\n".join(lines) + "\n"


def report_table(report: EvalReport) -> str:
    """Plain-text table, one row per section: source and target AUC, pAUC and F1 in percent."""
    head = f"{'machine':<10} {'sec':>3} {'AUC src':>8} {'AUC tgt':>8} {'pAUC':>8} {'F1':>6}"
    rows = [head, "-" * len(head)]
    for machine, section in sorted(report.pauc):
        label = f"{section:02d}"
        conf = report.confusion.get((machine, section), Confusion())
        rows.append(
            f"{machine:<10} {label:>3}"
            f" "
            f"{100 * report.auc[(machine, section, 'source')]:>8.2f} "
            f"{100 * report.auc[(machine, section, 'target')]:>8.2f} "
            f"{100 * report.pauc[(machine, section)]:>8.2f} "
            f"{100 * conf.f1:>6.2f}"
        )
    rows.append("-" * len(head))
    rows.append(f"official score (harmonic mean): {100 * report.official_score:.2f}")
    return "\n".join(rows) + "\n"
