"""The two baseline anomaly scorers.

* AE: mean squared reconstruction error of stacked log-mel rows.
* Section classifier: frame-averaged log-odds against the correct section,
  ``mean_t log((1 - p_t) / p_t)`` with ``p_t`` clamped to ``[eps, 1 - eps]``.

Both standardize feature dimensions with statistics of their own training rows.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nnet
from .dataset import AudioClip, DatasetIndex, load_wav
from .errors import ConfigError, DataError, InputError
from .features import FeatureConfig, extract

AE_HIDDEN = (128, 128, 128, 8, 128, 128, 128)
CLASSIFIER_HIDDEN = (128, 128)
SCORE_RULES = ("logit", "neglogprob")


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rows) -> "Standardizer":
        std = rows.std(axis=0)
        return cls(rows.mean(axis=0), np.where(std > 1e-8, std, 1.0))

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    def __call__(self, rows):
        return (rows - self.mean) / self.std


@dataclass
class AeDetector:
    net: nnet.Mlp
    feature_config: FeatureConfig
    scaler: Standardizer
    history: list = field(default_factory=list)
    shift_scores = False
    kind = "ae"

    def __post_init__(self):
        dims = self.net.dims
        if dims[0] != dims[-1] or dims[0] != self.feature_config.dim:
            raise ConfigError(f"AE dims {dims} do not match feature width {self.feature_config.dim}")

    def score(self, clip: AudioClip, section: int | None = None) -> float:
        return score_ae(self, clip)


@dataclass
class SectionClassifier:
    net: nnet.Mlp
    section_labels: tuple
    feature_config: FeatureConfig
    scaler: Standardizer
    logit_clamp: float = 1e-7
    score_rule: str = "logit"
    history: list = field(default_factory=list)
    shift_scores = True
    kind = "classifier"

    def __post_init__(self):
        self.section_labels = tuple(int(s) for s in self.section_labels)
        if self.net.dims[-1] != len(self.section_labels):
            raise ConfigError(
                f"classifier has {self.net.dims[-1]} outputs for {len(self.section_labels)} sections"
            )
        if self.score_rule not in SCORE_RULES:
            raise ConfigError(f"score_rule must be one of {SCORE_RULES}")
        if not 0 < self.logit_clamp < 0.5:
            raise ConfigError("logit_clamp must lie in (0, 0.5)")

    def probabilities(self, rows) -> np.ndarray:
        return self.net.predict(self.scaler(rows))

    def score(self, clip: AudioClip, section: int) -> float:
        return score_classifier(self, clip, section)


def _clip_rows(paths, feature_config):
    return [extract(load_wav(p), feature_config).vectors for p in paths]


def section_training_paths(index: DatasetIndex, machine: str, section: int | None = None) -> list:
    return [
        p for p, m in index.select(machine=machine, section=section, split="train", condition="normal")
    ]


def train_ae(
    index: DatasetIndex,
    machine: str,
    section: int,
    config: nnet.TrainConfig,
    feature_config: FeatureConfig = FeatureConfig(),
    hidden=AE_HIDDEN,
) -> AeDetector:
    """Fit one AE on the pooled source + target training clips of a section."""
    paths = section_training_paths(index, machine, section)
    if not paths:
        raise DataError(f"no training clips for {machine} section {section:02d}")
    rows = np.concatenate(_clip_rows(paths, feature_config))
    scaler = Standardizer.fit(rows)
    dim = feature_config.dim
    net = nnet.Mlp.create((dim, *hidden, dim), seed=config.seed, output="linear")
    trained, history = nnet.train(net, scaler(rows), config)
    return AeDetector(trained, feature_config, scaler, history)


def score_ae(det: AeDetector, clip: AudioClip) -> float:
    x = det.scaler(extract(clip, det.feature_config).vectors)
    err = det.net.predict(x) - x
    return float(np.mean(np.mean(err * err, axis=1)))


def train_classifier(
    index: DatasetIndex,
    machine: str,
    config: nnet.TrainConfig,
    feature_config: FeatureConfig = FeatureConfig(),
    hidden=CLASSIFIER_HIDDEN,
    logit_clamp: float = 1e-7,
    score_rule: str = "logit",
    shuffle_labels_seed: int | None = None,
) -> SectionClassifier:
    """Fit one section classifier per machine on all training rows of both domains.

    ``shuffle_labels_seed`` randomly permutes the row labels before training,
    which destroys the section signal; it only exists for the chance-level control.
    """
    sections = index.sections_per_machine.get(machine, ())
    sections = tuple(s for s in sections if section_training_paths(index, machine, s))
    if len(sections) < 2:
        raise ConfigError(f"{machine}: section classification needs >= 2 sections, found {len(sections)}")
    blocks, labels = [], []
    for label, section in enumerate(sections):
        for rows in _clip_rows(section_training_paths(index, machine, section), feature_config):
            blocks.append(rows)
            labels.append(np.full(rows.shape[0], label))
    rows = np.concatenate(blocks)
    labels = np.concatenate(labels)
    if shuffle_labels_seed is not None:
        labels = np.random.default_rng(shuffle_labels_seed).permutation(labels)
    scaler = Standardizer.fit(rows)
    if config.loss != "cross_entropy":
        config = nnet.TrainConfig(config.epochs, config.batch_size, config.learning_rate, config.seed, "cross_entropy")
    net = nnet.Mlp.create((feature_config.dim, *hidden, len(sections)), seed=config.seed, output="softmax")
    trained, history = nnet.train(net, scaler(rows), config, labels=labels)
    return SectionClassifier(trained, sections, feature_config, scaler, logit_clamp, score_rule, history)


def score_from_probabilities(p, eps: float = 1e-7, rule: str = "logit") -> float:
    """Average per-frame anomaly score from correct-section probabilities."""
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    if rule == "logit":
        # 1 - p rounds near the clamp; pin the log-odds to the exact bounds
        bound = math.log(eps / (1.0 - eps))
        return float(np.mean(np.clip(np.log((1.0 - p) / p), bound, -bound)))
    if rule == "neglogprob":
        return float(np.mean(-np.log(p)))
    raise ConfigError(f"unknown score rule {rule!r}")


def score_classifier(det: SectionClassifier, clip: AudioClip, true_section: int) -> float:
    if true_section not in det.section_labels:
        raise InputError(f"section {true_section} not among classifier sections {det.section_labels}")
    col = det.section_labels.index(true_section)
    probs = det.probabilities(extract(clip, det.feature_config).vectors)
    return score_from_probabilities(probs[:, col], det.logit_clamp, det.score_rule)


def training_scores(det, index: DatasetIndex, machine: str, section: int) -> np.ndarray:
    paths = section_training_paths(index, machine, section)
    if not paths:
        raise DataError(f"no training normals for {machine} section {section:02d}")
    return np.array([det.score(load_wav(p), section) for p in paths])


# Persistence: <stem>.asdm (network) + <stem>.json (everything else).

def save_detector(det, stem) -> None:
    stem = Path(stem)
    nnet.save_checkpoint(det.net, stem.with_suffix(".asdm"))
    meta = {
        "kind": det.kind,
        "feature_config": asdict(det.feature_config),
        "scaler_mean": det.scaler.mean.tolist(),
        "scaler_std": det.scaler.std.tolist(),
    }
    if det.kind == "classifier":
        meta.update(
            section_labels=list(det.section_labels),
            logit_clamp=det.logit_clamp,
            score_rule=det.score_rule,
        )
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=1) + "\n")


def load_detector(stem):
    stem = Path(stem)
    net = nnet.load_checkpoint(stem.with_suffix(".asdm"))
    meta = json.loads(stem.with_suffix(".json").read_text())
    scaler = Standardizer(np.array(meta["scaler_mean"]), np.array(meta["scaler_std"]))
    fc = FeatureConfig(**meta["feature_config"])
    if meta["kind"] == "ae":
        return AeDetector(net, fc, scaler)
    if meta["kind"] == "classifier":
        return SectionClassifier(
            net, tuple(meta["section_labels"]), fc, scaler, meta["logit_clamp"], meta["score_rule"]
        )
    raise ConfigError(f"{stem}: unknown detector kind {meta['kind']!r}")
