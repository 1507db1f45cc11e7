"""Deterministic synthetic machine sounds with a controlled source/target domain shift.

Every clip draws from its own PRNG stream keyed on
(seed, machine, section, domain, split, condition, clip_id), so clips can be
produced in any order or in parallel without changing a single byte.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import (
    DOMAINS,
    SAMPLE_RATE_HZ,
    AudioClip,
    ClipMetadata,
    DatasetIndex,
    build_index,
    format_filename,
    write_wav,
)
from .errors import ConfigError, InputError

N_HARMONICS = 5
NORMAL_SNR_DB = 10.0
BURST_SNR_DB = 0.0
BURST_SECONDS = 0.2
DETUNE_RATIO = 1.06
PEAK_LEVEL = 0.9
F0_JITTER = 0.02  # per-clip relative std of the fundamental
AMP_JITTER = 0.2  # per-harmonic uniform amplitude spread
GROUND_TRUTH_NAME = "ground_truth.csv"
GROUND_TRUTH_HEADER = ("filename", "machine", "section", "domain", "condition")

MACHINE_NAMES = ("fan", "valve", "gearbox", "pump", "slider", "bearing", "toycar")
ANOMALY_KINDS = ("detuned_harmonic", "broadband_burst")
NOISE_COLORS = ("white", "pink")


@dataclass(frozen=True)
class MachineSpec:
    name: str
    base_fundamental_hz: tuple  # one entry per section
    target_shift_ratio: float = 1.25
    noise_color: tuple = (("source", "white"), ("target", "pink"))
    anomaly_kind: str = "detuned_harmonic"

    def __post_init__(self):
        if not self.name or "/" in self.name:
            raise ConfigError(f"bad machine name {self.name!r}")
        for f0 in self.base_fundamental_hz:
            if not 0 < f0 < SAMPLE_RATE_HZ / 4:
                raise ConfigError(f"{self.name}: fundamental {f0} Hz outside (0, sample_rate/4)")
        if not 0.8 <= self.target_shift_ratio <= 1.25:
            raise ConfigError(f"{self.name}: target_shift_ratio {self.target_shift_ratio} outside [0.8, 1.25]")
        colors = dict(self.noise_color)
        if set(colors) != set(DOMAINS) or not set(colors.values()) <= set(NOISE_COLORS):
            raise ConfigError(f"{self.name}: noise_color must map source/target to white|pink")
        if self.anomaly_kind not in ANOMALY_KINDS:
            raise ConfigError(f"{self.name}: unknown anomaly_kind {self.anomaly_kind!r}")

    def fundamental(self, section: int, domain: str) -> float:
        f0 = self.base_fundamental_hz[section]
        return f0 * self.target_shift_ratio if domain == "target" else f0

    def noise_for(self, domain: str) -> str:
        return dict(self.noise_color)[domain]


def default_machines(n_machines: int = 2, n_sections: int = 3, target_shift_ratio: float = 1.25) -> list:
    if not 1 <= n_machines <= len(MACHINE_NAMES):
        raise ConfigError(f"n_machines must lie in 1..{len(MACHINE_NAMES)}")
    specs = []
    for i in range(n_machines):
        base = 110.0 * (1.0 + 0.17 * i)
        specs.append(
            MachineSpec(
                name=MACHINE_NAMES[i],
                base_fundamental_hz=tuple(round(base * 1.3**s, 3) for s in range(n_sections)),
                target_shift_ratio=target_shift_ratio,
                anomaly_kind=ANOMALY_KINDS[i % 2],
            )
        )
    return specs


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    machines: tuple = field(default_factory=lambda: tuple(default_machines()))
    sections_per_machine: int = 3
    n_source_train: int = 990
    n_target_train: int = 10
    n_test_per_domain_per_condition: int = 25
    clip_seconds: float = 2.0
    sample_rate_hz: int = SAMPLE_RATE_HZ

    def __post_init__(self):
        counts = (
            self.sections_per_machine,
            self.n_source_train,
            self.n_target_train,
            self.n_test_per_domain_per_condition,
        )
        if min(counts) < 1:
            raise ConfigError("all clip counts must be >= 1")
        if self.n_target_train > 0.1 * self.n_source_train:
            raise ConfigError(
                f"n_target_train={self.n_target_train} must be <= 0.1 * n_source_train={self.n_source_train}"
            )
        for spec in self.machines:
            if len(spec.base_fundamental_hz) < self.sections_per_machine:
                raise ConfigError(f"{spec.name}: fewer fundamentals than sections")
        if self.clip_seconds <= 0 or self.sample_rate_hz <= 0:
            raise ConfigError("clip_seconds and sample_rate_hz must be positive")

    @classmethod
    def mini(cls, seed: int = 0, n_machines: int = 2, n_sections: int = 3, **overrides):
        """Desk-scale preset: 100 source / 10 target training clips per section."""
        params = dict(
            seed=seed,
            machines=tuple(default_machines(n_machines, n_sections)),
            sections_per_machine=n_sections,
            n_source_train=100,
            n_target_train=10,
        )
        params.update(overrides)
        return cls(**params)


def clip_rng(seed: int, machine: str, meta: ClipMetadata, condition: str | None = None):
    condition = condition or meta.condition
    entropy = [
        seed & 0xFFFFFFFF,
        zlib.crc32(machine.encode()),
        meta.section,
        DOMAINS.index(meta.domain),
        0 if meta.split == "train" else 1,
        ("normal", "anomaly", "unknown").index(condition),
        meta.clip_id,
    ]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _power(x):
    return float(np.mean(x * x))


def _colored_noise(rng, n, color):
    white = rng.standard_normal(n)
    if color == "white":
        return white
    spectrum = np.fft.rfft(white)
    freqs = np.arange(spectrum.size, dtype=np.float64)
    freqs[0] = 1.0
    return np.fft.irfft(spectrum / np.sqrt(freqs), n)


def generate_clip(
    spec: MachineSpec,
    meta: ClipMetadata,
    rng: np.random.Generator,
    clip_seconds: float = 2.0,
    sample_rate_hz: int = SAMPLE_RATE_HZ,
) -> AudioClip:
    if meta.condition not in ("normal", "anomaly"):
        raise InputError("generate_clip needs a known condition (normal or anomaly)")
    n = int(round(clip_seconds * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    f0 = spec.fundamental(meta.section, meta.domain) * (1.0 + F0_JITTER * rng.standard_normal())
    amps = (1.0 / np.arange(1, N_HARMONICS + 1)) * rng.uniform(1.0 - AMP_JITTER, 1.0 + AMP_JITTER, N_HARMONICS)
    phases = rng.uniform(0.0, 2.0 * np.pi, N_HARMONICS)
    anomalous = meta.condition == "anomaly"

    tone = np.zeros(n)
    for h in range(1, N_HARMONICS + 1):
        freq = h * f0
        if anomalous and spec.anomaly_kind == "detuned_harmonic" and h == 3:
            freq *= DETUNE_RATIO
        if freq >= sample_rate_hz / 2:
            continue
        tone += amps[h - 1] * np.sin(2.0 * np.pi * freq * t + phases[h - 1])
    signal_power = _power(tone)

    noise = _colored_noise(rng, n, spec.noise_for(meta.domain))
    noise *= np.sqrt(signal_power / 10 ** (NORMAL_SNR_DB / 10) / _power(noise))
    x = tone + noise

    if anomalous and spec.anomaly_kind == "broadband_burst":
        width = min(n, int(round(BURST_SECONDS * sample_rate_hz)))
        start = int(rng.integers(0, n - width + 1))
        burst = rng.standard_normal(width)
        burst *= np.sqrt(signal_power / 10 ** (BURST_SNR_DB / 10) / _power(burst))
        x[start : start + width] += burst

    x *= PEAK_LEVEL / np.max(np.abs(x))
    return AudioClip(x, sample_rate_hz)


def _plan(config: SynthConfig):
    """Yield (spec, file meta, true condition) for every clip in the dataset."""
    for spec in config.machines:
        for section in range(config.sections_per_machine):
            for domain, n_train in (("source", config.n_source_train), ("target", config.n_target_train)):
                for clip_id in range(n_train):
                    meta = ClipMetadata(
                        section, domain, "train", "normal", clip_id,
                        attributes=f"f0_{spec.fundamental(section, domain):g}_noise_{spec.noise_for(domain)}",
                        machine_type=spec.name,
                    )
                    yield spec, meta, "normal"
            for domain in DOMAINS:
                k = config.n_test_per_domain_per_condition
                order_rng = np.random.default_rng(
                    [config.seed & 0xFFFFFFFF, zlib.crc32(spec.name.encode()), section, DOMAINS.index(domain), 99]
                )
                conditions = np.array(["normal"] * k + ["anomaly"] * k)[order_rng.permutation(2 * k)]
                for clip_id, condition in enumerate(conditions):
                    meta = ClipMetadata(
                        section, domain, "test", "unknown", clip_id,
                        attributes="noattr", machine_type=spec.name,
                    )
                    yield spec, meta, str(condition)


def generate_dataset(config: SynthConfig, root) -> DatasetIndex:
    """Write the dataset tree and ground-truth sidecar under ``root``.

    Test files carry condition ``unknown`` in their names; the truth lives in
    ``<root>/ground_truth.csv`` only.
    """
    root = Path(root)
    if root.exists():
        if not root.is_dir() or any(root.iterdir()):
            raise FileExistsError(f"refusing to write into non-empty {root}")
    else:
        root.mkdir()  # parent must already exist

    truth = []
    for spec, meta, condition in _plan(config):
        outdir = root / spec.name / meta.split
        outdir.mkdir(parents=True, exist_ok=True)
        rng = clip_rng(config.seed, spec.name, meta, condition)
        gen_meta = replace(meta, condition=condition)
        clip = generate_clip(spec, gen_meta, rng, config.clip_seconds, config.sample_rate_hz)
        name = format_filename(meta)
        write_wav(clip, outdir / name)
        if meta.split == "test":
            truth.append((name, spec.name, meta.section, meta.domain, condition))

    with open(root / GROUND_TRUTH_NAME, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GROUND_TRUTH_HEADER)
        writer.writerows(truth)
    return build_index(root)


def read_ground_truth(path) -> list:
    """Return ground-truth rows as dicts with ``section`` converted to int."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != GROUND_TRUTH_HEADER:
            raise InputError(f"{path}: header {reader.fieldnames} != {list(GROUND_TRUTH_HEADER)}")
        rows = []
        for row in reader:
            row["section"] = int(row["section"])
            rows.append(row)
    return rows
