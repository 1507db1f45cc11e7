"""Clip metadata, the file-name grammar, PCM16 WAV I/O and the dataset index.

File names follow::

    section_<NN>_<domain>_<split>_<condition>_<NNNN>[_<attributes>].wav

and a dataset root is laid out as ``<root>/<machine>/<split>/<file>.wav``.
"""

from __future__ import annotations

import os
import re
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, IntegrityError, ParseError

DOMAINS = ("source", "target")
SPLITS = ("train", "test")
CONDITIONS = ("normal", "anomaly", "unknown")
SAMPLE_RATE_HZ = 16000
MAX_SECTION = 5

_ATTR_RE = re.compile(r"^[A-Za-z0-9_.\-]*$")
_PCM_SCALE = 32768.0


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE_HZ

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("AudioClip needs a non-empty 1-D sample array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    def __eq__(self, other):
        if not isinstance(other, AudioClip):
            return NotImplemented
        return self.sample_rate_hz == other.sample_rate_hz and np.array_equal(
            self.samples, other.samples
        )

    __hash__ = None


@dataclass(frozen=True)
class ClipMetadata:
    section: int
    domain: str
    split: str
    condition: str
    clip_id: int
    attributes: str = ""
    machine_type: str = ""

    def __post_init__(self):
        if not 0 <= self.section <= MAX_SECTION:
            raise ValueError(f"section must lie in 0..{MAX_SECTION}, got {self.section}")
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown condition {self.condition!r}")
        if self.clip_id < 0:
            raise ValueError(f"clip_id must be non-negative, got {self.clip_id}")
        if self.split == "train" and self.condition != "normal":
            raise ValueError("training clips must be condition=normal")


def format_filename(meta: ClipMetadata) -> str:
    if not _ATTR_RE.match(meta.attributes):
        raise ValueError(f"attributes {meta.attributes!r} contain characters outside [A-Za-z0-9_.-]")
    stem = (
        f"section_{meta.section:02d}_{meta.domain}_{meta.split}_"
        f"{meta.condition}_{meta.clip_id:04d}"
    )
    if meta.attributes:
        stem += "_" + meta.attributes
    return stem + ".wav"


def parse_filename(name: str, machine_type: str = "") -> ClipMetadata:
    """Parse a clip file name (directory components are ignored)."""
    base = os.path.basename(name)
    if not base.endswith(".wav"):
        raise ParseError(f"{base!r}: missing '.wav' extension")
    parts = base[: -len(".wav")].split("_", 6)
    if len(parts) < 6:
        raise ParseError(f"{base!r}: expected at least 6 '_'-separated tokens, got {len(parts)}")
    head, section, domain, split, condition, clip_id = parts[:6]
    attributes = parts[6] if len(parts) == 7 else ""

    if head != "section":
        raise ParseError(f"{base!r}: bad leading token {head!r}, expected 'section'")
    if not (len(section) == 2 and section.isdigit()):
        raise ParseError(f"{base!r}: bad section token {section!r}")
    if int(section) > MAX_SECTION:
        raise ParseError(f"{base!r}: section token {section!r} out of range 00..{MAX_SECTION:02d}")
    if domain not in DOMAINS:
        raise ParseError(f"{base!r}: unknown domain token {domain!r}")
    if split not in SPLITS:
        raise ParseError(f"{base!r}: unknown split token {split!r}")
    if condition not in CONDITIONS:
        raise ParseError(f"{base!r}: unknown condition token {condition!r}")
    if not (len(clip_id) >= 4 and clip_id.isdigit()):
        raise ParseError(f"{base!r}: bad clip id token {clip_id!r}")
    if not _ATTR_RE.match(attributes):
        raise ParseError(f"{base!r}: bad attributes token {attributes!r}")
    try:
        return ClipMetadata(
            section=int(section),
            domain=domain,
            split=split,
            condition=condition,
            clip_id=int(clip_id),
            attributes=attributes,
            machine_type=machine_type,
        )
    except ValueError as exc:
        raise ParseError(f"{base!r}: {exc}") from None


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Round half away from zero, then clamp to the int16 range."""
    scaled = np.asarray(samples, dtype=np.float64) * _PCM_SCALE
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(rounded, -32768, 32767).astype("<i2")


def write_wav(clip: AudioClip, path) -> None:
    pcm = quantize_pcm16(clip.samples)
    with wave.open(os.fspath(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(clip.sample_rate_hz))
        fh.writeframes(pcm.tobytes())


def load_wav(path, expected_rate_hz: int | None = SAMPLE_RATE_HZ) -> AudioClip:
    """Read a mono PCM16 WAV file into an AudioClip scaled by 1/32768.

    Pass ``expected_rate_hz=None`` to accept any sample rate.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    try:
        fh = wave.open(path, "rb")
    except wave.Error as exc:
        # the stdlib reports e.g. "unknown format: 3" for IEEE-float data
        raise FormatError(f"{path}: unsupported WAV header ({exc}); need PCM format tag 1") from None
    except EOFError:
        raise FormatError(f"{path}: truncated RIFF header") from None
    with fh:
        if fh.getnchannels() != 1:
            raise FormatError(f"{path}: channels={fh.getnchannels()}, expected 1")
        if fh.getsampwidth() != 2:
            raise FormatError(f"{path}: bits_per_sample={8 * fh.getsampwidth()}, expected 16")
        if expected_rate_hz is not None and fh.getframerate() != expected_rate_hz:
            raise FormatError(
                f"{path}: sample_rate={fh.getframerate()}, expected {expected_rate_hz}"
            )
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    if pcm.size == 0:
        raise FormatError(f"{path}: empty data chunk")
    return AudioClip(pcm.astype(np.float64) / _PCM_SCALE, rate)


def _sort_key(item):
    path, meta = item
    return (meta.machine_type, meta.section, meta.domain, meta.clip_id, meta.split, path.name)


@dataclass
class DatasetIndex:
    machines: tuple = ()
    sections_per_machine: dict = field(default_factory=dict)
    clips: list = field(default_factory=list)

    @classmethod
    def from_clips(cls, clips: Iterable[tuple]) -> "DatasetIndex":
        items = sorted(((Path(p), m) for p, m in clips), key=_sort_key)
        seen = {}
        for path, meta in items:
            key = (meta.machine_type, meta.section, meta.domain, meta.split, meta.clip_id)
            if key in seen:
                raise IntegrityError(f"duplicate clip key {key}: {seen[key]} and {path}")
            seen[key] = path
        sections: dict = {}
        for _, meta in items:
            sections.setdefault(meta.machine_type, set()).add(meta.section)
        return cls(
            machines=tuple(sorted(sections)),
            sections_per_machine={m: tuple(sorted(s)) for m, s in sorted(sections.items())},
            clips=items,
        )

    def __len__(self):
        return len(self.clips)

    def select(self, machine=None, section=None, split=None, domain=None, condition=None):
        """Return the (path, meta) pairs matching every given field."""
        out = []
        for path, meta in self.clips:
            if machine is not None and meta.machine_type != machine:
                continue
            if section is not None and meta.section != section:
                continue
            if split is not None and meta.split != split:
                continue
            if domain is not None and meta.domain != domain:
                continue
            if condition is not None and meta.condition != condition:
                continue
            out.append((path, meta))
        return out

    def cells(self) -> list:
        return [(m, s) for m in self.machines for s in self.sections_per_machine[m]]


def build_index(root, listdir=os.listdir) -> DatasetIndex:
    """Scan ``<root>/<machine>/<split>/`` for conformant clip files.

    ``listdir`` is injectable so tests can shuffle directory enumeration.
    """
    root = Path(root)
    if not root.exists():
        return DatasetIndex()
    clips = []
    for machine in listdir(root):
        mdir = root / machine
        if not mdir.is_dir():
            continue
        for split in listdir(mdir):
            sdir = mdir / split
            if not sdir.is_dir() or split not in SPLITS:
                continue
            for name in listdir(sdir):
                if not name.endswith(".wav"):
                    continue
                meta = parse_filename(name, machine_type=machine)
                if meta.split != split:
                    raise IntegrityError(f"{sdir / name}: split token {meta.split!r} under {split}/ directory")
                clips.append((sdir / name, meta))
    return DatasetIndex.from_clips(clips)


def load_clips(paths: Sequence) -> list:
    return [load_wav(p) for p in paths]
