"""Domain types and on-disk formats for recordings, annotations and manifests.

A recording is stored as a small UTF-8 JSON header next to a channel-major
raw file of little-endian float32 samples. Annotations are JSON Lines, one
labeler window per line. A manifest is a single JSON document describing one
dataset split.
"""

from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAX_WINDOW_SECONDS = 2.0
RAW_DTYPE = "f32le"


class FormatError(ValueError):
    """Raised when a file on disk does not match its documented format."""


class EventClass(str, enum.Enum):
    ARTIFACT = "artifact"
    SLOW_WAVE = "slow_wave"
    SLEEP_SPINDLE = "sleep_spindle"
    NORM = "norm"
    OTHER = "other"
    SHARP_WAVE = "sharp_wave"
    SPIKE = "spike"
    SHARP_AND_SPIKE_COMPLEX = "sharp_and_spike_complex"

    @property
    def positive(self) -> bool:
        return self in _POSITIVE

    @property
    def polarity(self) -> str:
        return "P" if self.positive else "N"

    @classmethod
    def parse(cls, value: str) -> "EventClass":
        try:
            return cls(value)
        except ValueError:
            known = ", ".join(c.value for c in cls)
            raise FormatError(f"unknown event class {value!r} (expected one of: {known})") from None


_POSITIVE = frozenset(
    {EventClass.SHARP_WAVE, EventClass.SPIKE, EventClass.SHARP_AND_SPIKE_COMPLEX}
)
POSITIVE_CLASSES = tuple(c for c in EventClass if c.positive)
NEGATIVE_CLASSES = tuple(c for c in EventClass if not c.positive)


def time_to_index(t: float, fs: float) -> int:
    """Nearest sample index for time `t` (halves round up)."""
    return int(math.floor(t * fs + 0.5))


@dataclass(frozen=True)
class LabelerId:
    index: int
    name: str


@dataclass(frozen=True, eq=False)
class Recording:
    """Multi-channel EEG signal, samples shaped (n_channels, n_samples)."""

    id: str
    fs: int
    channels: tuple[str, ...]
    samples: np.ndarray

    def __post_init__(self):
        if not isinstance(self.fs, (int, np.integer)) or self.fs <= 0:
            raise ValueError(f"fs must be a positive integer, got {self.fs!r}")
        samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        if samples.ndim != 2:
            raise ValueError("samples must be 2-D (n_channels, n_samples)")
        if samples.shape[0] != len(self.channels):
            raise ValueError(
                f"{len(self.channels)} channel names but {samples.shape[0]} sample rows"
            )
        if samples.shape[1] == 0:
            raise ValueError("recording has no samples")
        if len(set(self.channels)) != len(self.channels):
            raise ValueError("channel names must be unique")
        if not np.all(np.isfinite(samples)):
            raise ValueError("recording contains non-finite samples")
        samples.setflags(write=False)
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "fs", int(self.fs))
        object.__setattr__(self, "samples", samples)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    def channel(self, name: str) -> np.ndarray:
        return self.samples[self.channels.index(name)]


def save_recording(rec: Recording, path: str | os.PathLike) -> Path:
    """Write `rec` as `<path>` (JSON header) plus a sibling `.f32` raw file."""
    path = Path(path)
    raw_path = path.with_suffix(".f32")
    header = {
        "id": rec.id,
        "fs": rec.fs,
        "channels": list(rec.channels),
        "n_samples": rec.n_samples,
        "dtype": RAW_DTYPE,
        "raw_file": raw_path.name,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    rec.samples.astype("<f4", copy=False).tofile(raw_path)
    path.write_text(json.dumps(header, indent=1) + "\n", encoding="utf-8")
    return path


def load_recording(path: str | os.PathLike) -> Recording:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"recording header not found: {path}")
    try:
        header = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: header is not valid JSON ({exc})") from exc
    missing = {"id", "fs", "channels", "n_samples", "raw_file"} - set(header)
    if missing:
        raise FormatError(f"{path}: header missing fields {sorted(missing)}")
    if header.get("dtype", RAW_DTYPE) != RAW_DTYPE:
        raise FormatError(f"{path}: unsupported dtype {header['dtype']!r}")
    raw_path = path.parent / header["raw_file"]
    if not raw_path.is_file():
        raise FileNotFoundError(f"raw sample file not found: {raw_path}")
    n_ch, n_s = len(header["channels"]), int(header["n_samples"])
    expected = n_ch * n_s * 4
    actual = raw_path.stat().st_size
    if actual != expected:
        raise FormatError(
            f"{raw_path}: size mismatch, header declares {n_ch}x{n_s} float32 "
            f"= {expected} bytes but file has {actual}"
        )
    data = np.fromfile(raw_path, dtype="<f4").reshape(n_ch, n_s)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{raw_path}: non-finite samples")
    return Recording(
        id=header["id"], fs=int(header["fs"]), channels=tuple(header["channels"]), samples=data
    )


@dataclass(frozen=True)
class Annotation:
    recording_id: str
    channel: str
    labeler: str
    t_start: float
    t_end: float
    event_class: EventClass

    def __post_init__(self):
        if not (math.isfinite(self.t_start) and math.isfinite(self.t_end)):
            raise ValueError("annotation times must be finite")
        if self.t_start < 0:
            raise ValueError(f"t_start {self.t_start} < 0")
        if self.t_end <= self.t_start:
            raise ValueError(f"t_end {self.t_end} <= t_start {self.t_start}")
        # small slack for decimal round-off of serialized times
        if self.t_end - self.t_start > MAX_WINDOW_SECONDS + 1e-9:
            raise ValueError(
                f"window of {self.t_end - self.t_start:.3f} s exceeds the "
                f"{MAX_WINDOW_SECONDS:g} s maximum event window duration"
            )

    @property
    def positive(self) -> bool:
        return self.event_class.positive

    def to_json(self) -> str:
        return json.dumps(
            {
                "recording_id": self.recording_id,
                "channel": self.channel,
                "labeler": self.labeler,
                "t_start": self.t_start,
                "t_end": self.t_end,
                "class": self.event_class.value,
            }
        )


def save_annotations(annotations: Iterable[Annotation], path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for ann in annotations:
            f.write(ann.to_json())
            f.write("\n")


def load_annotations(path: str | os.PathLike) -> list[Annotation]:
    out = []
    with Path(path).open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out.append(
                    Annotation(
                        recording_id=str(d["recording_id"]),
                        channel=str(d["channel"]),
                        labeler=str(d["labeler"]),
                        t_start=float(d["t_start"]),
                        t_end=float(d["t_end"]),
                        event_class=EventClass.parse(d["class"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return out


@dataclass(frozen=True)
class RecordingEntry:
    id: str
    path: str
    fs: int
    duration: float
    channels: tuple[str, ...]
    labelers: tuple[str, ...]
    blocks: tuple[tuple[float, float], ...]


@dataclass
class DatasetManifest:
    recordings: list[RecordingEntry]
    labeler_set: list[LabelerId]
    role: str
    annotations: str = "annotations.jsonl"
    root: Path = field(default=Path("."), compare=False)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ("train", "test"):
            raise ValueError(f"manifest role must be 'train' or 'test', got {self.role!r}")
        idx = sorted(lab.index for lab in self.labeler_set)
        if idx != list(range(len(idx))):
            raise ValueError("labeler indices must be dense and start at 0")
        if len({lab.name for lab in self.labeler_set}) != len(self.labeler_set):
            raise ValueError("labeler names must be unique")

    @property
    def K(self) -> int:
        return len(self.labeler_set)

    def labeler_index(self, name: str) -> int:
        for lab in self.labeler_set:
            if lab.name == name:
                return lab.index
        raise KeyError(f"unknown labeler {name!r}")

    def entry(self, recording_id: str) -> RecordingEntry:
        for e in self.recordings:
            if e.id == recording_id:
                return e
        raise KeyError(f"unknown recording {recording_id!r}")

    def recording_path(self, recording_id: str) -> Path:
        return self.root / self.entry(recording_id).path

    def load_recording(self, recording_id: str) -> Recording:
        return load_recording(self.recording_path(recording_id))

    def load_annotations(self) -> list[Annotation]:
        return load_annotations(self.root / self.annotations)

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "annotations": self.annotations,
            "labeler_set": [{"index": lab.index, "name": lab.name} for lab in self.labeler_set],
            "recordings": [
                {
                    "id": e.id,
                    "path": e.path,
                    "fs": e.fs,
                    "duration": e.duration,
                    "channels": list(e.channels),
                    "labelers": list(e.labelers),
                    "blocks": [list(b) for b in e.blocks],
                }
                for e in self.recordings
            ],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict, root: Path = Path(".")) -> "DatasetManifest":
        return cls(
            recordings=[
                RecordingEntry(
                    id=r["id"],
                    path=r["path"],
                    fs=int(r["fs"]),
                    duration=float(r["duration"]),
                    channels=tuple(r["channels"]),
                    labelers=tuple(r["labelers"]),
                    blocks=tuple((float(a), float(b)) for a, b in r["blocks"]),
                )
                for r in d["recordings"]
            ],
            labeler_set=[LabelerId(int(x["index"]), x["name"]) for x in d["labeler_set"]],
            role=d["role"],
            annotations=d.get("annotations", "annotations.jsonl"),
            root=root,
            meta=d.get("meta", {}),
        )


def save_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: manifest is not valid JSON ({exc})") from exc
    return DatasetManifest.from_dict(d, root=path.parent)


def rasterize(
    annotations: Iterable[Annotation], start: int, stop: int, fs: float
) -> np.ndarray:
    """Per-sample polarity over sample range [start, stop).

    Returns int8 with 1 for positive, 0 for negative and -1 where no
    annotation covers the sample. Later windows overwrite earlier ones.
    """
    out = np.full(stop - start, -1, dtype=np.int8)
    for ann in annotations:
        a = max(time_to_index(ann.t_start, fs), start) - start
        b = min(time_to_index(ann.t_end, fs), stop) - start
        if b > a:
            out[a:b] = 1 if ann.positive else 0
    return out


def group_annotations(
    annotations: Iterable[Annotation],
) -> dict[tuple[str, str, str], list[Annotation]]:
    """Index annotations by (recording_id, labeler, channel), order preserved."""
    groups: dict[tuple[str, str, str], list[Annotation]] = {}
    for ann in annotations:
        groups.setdefault((ann.recording_id, ann.labeler, ann.channel), []).append(ann)
    return groups


@dataclass
class ValidationReport:
    dangling: list[str] = field(default_factory=list)
    out_of_block: list[Annotation] = field(default_factory=list)
    coverage_gaps: list[tuple[str, str, str, int, float, float]] = field(default_factory=list)
    overlaps: list[tuple[str, str, str, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.dangling or self.out_of_block or self.coverage_gaps or self.overlaps)

    def lines(self) -> list[str]:
        out = [f"dangling: {d}" for d in self.dangling]
        out += [
            f"outside blocks: {a.recording_id}/{a.channel}/{a.labeler} [{a.t_start}, {a.t_end})"
            for a in self.out_of_block
        ]
        out += [
            f"coverage gap: {r}/{lab}/{ch} block {b} [{t0:.4f}, {t1:.4f})"
            for r, lab, ch, b, t0, t1 in self.coverage_gaps
        ]
        out += [f"overlapping windows: {r}/{lab}/{ch} at {t:.4f}" for r, lab, ch, t in self.overlaps]
        return out


def validate_manifest(
    manifest: DatasetManifest, annotations: Sequence[Annotation]
) -> ValidationReport:
    """Cross-check annotations against the manifest; never raises."""
    report = ValidationReport()
    entries = {e.id: e for e in manifest.recordings}
    known_labelers = {lab.name for lab in manifest.labeler_set}

    for e in manifest.recordings:
        for lab in e.labelers:
            if lab not in known_labelers:
                report.dangling.append(f"recording {e.id} assigns unknown labeler {lab!r}")
        for i, (b0, b1) in enumerate(e.blocks):
            if not (0 <= b0 < b1 <= e.duration + 1e-9):
                report.dangling.append(f"recording {e.id} block {i} [{b0}, {b1}) outside duration")

    groups = group_annotations(annotations)
    for (rid, lab, ch), anns in groups.items():
        e = entries.get(rid)
        if e is None:
            report.dangling.append(f"annotation references unknown recording {rid!r}")
            continue
        if lab not in e.labelers:
            report.dangling.append(f"labeler {lab!r} not assigned to recording {rid!r}")
            continue
        if ch not in e.channels:
            report.dangling.append(f"annotation references unknown channel {rid}/{ch}")
            continue
        for a in anns:
            if a.t_end > e.duration + 1e-9:
                report.dangling.append(f"annotation {rid}/{ch}/{lab} ends after recording end")
            inside = any(b0 - 1e-9 <= a.t_start and a.t_end <= b1 + 1e-9 for b0, b1 in e.blocks)
            if not inside:
                report.out_of_block.append(a)

    for e in manifest.recordings:
        for lab in e.labelers:
            if lab not in known_labelers:
                continue
            for ch in e.channels:
                anns = groups.get((e.id, lab, ch), [])
                for bi, (b0, b1) in enumerate(e.blocks):
                    s0, s1 = time_to_index(b0, e.fs), time_to_index(b1, e.fs)
                    count = np.zeros(s1 - s0, dtype=np.int32)
                    for a in anns:
                        a0 = max(time_to_index(a.t_start, e.fs), s0) - s0
                        a1 = min(time_to_index(a.t_end, e.fs), s1) - s0
                        if a1 > a0:
                            count[a0:a1] += 1
                    for g0, g1 in mask_runs(count == 0):
                        report.coverage_gaps.append(
                            (e.id, lab, ch, bi, (s0 + g0) / e.fs, (s0 + g1) / e.fs)
                        )
                    over = np.flatnonzero(count > 1)
                    if over.size:
                        report.overlaps.append((e.id, lab, ch, (s0 + over[0]) / e.fs))
    return report


def mask_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal [start, stop) runs where `mask` is True."""
    m = np.concatenate(([False], np.asarray(mask, dtype=bool), [False]))
    d = np.flatnonzero(np.diff(m.astype(np.int8)))
    return list(zip(d[::2].tolist(), d[1::2].tolist()))
