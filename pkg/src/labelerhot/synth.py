"""Seeded synthetic EEG with injected events and simulated labelers.

This stands in for clinical data: recordings are pink noise plus an alpha
rhythm with parameterised transient waveforms injected per channel. Labelers
are simulated from a style (recall, confusions, boundary habits, false
positives) and tile every annotated block with adjacent windows, like human
annotators working through a block channel by channel.

The labeler noise model is a synthetic stand-in; nothing here is calibrated
against real annotators.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .signal_model import (
    MAX_WINDOW_SECONDS,
    Annotation,
    DatasetManifest,
    EventClass,
    LabelerId,
    Recording,
    RecordingEntry,
    save_annotations,
    save_manifest,
    save_recording,
)

EC = EventClass

# (min, max) duration in seconds of each injected waveform
DURATION_RANGES = {
    EC.SPIKE: (0.02, 0.07),
    EC.SHARP_WAVE: (0.07, 0.2),
    EC.SHARP_AND_SPIKE_COMPLEX: (0.25, 0.45),
    EC.SLOW_WAVE: (0.2, 0.5),
    EC.SLEEP_SPINDLE: (0.5, 1.5),
    EC.ARTIFACT: (0.1, 0.4),
}


@dataclass(frozen=True)
class SynthConfig:
    fs: int = 256
    duration: float = 120.0
    n_channels: int = 18
    background_exponent: float = 1.0
    alpha_amplitude: float = 10.0
    # events per minute per channel, split by class_mix
    event_rate: float = 50.0
    class_mix: dict = field(
        default_factory=lambda: {
            "spike": 0.28,
            "sharp_wave": 0.2,
            "sharp_and_spike_complex": 0.12,
            "slow_wave": 0.2,
            "sleep_spindle": 0.1,
            "artifact": 0.1,
        }
    )
    # peak amplitude in microvolts before the per-recording gain
    amplitude_ranges: dict = field(
        default_factory=lambda: {
            "spike": (30.0, 140.0),
            "sharp_wave": (30.0, 120.0),
            "sharp_and_spike_complex": (40.0, 140.0),
            "slow_wave": (30.0, 120.0),
            "sleep_spindle": (10.0, 35.0),
            "artifact": (80.0, 300.0),
        }
    )
    # per-recording variability ("patients")
    background_rms_range: tuple = (12.0, 30.0)
    gain_range: tuple = (0.7, 1.4)
    alpha_freq_range: tuple = (8.0, 11.0)
    # fraction of slow waves drawn with a steep leading edge
    sharp_slow_fraction: float = 0.4

    def __post_init__(self):
        if self.fs <= 0 or self.duration <= 0 or self.n_channels <= 0:
            raise ValueError("fs, duration and n_channels must be positive")
        if self.event_rate < 0:
            raise ValueError("event_rate must be >= 0")
        mix = {EventClass.parse(k): float(v) for k, v in self.class_mix.items()}
        if any(v < 0 for v in mix.values()) or not math.isclose(sum(mix.values()), 1.0, abs_tol=1e-9):
            raise ValueError("class_mix probabilities must be non-negative and sum to 1")
        for k in mix:
            if k not in DURATION_RANGES:
                raise ValueError(f"class {k.value} cannot be injected")
            lo, hi = self.amplitude_ranges[k.value]
            if not 0 <= lo <= hi:
                raise ValueError(f"bad amplitude range for {k.value}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("background_rms_range", "gain_range", "alpha_freq_range"):
            d[k] = list(d[k])
        d["amplitude_ranges"] = {k: list(v) for k, v in d["amplitude_ranges"].items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        for k in ("background_rms_range", "gain_range", "alpha_freq_range"):
            if k in d:
                d[k] = tuple(d[k])
        if "amplitude_ranges" in d:
            d["amplitude_ranges"] = {k: tuple(v) for k, v in d["amplitude_ranges"].items()}
        return cls(**d)


@dataclass(frozen=True)
class GroundTruthEvent:
    channel: str
    t_center: float
    duration: float
    event_class: EventClass
    amplitude: float = 0.0
    # amplitude relative to the recording's background rms
    snr: float = 0.0

    @property
    def t_start(self) -> float:
        return self.t_center - self.duration / 2

    @property
    def t_end(self) -> float:
        return self.t_center + self.duration / 2


@dataclass(frozen=True)
class LabelerStyle:
    """Annotation habits of one simulated labeler.

    `recall` maps class -> probability that an event of that class gets its
    own window; classes absent from the map use `default_recall`.
    `confusion` maps class -> {assigned class: probability}; absent rows are
    identity. Positive events below `min_snr` are always missed. Windows are
    widened by `padding` seconds on both sides before jitter.
    """

    recall: dict = field(default_factory=dict)
    default_recall: float = 1.0
    false_positive_rate: float = 0.0
    boundary_jitter_sd: float = 0.0
    confusion: dict = field(default_factory=dict)
    min_snr: float = 0.0
    padding: float = 0.0

    def __post_init__(self):
        for k, v in self.recall.items():
            EventClass.parse(k)
            if not 0 <= v <= 1:
                raise ValueError(f"recall for {k} must be in [0, 1]")
        if not 0 <= self.default_recall <= 1:
            raise ValueError("default_recall must be in [0, 1]")
        if self.false_positive_rate < 0 or self.boundary_jitter_sd < 0 or self.padding < 0:
            raise ValueError("rates, jitter and padding must be >= 0")
        for k, row in self.confusion.items():
            EventClass.parse(k)
            for c, p in row.items():
                EventClass.parse(c)
                if p < 0:
                    raise ValueError("confusion probabilities must be >= 0")
            if not math.isclose(sum(row.values()), 1.0, abs_tol=1e-9):
                raise ValueError(f"confusion row {k} must sum to 1")

    def recall_for(self, c: EventClass) -> float:
        return float(self.recall.get(c.value, self.default_recall))

    def confusion_row(self, c: EventClass) -> tuple[list[EventClass], np.ndarray]:
        row = self.confusion.get(c.value)
        if row is None:
            return [c], np.ones(1)
        keys = sorted(row)
        return [EventClass(k) for k in keys], np.array([row[k] for k in keys], dtype=float)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LabelerStyle":
        return cls(**d)


NOISELESS = LabelerStyle()


def default_styles() -> dict[str, LabelerStyle]:
    """Distinguishable labelers; L1-L3 annotate training data, L4 only test."""
    return {
        # careful but misses small discharges
        "L1": LabelerStyle(
            recall={"spike": 0.95, "sharp_wave": 0.9, "sharp_and_spike_complex": 0.95},
            default_recall=0.8,
            false_positive_rate=0.1,
            boundary_jitter_sd=0.015,
            confusion={"sharp_wave": {"sharp_wave": 0.85, "slow_wave": 0.15}},
            min_snr=2.2,
            padding=0.08,
        ),
        # liberal: steep slow waves and some artifacts become sharp waves
        "L2": LabelerStyle(
            recall={"spike": 0.95, "sharp_wave": 0.95, "sharp_and_spike_complex": 0.95},
            default_recall=0.9,
            false_positive_rate=0.6,
            boundary_jitter_sd=0.02,
            confusion={
                "slow_wave": {"slow_wave": 0.45, "sharp_wave": 0.55},
                "artifact": {"artifact": 0.8, "spike": 0.2},
            },
            min_snr=1.0,
            padding=0.1,
        ),
        # misses sharp waves, labels complexes as slow waves
        "L3": LabelerStyle(
            recall={"spike": 0.9, "sharp_wave": 0.6, "sharp_and_spike_complex": 0.9},
            default_recall=0.85,
            false_positive_rate=0.2,
            boundary_jitter_sd=0.03,
            confusion={
                "sharp_and_spike_complex": {"sharp_and_spike_complex": 0.6, "slow_wave": 0.4},
                "sleep_spindle": {"sleep_spindle": 0.9, "sharp_wave": 0.1},
            },
            min_snr=1.5,
            padding=0.12,
        ),
        "L4": LabelerStyle(
            recall={"spike": 0.85, "sharp_wave": 0.8, "sharp_and_spike_complex": 0.85},
            default_recall=0.85,
            false_positive_rate=0.3,
            boundary_jitter_sd=0.02,
            min_snr=2.0,
            padding=0.1,
        ),
    }


# -- waveforms ------------------------------------------------------------------


def _waveform(c: EventClass, t: np.ndarray, dur: float, amp: float, rng, sharp_slow: float):
    """Waveform of duration `dur` sampled at offsets `t` from the event centre."""
    if c is EC.SPIKE:
        s = dur / 5.0
        q = (t / s) ** 2
        return -amp * (1.0 - q) * np.exp(-q / 2.0)
    if c is EC.SHARP_WAVE:
        return -amp * _biphasic(t, dur)
    if c is EC.SHARP_AND_SPIKE_COMPLEX:
        sd = 0.012
        spike_t = t + dur / 2 - 0.04
        q = (spike_t / sd) ** 2
        spike = -amp * (1.0 - q) * np.exp(-q / 2.0)
        slow_len = dur - 0.08
        u = (t + dur / 2 - 0.08) / slow_len
        slow = np.where((u >= 0) & (u <= 1), 0.6 * amp * np.sin(np.pi * np.clip(u, 0, 1)), 0.0)
        return spike + slow
    if c is EC.SLOW_WAVE:
        u = (t + dur / 2) / dur
        inside = (u >= 0) & (u <= 1)
        u = np.clip(u, 0, 1)
        if rng.random() < sharp_slow:
            # steep onset, slow return: resembles a sharp wave at its leading edge
            k = 0.12
            w = np.where(u < k, np.sin(0.5 * np.pi * u / k), np.cos(0.5 * np.pi * (u - k) / (1 - k)))
        else:
            w = np.sin(np.pi * u)
        return np.where(inside, -amp * w, 0.0)
    if c is EC.SLEEP_SPINDLE:
        f = rng.uniform(12.0, 14.0)
        env = np.where(np.abs(t) <= dur / 2, 0.5 * (1 + np.cos(2 * np.pi * t / dur)), 0.0)
        return amp * env * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    if c is EC.ARTIFACT:
        if rng.random() < 0.5:
            # electrode pop: step then exponential decay
            tau = dur / 3
            return np.where(t >= -dur / 2, amp * np.exp(-(t + dur / 2) / tau), 0.0) * (t <= dur / 2)
        return amp * np.exp(-0.5 * (t / (dur / 4)) ** 2)
    raise ValueError(f"no waveform for {c.value}")


def _biphasic(t: np.ndarray, dur: float) -> np.ndarray:
    rise = 0.3 * dur
    u = t + dur / 2
    up = np.clip(u / rise, 0, 1)
    down = np.clip((u - rise) / (dur - rise), 0, 1)
    main = np.where(u < rise, np.sin(0.5 * np.pi * up), np.cos(0.5 * np.pi * down))
    main = np.where((u >= 0) & (u <= dur), main, 0.0)
    after_t = (u - dur) / (0.6 * dur)
    after = np.where((after_t >= 0) & (after_t <= 1), -0.25 * np.sin(np.pi * after_t), 0.0)
    return main + after


def _pink_noise(rng: np.random.Generator, n: int, fs: float, exponent: float) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / fs)
    scale = np.zeros_like(f)
    scale[1:] = f[1:] ** (-exponent / 2.0)
    x = np.fft.irfft(spec * scale, n=n)
    return x / (np.std(x) + 1e-300)


def _recording_params(config: SynthConfig, rng: np.random.Generator) -> dict:
    return {
        "background_rms": float(rng.uniform(*config.background_rms_range)),
        "gain": float(rng.uniform(*config.gain_range)),
        "alpha_freq": float(rng.uniform(*config.alpha_freq_range)),
        "alpha_amplitude": float(config.alpha_amplitude * rng.uniform(0.3, 1.3)),
    }


def generate_recording(
    config: SynthConfig, seed: int, recording_id: str = "synth"
) -> tuple[Recording, list[GroundTruthEvent]]:
    """Deterministic recording plus the events injected into it."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EE6]))
    fs = config.fs
    n = int(round(config.duration * fs))
    t_axis = np.arange(n) / fs
    params = _recording_params(config, rng)
    channels = tuple(f"C{i:02d}" for i in range(config.n_channels))
    classes = [EventClass.parse(k) for k in sorted(config.class_mix)]
    probs = np.array([config.class_mix[c.value] for c in classes], dtype=float)
    probs = probs / probs.sum()

    data = np.empty((config.n_channels, n), dtype=np.float64)
    events: list[GroundTruthEvent] = []
    for ci, ch in enumerate(channels):
        crng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EE6, ci]))
        x = params["background_rms"] * _pink_noise(crng, n, fs, config.background_exponent)
        env = 1.0 + 0.5 * _pink_noise(crng, n, fs, 3.0)
        phase = crng.uniform(0, 2 * np.pi)
        x += params["alpha_amplitude"] * np.clip(env, 0, None) * np.sin(
            2 * np.pi * params["alpha_freq"] * t_axis + phase
        )
        k = crng.poisson(config.event_rate * config.duration / 60.0)
        ch_events = []
        for _ in range(k):
            c = classes[crng.choice(len(classes), p=probs)]
            lo, hi = DURATION_RANGES[c]
            dur = float(crng.uniform(lo, hi))
            lo_a, hi_a = config.amplitude_ranges[c.value]
            amp = float(crng.uniform(lo_a, hi_a)) * params["gain"]
            center = float(crng.uniform(dur / 2, config.duration - dur / 2))
            half = dur / 2 + (0.6 * dur if c is EC.SHARP_WAVE else 0.0)
            i0 = max(0, int(math.floor((center - half) * fs)))
            i1 = min(n, int(math.ceil((center + half) * fs)) + 1)
            seg_t = t_axis[i0:i1] - center
            sign = 1.0 if c in (EC.SLEEP_SPINDLE, EC.ARTIFACT) else (1.0 if crng.random() < 0.8 else -1.0)
            x[i0:i1] += sign * _waveform(c, seg_t, dur, amp, crng, config.sharp_slow_fraction)
            ch_events.append(
                GroundTruthEvent(
                    channel=ch,
                    t_center=center,
                    duration=dur,
                    event_class=c,
                    amplitude=amp,
                    snr=amp / params["background_rms"],
                )
            )
        ch_events.sort(key=lambda e: e.t_center)
        events.extend(ch_events)
        data[ci] = x
    rec = Recording(id=recording_id, fs=fs, channels=channels, samples=data.astype(np.float32))
    return rec, events


# -- labelers ---------------------------------------------------------------------


def simulate_labeler(
    truth: Sequence[GroundTruthEvent],
    style: LabelerStyle,
    recording: Recording,
    seed: int,
    labeler: str = "L",
    blocks: Sequence[tuple[float, float]] | None = None,
    channels: Sequence[str] | None = None,
    filler_class: EventClass = EC.NORM,
) -> list[Annotation]:
    """Annotations of one simulated labeler tiling every block of every channel."""
    fs = recording.fs
    if blocks is None:
        blocks = [(0.0, recording.duration)]
    channels = list(recording.channels if channels is None else channels)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1ABE1]))
    max_len = int(math.floor(MAX_WINDOW_SECONDS * fs + 1e-9))
    by_channel: dict[str, list[GroundTruthEvent]] = {ch: [] for ch in channels}
    for e in truth:
        if e.channel in by_channel:
            by_channel[e.channel].append(e)

    out: list[Annotation] = []
    for ch in channels:
        # (start_sample, stop_sample, class) candidate windows before tiling
        marks: list[tuple[int, int, EventClass]] = []
        for e in by_channel[ch]:
            p = style.recall_for(e.event_class)
            keep = rng.random() < p
            if e.event_class.positive and e.snr < style.min_snr:
                keep = False
            opts, probs = style.confusion_row(e.event_class)
            assigned = opts[rng.choice(len(opts), p=probs / probs.sum())]
            j0, j1 = rng.normal(0.0, style.boundary_jitter_sd, size=2)
            if not keep:
                continue
            t0 = e.t_start - style.padding + j0
            t1 = e.t_end + style.padding + j1
            marks.append(_to_samples(t0, t1, fs, assigned, max_len))
        n_fp = rng.poisson(style.false_positive_rate * recording.duration / 60.0)
        for _ in range(n_fp):
            dur = rng.uniform(0.1, 0.3)
            c = float(rng.uniform(dur / 2, recording.duration - dur / 2))
            cls = EC.SPIKE if rng.random() < 0.5 else EC.SHARP_WAVE
            marks.append(_to_samples(c - dur / 2, c + dur / 2, fs, cls, max_len))
        marks.sort(key=lambda m: (m[0], m[1]))

        for b0, b1 in blocks:
            s0, s1 = int(round(b0 * fs)), int(round(b1 * fs))
            cursor = s0
            placed: list[tuple[int, int, EventClass]] = []
            for a, b, cls in marks:
                a, b = max(a, s0, cursor), min(b, s1)
                if b <= a:
                    continue
                if a > cursor:
                    placed.extend(_tile(cursor, a, max_len, filler_class))
                placed.append((a, b, cls))
                cursor = b
            if cursor < s1:
                placed.extend(_tile(cursor, s1, max_len, filler_class))
            for a, b, cls in placed:
                out.append(
                    Annotation(
                        recording_id=recording.id,
                        channel=ch,
                        labeler=labeler,
                        t_start=a / fs,
                        t_end=b / fs,
                        event_class=cls,
                    )
                )
    return out


def _to_samples(t0: float, t1: float, fs: int, cls: EventClass, max_len: int):
    a = int(round(t0 * fs))
    b = max(a + 1, int(round(t1 * fs)))
    if b - a > max_len:
        mid = (a + b) // 2
        a, b = mid - max_len // 2, mid - max_len // 2 + max_len
    return a, b, cls


def _tile(a: int, b: int, max_len: int, cls: EventClass) -> list[tuple[int, int, EventClass]]:
    k = -(-(b - a) // max_len)
    edges = [a + (b - a) * i // k for i in range(k + 1)]
    return [(edges[i], edges[i + 1], cls) for i in range(k)]


# -- datasets ----------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    n_train: int = 24
    n_test: int = 6
    train_labelers: tuple = ("L1", "L2", "L3")
    # extra test-only labelers and the test recordings (by index) they annotate
    extra_test_labelers: dict = field(default_factory=lambda: {"L4": [0, 1]})
    styles: dict = field(default_factory=default_styles)
    n_blocks: int = 10
    block_seconds: float = 10.0
    block_gap: float = 1.0

    def blocks(self) -> list[tuple[float, float]]:
        total = self.n_blocks * self.block_seconds + (self.n_blocks - 1) * self.block_gap
        start = (self.synth.duration - total) / 2
        if start < 1.0:
            raise ValueError("blocks do not fit in the recording with 1 s margins")
        step = self.block_seconds + self.block_gap
        # sample-aligned boundaries so the tiling is exact
        fs = self.synth.fs
        return [
            (round((start + i * step) * fs) / fs, round((start + i * step + self.block_seconds) * fs) / fs)
            for i in range(self.n_blocks)
        ]

    def to_dict(self) -> dict:
        return {
            "synth": self.synth.to_dict(),
            "n_train": self.n_train,
            "n_test": self.n_test,
            "train_labelers": list(self.train_labelers),
            "extra_test_labelers": {k: list(v) for k, v in self.extra_test_labelers.items()},
            "styles": {k: v.to_dict() for k, v in self.styles.items()},
            "n_blocks": self.n_blocks,
            "block_seconds": self.block_seconds,
            "block_gap": self.block_gap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        if "synth" in d:
            d["synth"] = SynthConfig.from_dict(d["synth"])
        if "styles" in d:
            d["styles"] = {k: LabelerStyle.from_dict(v) for k, v in d["styles"].items()}
        if "train_labelers" in d:
            d["train_labelers"] = tuple(d["train_labelers"])
        cfg = cls(**d)
        missing = set(cfg.train_labelers) | set(cfg.extra_test_labelers)
        missing -= set(cfg.styles)
        if missing:
            raise ValueError(f"no style given for labelers {sorted(missing)}")
        return cfg


def generate_dataset(
    config: DatasetConfig, seed: int, out_dir: str | os.PathLike
) -> tuple[DatasetManifest, DatasetManifest]:
    """Write train and test splits under `out_dir`; returns both manifests."""
    out_dir = Path(out_dir)
    blocks = config.blocks()
    all_labelers = list(config.train_labelers) + sorted(
        k for k in config.extra_test_labelers if k not in config.train_labelers
    )
    manifests = []
    for role, count, role_code in (("train", config.n_train, 1), ("test", config.n_test, 2)):
        split_dir = out_dir / role
        labeler_names = list(config.train_labelers) if role == "train" else all_labelers
        entries, annotations = [], []
        for i in range(count):
            rid = f"{role}_{i:03d}"
            rec_seed = int(np.random.SeedSequence([int(seed), role_code, i]).generate_state(1)[0])
            rec, truth = generate_recording(config.synth, rec_seed, rid)
            save_recording(rec, split_dir / "signals" / f"{rid}.json")
            labs = list(config.train_labelers)
            if role == "test":
                labs += [k for k, idx in sorted(config.extra_test_labelers.items()) if i in idx]
            for lab in labs:
                lab_seed = int(
                    np.random.SeedSequence([int(seed), role_code, i, all_labelers.index(lab)]).generate_state(1)[0]
                )
                annotations.extend(
                    simulate_labeler(truth, config.styles[lab], rec, lab_seed, lab, blocks)
                )
            _save_truth(truth, split_dir / "truth" / f"{rid}.jsonl")
            entries.append(
                RecordingEntry(
                    id=rid,
                    path=f"signals/{rid}.json",
                    fs=rec.fs,
                    duration=rec.duration,
                    channels=rec.channels,
                    labelers=tuple(labs),
                    blocks=tuple(blocks),
                )
            )
        save_annotations(annotations, split_dir / "annotations.jsonl")
        m = DatasetManifest(
            recordings=entries,
            labeler_set=[LabelerId(i, name) for i, name in enumerate(labeler_names)],
            role=role,
            annotations="annotations.jsonl",
            root=split_dir,
            meta={"generator": "labelerhot.synth", "seed": int(seed), "config": config.to_dict()},
        )
        save_manifest(m, split_dir / "manifest.json")
        manifests.append(m)
    index = {
        "train": "train/manifest.json",
        "test": "test/manifest.json",
        "seed": int(seed),
        "n_recordings": config.n_train + config.n_test,
    }
    (out_dir / "dataset.json").write_text(json.dumps(index, indent=1) + "\n", encoding="utf-8")
    return manifests[0], manifests[1]


def _save_truth(events: Sequence[GroundTruthEvent], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for e in events:
            d = asdict(e)
            d["event_class"] = e.event_class.value
            f.write(json.dumps(d) + "\n")


def dataset_digest(out_dir: str | os.PathLike) -> str:
    """SHA-256 over every file in a generated dataset directory."""
    out_dir = Path(out_dir)
    h = hashlib.sha256()
    for p in sorted(out_dir.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(out_dir)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()
