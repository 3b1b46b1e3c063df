"""Consensus cropping, event centres, and training-set sampling for scenarios A-D.

Scenario summary (K labelers, n_rec recordings per realisation):

A  consensus labels on n_rec shared recordings
B  same centres as A, each labeled once per labeler with that labeler's polarity
C  same n_rec recordings, each labeler annotates a disjoint subset of blocks
D  each labeler gets its own n_rec recordings, no sharing
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from . import descriptor
from .encoding import EncodingScheme, Scheme, labeler_rows
from .signal_model import (
    Annotation,
    DatasetManifest,
    RecordingEntry,
    group_annotations,
    mask_runs,
    rasterize,
    time_to_index,
)

NEGATIVE_STEP_SECONDS = 0.1


class CoverageError(ValueError):
    pass


class InsufficientEventsError(ValueError):
    pass


class Scenario(str, Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"


@dataclass(frozen=True)
class CroppedEvent:
    """Maximal run of constant polarity, samples [s0, s1) at rate fs."""

    recording_id: str
    channel: str
    s0: int
    s1: int
    fs: int
    polarity: str
    source: str = "consensus"

    def __post_init__(self):
        if self.s1 <= self.s0:
            raise ValueError("empty cropped event")
        if self.polarity not in ("P", "N"):
            raise ValueError(f"polarity must be 'P' or 'N', got {self.polarity!r}")

    @property
    def t0(self) -> float:
        return self.s0 / self.fs

    @property
    def t1(self) -> float:
        return self.s1 / self.fs

    @property
    def positive(self) -> bool:
        return self.polarity == "P"


def polarity_runs(
    masks: Sequence[np.ndarray],
) -> tuple[np.ndarray, list[tuple[int, int]], list[tuple[int, int]]]:
    """Majority polarity per sample and its positive and negative runs.

    `masks` are per-labeler 0/1 arrays over the same samples.
    """
    votes = np.sum(np.stack(masks), axis=0)
    majority = 2 * votes > len(masks)
    return majority, mask_runs(majority), mask_runs(~majority)


def consensus_events(
    annotations: Iterable[Annotation],
    labelers: Sequence[str],
    blocks: Sequence[tuple[float, float]],
    fs: int,
    channels: Sequence[str] | None = None,
    recording_id: str | None = None,
    source: str = "consensus",
) -> list[CroppedEvent]:
    """Per-sample majority polarity of `labelers` cropped into runs per block.

    With a single labeler this yields that labeler's own events.
    """
    groups = group_annotations(a for a in annotations if recording_id in (None, a.recording_id))
    rids = sorted({r for r, _, _ in groups}) if recording_id is None else [recording_id]
    out: list[CroppedEvent] = []
    for rid in rids:
        chans = channels
        if chans is None:
            chans = sorted({c for r, _, c in groups if r == rid})
        for ch in chans:
            for bi, (b0, b1) in enumerate(blocks):
                s0, s1 = time_to_index(b0, fs), time_to_index(b1, fs)
                masks = []
                for lab in labelers:
                    m = rasterize(groups.get((rid, lab, ch), []), s0, s1, fs)
                    if np.any(m < 0):
                        gap = int(np.argmax(m < 0))
                        raise CoverageError(
                            f"labeler {lab!r} leaves channel {ch!r} of {rid!r} uncovered in "
                            f"block {bi} at t={(s0 + gap) / fs:.4f} s"
                        )
                    masks.append(m)
                _, pos, neg = polarity_runs(masks)
                runs = [(a, b, "P") for a, b in pos] + [(a, b, "N") for a, b in neg]
                runs.sort()
                for a, b, pol in runs:
                    out.append(CroppedEvent(rid, ch, s0 + a, s0 + b, fs, pol, source))
    return out


def event_centers(
    event: CroppedEvent, n_samples: int | None = None, step: float = NEGATIVE_STEP_SECONDS
) -> list[float]:
    """Centre times: the midpoint of a positive run, a grid anchored at t0 for
    negative runs. With `n_samples`, centres lacking descriptor context drop."""
    if event.positive:
        times = [(event.t0 + event.t1) / 2]
    else:
        times = []
        k = 0
        while True:
            t = event.t0 + k * step
            # small slack so decimal grid points are not lost to round-off
            if t >= event.t1 - 1e-9:
                break
            times.append(t)
            k += 1
    if n_samples is not None:
        times = [
            t for t in times if descriptor.valid_center(time_to_index(t, event.fs), n_samples, event.fs)
        ]
    return times


def center_indices(event: CroppedEvent, n_samples: int | None = None) -> list[int]:
    """Sample indices of the centres, kept inside [s0, s1).

    Rounding can push a time just below t1 onto s1, the first sample of the
    next run (or past the block end); such grid points are dropped and a
    one-sample positive run keeps its only sample.
    """
    idx = [time_to_index(t, event.fs) for t in event_centers(event)]
    if event.positive:
        idx = [min(i, event.s1 - 1) for i in idx]
    else:
        idx = [i for i in idx if i < event.s1]
    if n_samples is not None:
        idx = [i for i in idx if descriptor.valid_center(i, n_samples, event.fs)]
    return idx


# -- training sets -------------------------------------------------------------------------


@dataclass(frozen=True)
class ExampleRef:
    recording_id: str
    channel: str
    center: int
    labeler: str | None
    label: int


@dataclass
class TrainingSetSpec:
    scenario: Scenario
    rec_seed: int
    event_seed: int
    n_pos: int
    n_neg: int
    examples: list[ExampleRef]
    assignment: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.examples)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "rec_seed": self.rec_seed,
            "event_seed": self.event_seed,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "assignment": self.assignment,
            "examples": [
                [e.recording_id, e.channel, e.center, e.labeler, e.label] for e in self.examples
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingSetSpec":
        return cls(
            scenario=Scenario(d["scenario"]),
            rec_seed=int(d["rec_seed"]),
            event_seed=int(d["event_seed"]),
            n_pos=int(d["n_pos"]),
            n_neg=int(d["n_neg"]),
            examples=[ExampleRef(r, c, int(s), lab, int(y)) for r, c, s, lab, y in d["examples"]],
            assignment=d.get("assignment", {}),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


class EventIndex:
    """Consensus and per-labeler events of every recording in a manifest.

    Built once per manifest and shared by all realisations.
    """

    def __init__(self, manifest: DatasetManifest, annotations: Sequence[Annotation]):
        self.manifest = manifest
        self._groups = group_annotations(annotations)
        self._n_samples = {e.id: int(round(e.duration * e.fs)) for e in manifest.recordings}
        self._cache: dict = {}

    def entry(self, rid: str) -> RecordingEntry:
        return self.manifest.entry(rid)

    def _anns(self, rid: str, labelers: Sequence[str]) -> list[Annotation]:
        e = self.entry(rid)
        return [a for lab in labelers for ch in e.channels for a in self._groups.get((rid, lab, ch), [])]

    def events(self, rid: str, labelers: Sequence[str], blocks: Sequence[int] | None = None):
        """Cropped events of the majority of `labelers` within the chosen blocks."""
        e = self.entry(rid)
        key = (rid, tuple(labelers))
        if key not in self._cache:
            per_block = []
            for bi, blk in enumerate(e.blocks):
                src = "consensus" if len(labelers) > 1 else f"single:{labelers[0]}"
                per_block.append(
                    consensus_events(
                        self._anns(rid, labelers), labelers, [blk], e.fs, e.channels, rid, src
                    )
                )
            self._cache[key] = per_block
        per_block = self._cache[key]
        chosen = range(len(e.blocks)) if blocks is None else sorted(blocks)
        return [ev for bi in chosen for ev in per_block[bi]]

    def centers(self, rid: str, labelers: Sequence[str], blocks: Sequence[int] | None = None):
        """(positive, negative) candidate centres as lists of (channel, sample)."""
        key = ("centers", rid, tuple(labelers), None if blocks is None else tuple(sorted(blocks)))
        if key not in self._cache:
            n = self._n_samples[rid]
            pos, neg = [], []
            for ev in self.events(rid, labelers, blocks):
                target = pos if ev.positive else neg
                target.extend((ev.channel, c) for c in center_indices(ev, n))
            self._cache[key] = (pos, neg)
        return self._cache[key]

    def raster(self, rid: str, labeler: str, channel: str) -> np.ndarray:
        """Whole-recording polarity raster of one labeler (-1 where unannotated)."""
        key = ("raster", rid, labeler, channel)
        if key not in self._cache:
            e = self.entry(rid)
            n = self._n_samples[rid]
            self._cache[key] = rasterize(self._groups.get((rid, labeler, channel), []), 0, n, e.fs)
        return self._cache[key]

    def polarity_at(self, rid: str, labeler: str, channel: str, sample: int) -> int:
        v = int(self.raster(rid, labeler, channel)[sample])
        if v < 0:
            raise CoverageError(f"{labeler} has no annotation at {rid}/{channel} sample {sample}")
        return v


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def _take(cands: list, n: int, rng: np.random.Generator, what: str) -> list:
    if len(cands) < n:
        raise InsufficientEventsError(
            f"{what}: need {n} but only {len(cands)} available (deficit {n - len(cands)})"
        )
    # prefix of one permutation, so larger n extends smaller n
    perm = rng.permutation(len(cands))
    return [cands[i] for i in perm[:n]]


def sample_scenario(
    index: EventIndex,
    scenario: Scenario | str,
    rec_seed: int,
    event_seed: int,
    K: int = 3,
    n_rec: int = 8,
    n_pos: int = 100,
    n_neg: int = 100,
    labelers: Sequence[str] | None = None,
) -> TrainingSetSpec:
    scenario = Scenario(scenario)
    manifest = index.manifest
    if labelers is None:
        labelers = [lab.name for lab in sorted(manifest.labeler_set, key=lambda l: l.index)][:K]
    labelers = list(labelers)
    if len(labelers) != K:
        raise ValueError(f"need {K} labelers, manifest provides {len(labelers)}")
    if K < 3 and scenario in (Scenario.A, Scenario.B):
        raise ValueError(f"scenario {scenario.value} needs a 3-labeler consensus, got K={K}")
    ids = [e.id for e in manifest.recordings]
    eligible = [r for r in ids if all(lab in index.entry(r).labelers for lab in labelers)]
    need = K * n_rec if scenario is Scenario.D else n_rec
    if len(eligible) < need:
        raise InsufficientEventsError(
            f"scenario {scenario.value} needs {need} recordings annotated by {labelers}, "
            f"found {len(eligible)}"
        )
    rec_rng = _rng(rec_seed, 0xA55)
    perm = rec_rng.permutation(len(eligible))
    examples: list[ExampleRef] = []
    assignment: dict = {}

    def draw(rid: str, who: Sequence[str], blocks, tag: int, label_src: str | None):
        pos, neg = index.centers(rid, who, blocks)
        ri = ids.index(rid)
        what = f"{rid} ({'+'.join(who)})"
        p = _take(pos, n_pos, _rng(event_seed, ri, tag, 1), f"positive centres in {what}")
        q = _take(neg, n_neg, _rng(event_seed, ri, tag, 0), f"negative centres in {what}")
        return [(ch, c, 1) for ch, c in p] + [(ch, c, 0) for ch, c in q]

    if scenario in (Scenario.A, Scenario.B, Scenario.C):
        chosen = sorted(eligible[i] for i in perm[:n_rec])
        for rid in chosen:
            if scenario is Scenario.C:
                nb = len(index.entry(rid).blocks)
                if nb < K:
                    raise InsufficientEventsError(f"{rid} has {nb} blocks, fewer than K={K}")
                bperm = _rng(rec_seed, ids.index(rid), 0xB10C).permutation(nb)
                parts = {lab: sorted(int(b) for b in bperm[k::K]) for k, lab in enumerate(labelers)}
                assignment[rid] = parts
                for k, lab in enumerate(labelers):
                    for ch, c, y in draw(rid, [lab], parts[lab], k + 1, lab):
                        examples.append(ExampleRef(rid, ch, c, lab, y))
                continue
            assignment[rid] = list(labelers)
            for ch, c, y in draw(rid, labelers, None, 0, None):
                if scenario is Scenario.A:
                    examples.append(ExampleRef(rid, ch, c, None, y))
                else:
                    for lab in labelers:
                        examples.append(
                            ExampleRef(rid, ch, c, lab, index.polarity_at(rid, lab, ch, c))
                        )
    else:
        for k, lab in enumerate(labelers):
            mine = sorted(eligible[i] for i in perm[k * n_rec : (k + 1) * n_rec])
            for rid in mine:
                assignment[rid] = [lab]
                for ch, c, y in draw(rid, [lab], None, k + 1, lab):
                    examples.append(ExampleRef(rid, ch, c, lab, y))
    return TrainingSetSpec(scenario, int(rec_seed), int(event_seed), n_pos, n_neg, examples, assignment)


def realisations(n_rec_samplings: int = 5, n_event_samplings: int = 5, base_seed: int = 0):
    """(rec_seed, event_seed) pairs of the 5 x 5 sampling protocol."""
    return [
        (base_seed * 1000 + r, base_seed * 1000 + 100 + e)
        for r in range(n_rec_samplings)
        for e in range(n_event_samplings)
    ]


# -- features ----------------------------------------------------------------------------


class FeatureStore:
    """Lazily computed, cached descriptors keyed by (recording, channel, centre)."""

    def __init__(self, manifest: DatasetManifest, ar_order: int = descriptor.AR_ORDER):
        self.manifest = manifest
        self.ar_order = ar_order
        self._signals: dict[str, object] = {}
        self._rows: dict[tuple[str, str, int], np.ndarray] = {}

    def _recording(self, rid: str):
        if rid not in self._signals:
            self._signals[rid] = self.manifest.load_recording(rid)
        return self._signals[rid]

    def __len__(self):
        return len(self._rows)

    def get(self, refs: Sequence[tuple[str, str, int]]) -> np.ndarray:
        missing: dict[tuple[str, str], set[int]] = {}
        for rid, ch, c in refs:
            if (rid, ch, c) not in self._rows:
                missing.setdefault((rid, ch), set()).add(int(c))
        for (rid, ch), cs in sorted(missing.items()):
            rec = self._recording(rid)
            cs = sorted(cs)
            try:
                F = descriptor.describe_events(rec.channel(ch), cs, rec.fs, self.ar_order)
            except descriptor.ContextError as exc:
                raise descriptor.ContextError(f"{rid}/{ch}: {exc}") from exc
            for c, row in zip(cs, F):
                self._rows[(rid, ch, c)] = row
        if not refs:
            return np.empty((0, descriptor.N_FEATURES))
        return np.stack([self._rows[(rid, ch, int(c))] for rid, ch, c in refs])


def build_training_set(
    spec: TrainingSetSpec,
    scheme: EncodingScheme,
    store: FeatureStore,
) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix ``[descriptor | labeler rows]`` and 0/1 labels."""
    names = {lab.name: lab.index for lab in store.manifest.labeler_set}
    F = store.get([(e.recording_id, e.channel, e.center) for e in spec.examples])
    if scheme.scheme is Scheme.NONE:
        X = F
    else:
        idx = np.array([-1 if e.labeler is None else names[e.labeler] for e in spec.examples])
        if np.any(idx >= scheme.K):
            raise ValueError("labeler index exceeds the encoding's K")
        X = np.concatenate([F, labeler_rows(idx, scheme)], axis=1)
    y = np.array([e.label for e in spec.examples], dtype=np.int64)
    return X, y


def feature_names(scheme: EncodingScheme, labeler_names: Sequence[str] | None = None) -> list[str]:
    return list(descriptor.FEATURE_NAMES) + scheme.row_names(labeler_names)
