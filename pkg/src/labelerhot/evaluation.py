"""Average precision, imbalanced test sets and the multi-labeler AP protocol.

A test *cell* is one recording under one 3-labeler consensus. Each cell holds
all consensus-positive centres and several negative sets drawn at a fixed
negative:positive ratio. Cell AP is averaged over negative sets, recording AP
over that recording's 3-labeler combinations, and the final score over
recordings, so recordings with many labelers do not weigh more.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .consensus import EventIndex, FeatureStore, polarity_runs
from .encoding import DetectionMode, EncodingScheme, Scheme, encode_labeler
from .gbdt import Ensemble, sigmoid
from .signal_model import time_to_index

log = logging.getLogger(__name__)

AP_DEFINITION = "step-interpolated, ties grouped into one threshold"
NEGATIVE_RATIO = 20
N_NEGATIVE_SETS = 5


def average_precision(scores, labels) -> float:
    """AP = sum_k (R_k - R_{k-1}) P_k over distinct score thresholds, descending."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(np.sum(labels == 1))
    if n_pos == 0:
        raise ValueError("average precision is undefined without positive labels")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = (labels[order] == 1).astype(np.int64)
    tp = np.cumsum(y)
    seen = np.arange(1, len(s) + 1)
    # last index of every run of equal scores
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp_k = tp[last]
    prev = np.r_[0, tp_k[:-1]]
    terms = (tp_k - prev) / n_pos * (tp_k / seen[last])
    return math.fsum(terms.tolist())


def negatives_per_set(n_pos: int, ratio: int = NEGATIVE_RATIO) -> int:
    return ratio * n_pos


@dataclass
class TestCell:
    recording_id: str
    labelers: tuple[str, ...]
    positives: list[tuple[str, int]]
    negative_sets: list[list[tuple[str, int]]]


@dataclass
class TestSetBundle:
    cells: list[TestCell]
    seed: int
    ratio: int = NEGATIVE_RATIO

    @property
    def n_positive(self) -> int:
        return sum(len(c.positives) for c in self.cells)

    def refs(self) -> list[tuple[str, str, int]]:
        """Every distinct (recording, channel, centre) in the bundle, sorted."""
        out = set()
        for c in self.cells:
            out.update((c.recording_id, ch, s) for ch, s in c.positives)
            for ns in c.negative_sets:
                out.update((c.recording_id, ch, s) for ch, s in ns)
        return sorted(out)


def build_test_sets(
    index: EventIndex,
    seed: int,
    ratio: int = NEGATIVE_RATIO,
    n_sets: int = N_NEGATIVE_SETS,
    group_size: int = 3,
) -> TestSetBundle:
    manifest = index.manifest
    order = {lab.name: lab.index for lab in manifest.labeler_set}
    cells = []
    for ri, e in enumerate(manifest.recordings):
        labs = sorted(e.labelers, key=lambda n: order.get(n, len(order)))
        if len(labs) < group_size:
            log.warning("skipping %s: %d labelers < %d", e.id, len(labs), group_size)
            continue
        for ci, combo in enumerate(combinations(labs, group_size)):
            pos, neg = index.centers(e.id, list(combo))
            if not pos:
                log.warning("skipping %s %s: no consensus positives", e.id, combo)
                continue
            need = negatives_per_set(len(pos), ratio)
            if len(neg) < need:
                raise ValueError(
                    f"{e.id} {'+'.join(combo)}: {len(pos)} positives need {need} negatives "
                    f"at {ratio}:1 but only {len(neg)} available"
                )
            sets = []
            for j in range(n_sets):
                rng = np.random.default_rng(np.random.SeedSequence([int(seed), ri, ci, j]))
                pick = np.sort(rng.choice(len(neg), size=need, replace=False))
                sets.append([neg[i] for i in pick])
            cells.append(TestCell(e.id, tuple(combo), list(pos), sets))
    return TestSetBundle(cells=cells, seed=int(seed), ratio=ratio)


def _check_layout(ensemble: Ensemble, scheme: EncodingScheme, n_signal: int) -> None:
    if ensemble.scheme != scheme.scheme.value or ensemble.K != scheme.K:
        raise ValueError(
            f"model trained with {ensemble.scheme}/K={ensemble.K}, "
            f"asked to evaluate {scheme.scheme.value}/K={scheme.K}"
        )
    if ensemble.n_features != n_signal + scheme.encoded_length:
        raise ValueError(
            f"model has {ensemble.n_features} features, layout needs {n_signal + scheme.encoded_length}"
        )


def detection_scores(
    ensemble: Ensemble,
    features: np.ndarray,
    mode: DetectionMode | str,
    v1_pattern: bool = False,
) -> np.ndarray:
    """Positive-class probability for signal descriptors under a detection mode."""
    mode = DetectionMode(mode)
    scheme = EncodingScheme(ensemble.scheme, ensemble.K)
    F = np.asarray(features, dtype=np.float64)
    _check_layout(ensemble, scheme, F.shape[1])
    if mode is DetectionMode.VOTING and scheme.scheme is Scheme.NONE:
        raise ValueError("voting detection needs a labeler encoding (v1 or v2)")
    return score_variants(ensemble, F, v1_pattern)[mode.value]


def _variant_rows(scheme: EncodingScheme, v1_pattern: bool) -> np.ndarray:
    rows = [np.zeros(scheme.encoded_length)]
    for k in range(scheme.K):
        rows.append(encode_labeler(k, scheme, v1_pattern=v1_pattern))
    return np.array(rows).reshape(len(rows), scheme.encoded_length)


def score_variants(ensemble: Ensemble, features: np.ndarray, v1_pattern: bool = False) -> dict:
    """Agnostic and (when the model has labeler rows) voting scores in one pass."""
    scheme = EncodingScheme(ensemble.scheme, ensemble.K)
    F = np.asarray(features, dtype=np.float64)
    _check_layout(ensemble, scheme, F.shape[1])
    rows = _variant_rows(scheme, v1_pattern)
    if scheme.scheme is Scheme.NONE:
        rows = rows[:1]
    margins = ensemble.predict_margin_variants(F, rows)
    out = {DetectionMode.AGNOSTIC.value: sigmoid(margins[0])}
    if scheme.scheme is not Scheme.NONE:
        total = np.zeros(len(F))
        for k in range(scheme.K):
            total += sigmoid(margins[1 + k])
        out[DetectionMode.VOTING.value] = total / scheme.K
    return out


@dataclass
class EvalResult:
    mode: str
    final_ap: float
    recording_ap: dict[str, float]
    cell_ap: list[tuple[str, tuple[str, ...], list[float]]] = field(default_factory=list)


def evaluate_scores(bundle: TestSetBundle, score_of: dict[tuple[str, str, int], float], mode: str = "") -> EvalResult:
    """Apply the averaging protocol to precomputed per-centre scores."""
    per_rec: dict[str, list[float]] = {}
    cells = []
    for cell in bundle.cells:
        pos = [score_of[(cell.recording_id, ch, s)] for ch, s in cell.positives]
        aps = []
        for ns in cell.negative_sets:
            neg = [score_of[(cell.recording_id, ch, s)] for ch, s in ns]
            labels = np.r_[np.ones(len(pos)), np.zeros(len(neg))]
            aps.append(average_precision(np.r_[pos, neg], labels))
        cells.append((cell.recording_id, cell.labelers, aps))
        per_rec.setdefault(cell.recording_id, []).append(math.fsum(aps) / len(aps))
    rec_ap = {r: math.fsum(v) / len(v) for r, v in per_rec.items()}
    if not rec_ap:
        raise ValueError("test bundle has no evaluable cells")
    final = math.fsum(rec_ap.values()) / len(rec_ap)
    return EvalResult(mode=mode, final_ap=final, recording_ap=rec_ap, cell_ap=cells)


def evaluate_detector(
    ensemble: Ensemble,
    bundle: TestSetBundle,
    mode: DetectionMode | str,
    store: FeatureStore,
    v1_pattern: bool = False,
) -> EvalResult:
    mode = DetectionMode(mode)
    refs = bundle.refs()
    scores = detection_scores(ensemble, store.get(refs), mode, v1_pattern)
    return evaluate_scores(bundle, dict(zip(refs, scores.tolist())), mode.value)


@dataclass
class LabelerQuality:
    recording_id: str
    labeler: str
    precision: float
    recall: float
    precision_defined: bool = True
    n_references: int = 1


def labeler_quality(
    index: EventIndex, recording_id: str, group_size: int = 3
) -> list[LabelerQuality]:
    """Sample-level precision/recall of each labeler against the majority of
    other labelers (averaged over all `group_size` subsets of the others)."""
    e = index.entry(recording_id)
    labs = list(e.labelers)
    if len(labs) < group_size + 1:
        raise ValueError(
            f"{recording_id} has {len(labs)} labelers; quality needs at least {group_size + 1}"
        )
    spans = [(time_to_index(b0, e.fs), time_to_index(b1, e.fs)) for b0, b1 in e.blocks]

    def raster(lab: str) -> np.ndarray:
        parts = []
        for ch in e.channels:
            full = index.raster(recording_id, lab, ch)
            for s0, s1 in spans:
                seg = full[s0:s1]
                if np.any(seg < 0):
                    raise ValueError(f"{lab} leaves {recording_id}/{ch} partly unannotated")
                parts.append(seg)
        return np.concatenate(parts).astype(bool)

    masks = {lab: raster(lab) for lab in labs}
    out = []
    for lab in labs:
        others = [o for o in labs if o != lab]
        precs, recs, defined = [], [], True
        for combo in combinations(others, group_size):
            truth, _, _ = polarity_runs([masks[o] for o in combo])
            mine = masks[lab]
            tp = int(np.sum(mine & truth))
            fp = int(np.sum(mine & ~truth))
            fn = int(np.sum(~mine & truth))
            if tp + fp == 0:
                defined = False
                precs.append(0.0)
            else:
                precs.append(tp / (tp + fp))
            recs.append(tp / (tp + fn) if tp + fn else 0.0)
        out.append(
            LabelerQuality(
                recording_id,
                lab,
                math.fsum(precs) / len(precs),
                math.fsum(recs) / len(recs),
                defined,
                len(precs),
            )
        )
    return out
