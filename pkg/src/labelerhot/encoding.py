"""One-hot labeler rows appended to signal descriptors.

``v1`` adds one row per labeler. ``v2`` adds the same rows followed by one row
per unordered labeler pair, in lexicographic order (0,1), (0,2), ...; a
labeler sets every pair row that contains it. At detection time the rows are
either zeroed (agnostic) or filled once per labeler and the scores averaged
(voting).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from itertools import combinations

import numpy as np


class Scheme(str, Enum):
    NONE = "none"
    V1 = "v1"
    V2 = "v2"


class DetectionMode(str, Enum):
    AGNOSTIC = "agnostic"
    VOTING = "voting"


@dataclass(frozen=True)
class EncodingScheme:
    scheme: Scheme
    K: int

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.K < 0 or (self.scheme is not Scheme.NONE and self.K < 1):
            raise ValueError(f"invalid labeler count K={self.K} for scheme {self.scheme.value}")

    @property
    def encoded_length(self) -> int:
        if self.scheme is Scheme.NONE:
            return 0
        if self.scheme is Scheme.V1:
            return self.K
        return self.K + self.K * (self.K - 1) // 2

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(combinations(range(self.K), 2))

    def row_names(self, labeler_names=None) -> list[str]:
        names = list(labeler_names) if labeler_names is not None else [str(i) for i in range(self.K)]
        if self.scheme is Scheme.NONE:
            return []
        out = [f"lab_{n}" for n in names]
        if self.scheme is Scheme.V2:
            out += [f"lab_{names[i]}+{names[j]}" for i, j in self.pairs]
        return out


def encode_labeler(labeler: int, scheme: EncodingScheme, v1_pattern: bool = False) -> np.ndarray:
    """Labeler rows for one labeler index.

    With `v1_pattern` under v2 only the single-labeler row is set.
    """
    if scheme.scheme is Scheme.NONE:
        return np.zeros(0)
    if not 0 <= labeler < scheme.K:
        raise IndexError(f"labeler index {labeler} out of range for K={scheme.K}")
    out = np.zeros(scheme.encoded_length)
    out[labeler] = 1.0
    if scheme.scheme is Scheme.V2 and not v1_pattern:
        for k, (i, j) in enumerate(scheme.pairs):
            if labeler in (i, j):
                out[scheme.K + k] = 1.0
    return out


def _check(features: np.ndarray, n_signal: int | None) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if n_signal is not None and x.shape[-1] != n_signal:
        raise ValueError(f"expected {n_signal} signal features, got {x.shape[-1]}")
    return x


def assemble_training_example(
    features, labeler: int | None, scheme: EncodingScheme, n_signal: int | None = None
) -> np.ndarray:
    """``[signal features | labeler rows]``; `labeler=None` gives all-zero rows.

    Works on a single vector or a matrix of row vectors.
    """
    x = _check(features, n_signal)
    rows = (
        np.zeros(scheme.encoded_length) if labeler is None else encode_labeler(labeler, scheme)
    )
    rows = np.broadcast_to(rows, x.shape[:-1] + rows.shape)
    return np.concatenate([x, rows], axis=-1)


def assemble_agnostic(features, scheme: EncodingScheme, n_signal: int | None = None) -> np.ndarray:
    return assemble_training_example(features, None, scheme, n_signal)


def assemble_voting_set(
    features, scheme: EncodingScheme, n_signal: int | None = None, v1_pattern: bool = False
) -> list[np.ndarray]:
    """One assembled copy of `features` per labeler."""
    if scheme.scheme is Scheme.NONE:
        raise ValueError("voting detection needs a labeler encoding (v1 or v2)")
    x = _check(features, n_signal)
    out = []
    for k in range(scheme.K):
        rows = encode_labeler(k, scheme, v1_pattern=v1_pattern)
        rows = np.broadcast_to(rows, x.shape[:-1] + rows.shape)
        out.append(np.concatenate([x, rows], axis=-1))
    return out


def labeler_rows(labels: np.ndarray, scheme: EncodingScheme) -> np.ndarray:
    """Stacked rows for an array of labeler indices; -1 means no labeler."""
    labels = np.asarray(labels, dtype=np.int64)
    table = np.zeros((scheme.K + 1, scheme.encoded_length))
    for k in range(scheme.K):
        table[k] = encode_labeler(k, scheme)
    # index -1 picks the trailing all-zero row
    return table[labels]
