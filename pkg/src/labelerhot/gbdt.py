"""Second-order gradient-boosted decision trees for binary logistic loss.

Exact greedy split search over presorted columns, per-tree row and column
subsampling, shrinkage folded into the leaf weights. Thresholds sit at
midpoints between consecutive distinct values and an example goes left when
``x < threshold``.

Split ties (gains within a relative tolerance of the best gain) resolve to
the lowest feature index, then the lowest threshold, so repeated runs and
independent re-implementations pick the same split regardless of the
floating-point summation order used to accumulate gradients.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numba
import numpy as np

MODEL_FORMAT_VERSION = 1
TIE_RTOL = 1e-10


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 100
    max_depth: int = 5
    learning_rate: float = 0.1
    colsample_per_tree: float = 1.0
    rowsample_per_tree: float = 1.0
    reg_lambda: float = 1.0
    gamma: float = 0.0
    base_score: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        for name in ("colsample_per_tree", "rowsample_per_tree"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must be in (0, 1]")
        if self.reg_lambda < 0 or self.gamma < 0:
            raise ValueError("reg_lambda and gamma must be >= 0")
        if not 0 < self.base_score < 1:
            raise ValueError("base_score must be in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SplitInfo:
    feature: int
    threshold: float
    gain: float


@dataclass
class Tree:
    """Flat binary tree; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    default_left: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "default_left": self.default_left.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        t = cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64),
            default_left=np.asarray(d["default_left"], dtype=bool),
        )
        n = t.n_nodes
        if n == 0 or not all(len(a) == n for a in (t.threshold, t.left, t.right, t.value)):
            raise ModelFormatError("tree arrays have inconsistent lengths")
        internal = t.feature >= 0
        if np.any((t.left[internal] <= 0) | (t.left[internal] >= n)) or np.any(
            (t.right[internal] <= 0) | (t.right[internal] >= n)
        ):
            raise ModelFormatError("tree child index out of range")
        if not np.all(np.isfinite(t.threshold[internal])) or not np.all(np.isfinite(t.value)):
            raise ModelFormatError("non-finite tree parameter")
        return t


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def logistic_grad_hess(margin, label):
    """Gradient and hessian of the logistic loss w.r.t. the margin."""
    margin = np.asarray(margin, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    p = sigmoid(margin)
    e = np.exp(-np.abs(margin))
    # p(1-p) without cancellation when p is close to 1
    h = e / (1.0 + e) ** 2
    return p - label, h


def log_loss(margin, label) -> float:
    margin = np.asarray(margin, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    # log(1 + exp(m)) - y m, stable form
    return float(np.mean(np.logaddexp(0.0, margin) - label * margin))


# -- split search kernels ---------------------------------------------------


@numba.njit(cache=True)
def _gain(GL, HL, GR, HR, G, H, lam, gamma):
    return 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam)) - gamma


@numba.njit(cache=True)
def _midpoint(a, b):
    t = 0.5 * (a + b)
    if t <= a:
        t = b
    return t


@numba.njit(cache=True)
def _find_split(X, S, cols, lo, hi, g, h, lam, gamma, tie_rtol):
    """Best split of the node whose rows are S[j, lo:hi] (sorted per column j).

    Returns (column position, threshold, gain); position -1 when no split
    has positive gain.
    """
    m = S.shape[0]
    G = 0.0
    H = 0.0
    for i in range(lo, hi):
        r = S[0, i]
        G += g[r]
        H += h[r]
    best = -np.inf
    for j in range(m):
        f = cols[j]
        GL = 0.0
        HL = 0.0
        for i in range(lo, hi - 1):
            r = S[j, i]
            GL += g[r]
            HL += h[r]
            if X[r, f] != X[S[j, i + 1], f]:
                gn = _gain(GL, HL, G - GL, H - HL, G, H, lam, gamma)
                if gn > best:
                    best = gn
    if not best > 0.0:
        return -1, 0.0, best
    tol = tie_rtol * (abs(best) + G * G / (H + lam))
    for j in range(m):
        f = cols[j]
        GL = 0.0
        HL = 0.0
        for i in range(lo, hi - 1):
            r = S[j, i]
            GL += g[r]
            HL += h[r]
            a = X[r, f]
            b = X[S[j, i + 1], f]
            if a != b:
                gn = _gain(GL, HL, G - GL, H - HL, G, H, lam, gamma)
                if gn >= best - tol:
                    return j, _midpoint(a, b), gn
    return -1, 0.0, best


@numba.njit(cache=True)
def _partition(X, S, lo, hi, f, thr, buf):
    """Stable in-place partition of every column segment; returns left count."""
    m = S.shape[0]
    n_left = 0
    for j in range(m):
        k = lo
        q = 0
        for i in range(lo, hi):
            r = S[j, i]
            if X[r, f] < thr:
                S[j, k] = r
                k += 1
            else:
                buf[q] = r
                q += 1
        for i in range(q):
            S[j, k + i] = buf[i]
        n_left = k - lo
    return n_left


@numba.njit(cache=True)
def _segment_sums(S, lo, hi, g, h):
    G = 0.0
    H = 0.0
    for i in range(lo, hi):
        r = S[0, i]
        G += g[r]
        H += h[r]
    return G, H


@numba.njit(cache=True)
def _predict_margin(X, feature, threshold, left, right, value, offsets, base, out):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    for i in range(n):
        acc = base
        for t in range(n_trees):
            o = offsets[t]
            node = 0
            while feature[o + node] >= 0:
                if X[i, feature[o + node]] < threshold[o + node]:
                    node = left[o + node]
                else:
                    node = right[o + node]
            acc += value[o + node]
        out[i] = acc


@numba.njit(cache=True, boundscheck=False)
def _predict_variants_perfect(S, R, feature, threshold, value, touches_r, depth, base, out):
    """Margins of ``[S | R[v]]`` for every row of S and every variant v.

    Trees are padded to complete binary trees (children of k at 2k+1, 2k+2).
    Trees that never split on an R column are walked once and shared by all
    variants. Each output still sums its trees in order, so every variant
    equals a separate prediction on the concatenated matrix.
    """
    n, ds = S.shape
    n_var, dr = R.shape
    n_trees = feature.shape[0]
    block = 256
    xt = np.empty((n_var, ds + dr, block))
    node = np.empty(block, np.int64)
    for s in range(0, n, block):
        m = min(n, s + block) - s
        for v in range(n_var):
            for j in range(m):
                out[v, s + j] = base
                for f in range(ds):
                    xt[v, f, j] = S[s + j, f]
                for f in range(dr):
                    xt[v, ds + f, j] = R[v, f]
        for t in range(n_trees):
            ft = feature[t]
            tt = threshold[t]
            vt = value[t]
            n_walk = n_var if touches_r[t] else 1
            for v in range(n_walk):
                x = xt[v]
                for j in range(m):
                    node[j] = 0
                for _ in range(depth):
                    for j in range(m):
                        k = node[j]
                        node[j] = 2 * k + 1 + (x[ft[k], j] >= tt[k])
                if n_walk == 1:
                    for j in range(m):
                        w = vt[node[j]]
                        for u in range(n_var):
                            out[u, s + j] += w
                else:
                    for j in range(m):
                        out[v, s + j] += vt[node[j]]


def _perfect_layout(trees, depth: int):
    """Pad trees to complete depth-`depth` trees; early leaves always go left."""
    n_inner = 2**depth - 1
    n_all = 2 ** (depth + 1) - 1
    feat = np.zeros((len(trees), n_inner), dtype=np.int64)
    thr = np.full((len(trees), n_inner), np.inf)
    val = np.zeros((len(trees), n_all))
    for t, tree in enumerate(trees):
        stack = [(0, 0)]
        while stack:
            src, dst = stack.pop()
            if tree.feature[src] >= 0:
                feat[t, dst] = tree.feature[src]
                thr[t, dst] = tree.threshold[src]
                stack.append((int(tree.left[src]), 2 * dst + 1))
                stack.append((int(tree.right[src]), 2 * dst + 2))
            else:
                # walk left to the bottom level carrying the leaf value
                while dst < n_inner:
                    dst = 2 * dst + 1
                val[t, dst] = tree.value[src]
    return feat, thr, val


# deepest ensemble for which the padded layout is used at prediction time
PERFECT_LAYOUT_MAX_DEPTH = 8


# -- public API -------------------------------------------------------------


def best_split(feature_column, g, h, reg_lambda: float = 1.0, gamma: float = 0.0):
    """Best threshold for a single feature column, or None if no positive gain."""
    x = np.ascontiguousarray(feature_column, dtype=np.float64).reshape(-1, 1)
    g = np.ascontiguousarray(g, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    if len(x) < 2:
        return None
    S = np.argsort(x[:, 0], kind="stable").reshape(1, -1).astype(np.int64)
    j, thr, gain = _find_split(
        x, S, np.zeros(1, dtype=np.int64), 0, len(x), g, h, reg_lambda, gamma, TIE_RTOL
    )
    if j < 0:
        return None
    return SplitInfo(feature=0, threshold=float(thr), gain=float(gain))


def _presort(
    X: np.ndarray, rows: np.ndarray, cols: np.ndarray, order: np.ndarray | None = None
) -> np.ndarray:
    S = np.empty((len(cols), len(rows)), dtype=np.int64)
    if order is None:
        for j, c in enumerate(cols):
            S[j] = rows[np.argsort(X[rows, c], kind="stable")]
        return S
    # filtering a stable full-data order keeps ties in row order, same as above
    keep = np.zeros(X.shape[0], dtype=bool)
    keep[rows] = True
    for j, c in enumerate(cols):
        oc = order[c]
        S[j] = oc[keep[oc]]
    return S


def column_order(X: np.ndarray) -> np.ndarray:
    """Stable per-column sort order, shape (n_features, n_rows)."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)


def grow_tree(
    X: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator | None = None,
    rows: np.ndarray | None = None,
    cols: np.ndarray | None = None,
    order: np.ndarray | None = None,
) -> Tree:
    """Grow one tree depth-first with exact greedy splits.

    Row and column subsets are drawn from `rng` (without replacement) unless
    given explicitly. `order` is an optional precomputed `column_order(X)`.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    n, d = X.shape
    if n == 0:
        raise ValueError("cannot grow a tree on empty data")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if rows is None:
        rows = _subsample(rng, n, config.rowsample_per_tree)
    if cols is None:
        cols = _subsample(rng, d, config.colsample_per_tree)
    rows = np.sort(np.asarray(rows, dtype=np.int64))
    # ascending so the first near-best candidate has the lowest feature index
    cols = np.sort(np.asarray(cols, dtype=np.int64))

    lam, gamma, lr = config.reg_lambda, config.gamma, config.learning_rate
    S = _presort(X, rows, cols, order) if len(cols) else rows.reshape(1, -1).copy()
    buf = np.empty(len(rows), dtype=np.int64)

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def build(lo: int, hi: int, depth: int) -> int:
        idx = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        G, H = _segment_sums(S, lo, hi, g, h)
        value.append(-lr * G / (H + lam))
        if depth >= config.max_depth or hi - lo < 2 or len(cols) == 0:
            return idx
        j, thr, gain = _find_split(X, S, cols, lo, hi, g, h, lam, gamma, TIE_RTOL)
        if j < 0:
            return idx
        f = int(cols[j])
        n_left = _partition(X, S, lo, hi, f, thr, buf)
        feature[idx] = f
        threshold[idx] = float(thr)
        value[idx] = 0.0
        left[idx] = build(lo, lo + n_left, depth + 1)
        right[idx] = build(lo + n_left, hi, depth + 1)
        return idx

    build(0, len(rows), 0)
    k = len(feature)
    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
        default_left=np.ones(k, dtype=bool),
    )


def _subsample(rng: np.random.Generator, n: int, frac: float) -> np.ndarray:
    if frac >= 1.0:
        return np.arange(n, dtype=np.int64)
    k = max(1, int(math.floor(frac * n + 0.5)))
    return np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)


@dataclass
class Ensemble:
    trees: list[Tree]
    base_margin: float
    feature_names: list[str]
    config: TrainConfig
    scheme: str = "none"
    K: int = 0
    encoded_length: int = 0
    layout_version: int = 1
    history: list[float] = field(default_factory=list, compare=False)

    def __post_init__(self):
        self._packed = None

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def seed(self) -> int:
        return self.config.seed

    def _pack(self):
        if self._packed is None or self._packed[-1] != len(self.trees):
            sizes = [t.n_nodes for t in self.trees]
            offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
            np.cumsum(sizes, out=offsets[1:])
            if self.trees:
                cat = lambda attr: np.concatenate([getattr(t, attr) for t in self.trees])
                packed = (cat("feature"), cat("threshold"), cat("left"), cat("right"), cat("value"))
            else:
                packed = (
                    np.full(1, -1, np.int64), np.zeros(1), np.zeros(1, np.int64),
                    np.zeros(1, np.int64), np.zeros(1),
                )
            depth = max((t.depth for t in self.trees), default=0)
            perfect = None
            if 0 < depth <= PERFECT_LAYOUT_MAX_DEPTH:
                perfect = (*_perfect_layout(self.trees, depth), depth)
            self._packed = (*packed, offsets, perfect, len(self.trees))
        return self._packed

    def predict_margin(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_features:
            raise ValueError(
                f"model expects {self.n_features} features, got {X.shape[1]}"
            )
        X = np.ascontiguousarray(X)
        if not np.all(np.isfinite(X)):
            raise ValueError("prediction input contains non-finite values")
        feature, threshold, left, right, value, offsets, perfect, _ = self._pack()
        if perfect is not None:
            return self.predict_margin_variants(X, np.zeros((1, 0)))[0]
        out = np.empty(X.shape[0], dtype=np.float64)
        _predict_margin(X, feature, threshold, left, right, value, offsets, self.base_margin, out)
        return out

    def predict_margin_variants(self, S, R) -> np.ndarray:
        """Margins of ``[S | R[v]]`` for each row vector R[v]; shape (len(R), len(S)).

        Equal to calling `predict_margin` once per variant, but trees that do
        not split on the R columns are evaluated once for all variants.
        """
        S = np.ascontiguousarray(np.asarray(S, dtype=np.float64))
        R = np.ascontiguousarray(np.asarray(R, dtype=np.float64))
        if S.ndim != 2 or R.ndim != 2 or S.shape[1] + R.shape[1] != self.n_features:
            raise ValueError(
                f"model expects {self.n_features} features, got {S.shape[-1]} + {R.shape[-1]}"
            )
        if not (np.all(np.isfinite(S)) and np.all(np.isfinite(R))):
            raise ValueError("prediction input contains non-finite values")
        perfect = self._pack()[6]
        if perfect is None:
            return np.stack([
                self.predict_margin(np.concatenate([S, np.broadcast_to(r, (len(S), len(r)))], axis=1))
                for r in R
            ])
        feat, thr, val, depth = perfect
        touches = np.any((feat >= S.shape[1]) & np.isfinite(thr), axis=1)
        out = np.empty((len(R), len(S)))
        _predict_variants_perfect(S, R, feat, thr, val, touches, depth, self.base_margin, out)
        return out

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.predict_margin(X))

    def to_dict(self) -> dict:
        return {
            "version": MODEL_FORMAT_VERSION,
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "layout": {"version": self.layout_version, "names": list(self.feature_names)},
            "scheme": self.scheme,
            "K": self.K,
            "encoded_length": self.encoded_length,
            "base_margin": self.base_margin,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ensemble":
        if d.get("version") != MODEL_FORMAT_VERSION:
            raise ModelFormatError(
                f"model format version {d.get('version')!r}, expected {MODEL_FORMAT_VERSION}"
            )
        try:
            ens = cls(
                trees=[Tree.from_dict(t) for t in d["trees"]],
                base_margin=float(d["base_margin"]),
                feature_names=list(d["layout"]["names"]),
                config=TrainConfig(**d["config"]),
                scheme=d["scheme"],
                K=int(d["K"]),
                encoded_length=int(d["encoded_length"]),
                layout_version=int(d["layout"]["version"]),
            )
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"corrupted model: {exc}") from exc
        for t in ens.trees:
            if np.any(t.feature >= ens.n_features):
                raise ModelFormatError("tree references a feature outside the layout")
        return ens

    def dumps(self) -> str:
        # float repr round-trips exactly
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()


def save_model(ensemble: Ensemble, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(ensemble.dumps() + "\n", encoding="utf-8")
    return path


def load_model(path: str | os.PathLike) -> Ensemble:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    return Ensemble.from_dict(d)


def train(
    X,
    y,
    config: TrainConfig,
    feature_names: Sequence[str] | None = None,
    scheme: str = "none",
    K: int = 0,
    encoded_length: int = 0,
    layout_version: int = 1,
    track_loss: bool = False,
    callback: Callable[[int, Ensemble], None] | None = None,
) -> Ensemble:
    """Fit a boosted ensemble; deterministic for fixed (X, y, config)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a non-empty 2-D array")
    if y.shape != (X.shape[0],):
        raise ValueError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    y = y.astype(np.float64)
    if feature_names is None:
        feature_names = [f"f{i}" for i in range(X.shape[1])]
    if len(feature_names) != X.shape[1]:
        raise ValueError("feature_names length does not match X")

    rng = np.random.default_rng(config.seed)
    base = logit(config.base_score)
    ens = Ensemble(
        trees=[],
        base_margin=base,
        feature_names=list(feature_names),
        config=config,
        scheme=scheme,
        K=K,
        encoded_length=encoded_length,
        layout_version=layout_version,
    )
    margin = np.full(X.shape[0], base)
    order = column_order(X)
    if track_loss:
        ens.history.append(log_loss(margin, y))
    for k in range(config.n_trees):
        g, h = logistic_grad_hess(margin, y)
        tree = grow_tree(X, g, h, config, rng, order=order)
        ens.trees.append(tree)
        margin += _tree_margin(tree, X)
        if track_loss:
            ens.history.append(log_loss(margin, y))
        if callback is not None:
            callback(k, ens)
    return ens


def _tree_margin(tree: Tree, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0], dtype=np.float64)
    offsets = np.array([0, tree.n_nodes], dtype=np.int64)
    _predict_margin(X, tree.feature, tree.threshold, tree.left, tree.right, tree.value, offsets, 0.0, out)
    return out
