"""Scenario experiments: sample, train, evaluate over seeds and a parameter grid.

Every (scenario, scheme, grid point, realisation) is a *cell*. A finished cell
leaves a JSON marker under ``cells/``; rerunning the same experiment skips it.
Reports are pure functions of the cell markers, so an interrupted run that is
resumed writes the same files as an uninterrupted one.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .consensus import (
    EventIndex,
    FeatureStore,
    Scenario,
    TrainingSetSpec,
    build_training_set,
    feature_names,
    sample_scenario,
)
from .encoding import DetectionMode, EncodingScheme, Scheme
from .evaluation import AP_DEFINITION, TestSetBundle, build_test_sets, evaluate_scores, score_variants
from .gbdt import Ensemble, TrainConfig, save_model, train
from .signal_model import load_manifest

log = logging.getLogger(__name__)

OUT_ENV = "LABELERHOT_OUT"

# full grid searched for every scenario (24 configurations)
FULL_GRID = {
    "max_depth": [5, 10],
    "learning_rate": [0.005, 0.01],
    "colsample_per_tree": [0.1, 0.2, 0.5],
    "rowsample_per_tree": [0.5],
    "n_trees": [1000, 2000],
}

REDUCED_GRID = {
    "max_depth": [5],
    "learning_rate": [0.01],
    "colsample_per_tree": [0.2],
    "rowsample_per_tree": [0.5],
    "n_trees": [500],
}


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "labelerhot_out"))


def expand_grid(grid: dict) -> list[dict]:
    """Cartesian product of a {param: [values]} grid, keys in sorted order."""
    if not grid:
        raise ValueError("parameter grid is empty")
    keys = sorted(grid)
    for k in keys:
        if not isinstance(grid[k], (list, tuple)) or not grid[k]:
            raise ValueError(f"grid entry {k!r} must be a nonempty list")
    out = [dict(zip(keys, vals)) for vals in product(*(grid[k] for k in keys))]
    for params in out:
        TrainConfig(**params)
    return out


def _hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ExperimentConfig:
    train_manifest: str
    test_manifest: str
    scenarios: list[str] = field(default_factory=lambda: ["A", "B", "C", "D"])
    schemes: list[str] = field(default_factory=lambda: ["none", "v1", "v2"])
    modes: list[str] = field(default_factory=lambda: ["agnostic", "voting"])
    grid: dict = field(default_factory=lambda: dict(FULL_GRID))
    rec_seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    event_seeds: list[int] = field(default_factory=lambda: [100, 101, 102, 103, 104])
    # explicit (scenario, scheme) pairs; when set, overrides scenarios x schemes
    pairs: list | None = None
    n_rec: int = 8
    n_pos: int = 100
    n_neg: int = 100
    K: int = 3
    test_seed: int = 0

    def __post_init__(self):
        for s in self.scenarios:
            Scenario(s)
        for s in self.schemes:
            Scheme(s)
        for m in self.modes:
            DetectionMode(m)
        if self.pairs is not None:
            self.pairs = [[Scenario(a).value, Scheme(b).value] for a, b in self.pairs]
        expand_grid(self.grid)
        if len(set(self.rec_seeds)) != len(self.rec_seeds) or len(set(self.event_seeds)) != len(
            self.event_seeds
        ):
            raise ValueError("seeds must be distinct")
        if not self.rec_seeds or not self.event_seeds:
            raise ValueError("at least one recording seed and one event seed are needed")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "ExperimentConfig":
        d = dict(d)
        if base is not None:
            for k in ("train_manifest", "test_manifest"):
                if k in d and not Path(d[k]).is_absolute():
                    d[k] = str(base / d[k])
        return cls(**d)

    def digest(self) -> str:
        return _hash(self.to_dict())

    def scenario_schemes(self) -> list[tuple[str, str]]:
        """Distinct (scenario, scheme) curves; A is run once, without labeler rows."""
        if self.pairs is not None:
            raw = [tuple(p) for p in self.pairs]
        else:
            raw = [(s, m) for s in self.scenarios for m in self.schemes]
        out = []
        for s, m in raw:
            if s == "A":
                m = "none"
            if (s, m) not in out:
                out.append((s, m))
        return out

    def realisations(self) -> list[tuple[int, int]]:
        return [(r, e) for r in self.rec_seeds for e in self.event_seeds]


@dataclass(frozen=True)
class Cell:
    scenario: str
    scheme: str
    grid_index: int
    rec_seed: int
    event_seed: int

    @property
    def name(self) -> str:
        return f"{self.scenario}-{self.scheme}-g{self.grid_index:02d}-r{self.rec_seed}-e{self.event_seed}"

    def train_seed(self) -> int:
        ss = np.random.SeedSequence([self.rec_seed, self.event_seed, self.grid_index])
        return int(ss.generate_state(1)[0] & 0x7FFFFFFF)


def plan_cells(config: ExperimentConfig) -> list[Cell]:
    n_grid = len(expand_grid(config.grid))
    return [
        Cell(s, m, g, r, e)
        for s, m in config.scenario_schemes()
        for g in range(n_grid)
        for r, e in config.realisations()
    ]


class Workspace:
    """Loaded manifests, event indexes, descriptor caches and the test bundle."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.train = load_manifest(config.train_manifest)
        self.test = load_manifest(config.test_manifest)
        self.train_index = EventIndex(self.train, self.train.load_annotations())
        self.test_index = EventIndex(self.test, self.test.load_annotations())
        self.train_store = FeatureStore(self.train)
        self.test_store = FeatureStore(self.test)
        self._bundle: TestSetBundle | None = None
        self._test_features = None
        self._specs: dict = {}

    @property
    def bundle(self) -> TestSetBundle:
        if self._bundle is None:
            self._bundle = build_test_sets(self.test_index, self.config.test_seed)
        return self._bundle

    def test_features(self):
        if self._test_features is None:
            refs = self.bundle.refs()
            self._test_features = (refs, self.test_store.get(refs))
        return self._test_features

    def spec(self, scenario: str, rec_seed: int, event_seed: int, n_pos=None, n_neg=None) -> TrainingSetSpec:
        c = self.config
        n_pos = c.n_pos if n_pos is None else n_pos
        n_neg = c.n_neg if n_neg is None else n_neg
        key = (scenario, rec_seed, event_seed, n_pos, n_neg)
        if key not in self._specs:
            self._specs[key] = sample_scenario(
                self.train_index, scenario, rec_seed, event_seed, c.K, c.n_rec, n_pos, n_neg
            )
        return self._specs[key]

    def labeler_names(self) -> list[str]:
        return [lab.name for lab in sorted(self.train.labeler_set, key=lambda l: l.index)]


def train_on_spec(
    spec: TrainingSetSpec,
    scheme: str,
    K: int,
    store: FeatureStore,
    params: dict,
    seed: int,
    labeler_names: Sequence[str] | None = None,
) -> Ensemble:
    enc = EncodingScheme(scheme, K if scheme != "none" else 0)
    X, y = build_training_set(spec, enc, store)
    names = None if labeler_names is None else list(labeler_names)[: enc.K]
    return train(
        X,
        y,
        TrainConfig(**params, seed=seed),
        feature_names=feature_names(enc, names),
        scheme=enc.scheme.value,
        K=enc.K,
        encoded_length=enc.encoded_length,
    )


def train_cell(ws: Workspace, cell: Cell, params: dict, n_pos=None, n_neg=None):
    spec = ws.spec(cell.scenario, cell.rec_seed, cell.event_seed, n_pos, n_neg)
    model = train_on_spec(
        spec, cell.scheme, ws.config.K, ws.train_store, params, cell.train_seed(), ws.labeler_names()
    )
    return spec, model


def evaluate_model(ws: Workspace, model: Ensemble, modes: Sequence[str]) -> dict:
    refs, F = ws.test_features()
    out = {}
    scores_by_mode = score_variants(model, F)
    for mode in modes:
        if mode not in scores_by_mode:
            continue
        scores = scores_by_mode[mode]
        res = evaluate_scores(ws.bundle, dict(zip(refs, scores.tolist())), mode)
        out[mode] = {"final_ap": res.final_ap, "recording_ap": res.recording_ap}
    return out


def run_cell(ws: Workspace, cell: Cell, out_dir: Path, n_pos=None, n_neg=None) -> dict:
    params = expand_grid(ws.config.grid)[cell.grid_index]
    marker = {"cell": asdict(cell), "name": cell.name, "params": params}
    try:
        spec, model = train_cell(ws, cell, params, n_pos, n_neg)
        path = save_model(model, out_dir / "models" / f"{cell.name}.json")
        marker.update(
            status="ok",
            spec_digest=spec.digest(),
            model_digest=model.digest(),
            model_path=str(path.relative_to(out_dir)),
            results=evaluate_model(ws, model, ws.config.modes),
        )
    except Exception as exc:  # recorded per cell, other cells continue
        log.error("cell %s failed: %s", cell.name, exc)
        marker.update(status="error", error=f"{type(exc).__name__}: {exc}")
    return marker


def _marker_path(out_dir: Path, cell: Cell) -> Path:
    return out_dir / "cells" / f"{cell.name}.json"


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")
    tmp.replace(path)


def _load_marker(path: Path, digest: str) -> dict | None:
    if not path.exists():
        return None
    try:
        m = json.loads(path.read_text())
    except json.JSONDecodeError:
        return None
    if m.get("experiment_digest") != digest or m.get("status") != "ok":
        return None
    return m


_WORKER_WS: Workspace | None = None


def _worker_init(config_dict: dict):
    global _WORKER_WS
    _WORKER_WS = Workspace(ExperimentConfig.from_dict(config_dict))


def _worker_run(args):
    cell, out_dir, n_pos, n_neg = args
    return run_cell(_WORKER_WS, cell, Path(out_dir), n_pos, n_neg)


def run_experiment(
    config: ExperimentConfig,
    out_dir: str | os.PathLike,
    jobs: int = 1,
    n_pos: int | None = None,
    n_neg: int | None = None,
    progress: Callable[[str], None] | None = None,
    workspace: Workspace | None = None,
) -> dict:
    """Run every missing cell, then write the reports. Returns the summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = config.digest() if n_pos is None else _hash([config.to_dict(), n_pos, n_neg])
    cells = plan_cells(config)
    markers: dict[str, dict] = {}
    todo = []
    for cell in cells:
        m = _load_marker(_marker_path(out_dir, cell), digest)
        if m is None:
            todo.append(cell)
        else:
            markers[cell.name] = m
    if progress:
        progress(f"{len(cells)} cells, {len(cells) - len(todo)} already done")

    def finish(cell: Cell, marker: dict):
        marker["experiment_digest"] = digest
        _write_json(_marker_path(out_dir, cell), marker)
        markers[cell.name] = marker
        if progress:
            ap = marker.get("results", {}).get("agnostic", {}).get("final_ap")
            progress(f"{cell.name}: {marker['status']}" + (f" AP={ap:.4f}" if ap is not None else ""))

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(jobs, initializer=_worker_init, initargs=(config.to_dict(),)) as pool:
            args = [(c, str(out_dir), n_pos, n_neg) for c in todo]
            for cell, marker in zip(todo, pool.map(_worker_run, args)):
                finish(cell, marker)
    else:
        ws = workspace or Workspace(config)
        for cell in todo:
            finish(cell, run_cell(ws, cell, out_dir, n_pos, n_neg))
    ordered = [markers[c.name] for c in cells]
    return write_reports(config, ordered, out_dir, digest)


# -- reports -------------------------------------------------------------------


def _quartiles(xs: list[float]) -> tuple[float, float, float]:
    if len(xs) == 1:
        return xs[0], xs[0], xs[0]
    q = statistics.quantiles(xs, n=4, method="inclusive")
    return q[0], statistics.median(xs), q[2]


def summarize(config: ExperimentConfig, markers: list[dict]) -> list[dict]:
    """Best grid point per (scenario, scheme, mode) by median final AP."""
    groups: dict = {}
    for m in markers:
        if m["status"] != "ok":
            continue
        c = m["cell"]
        for mode, res in m["results"].items():
            key = (c["scenario"], c["scheme"], mode)
            groups.setdefault(key, {}).setdefault(c["grid_index"], []).append(res["final_ap"])
    rows = []
    for s, sch in config.scenario_schemes():
        for mode in config.modes:
            per_grid = groups.get((s, sch, mode))
            if not per_grid:
                continue
            # ties go to the lower grid index
            best = max(sorted(per_grid), key=lambda g: statistics.median(per_grid[g]))
            aps = per_grid[best]
            q1, med, q3 = _quartiles(aps)
            rows.append(
                {
                    "scenario": s,
                    "scheme": sch,
                    "mode": mode,
                    "best_grid_index": best,
                    "params": expand_grid(config.grid)[best],
                    "n": len(aps),
                    "median_ap": med,
                    "q1_ap": q1,
                    "q3_ap": q3,
                    "mean_ap": math.fsum(aps) / len(aps),
                    "min_ap": min(aps),
                    "max_ap": max(aps),
                }
            )
    return rows


def report_rows(markers: list[dict], digest: str = "") -> list[dict]:
    rows = []
    for m in markers:
        c = m["cell"]
        base = {
            "version": __version__,
            "experiment_digest": digest,
            "scenario": c["scenario"],
            "scheme": c["scheme"],
            "grid_index": c["grid_index"],
            "config": json.dumps(m["params"], sort_keys=True),
            "rec_seed": c["rec_seed"],
            "event_seed": c["event_seed"],
            "status": m["status"],
        }
        if m["status"] != "ok":
            rows.append({**base, "mode": "", "final_ap": "", "recording_ap": "", "error": m.get("error", "")})
            continue
        for mode, res in m["results"].items():
            rows.append(
                {
                    **base,
                    "mode": mode,
                    "final_ap": repr(res["final_ap"]),
                    "recording_ap": json.dumps(res["recording_ap"], sort_keys=True),
                    "error": "",
                }
            )
    return rows


CSV_FIELDS = [
    "version", "experiment_digest", "scenario", "scheme", "mode", "grid_index", "config", "rec_seed", "event_seed",
    "status", "final_ap", "recording_ap", "error",
]
SUMMARY_FIELDS = [
    "version", "experiment_digest", "scenario", "scheme", "mode", "best_grid_index", "params", "n",
    "median_ap", "q1_ap", "q3_ap", "mean_ap", "min_ap", "max_ap",
]


def to_csv(rows: list[dict], fields: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (json.dumps(v, sort_keys=True) if isinstance(v, dict) else
                        repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _manifest_digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_reports(config: ExperimentConfig, markers: list[dict], out_dir: Path, digest: str) -> dict:
    summary = summarize(config, markers)
    stamp = {"version": __version__, "experiment_digest": digest}
    (out_dir / "report.csv").write_text(to_csv(report_rows(markers, digest), CSV_FIELDS))
    (out_dir / "summary.csv").write_text(to_csv([{**stamp, **r} for r in summary], SUMMARY_FIELDS))
    provenance = {
        "tool": "labelerhot",
        "version": __version__,
        "experiment_digest": digest,
        "config": config.to_dict(),
        "train_manifest_sha256": _manifest_digest(config.train_manifest),
        "test_manifest_sha256": _manifest_digest(config.test_manifest),
        "ap_definition": AP_DEFINITION,
        "cells": [
            {k: m.get(k) for k in ("name", "status", "spec_digest", "model_digest", "model_path", "error")}
            for m in markers
        ],
    }
    doc = {"provenance": provenance, "summary": summary, "cells": markers}
    _write_json(out_dir / "report.json", doc)
    failed = [m["name"] for m in markers if m["status"] != "ok"]
    return {"summary": summary, "failed": failed, "out_dir": str(out_dir)}


def sweep_volume(
    config: ExperimentConfig,
    counts: Sequence[int],
    out_dir: str | os.PathLike,
    jobs: int = 1,
    progress: Callable[[str], None] | None = None,
) -> list[dict]:
    """Median AP of the best grid point as the per-recording sample count grows."""
    counts = list(counts)
    if not counts or any(b <= a for a, b in zip(counts, counts[1:])) or counts[0] < 1:
        raise ValueError("counts must be positive and strictly ascending")
    out_dir = Path(out_dir)
    ws = Workspace(config) if jobs <= 1 else None
    table = []
    for n in counts:
        res = run_experiment(
            config, out_dir / f"count_{n}", jobs, n_pos=n, n_neg=n, progress=progress, workspace=ws
        )
        for r in res["summary"]:
            table.append({"count": n, **{k: r[k] for k in ("scenario", "scheme", "mode", "median_ap", "n")}})
    (out_dir / "volume.csv").write_text(
        to_csv(table, ["count", "scenario", "scheme", "mode", "median_ap", "n"])
    )
    return table


def load_experiment_config(path: str | os.PathLike) -> ExperimentConfig:
    path = Path(path)
    return ExperimentConfig.from_dict(json.loads(path.read_text()), base=path.parent)


def manifests_for(root: str | os.PathLike) -> tuple[str, str]:
    """(train, test) manifest paths of a generated dataset directory."""
    root = Path(root)
    if root.is_file():
        root = root.parent.parent if root.parent.name in ("train", "test") else root.parent
    train_m, test_m = root / "train" / "manifest.json", root / "test" / "manifest.json"
    for p in (train_m, test_m):
        if not p.exists():
            raise FileNotFoundError(f"no manifest at {p}")
    return str(train_m), str(test_m)
