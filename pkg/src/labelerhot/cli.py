"""Command line entry point: ``labelerhot <command> ...``.

Output directories default to ``$LABELERHOT_OUT`` (or ``./labelerhot_out``).
All configuration files are JSON.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from . import experiment as ex
from .consensus import EventIndex, FeatureStore, Scenario, TrainingSetSpec, sample_scenario
from .encoding import DetectionMode, Scheme
from .evaluation import AP_DEFINITION, build_test_sets, evaluate_detector, labeler_quality
from .gbdt import load_model, save_model
from .signal_model import load_manifest
from .synth import DatasetConfig, dataset_digest, generate_dataset

log = logging.getLogger("labelerhot")


class UsageError(Exception):
    pass


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}")


def _out(args, default_name: str) -> Path:
    return Path(args.out) if args.out else ex.default_out_dir() / default_name


def _grid(spec: str | None) -> dict:
    if spec is None or spec == "full":
        return dict(ex.FULL_GRID)
    if spec == "reduced":
        return dict(ex.REDUCED_GRID)
    p = Path(spec)
    return _read_json(spec) if p.exists() else json.loads(spec)


def _experiment_config(args) -> ex.ExperimentConfig:
    if args.config:
        d = _read_json(args.config)
        base = Path(args.config).parent
    else:
        d, base = {}, None
    if args.manifest:
        d["train_manifest"], d["test_manifest"] = ex.manifests_for(args.manifest)
    if "train_manifest" not in d:
        raise UsageError("give --manifest or a --config naming train_manifest/test_manifest")
    if args.scenario:
        d["scenarios"] = args.scenario
        d.pop("pairs", None)
    if args.scheme:
        d["schemes"] = args.scheme
        d.pop("pairs", None)
    if args.mode:
        d["modes"] = args.mode
    if args.grid:
        d["grid"] = _grid(args.grid)
    if args.seed is not None:
        d["test_seed"] = args.seed
    return ex.ExperimentConfig.from_dict(d, base=base)


def _print_summary(summary: list[dict]) -> None:
    print(f"{'scenario':<9}{'scheme':<7}{'mode':<10}{'grid':>5}{'n':>4}{'median AP':>11}{'q1':>9}{'q3':>9}")
    for r in summary:
        print(
            f"{r['scenario']:<9}{r['scheme']:<7}{r['mode']:<10}{r['best_grid_index']:>5}{r['n']:>4}"
            f"{r['median_ap']:>11.4f}{r['q1_ap']:>9.4f}{r['q3_ap']:>9.4f}"
        )


def cmd_synth(args) -> int:
    cfg = DatasetConfig.from_dict(_read_json(args.config)) if args.config else DatasetConfig()
    out = _out(args, "dataset")
    generate_dataset(cfg, args.seed if args.seed is not None else 0, out)
    print(out / "train" / "manifest.json")
    print(out / "test" / "manifest.json")
    log.info("dataset digest %s", dataset_digest(out))
    return 0


def cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    res = ex.run_experiment(cfg, _out(args, "experiment"), jobs=args.jobs, progress=log.info)
    _print_summary(res["summary"])
    if res["failed"]:
        print(f"{len(res['failed'])} cells failed: {', '.join(res['failed'])}", file=sys.stderr)
        return 1
    return 0


def cmd_sweep_volume(args) -> int:
    cfg = _experiment_config(args)
    table = ex.sweep_volume(cfg, args.counts, _out(args, "sweep"), jobs=args.jobs, progress=log.info)
    print(f"{'count':>6} {'scenario':<9}{'scheme':<7}{'mode':<10}{'median AP':>10}")
    for r in table:
        print(f"{r['count']:>6} {r['scenario']:<9}{r['scheme']:<7}{r['mode']:<10}{r['median_ap']:>10.4f}")
    return 0


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    index = EventIndex(manifest, manifest.load_annotations())
    if args.spec:
        spec = TrainingSetSpec.from_dict(_read_json(args.spec))
    else:
        if not args.scenario:
            raise UsageError("train needs --scenario or --spec")
        seed = args.seed if args.seed is not None else 0
        spec = sample_scenario(
            index, args.scenario[0], seed, args.event_seed, K=manifest.K,
            n_rec=args.n_rec, n_pos=args.n_pos, n_neg=args.n_neg,
        )
    params = _read_json(args.params) if args.params and Path(args.params).exists() else (
        json.loads(args.params) if args.params else ex.expand_grid(ex.REDUCED_GRID)[0]
    )
    scheme = (args.scheme or ["none"])[0]
    if spec.scenario is Scenario.A:
        scheme = "none"
    cell = ex.Cell(spec.scenario.value, scheme, 0, spec.rec_seed, spec.event_seed)
    labelers = [lab.name for lab in sorted(manifest.labeler_set, key=lambda l: l.index)]
    model = ex.train_on_spec(
        spec, scheme, manifest.K, FeatureStore(manifest), params, cell.train_seed(), labelers
    )
    out = Path(args.out) if args.out else ex.default_out_dir() / f"{cell.name}.json"
    save_model(model, out)
    spec_path = out.with_name(out.stem + ".spec.json")
    spec_path.write_text(json.dumps(spec.to_dict(), sort_keys=True) + "\n")
    print(out)
    return 0


def cmd_eval(args) -> int:
    if not args.model:
        raise UsageError("eval needs at least one --model")
    manifest = load_manifest(args.manifest)
    index = EventIndex(manifest, manifest.load_annotations())
    bundle = build_test_sets(index, args.seed if args.seed is not None else 0)
    store = FeatureStore(manifest)
    modes = args.mode or ["agnostic", "voting"]
    rows = []
    for path in args.model:
        model = load_model(path)
        for mode in modes:
            if mode == "voting" and model.scheme == Scheme.NONE.value:
                log.warning("%s has no labeler rows; skipping voting", path)
                continue
            res = evaluate_detector(model, bundle, mode, store)
            rows.append(
                {
                    "version": __version__,
                    "test_seed": bundle.seed,
                    "model": str(path),
                    "model_digest": model.digest(),
                    "scheme": model.scheme,
                    "mode": mode,
                    "final_ap": res.final_ap,
                    "recording_ap": res.recording_ap,
                }
            )
            print(f"{path}\t{mode}\t{res.final_ap:.4f}")
    out = _out(args, "eval")
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.csv").write_text(
        ex.to_csv(rows, ["version", "test_seed", "model", "model_digest", "scheme", "mode", "final_ap", "recording_ap"])
    )
    prov = {"version": __version__, "test_seed": bundle.seed, "ap_definition": AP_DEFINITION,
            "test_manifest": str(args.manifest)}
    (out / "eval.json").write_text(json.dumps({"provenance": prov, "rows": rows}, sort_keys=True, indent=1) + "\n")
    return 0


def cmd_labeler_report(args) -> int:
    manifest = load_manifest(args.manifest)
    index = EventIndex(manifest, manifest.load_annotations())
    rows = []
    for e in manifest.recordings:
        if len(e.labelers) < 4:
            log.info("skipping %s: %d labelers", e.id, len(e.labelers))
            continue
        for q in labeler_quality(index, e.id):
            rows.append(
                {
                    "version": __version__,
                    "recording": q.recording_id,
                    "labeler": q.labeler,
                    "precision": q.precision,
                    "recall": q.recall,
                    "precision_defined": q.precision_defined,
                }
            )
    if not rows:
        raise UsageError("no recording has 4 or more labelers")
    text = ex.to_csv(rows, ["version", "recording", "labeler", "precision", "recall", "precision_defined"])
    out = _out(args, "labelers.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="labelerhot", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, manifest_help="dataset directory or manifest"):
        sp.add_argument("--manifest", help=manifest_help)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help=f"output path (default under ${ex.OUT_ENV})")
        sp.add_argument("--scenario", action="append", choices=[s.value for s in Scenario])
        sp.add_argument("--scheme", action="append", choices=[s.value for s in Scheme])
        sp.add_argument("--mode", action="append", choices=[m.value for m in DetectionMode])
        sp.add_argument("--grid", help="'full', 'reduced', a JSON file or inline JSON")
        sp.add_argument("--jobs", type=int, default=1)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--config", help="dataset configuration JSON")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("experiment", help="run scenario experiments")
    common(sp)
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("sweep-volume", help="median AP against examples per recording")
    common(sp)
    sp.add_argument("--counts", type=int, nargs="+", default=[25, 50, 100])
    sp.set_defaults(func=cmd_sweep_volume)

    sp = sub.add_parser("train", help="train one model")
    common(sp, "training manifest")
    sp.add_argument("--event-seed", type=int, default=100)
    sp.add_argument("--n-rec", type=int, default=8)
    sp.add_argument("--n-pos", type=int, default=100)
    sp.add_argument("--n-neg", type=int, default=100)
    sp.add_argument("--spec", help="training-set JSON written by a previous run")
    sp.add_argument("--params", help="tree parameters as JSON file or inline JSON")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate models on a test manifest")
    common(sp, "test manifest")
    sp.add_argument("--model", action="append")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("labeler-report", help="per-labeler precision and recall")
    common(sp, "test manifest")
    sp.set_defaults(func=cmd_labeler_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    needs_manifest = args.command in ("train", "eval", "labeler-report")
    if needs_manifest and not getattr(args, "manifest", None):
        parser.error(f"{args.command} requires --manifest")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"labelerhot: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
