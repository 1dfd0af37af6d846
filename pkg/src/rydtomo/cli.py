"""Command-line front end: dataset generation, training, evaluation, inspection.

Configuration files are flat ``key = value`` text; any key can be overridden
on the command line with ``--set key=value``.  Frequencies and rates are
given as nu/2pi in MHz, matching how the physical parameters are quoted, and
are converted internally to angular rad/us.

Subcommands::

    generate         write a dataset directory from a configuration
    train-classifier fit knn / svm / rf on a dataset's training split
    train-regressor  fit a position or coupling network for one atom count
    eval             evaluate a saved model on a dataset's test split
    baseline         Monte Carlo ceiling of the relative position error
    trace            print site populations along one transport run
    pipeline         generate, train everything, evaluate, write reports
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import classify, datagen, evaluate, neuralnet
from .datagen import (DatasetConfig, DecoherenceSpec, canonical_json,
                      file_digest, load_dataset)
from .dynamics import PropagationSettings, format_trace, initial_excitation, transport_trace
from .geometry import assemble_realization, probe_trajectory, sample_box_layout
from .physics import (PhysicalConstants, EnvironmentRealization, build_hamiltonian,
                      from_mhz, rescale_decoherence, sample_environment, to_mhz)
from .seeding import derive_seed

_CONFIG_KEYS = {
    "box_size", "t_end", "dt", "min_separation", "probe2_path", "mode",
    "omega_p_min_mhz", "omega_p_max_mhz", "gamma_target_mhz",
    "train_per_m", "test_per_m", "ms", "global_seed",
    "c3_mhz", "c4_mhz", "c6_mhz", "omega_c_mhz", "gamma_p_mhz",
    "background_density", "background_cutoff",
}


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; '#' starts a comment."""
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown configuration key {key!r}")
        mapping[key] = value
    return mapping


def dataset_config_from_mapping(mapping: dict) -> DatasetConfig:
    def get(key, default=None):
        return mapping.get(key, default)

    constants = PhysicalConstants(
        c3=from_mhz(float(get("c3_mhz", to_mhz(PhysicalConstants().c3)))),
        c4=from_mhz(float(get("c4_mhz", to_mhz(PhysicalConstants().c4)))),
        c6=from_mhz(float(get("c6_mhz", to_mhz(PhysicalConstants().c6)))),
        omega_c=from_mhz(float(get("omega_c_mhz", 30.0))),
        gamma_p=from_mhz(float(get("gamma_p_mhz", 6.1))),
        background_density=float(get("background_density", 16.0)),
        background_cutoff=float(get("background_cutoff", 0.25)),
    )
    gamma_target = get("gamma_target_mhz")
    decoherence = DecoherenceSpec(
        mode=get("mode", "none"),
        omega_p_min=from_mhz(float(get("omega_p_min_mhz", 1.0))),
        omega_p_max=from_mhz(float(get("omega_p_max_mhz", 13.0))),
        gamma_target=None if gamma_target is None else from_mhz(float(gamma_target)),
    )
    ms = [int(v) for v in str(get("ms", "1,2,3,4")).split(",") if v.strip()]
    train_per_m = int(get("train_per_m", 1000))
    test_per_m = int(get("test_per_m", 100))
    t_end = get("t_end")
    config = DatasetConfig(
        train_counts={m: train_per_m for m in ms},
        test_counts={m: test_per_m for m in ms},
        box_size=float(get("box_size", 10.0)),
        t_end=None if t_end is None else float(t_end),
        dt=float(get("dt", 1e-4)),
        min_separation=float(get("min_separation", 3.1)),
        probe2_path=get("probe2_path", "x_sweep"),
        decoherence=decoherence,
        constants=constants,
        global_seed=int(get("global_seed", 0)),
    )
    config.validate()
    return config


def _mapping_from_args(args) -> dict:
    mapping = parse_config_file(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise ValueError(f"--set needs key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ValueError(f"unknown configuration key {key!r}")
        mapping[key] = value
    if args.seed is not None:
        mapping["global_seed"] = str(args.seed)
    return mapping


def _progress_printer(quiet: bool, every: int = 200):
    if quiet:
        return None
    state = {"t0": time.time()}

    def report(split, done, total):
        if done % every == 0 or done == total:
            rate = done / max(time.time() - state["t0"], 1e-9)
            print(f"  {split}: {done}/{total} records ({rate:.1f}/s)", flush=True)
    return report


def cmd_generate(args) -> int:
    config = dataset_config_from_mapping(_mapping_from_args(args))
    result = datagen.generate_dataset(config, args.out, workers=args.workers,
                                      resume=args.resume,
                                      progress=_progress_printer(args.quiet))
    print(f"wrote {result.n_written} records to {result.out_dir} "
          f"(skipped {result.n_skipped} already present)")
    for name in ("manifest.json", "train.jsonl", "test.jsonl"):
        print(f"  {name} sha256 {file_digest(Path(args.out) / name)}")
    return 0


def cmd_train_classifier(args) -> int:
    ds = load_dataset(args.dataset)
    x = datagen.features_matrix(ds.train)
    y = datagen.count_labels(ds.train)
    kwargs = {}
    if args.kind == "knn":
        kwargs["k"] = args.k
    elif args.kind == "svm":
        kwargs["c"] = args.c
    elif args.kind == "rf":
        kwargs.update(n_trees=args.trees, seed=args.seed)
    model = classify.make_classifier(args.kind, **kwargs)
    t0 = time.time()
    model.fit(x, y)
    classify.save_model(model, args.out)
    print(f"trained {args.kind} on {x.shape[0]} records in {time.time() - t0:.1f}s "
          f"-> {args.out}")
    return 0


def _regression_arrays(records, target: str):
    features = datagen.features_matrix(records)
    if target == "positions":
        return features, datagen.position_matrix(records)
    return features, datagen.operator_matrix(records)


def cmd_train_regressor(args) -> int:
    ds = load_dataset(args.dataset)
    records = datagen.select_records(ds.train, m=args.m)
    if not records:
        raise ValueError(f"dataset has no training records with {args.m} atoms")
    features, targets = _regression_arrays(records, args.target)
    config = neuralnet.TrainingConfig(
        epochs=args.epochs, batch_size=args.batch_size,
        learning_rate=args.lr, val_fraction=args.val_fraction,
        patience=args.patience, seed=args.seed)
    hidden = tuple(int(v) for v in args.hidden.split(",") if v.strip())
    progress = None
    if not args.quiet:
        def progress(epoch, train_loss, val_loss):
            if (epoch + 1) % 25 == 0:
                print(f"  epoch {epoch + 1}: train {train_loss:.3e} val {val_loss:.3e}",
                      flush=True)
    t0 = time.time()
    if args.target == "positions":
        model = neuralnet.train_position_regressor(
            features, targets, ds.config.box_size, config, hidden, progress)
    else:
        model = neuralnet.train_operator_regressor(
            features, targets, config, hidden, progress)
    model.meta.update(dataset=str(args.dataset), m=args.m)
    neuralnet.save_model(model, args.out)
    hist = model.history
    print(f"trained {args.target} network for m={args.m} on {features.shape[0]} records "
          f"in {time.time() - t0:.1f}s; best val {hist.best_val_loss:.3e} "
          f"at epoch {hist.best_epoch} -> {args.out}")
    return 0


def _evaluate_model(model, ds, m=None) -> dict:
    if isinstance(model, neuralnet.RegressionModel):
        records = datagen.select_records(ds.test, m=m or model.meta.get("m"))
        if not records:
            raise ValueError("dataset has no matching test records")
        features = datagen.features_matrix(records)
        if model.meta.get("target") == "positions":
            pred = model.predict(features)
            actual = [r.box_positions for r in records]
            m_eff = records[0].m
            if m_eff >= 2:
                summary = evaluate.summarize_position_errors(actual, list(pred))
                baseline = evaluate.random_layout_baseline(
                    m_eff, ds.config.box_size, seed=0,
                    min_separation=ds.config.min_separation)
                return {"target": "positions", "m": m_eff,
                        "mean_relative_error": summary.mean,
                        "median_relative_error": summary.median,
                        "baseline": baseline.to_dict(),
                        "ratio_to_baseline": summary.mean / baseline.mean}
            summary = evaluate.summarize_position_errors(actual, list(pred),
                                                         relative=False)
            return {"target": "positions", "m": m_eff,
                    "mean_absolute_error_um": summary.mean,
                    "median_absolute_error_um": summary.median}
        actual = datagen.operator_matrix(records)
        pred = model.predict(features)
        names = datagen.operator_component_names(records[0].m + 3)
        summary = evaluate.coupling_errors(actual, pred, names,
                                           scales=model.codec.std)
        return {"target": "operators", "m": records[0].m, **summary.to_dict()}
    x = datagen.features_matrix(ds.test)
    y = datagen.count_labels(ds.test)
    report = classify.evaluate_classifier(model, x, y)
    print(report.format())
    return {"target": "count", **report.to_dict()}


def cmd_eval(args) -> int:
    ds = load_dataset(args.dataset)
    model = classify.load_model(args.model)
    report = _evaluate_model(model, ds, m=args.m)
    report["model"] = str(args.model)
    report["model_sha256"] = file_digest(args.model)
    text = canonical_json(report) + "\n"
    if args.report:
        Path(args.report).write_text(text)
        print(f"report -> {args.report}")
    print(text, end="")
    return 0


def cmd_baseline(args) -> int:
    bl = evaluate.random_layout_baseline(args.m, args.box_size,
                                         n_pairs=args.n_pairs, seed=args.seed,
                                         min_separation=args.min_separation)
    print(canonical_json({"m": args.m, "box_size": args.box_size, **bl.to_dict()}))
    return 0


def cmd_trace(args) -> int:
    mapping = _mapping_from_args(args)
    config = dataset_config_from_mapping(mapping)
    seed = derive_seed(config.global_seed, "trace", args.record_seed)
    box = sample_box_layout(args.m, config.box_size,
                            derive_seed(seed, "box"), config.min_separation)
    dec = config.decoherence
    if dec.mode == "none":
        env = EnvironmentRealization.trivial(args.m + 3)
    else:
        rng = np.random.default_rng(derive_seed(seed, "omega"))
        omega_p = float(rng.uniform(dec.omega_p_min, dec.omega_p_max))
        env = sample_environment(box, omega_p, config.constants,
                                 derive_seed(seed, "environment"))
        if dec.mode == "rescaled":
            env = rescale_decoherence(env, dec.gamma_target, args.m)
    probe = probe_trajectory(config.box_size, config.probe2_path)[args.probe_config]
    real = assemble_realization(box, probe)
    w = build_hamiltonian(real, config.constants)
    times = [float(v) for v in args.times.split(",")]
    settings = PropagationSettings(t_end=max(times), dt=config.dt)
    trace = transport_trace(initial_excitation(real.n_atoms), w, env,
                            settings, times)
    print(f"m={args.m} box={config.box_size}um mode={dec.mode} "
          f"probe_config={args.probe_config}")
    print(format_trace(trace))
    return 0


def cmd_pipeline(args) -> int:
    mapping = _mapping_from_args(args)
    config = dataset_config_from_mapping(mapping)
    config_text = canonical_json(config.to_dict())
    run_id = hashlib.sha256(config_text.encode()).hexdigest()[:12]
    root = Path(args.out) if args.out else Path("runs") / run_id
    dataset_dir = root / "dataset"
    models_dir = root / "models"
    reports_dir = root / "reports"
    for d in (models_dir, reports_dir):
        d.mkdir(parents=True, exist_ok=True)
    print(f"pipeline run {run_id} -> {root}")

    result = datagen.generate_dataset(config, dataset_dir, workers=args.workers,
                                      resume=True,
                                      progress=_progress_printer(args.quiet))
    print(f"dataset ready ({result.n_written} new, {result.n_skipped} existing)")
    ds = load_dataset(dataset_dir)
    x_train = datagen.features_matrix(ds.train)
    y_train = datagen.count_labels(ds.train)

    summary = {"run_id": run_id, "config": config.to_dict(),
               "dataset": {name: file_digest(dataset_dir / name)
                           for name in ("manifest.json", "train.jsonl", "test.jsonl")},
               "models": {}, "reports": {}}

    ms = sorted({r.m for r in ds.train})
    if len(ms) > 1:
        for kind in ("knn", "svm", "rf"):
            model = classify.make_classifier(
                kind, **({"seed": args.seed or 0} if kind == "rf" else {}))
            t0 = time.time()
            model.fit(x_train, y_train)
            path = models_dir / f"{kind}.json"
            classify.save_model(model, path)
            report = _evaluate_model(model, ds)
            summary["models"][kind] = file_digest(path)
            summary["reports"][kind] = report
            print(f"{kind}: accuracy {report['accuracy']:.3f} "
                  f"({time.time() - t0:.0f}s)")

    tcfg = neuralnet.TrainingConfig(epochs=args.epochs, patience=args.patience,
                                    seed=args.seed or 0)
    targets = ["positions"] + (["operators"] if config.decoherence.mode != "none" else [])
    for m in ms:
        records = datagen.select_records(ds.train, m=m)
        for target in targets:
            features, raw = _regression_arrays(records, target)
            t0 = time.time()
            if target == "positions":
                model = neuralnet.train_position_regressor(
                    features, raw, config.box_size, tcfg)
            else:
                model = neuralnet.train_operator_regressor(features, raw, tcfg)
            model.meta.update(m=m, dataset=str(dataset_dir))
            path = models_dir / f"{target}_m{m}.json"
            neuralnet.save_model(model, path)
            report = _evaluate_model(model, ds, m=m)
            key = f"{target}_m{m}"
            summary["models"][key] = file_digest(path)
            summary["reports"][key] = report
            if "baseline" in report:
                line = (f"mean MRE {report['mean_relative_error']:.3f} "
                        f"(ceiling {report['baseline']['mean']:.3f})")
            elif "mean_absolute_error_um" in report:
                line = f"mean abs err {report['mean_absolute_error_um']:.3f} um"
            else:
                line = f"median rel err {report['median_relative_error']:.3f}"
            print(f"{target} m={m}: {line} ({time.time() - t0:.0f}s)")

    out = reports_dir / "summary.json"
    out.write_text(canonical_json(summary) + "\n")
    print(f"summary -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rydtomo",
        description="Simulated excitation-transport tomography of Rydberg networks")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one configuration key (repeatable)")
        p.add_argument("--seed", type=int, default=None, help="global seed override")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("generate", help="write a dataset directory")
    add_config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train-classifier", help="fit a size classifier")
    p.add_argument("--dataset", required=True)
    p.add_argument("--kind", required=True, choices=sorted(classify.CLASSIFIER_KINDS))
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--c", type=float, default=10.0)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("train-regressor", help="fit a position or coupling network")
    p.add_argument("--dataset", required=True)
    p.add_argument("--target", required=True, choices=("positions", "operators"))
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", default="1024,512,256")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train_regressor)

    p = sub.add_parser("eval", help="evaluate a saved model on a test split")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--m", type=int, default=None,
                   help="restrict to one atom count (regressors)")
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="random-layout error ceiling")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--box-size", type=float, default=10.0)
    p.add_argument("--n-pairs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-separation", type=float, default=3.1)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("trace", help="print populations along one transport run")
    add_config_args(p)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--record-seed", type=int, default=0)
    p.add_argument("--probe-config", type=int, default=0)
    p.add_argument("--times", default="0,0.01,0.02,0.03,0.04,0.05")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("pipeline", help="dataset + training + evaluation in one run")
    add_config_args(p)
    p.add_argument("--out", help="run directory (default runs/<config hash>)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--patience", type=int, default=50)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, FileExistsError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
