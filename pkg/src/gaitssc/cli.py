"""Command-line entry point: ``gaitssc <subcommand> [options]``.

Settings come from built-in defaults, then an optional INI file
(``--config``), then command-line flags; later sources win.  Every run
writes ``config.json`` to its output directory with the effective settings.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, GaitSSCError, SchemaError, SolverError, SpecError
from .evaluate import (
    FeatureSource,
    Pipeline,
    CvReport,
    SolverSettings,
    comparison_report,
    run_loso,
    write_report,
)
from .features import symmetrize, write_feature_matrix
from .ingest import DEFAULT_TARGET_LEN, load_dataset, preprocess, write_dataset
from .solver import (
    KSSC_DEFAULTS,
    SSC_DEFAULTS,
    KernelSpec,
    reconstruction_r2,
    solve_many,
    write_coefficients,
)
from .svm import train_arrays, weights_report, write_model
from .synth import SynthSpec, write_synthetic

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _float(text):
    return float(text)


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _bandwidth(text):
    return None if str(text).strip().lower() == "median" else float(text)


def _int_pair(text):
    parts = [int(p) for p in str(text).replace(":", ",").split(",")]
    return (parts[0], parts[-1])


def _channels(text):
    return tuple(int(p) for p in str(text).replace(" ", "").split(",") if p)


# section -> key -> (parser, default)
SCHEMA = {
    "input": {"path": (str, "")},
    "preprocess": {"target_len": (int, DEFAULT_TARGET_LEN)},
    "solver": {
        "mode": (str, "ssc"),
        "lambda": (_float, SSC_DEFAULTS.lam),
        "rho": (_float, SSC_DEFAULTS.rho),
        "kssc_lambda": (_float, KSSC_DEFAULTS.lam),
        "kssc_rho": (_float, KSSC_DEFAULTS.rho),
        "tol": (_float, SSC_DEFAULTS.tol),
        "max_iter": (int, SSC_DEFAULTS.max_iter),
        "bandwidth": (_bandwidth, None),
        "adaptive_rho": (_bool, True),
        "accelerate": (_bool, True),
    },
    "features": {"source": (str, "cm1:1"), "phi": (int, 4), "pca_components": (int, 3)},
    "svm": {"penalty": (_float, 1.0), "top_k": (int, 5)},
    "evaluation": {"paper_mode": (_bool, False)},
    "output": {"directory": (str, "out")},
    "run": {"seed": (int, 0), "jobs": (int, 1), "tag": (str, "")},
    "synth": {
        "n_case": (int, 24),
        "n_control": (int, 23),
        "cycles_per_subject": (_int_pair, (36, 44)),
        "n_channels": (int, 18),
        "cycle_len": (int, 84),
        "min_cycle_len": (int, 70),
        "noise_sd": (_float, 0.05),
        "effect_channels": (_channels, (1,)),
        "effect_shift": (_float, 0.5),
        "subspaces": (str, ""),
    },
}


def default_config() -> dict:
    return {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def read_config(path) -> dict:
    """Defaults overlaid with an INI file; unknown sections or keys are errors."""
    cfg = default_config()
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            conv = SCHEMA[section][key][0]
            try:
                cfg[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return cfg


def parse_subspaces(text: str, n_channels: int):
    """``"1-9:3; 10-18:3"`` -> ((channels, d), ...); empty means two halves with d = 3."""
    if not text.strip():
        half = n_channels // 2
        return ((tuple(range(1, half + 1)), 3), (tuple(range(half + 1, n_channels + 1)), 3))
    out = []
    for block in text.split(";"):
        chans, d = block.split(":")
        members = []
        for part in chans.split(","):
            if "-" in part:
                lo, hi = part.split("-")
                members.extend(range(int(lo), int(hi) + 1))
            else:
                members.append(int(part))
        out.append((tuple(members), int(d)))
    return tuple(out)


def synth_spec(cfg: dict) -> SynthSpec:
    s = cfg["synth"]
    try:
        subspaces = parse_subspaces(s["subspaces"], s["n_channels"])
    except ValueError as exc:
        raise SpecError(f"cannot parse subspaces {s['subspaces']!r}: {exc}") from exc
    return SynthSpec(
        n_case=s["n_case"],
        n_control=s["n_control"],
        cycles_per_subject=s["cycles_per_subject"],
        n_channels=s["n_channels"],
        cycle_len=s["cycle_len"],
        min_cycle_len=s["min_cycle_len"],
        subspaces=subspaces,
        noise_sd=s["noise_sd"],
        cohort_effect={"channels": s["effect_channels"], "shift": s["effect_shift"]},
        seed=cfg["run"]["seed"],
    )


def solver_settings(cfg: dict) -> SolverSettings:
    s = cfg["solver"]
    common = dict(tol=s["tol"], max_iter=s["max_iter"], adaptive_rho=s["adaptive_rho"], accelerate=s["accelerate"])
    return SolverSettings(
        ssc=replace(SSC_DEFAULTS, lam=s["lambda"], rho=s["rho"], **common),
        kssc=replace(KSSC_DEFAULTS, lam=s["kssc_lambda"], rho=s["kssc_rho"], **common),
        kernel=KernelSpec("gaussian", s["bandwidth"]),
        phi=cfg["features"]["phi"],
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with settings")
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--output", help="output directory")
    common.add_argument("--run-tag", dest="tag", help="suffix for report file names (default: UTC timestamp)")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--input", help="dataset file or directory")
    data.add_argument("--target-len", type=int, dest="target_len")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--mode", choices=("ssc", "kssc"))

    feats = argparse.ArgumentParser(add_help=False)
    feats.add_argument("--paper-mode", action="store_true", default=None,
                       help="fit CM2 consensus clusters once on all subjects")

    p = argparse.ArgumentParser(prog="gaitssc", description="Subspace-clustering features for gait cycles.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    sub.add_parser("preprocess", parents=[common, data], help="resample, detrend and z-score")
    sub.add_parser("solve", parents=[common, data, solver], help="coefficient matrices per cycle")
    f = sub.add_parser("features", parents=[common, data, solver, feats], help="write a feature matrix")
    f.add_argument("--features", help="stat, corr, pca, cm1:<ch> or cm2[:<rank>]")
    t = sub.add_parser("train", parents=[common, data, solver, feats], help="train an SVM on all cycles")
    t.add_argument("--features")
    t.add_argument("--penalty", type=float)
    e = sub.add_parser("evaluate", parents=[common, data, solver, feats], help="leave-one-subject-out evaluation")
    e.add_argument("--features", action="append",
                   help="feature source; repeat or comma-separate for several")
    e.add_argument("--penalty", type=float)
    r = sub.add_parser("report", parents=[common], help="comparison table from saved reports")
    r.add_argument("reports", nargs="+", help="report JSON files")
    return p


def effective_config(args) -> dict:
    cfg = read_config(args.config) if args.config else default_config()
    overrides = {
        ("run", "jobs"): args.jobs,
        ("run", "seed"): args.seed,
        ("run", "tag"): args.tag,
        ("output", "directory"): args.output,
        ("input", "path"): getattr(args, "input", None),
        ("preprocess", "target_len"): getattr(args, "target_len", None),
        ("solver", "mode"): getattr(args, "mode", None),
        ("evaluation", "paper_mode"): getattr(args, "paper_mode", None),
        ("svm", "penalty"): getattr(args, "penalty", None),
    }
    feats = getattr(args, "features", None)
    if isinstance(feats, list):
        feats = ",".join(feats)
    overrides[("features", "source")] = feats
    for (sec, key), value in overrides.items():
        if value is not None:
            cfg[sec][key] = value
    if cfg["run"]["jobs"] < 1:
        raise ConfigError("jobs must be >= 1")
    if cfg["solver"]["mode"] not in ("ssc", "kssc"):
        raise ConfigError(f"unknown solver mode {cfg['solver']['mode']!r}")
    try:
        solver_settings(cfg)
    except DomainError as exc:
        raise ConfigError(f"[solver] {exc}") from exc
    if cfg["svm"]["penalty"] <= 0:
        raise ConfigError("[svm] penalty must be > 0")
    if cfg["preprocess"]["target_len"] < 2:
        raise ConfigError("[preprocess] target_len must be >= 2")
    if not cfg["run"]["tag"]:
        cfg["run"]["tag"] = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    return cfg


def _echo(cfg: dict, results_only: bool = False) -> dict:
    """Effective settings as plain JSON values.

    ``results_only`` drops the settings that cannot change a result (worker
    count, output directory, run tag), so reports from equivalent runs
    compare byte for byte.
    """
    out = json.loads(json.dumps({k: v for k, v in cfg.items() if not k.startswith("_")}, default=list))
    if results_only:
        out["run"].pop("jobs", None)
        out["run"].pop("tag", None)
        out.pop("output", None)
    return out


def _outdir(cfg) -> Path:
    d = Path(cfg["output"]["directory"])
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps(_echo(cfg), indent=2, sort_keys=True) + "\n")
    return d


def _load(cfg):
    path = cfg["input"]["path"]
    if not path:
        raise ConfigError("no input dataset (use --input or [input] path)")
    raw = load_dataset(path)
    if not raw:
        raise SchemaError(f"{path} holds no cycles")
    return preprocess(raw, cfg["preprocess"]["target_len"], jobs=cfg["run"]["jobs"])


def _sources(cfg) -> list[FeatureSource]:
    mode = cfg["solver"]["mode"]
    paper = cfg["evaluation"]["paper_mode"]
    out = []
    for text in cfg["features"]["source"].split(","):
        if text.strip():
            try:
                src = FeatureSource.parse(text, mode=mode, paper_mode=paper)
            except DomainError as exc:
                raise ConfigError(str(exc)) from exc
            out.append(replace(src, pca_components=cfg["features"]["pca_components"]))
    if not out:
        raise ConfigError("no feature source given")
    return out


def cmd_synth(cfg) -> int:
    spec = synth_spec(cfg)
    out = _outdir(cfg)
    data, truth = write_synthetic(spec, out)
    print(f"wrote {data} and {truth}")
    return EXIT_OK


def cmd_preprocess(cfg) -> int:
    cycles = _load(cfg)
    out = _outdir(cfg)
    path = write_dataset(cycles, out / "preprocessed.csv")
    print(f"wrote {len(cycles)} cycles to {path}")
    return EXIT_OK


def cmd_solve(cfg) -> int:
    cycles = _load(cfg)
    settings = solver_settings(cfg)
    mode = cfg["solver"]["mode"]
    kernel = settings.kernel if mode == "kssc" else None
    results = solve_many([c.y for c in cycles], mode, settings.config(mode), kernel, jobs=cfg["run"]["jobs"])
    out = _outdir(cfg)
    mats = out / "coefficients"
    mats.mkdir(exist_ok=True)
    names = [f"ch{i}" for i in range(1, cycles[0].n_channels + 1)]
    log_rows, r2s, failures = [], [], 0
    for cyc, res in zip(cycles, results):
        stem = f"{cyc.subject_id}_{cyc.cycle_index:03d}"
        if isinstance(res, SolverError):
            failures += 1
            log_rows.append([cyc.subject_id, cyc.cycle_index, "failed", "", "", "", "", str(res)])
            continue
        write_coefficients(mats / f"{stem}_C.csv", res.c, names)
        write_coefficients(mats / f"{stem}_cs.csv", symmetrize(res), names)
        r2 = reconstruction_r2(cyc.y, res, kernel or KernelSpec("linear"))
        r2s.append(r2)
        log_rows.append([cyc.subject_id, cyc.cycle_index, "converged" if res.converged else "max_iter",
                         res.iterations, repr(res.residual_a), repr(res.residual_1), repr(r2), ""])
    with open(out / "solve_log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "cycle_index", "status", "iterations", "residual_a", "residual_1", "r2", "error"])
        w.writerows(log_rows)
    summary = {
        "cycles": len(cycles),
        "failed": failures,
        "converged": sum(r[2] == "converged" for r in log_rows),
        "mean_r2": float(np.mean(r2s)) if r2s else None,
    }
    (out / "solve_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_RUNTIME if failures == len(cycles) else EXIT_OK


def _write_clusters(state, out: Path, name="clusters.json"):
    if state is not None:
        (out / name).write_text(state.to_json())


def cmd_features(cfg) -> int:
    cycles = _load(cfg)
    out = _outdir(cfg)
    for src in _sources(cfg):
        pipe = Pipeline(src, cycles, solver_settings(cfg), jobs=cfg["run"]["jobs"])
        state = pipe.fit(range(len(cycles)))
        x, schema = pipe.transform(range(len(cycles)), state)
        stem = src.name.replace(":", "_")
        path = write_feature_matrix(out / f"features_{stem}.csv", [c.key + (c.cohort,) for c in cycles], x, schema)
        _write_clusters(state, out, f"clusters_{stem}.json")
        print(f"wrote {x.shape[0]} x {x.shape[1]} features to {path}")
    return EXIT_OK


def cmd_train(cfg) -> int:
    cycles = _load(cfg)
    out = _outdir(cfg)
    for src in _sources(cfg):
        pipe = Pipeline(src, cycles, solver_settings(cfg), jobs=cfg["run"]["jobs"])
        state = pipe.fit(range(len(cycles)))
        x, schema = pipe.transform(range(len(cycles)), state)
        order = sorted(range(len(cycles)), key=lambda i: (cycles[i].subject_id, cycles[i].cycle_index))
        y = np.array([cycles[i].label for i in order], dtype=float)
        model = train_arrays(x[order], y, cfg["svm"]["penalty"], schema)
        stem = src.name.replace(":", "_")
        write_model(model, out / f"model_{stem}.json")
        ranking = weights_report(model, cfg["svm"]["top_k"])
        (out / f"weights_{stem}.csv").write_text(
            "rank,feature,weight\n" + "".join(f"{k},{n},{w!r}\n" for k, (n, w) in enumerate(ranking, 1))
        )
        _write_clusters(state, out, f"clusters_{stem}.json")
        print(f"{src.name}: top weights {ranking}")
    return EXIT_OK


def cmd_evaluate(cfg) -> int:
    cycles = _load(cfg)
    out = _outdir(cfg)
    echo = _echo(cfg, results_only=True)
    tag = cfg["run"]["tag"]
    reports = []
    for src in _sources(cfg):
        pipe = Pipeline(src, cycles, solver_settings(cfg), jobs=cfg["run"]["jobs"])
        report = run_loso(cycles, src, cfg["svm"]["penalty"], pipeline=pipe)
        write_report(report, out, tag, echo)
        if src.kind == "cm2":
            # per-fold clusters are in the report; this file is the all-subject consensus
            _write_clusters(pipe.fit(range(len(cycles))), out, f"clusters_{src.name.replace(':', '_')}_{tag}.json")
        reports.append(report)
    text, doc = comparison_report(reports)
    (out / f"comparison_{tag}.txt").write_text(text)
    (out / f"comparison_{tag}.json").write_text(json.dumps(doc, indent=2) + "\n")
    print(text, end="")
    return EXIT_OK


def cmd_report(cfg, paths) -> int:
    reports = []
    for p in paths:
        try:
            doc = json.loads(Path(p).read_text())
            agg = doc["aggregate"]
            reports.append(CvReport.from_rates(doc["feature_source"], agg["testing_hit_rate"],
                                               agg["training_hit_rate"], agg["testing_mv_accuracy"],
                                               agg["training_mv_accuracy"]))
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read report {p}: {exc}") from exc
    text, doc = comparison_report(reports)
    if cfg["_output_given"]:
        out = _outdir(cfg)
        tag = cfg["run"]["tag"]
        (out / f"comparison_{tag}.txt").write_text(text)
        (out / f"comparison_{tag}.json").write_text(json.dumps(doc, indent=2) + "\n")
    print(text, end="")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = effective_config(args)
        if args.command == "report":
            cfg["_output_given"] = args.output is not None
            return cmd_report(cfg, args.reports)
        handler = {
            "synth": cmd_synth,
            "preprocess": cmd_preprocess,
            "solve": cmd_solve,
            "features": cmd_features,
            "train": cmd_train,
            "evaluate": cmd_evaluate,
        }[args.command]
        return handler(cfg)
    except (ConfigError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GaitSSCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
