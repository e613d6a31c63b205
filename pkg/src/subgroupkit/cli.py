"""Command-line workflow: check-overlap, fit, predict, validate, summarize,
simulate, and bench.

Recipes live in a JSON config (nested structures beat flag soup); a few
scalar flags override config values.  Every command is a pure function of
its input files, config, and seed: primary outputs are byte-identical across
reruns, and wall-clock information goes only to a log sidecar.

Exit codes: 0 success, 1 diagnostic failure under --strict, 2 input or
config error, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from pathlib import Path

import numpy as np

from .data_model import DataError, Dataset, dataset_schema, load_dataset, write_dataset
from .diagnostics import plot_data, summarize_subgroups
from .fitting import fit_subgroup, predict_benefit, recommend_from_scores
from .propensity import fit_propensity, overlap_summary
from .serialize import (dump_json, load_json, model_to_dict, recipe_from_config,
                        rehydrate_model, report_text, report_to_dict,
                        summary_text, write_overlap_csv, write_scores_csv,
                        write_subgroup_summary_csv, write_validation_cells_csv)
from .simulation import Sim3Config, Sim4Config, generate_sim3, generate_sim4
from .solvers import SolverError
from .validation import ValidationSpec, validate

EXIT_OK = 0
EXIT_DIAGNOSTIC = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


_TOP_KEYS = {"data", "recipe", "validation", "seed", "output_dir", "threads"}
_DATA_KEYS = {"path", "schema"}
_RECIPE_KEYS = {"loss", "method", "penalty", "propensity", "augmentation",
                "cutpoint", "reference", "larger_outcome_better", "retain_call"}
_VALIDATION_KEYS = {"method", "B", "train_fraction", "quantiles", "seed"}
_PENALTY_KEYS = {"kind", "path_length", "path_min_ratio", "cv_folds", "selection",
                 "metric", "standardize"}
_PROPENSITY_KEYS = {"kind", "value", "cv_folds", "lambda_rule"}
_AUG_KEYS = {"kind", "arm_weights", "cv_folds"}


def _check_keys(d: dict, allowed: set, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def load_config(path) -> dict:
    try:
        cfg = load_json(path)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except ValueError as e:
        raise ConfigError(f"malformed JSON in {path}: {e}") from None
    _check_keys(cfg, _TOP_KEYS, "config")
    if "data" in cfg:
        _check_keys(cfg["data"], _DATA_KEYS, "config.data")
    if "recipe" in cfg:
        _check_keys(cfg["recipe"], _RECIPE_KEYS, "config.recipe")
        if isinstance(cfg["recipe"].get("penalty"), dict):
            _check_keys(cfg["recipe"]["penalty"], _PENALTY_KEYS, "config.recipe.penalty")
        if isinstance(cfg["recipe"].get("propensity"), dict):
            _check_keys(cfg["recipe"]["propensity"], _PROPENSITY_KEYS,
                        "config.recipe.propensity")
        if isinstance(cfg["recipe"].get("augmentation"), dict):
            _check_keys(cfg["recipe"]["augmentation"], _AUG_KEYS,
                        "config.recipe.augmentation")
    if "validation" in cfg:
        _check_keys(cfg["validation"], _VALIDATION_KEYS, "config.validation")
    return cfg


def _load_data(cfg: dict) -> Dataset:
    data_cfg = cfg.get("data")
    if not data_cfg or "path" not in data_cfg or "schema" not in data_cfg:
        raise ConfigError("config.data must give 'path' and 'schema'")
    return load_dataset(data_cfg["path"], data_cfg["schema"])


def _outdir(cfg: dict, override=None) -> Path:
    out = Path(override or cfg.get("output_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads(cfg: dict, flag) -> int:
    # worker cap for internal parallelism; execution is deterministic at any
    # setting (current backends run replications serially)
    val = flag if flag is not None else cfg.get("threads")
    env = os.environ.get("SUBGROUPKIT_THREADS")
    if val is None and env:
        val = int(env)
    return max(1, int(val)) if val is not None else 1


def _log(outdir: Path, command: str, t0: float) -> None:
    with open(outdir / "run.log", "a", encoding="utf-8") as fh:
        fh.write(f"{command} finished in {time.time() - t0:.2f}s "
                 f"at {time.strftime('%Y-%m-%dT%H:%M:%S')}\n")


def cmd_check_overlap(args) -> int:
    cfg = load_config(args.config)
    t0 = time.time()
    data = _load_data(cfg)
    recipe = recipe_from_config(cfg.get("recipe", {}))
    if recipe.propensity is None:
        raise ConfigError("check-overlap needs config.recipe.propensity")
    trt = data.trt if recipe.reference is None else data.trt.with_reference(recipe.reference)
    scores = fit_propensity(recipe.propensity, data.x, trt, seed=int(cfg.get("seed", 0)))
    table = overlap_summary(scores, trt, bins=args.bins)
    out = _outdir(cfg, args.output_dir)
    write_overlap_csv(table, out / "overlap.csv")
    print(f"wrote {out / 'overlap.csv'}")
    for lv in table.levels:
        print(f"arm {lv}: first-level probability range "
              f"[{table.arm_min[lv]:.4f}, {table.arm_max[lv]:.4f}]")
    if table.warning:
        print(f"overlap warning: {table.warning_detail}")
    _log(out, "check-overlap", t0)
    if table.warning and args.strict:
        return EXIT_DIAGNOSTIC
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    t0 = time.time()
    data = _load_data(cfg)
    recipe = recipe_from_config(cfg.get("recipe", {}))
    model = fit_subgroup(data, recipe, seed=int(cfg.get("seed", 0)))
    out = _outdir(cfg, args.output_dir)
    dump_json(model_to_dict(model), out / "model.json")
    text = summary_text(model)
    with open(out / "summary.txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    print(f"wrote {out / 'model.json'}")
    _log(out, "fit", t0)
    return EXIT_OK


def cmd_predict(args) -> int:
    t0 = time.time()
    d = load_json(args.model)
    with open(args.data, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    needed = d["covariate_names"]
    missing = [c for c in needed if c not in header]
    if missing:
        raise DataError(f"prediction data is missing covariate columns {missing}")
    idx = [header.index(c) for c in needed]
    try:
        newx = np.asarray([[float(r[j]) for j in idx] for r in rows], dtype=float)
    except ValueError as e:
        raise DataError(f"non-numeric covariate cell in prediction data: {e}") from None

    # a minimal skeleton is enough for scoring
    from .fitting import FittedSubgroupModel

    skeleton = FittedSubgroupModel(
        coefficients=np.asarray(d["coefficients"], dtype=float),
        benefit_scores=np.zeros((0, 1)), recommendations=np.zeros(0, dtype=object),
        cutpoint_value=float(d["cutpoint_value"]), levels=d["levels"],
        reference=d["reference"], nonref_levels=d["nonref_levels"],
        loss_name=d["loss"], method=d["method"],
        larger_outcome_better=bool(d["larger_outcome_better"]),
        recipe=None, seed=int(d["seed"]), covariate_names=needed,
        effect_table=None, score_quantiles=np.asarray(d["score_quantiles"]),
        estimand_target="score", estimand_values=None, pi=None,
        received_prob=None, solver_flags=[],
    )
    fmat = predict_benefit(skeleton, newx)
    recs = recommend_from_scores(fmat, skeleton.levels, skeleton.reference,
                                 skeleton.cutpoint_value,
                                 skeleton.larger_outcome_better)
    out_path = Path(args.out or "scores.csv")
    write_scores_csv(skeleton, fmat, recs, out_path)
    print(f"wrote {out_path}")
    if out_path.parent.exists():
        _log(out_path.parent, "predict", t0)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    t0 = time.time()
    data = _load_data(cfg)
    d = load_json(args.model)
    model = rehydrate_model(d, data)
    vcfg = cfg.get("validation", {})
    spec = ValidationSpec(
        method=vcfg.get("method", "train_test"),
        B=int(vcfg.get("B", 100)),
        train_fraction=float(vcfg.get("train_fraction", 0.75)),
        quantiles=tuple(vcfg.get("quantiles", (1 / 6, 2 / 6, 3 / 6, 4 / 6, 5 / 6))),
        seed=int(vcfg.get("seed", cfg.get("seed", 0))),
    )
    report = validate(model, data, spec)
    out = _outdir(cfg, args.output_dir)
    dump_json(report_to_dict(report, include_draws=not args.no_draws),
              out / "report.json")
    write_validation_cells_csv(report, out / "report_cells.csv")
    text = report_text(report)
    with open(out / "report.txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    print(f"wrote {out / 'report.json'}")
    _log(out, "validate", t0)
    return EXIT_OK


def cmd_summarize(args) -> int:
    cfg = load_config(args.config)
    t0 = time.time()
    data = _load_data(cfg)
    d = load_json(args.model)
    model = rehydrate_model(d, data)
    rows = summarize_subgroups(data.x, model.recommendations, model.reference,
                               names=data.covariate_names,
                               p_threshold=args.p_threshold)
    out = _outdir(cfg, args.output_dir)
    write_subgroup_summary_csv(rows, model.reference, out / "subgroups.csv")
    print(f"wrote {out / 'subgroups.csv'} ({len(rows)} rows)")
    for kind in args.plot_data:
        pd = plot_data(model, kind, outcome=data.outcome, trt=data.trt)
        pd.to_csv(out / f"plot_{kind}.csv")
        print(f"wrote {out / f'plot_{kind}.csv'}")
    _log(out, "summarize", t0)
    return EXIT_OK


def cmd_simulate(args) -> int:
    t0 = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "sim3":
        cfg = Sim3Config(n=args.n, p=args.p, outcome=args.outcome,
                         linear_delta=args.linear_delta, seed=args.seed)
        ds, truth = generate_sim3(cfg)
        write_dataset(ds, out / "data.csv")
        _write_truth(truth, out / "truth.csv")
        dump_json({"kind": "sim3", "schema": dataset_schema(ds)}, out / "schema.json")
        print(f"wrote {out / 'data.csv'} (n={ds.n}, p={ds.p}, outcome={args.outcome})")
    else:
        cfg = Sim4Config(model=args.model, p=args.p, main_effect_scale=args.c,
                         n_train=args.n, n_test=args.n_test, seed=args.seed)
        train, test, truth_test, truth_train = generate_sim4(cfg)
        write_dataset(train, out / "train.csv")
        write_dataset(test, out / "test.csv")
        _write_truth(truth_train, out / "truth_train.csv")
        _write_truth(truth_test, out / "truth_test.csv")
        dump_json({"kind": "sim4", "schema": dataset_schema(train)}, out / "schema.json")
        print(f"wrote {out / 'train.csv'} and {out / 'test.csv'}")
    _log(out, "simulate", t0)
    return EXIT_OK


def _write_truth(truth, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta", "subgroup"])
        for dlt, sg in zip(truth.delta, truth.subgroup):
            writer.writerow([repr(float(dlt)), int(sg)])


def cmd_bench(args) -> int:
    from .bench import run_bench

    t0 = time.time()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = run_bench(model=args.model, c=args.c, p=args.p, n_train=args.n,
                     reps=args.reps, methods=args.methods.split(","),
                     seed=args.seed)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "model", "c", "repetition", "rho", "auc",
                         "value_gain"])
        for r in rows:
            writer.writerow(r)
    print(f"wrote {out} ({len(rows)} rows)")
    if out.parent.exists():
        _log(out.parent, "bench", t0)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="subgroupkit",
        description="Estimation and validation of individualized treatment rules",
    )
    ap.add_argument("--threads", type=int, default=None,
                    help="cap internal worker count (env SUBGROUPKIT_THREADS)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-overlap", help="propensity overlap diagnostics")
    p.add_argument("config")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--strict", action="store_true",
                   help="exit 1 when the overlap warning flag is set")
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_check_overlap)

    p = sub.add_parser("fit", help="fit the subgroup model from a config")
    p.add_argument("config")
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="benefit scores for new data")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("validate", help="resampling-based subgroup-effect estimates")
    p.add_argument("config")
    p.add_argument("model")
    p.add_argument("--no-draws", action="store_true",
                   help="omit raw replication draws from report.json")
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("summarize", help="covariate profiles of the subgroups")
    p.add_argument("config")
    p.add_argument("model")
    p.add_argument("--p-threshold", type=float, default=None)
    p.add_argument("--plot-data", nargs="*", default=[],
                   choices=["boxplot", "density", "interaction", "conditional"])
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("simulate", help="write benchmark datasets")
    p.add_argument("--kind", choices=["sim3", "sim4"], default="sim3")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--p", type=int, default=50)
    p.add_argument("--outcome", choices=["continuous", "binary", "survival"],
                   default="continuous")
    p.add_argument("--linear-delta", action="store_true")
    p.add_argument("--model", type=int, choices=[1, 2], default=1)
    p.add_argument("--c", type=float, default=2 / 3)
    p.add_argument("--n-test", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="run the benchmark harness")
    p.add_argument("--model", type=int, choices=[1, 2], default=1)
    p.add_argument("--c", type=float, default=2 / 3)
    p.add_argument("--p", type=int, default=50)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--methods", default="sq_w_lasso,sq_w_lasso_aug")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        _threads({}, args.threads)  # validate the worker cap early
        return args.func(args)
    except (ConfigError, DataError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (SolverError, RuntimeError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
