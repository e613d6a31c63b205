"""JSON serialization of fitted models and validation reports, plus the
text summary blocks and CSV writers used by the command-line interface.

All output is deterministic for a fixed input: keys are sorted, floats use
shortest round-trip representation, and no timestamps enter primary outputs.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .augmentation import AugmentSpec
from .data_model import Dataset
from .diagnostics import SubgroupSummaryRow
from .fitting import (CutpointRule, FitRecipe, FittedSubgroupModel,
                      empirical_subgroup_effects, predict_benefit,
                      recommend_from_scores)
from .losses import WEIGHTING, estimand_from_score, get_loss
from .propensity import (ConstantPropensity, LogisticLassoPropensity,
                         MultinomialLassoPropensity, OverlapTable,
                         PluginPropensity, arm_fraction_propensity,
                         plain_logistic_propensity)
from .solvers import Lasso
from .validation import QuantileResult, ValidationReport

SCHEMA_VERSION = 1


def _py(v):
    """JSON-safe scalar."""
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.str_):
        return str(v)
    if isinstance(v, float) and not np.isfinite(v):
        return None
    return v


def _pylist(arr):
    return [[_py(float(v)) for v in row] for row in np.atleast_2d(arr)]


def propensity_to_config(model) -> dict | None:
    if model is None:
        return None
    if isinstance(model, ConstantPropensity):
        return {"kind": "constant", "value": model.value}
    if isinstance(model, LogisticLassoPropensity):
        return {"kind": "logistic_lasso", "cv_folds": model.cv_folds,
                "lambda_rule": model.lambda_rule}
    if isinstance(model, MultinomialLassoPropensity):
        return {"kind": "multinomial_lasso", "cv_folds": model.cv_folds,
                "lambda_rule": model.lambda_rule}
    if isinstance(model, PluginPropensity):
        return {"kind": model.name}
    raise ValueError(f"cannot serialize propensity model {model!r}")


def propensity_from_config(cfg) -> object:
    if cfg is None:
        return None
    kind = cfg.get("kind")
    if kind == "constant":
        return ConstantPropensity(value=float(cfg["value"]))
    if kind == "logistic_lasso":
        return LogisticLassoPropensity(cv_folds=int(cfg.get("cv_folds", 10)),
                                       lambda_rule=cfg.get("lambda_rule", "min"))
    if kind == "multinomial_lasso":
        return MultinomialLassoPropensity(cv_folds=int(cfg.get("cv_folds", 10)),
                                          lambda_rule=cfg.get("lambda_rule", "min"))
    if kind == "plain_logistic":
        return plain_logistic_propensity()
    if kind == "arm_fraction":
        return arm_fraction_propensity()
    raise ValueError(f"cannot reconstruct propensity model of kind {kind!r}")


def penalty_to_config(penalty: Lasso | None) -> dict | None:
    if penalty is None:
        return None
    return {"kind": "lasso", "path_length": penalty.path_length,
            "path_min_ratio": penalty.path_min_ratio,
            "cv_folds": penalty.cv_folds, "selection": penalty.selection,
            "metric": penalty.metric, "standardize": penalty.standardize}


def penalty_from_config(cfg) -> Lasso | None:
    if cfg is None or cfg.get("kind") in (None, "none"):
        return None
    if cfg["kind"] != "lasso":
        raise ValueError(f"unknown penalty kind {cfg['kind']!r}")
    return Lasso(path_length=int(cfg.get("path_length", 100)),
                 path_min_ratio=cfg.get("path_min_ratio"),
                 cv_folds=int(cfg.get("cv_folds", 10)),
                 selection=cfg.get("selection", "min"),
                 metric=cfg.get("metric", "deviance"),
                 standardize=bool(cfg.get("standardize", True)))


def augmentation_to_config(spec: AugmentSpec | None) -> dict | None:
    if spec is None:
        return None
    if spec.kind != "builtin_lasso":
        return {"kind": "plugin"}
    return {"kind": "builtin_lasso", "arm_weights": list(spec.arm_weights),
            "cv_folds": spec.cv_folds}


def augmentation_from_config(cfg) -> AugmentSpec | None:
    if cfg is None:
        return None
    if cfg.get("kind") == "plugin":
        raise ValueError("plugin augmentation functions cannot be reconstructed from JSON")
    return AugmentSpec(kind="builtin_lasso",
                       arm_weights=tuple(cfg.get("arm_weights", (0.5, 0.5))),
                       cv_folds=int(cfg.get("cv_folds", 10)))


def recipe_to_config(recipe: FitRecipe) -> dict:
    loss = recipe.loss if isinstance(recipe.loss, str) else get_loss(recipe.loss).name
    return {
        "loss": loss,
        "method": recipe.method,
        "penalty": penalty_to_config(recipe.penalty),
        "propensity": propensity_to_config(recipe.propensity),
        "augmentation": augmentation_to_config(recipe.augmentation),
        "cutpoint": {"kind": recipe.cutpoint.kind, "value": recipe.cutpoint.value},
        "reference": _py(recipe.reference),
        "larger_outcome_better": recipe.larger_outcome_better,
        "retain_call": recipe.retain_call,
    }


def recipe_from_config(cfg: dict) -> FitRecipe:
    cut = cfg.get("cutpoint", 0.0)
    if isinstance(cut, dict):
        cut = CutpointRule(kind=cut["kind"], value=float(cut.get("value", 0.0)))
    return FitRecipe(
        loss=cfg.get("loss", "sq_loss"),
        method=cfg.get("method", "weighting"),
        penalty=penalty_from_config(cfg.get("penalty")),
        propensity=propensity_from_config(cfg.get("propensity")),
        augmentation=augmentation_from_config(cfg.get("augmentation")),
        cutpoint=cut,
        reference=cfg.get("reference"),
        larger_outcome_better=cfg.get("larger_outcome_better"),
        retain_call=bool(cfg.get("retain_call", True)),
    )


def model_to_dict(model: FittedSubgroupModel) -> dict:
    if model.recipe is None:
        raise ValueError("only models fitted with retain_call=True are serializable")
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "subgroupkit_model",
        "loss": model.loss_name,
        "method": model.method,
        "levels": [_py(v) for v in model.levels],
        "reference": _py(model.reference),
        "nonref_levels": [_py(v) for v in model.nonref_levels],
        "coefficients": _pylist(model.coefficients),
        "covariate_names": list(model.covariate_names),
        "larger_outcome_better": model.larger_outcome_better,
        "cutpoint_value": _py(float(model.cutpoint_value)),
        "score_quantiles": _pylist(model.score_quantiles),
        "lambda_selected": _py(model.lambda_selected),
        "solver_flags": list(model.solver_flags),
        "seed": model.seed,
        "n_train": model.n_train,
        "recipe": recipe_to_config(model.recipe),
    }


def rehydrate_model(d: dict, data: Dataset) -> FittedSubgroupModel:
    """Rebuild a usable fitted model from its JSON form and the training data.

    Scores, recommendations, and effect tables are recomputed from the stored
    coefficients; the estimand summary is recomputed when it does not depend
    on per-subject propensities.
    """
    if d.get("kind") != "subgroupkit_model":
        raise ValueError("not a serialized subgroup model")
    recipe = recipe_from_config(d["recipe"])
    levels = d["levels"]
    reference = d["reference"]
    coef = np.asarray(d["coefficients"], dtype=float)
    larger = bool(d["larger_outcome_better"])
    loss = get_loss(d["loss"])

    skeleton = FittedSubgroupModel(
        coefficients=coef,
        benefit_scores=np.zeros((0, coef.shape[0])),
        recommendations=np.zeros(0, dtype=object),
        cutpoint_value=float(d["cutpoint_value"]),
        levels=levels,
        reference=reference,
        nonref_levels=d["nonref_levels"],
        loss_name=d["loss"],
        method=d["method"],
        larger_outcome_better=larger,
        recipe=recipe,
        seed=int(d["seed"]),
        covariate_names=list(d["covariate_names"]),
        effect_table=None,
        score_quantiles=np.asarray(d["score_quantiles"], dtype=float),
        estimand_target="score",
        estimand_values=None,
        pi=None,
        received_prob=None,
        solver_flags=list(d["solver_flags"]),
        lambda_selected=d.get("lambda_selected"),
        n_train=int(d.get("n_train", 0)),
    )
    fmat = predict_benefit(skeleton, data.x)
    trt = data.trt if data.trt.reference == reference else data.trt.with_reference(reference)
    recs = recommend_from_scores(fmat, levels, reference,
                                 skeleton.cutpoint_value, larger)
    skeleton.benefit_scores = fmat
    skeleton.recommendations = recs
    skeleton.effect_table = empirical_subgroup_effects(data.outcome, trt, recs, larger)
    if loss.estimand is not None and (d["method"] == WEIGHTING or loss.name == "cox_loss"):
        target, values = estimand_from_score(loss, d["method"], fmat)
        skeleton.estimand_target = target
        skeleton.estimand_values = values
    return skeleton


def report_to_dict(report: ValidationReport, include_draws: bool = True) -> dict:
    def qres(r: QuantileResult) -> dict:
        out = {
            "quantile": _py(r.quantile),
            "stat_names": list(r.stat_names),
            "estimates": {k: _py(v) for k, v in r.estimates.items()},
            "ses": {k: _py(v) for k, v in r.ses.items()},
            "n_missing": {k: _py(v) for k, v in r.n_missing.items()},
        }
        if r.bias is not None:
            out["bias"] = {k: _py(v) for k, v in r.bias.items()}
            out["full_stats"] = {k: _py(v) for k, v in r.full_stats.items()}
        if include_draws:
            out["draws"] = _pylist(r.draws)
        return out

    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "subgroupkit_validation",
        "method": report.method,
        "B": report.B,
        "B_failed": report.B_failed,
        "train_fraction": _py(report.train_fraction),
        "levels": [_py(v) for v in report.levels],
        "reference": _py(report.reference),
        "loss": report.loss_name,
        "fit_method": report.fit_method,
        "quantiles": [_py(q) for q in report.quantiles],
        "overall": qres(report.overall),
        "by_quantile": [qres(r) for r in report.by_quantile],
        "resample_row_counts": [int(c) for c in report.resample_row_counts],
    }


def dump_json(obj: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# text summaries
# ---------------------------------------------------------------------------

def _fmt(v, digits=4) -> str:
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return "NA"
    return f"{v:.{digits}f}"


def summary_text(model: FittedSubgroupModel) -> str:
    lines = []
    pen = "lasso" if (model.recipe and model.recipe.penalty) else "none"
    lines.append(f"loss:     {model.loss_name} (penalty: {pen})")
    lines.append(f"method:   {model.method}")
    lines.append(f"cutpoint: {_fmt(model.cutpoint_value)}")
    ref = model.reference
    cmp_op = ">" if model.larger_outcome_better else "<"
    if model.k_levels == 2:
        nonref = model.nonref_levels[0]
        lines.append(f"rule:     recommend {nonref} when f(x) {cmp_op} c, else {ref}")
    else:
        joined = ", ".join(f"f_{lv}(x): {lv} vs {ref}" for lv in model.nonref_levels)
        ext = "largest" if model.larger_outcome_better else "smallest"
        lines.append(f"scores:   {joined}; f_{ref}(x) = 0")
        lines.append(f"rule:     recommend the level with the {ext} score when it"
                     f" passes c, else {ref}")
    lines.append("")

    table = model.effect_table
    stat = "restricted mean survival time" if table.outcome_stat == "rmst" else "average outcome"
    lines.append(f"{stat.capitalize()}s by received and recommended treatment:")
    header = [""] + [f"Recommended {lv}" for lv in table.levels]
    body = []
    for r, lv in enumerate(table.levels):
        row = [f"Received {lv}"]
        for m in range(len(table.levels)):
            row.append(f"{_fmt(table.cell_stat[r, m])} (n = {table.cell_n[r, m]})")
        body.append(row)
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(header)]
    lines.append("  ".join(h.rjust(w) for h, w in zip(header, widths)))
    for row in body:
        lines.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
    lines.append("")

    lines.append("Treatment effects conditional on subgroups:")
    for lv in table.levels:
        lines.append(f"  effect of {lv} among those recommended {lv}: "
                     f"{_fmt(table.deltas[lv])} (n = {table.delta_ns[lv]})")
    lines.append(f"  outcome gap, recommendation followed vs not: "
                 f"{_fmt(table.overall)} "
                 f"(n = {table.overall_ns[0]} vs {table.overall_ns[1]})")
    lines.append("")
    lines.append("NOTE: these subgroup summaries reuse the training data and are")
    lines.append("      optimistically biased; run validation for corrected estimates.")
    lines.append("")

    for b, lv in enumerate(model.nonref_levels):
        q = model.score_quantiles[b]
        lines.append(f"Benefit score quantiles ({lv} vs {ref}): "
                     f"min {_fmt(q[0])}, q25 {_fmt(q[1])}, median {_fmt(q[2])}, "
                     f"q75 {_fmt(q[3])}, max {_fmt(q[4])}")
    lines.append("")

    if model.estimand_values is not None and model.estimand_target != "score":
        if model.estimand_target == "delta":
            desc = "difference E[Y|T=nonref,X] - E[Y|T=ref,X]"
        else:
            desc = "ratio of arm means (monotone outcome transform for survival)"
        lines.append(f"Per-subject treatment effect estimates ({desc}):")
        for b, lv in enumerate(model.nonref_levels):
            v = model.estimand_values[:, b]
            lines.append(
                f"  {lv} vs {ref}: min {_fmt(v.min())}, q25 {_fmt(np.quantile(v, 0.25))}, "
                f"median {_fmt(np.quantile(v, 0.5))}, mean {_fmt(v.mean())}, "
                f"q75 {_fmt(np.quantile(v, 0.75))}, max {_fmt(v.max())}"
            )
        lines.append("")

    names = ["main effect"] + list(model.covariate_names)
    for b, lv in enumerate(model.nonref_levels):
        coefs = model.coefficients[b]
        nz = [(names[j], coefs[j]) for j in range(len(coefs))
              if j == 0 or coefs[j] != 0.0]
        lines.append(f"{len(nz) - 1} of {len(coefs) - 1} interaction coefficients "
                     f"selected ({lv} vs {ref}); the treatment main effect is always kept:")
        lines.append("  " + ", ".join(f"{nm} = {_fmt(c)}" for nm, c in nz))
    return "\n".join(lines) + "\n"


def report_text(report: ValidationReport) -> str:
    lines = []
    label = ("repeated train/test splitting" if report.method == "train_test"
             else "bootstrap bias correction")
    head = ("Average test-set outcomes" if report.method == "train_test"
            else "Bootstrap bias-corrected outcomes")
    lines.append(f"validation: {label} (B = {report.B}, failed = {report.B_failed})")
    if report.train_fraction is not None:
        lines.append(f"train fraction: {report.train_fraction}")
    lines.append(f"loss: {report.loss_name}   method: {report.fit_method}")
    lines.append("")

    def block(res: QuantileResult, title: str):
        lines.append(title)
        for m_lv in report.levels:
            for r_lv in report.levels:
                nm = f"mean[recv={r_lv},rec={m_lv}]"
                nn = f"n[recv={r_lv},rec={m_lv}]"
                lines.append(f"  received {r_lv}, recommended {m_lv}: "
                             f"{_fmt(res.estimates[nm])} "
                             f"(SE = {_fmt(res.ses[nm])}, n = {_fmt(res.estimates[nn], 2)})")
        for lv in report.levels:
            nm = f"delta[{lv}]"
            lines.append(f"  effect of {lv} among recommended {lv}: "
                         f"{_fmt(res.estimates[nm])} (SE = {_fmt(res.ses[nm])})")
        nm = "delta[overall]"
        lines.append(f"  outcome gap, recommendation followed vs not: "
                     f"{_fmt(res.estimates[nm])} (SE = {_fmt(res.ses[nm])})")
        lines.append("")

    block(report.overall, f"{head} at the fitted cutpoint:")
    for q, res in zip(report.quantiles, report.by_quantile):
        block(res, f"{head} at the benefit-score quantile {q:.4g} cutoff:")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# CSV writers
# ---------------------------------------------------------------------------

def write_overlap_csv(table: OverlapTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "bin_lo", "bin_hi", "count", "density"])
        for row in table.rows():
            writer.writerow(row)


def write_scores_csv(model: FittedSubgroupModel, fmat: np.ndarray,
                     recommendations, path) -> None:
    est = None
    loss = get_loss(model.loss_name) if model.loss_name != "custom" else None
    if loss is not None and loss.estimand is not None and \
            (model.method == WEIGHTING or loss.name == "cox_loss"):
        target, est = estimand_from_score(loss, model.method, fmat)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = [f"score_{lv}_vs_{model.reference}" for lv in model.nonref_levels]
        header.append("recommended")
        if est is not None:
            header += [f"{target}_{lv}_vs_{model.reference}" for lv in model.nonref_levels]
        writer.writerow(header)
        for i in range(fmat.shape[0]):
            row = [repr(float(v)) for v in fmat[i]]
            row.append(str(recommendations[i]))
            if est is not None:
                row += [repr(float(v)) for v in est[i]]
            writer.writerow(row)


def write_subgroup_summary_csv(rows: list[SubgroupSummaryRow], reference, path) -> None:
    # adjusted p-values are intentionally not written: they are a screening
    # device, not valid post-hoc inference
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["covariate", f"avg_recommended_{reference}",
                         "avg_recommended_other", "difference",
                         f"se_recommended_{reference}", "se_recommended_other"])
        for r in rows:
            writer.writerow([r.name, repr(r.mean_ref_rec), repr(r.mean_other_rec),
                             repr(r.difference), repr(r.se_ref_rec),
                             repr(r.se_other_rec)])


def write_validation_cells_csv(report: ValidationReport, path) -> None:
    """Replication-level cell means, long format, for external plotting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cut", "replication", "received", "recommended", "value"])
        blocks = [("fitted", report.overall)] + [
            (f"quant_{q:.6g}", r) for q, r in zip(report.quantiles, report.by_quantile)
        ]
        for tag, res in blocks:
            for r_lv in report.levels:
                for m_lv in report.levels:
                    nm = f"mean[recv={r_lv},rec={m_lv}]"
                    j = res.stat_names.index(nm)
                    for b in range(res.draws.shape[0]):
                        v = res.draws[b, j]
                        if np.isfinite(v):
                            writer.writerow([tag, b, str(r_lv), str(m_lv), repr(float(v))])
