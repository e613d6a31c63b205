"""Resampling-based estimation of subgroup-conditional treatment effects.

Two procedures over a fully refittable fitting recipe: repeated train/test
splitting (statistics from held-out data, averaged over replications) and
bootstrap bias correction (full-data statistics minus the mean in-sample vs
out-of-sample gap across bootstrap refits).  Each replication re-runs the
entire recipe, propensity model included.  Statistics are computed at the
recipe's own cutpoint and across a grid of benefit-score quantiles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_model import Dataset
from .fitting import (FittedSubgroupModel, empirical_subgroup_effects,
                      fit_subgroup, predict_benefit, recommend_from_scores)
from .solvers import SolverError

DEFAULT_QUANTILES = (1 / 6, 2 / 6, 3 / 6, 4 / 6, 5 / 6)

TRAIN_TEST = "train_test"
BOOT = "boot"
_METHOD_ALIASES = {
    "train_test": TRAIN_TEST,
    "training_test_replication": TRAIN_TEST,
    "training": TRAIN_TEST,
    "boot": BOOT,
    "boot_bias_correction": BOOT,
}


@dataclass(frozen=True)
class ValidationSpec:
    method: str = TRAIN_TEST
    B: int = 100
    train_fraction: float = 0.75
    quantiles: tuple = DEFAULT_QUANTILES
    seed: int = 0

    def __post_init__(self):
        m = _METHOD_ALIASES.get(self.method)
        if m is None:
            raise ValueError(f"unknown validation method {self.method!r}")
        object.__setattr__(self, "method", m)
        if self.B < 2:
            raise ValueError("need at least 2 replications")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        for q in self.quantiles:
            if not 0.0 < q < 1.0:
                raise ValueError("benefit-score quantiles must lie in (0, 1)")


@dataclass
class QuantileResult:
    """Replication draws and aggregated estimates at one cutpoint definition.

    For train/test validation the draws are the held-out statistics, one row
    per replication.  For bootstrap validation the draws are the
    per-replication bias-corrected values S_full - (S_b(X_b) - S_b(X)); their
    percentiles give the confidence intervals, while the reported SEs are the
    standard deviations of the out-of-sample evaluations S_b(X).
    """

    quantile: float | None  # None = the recipe's own cutpoint rule
    stat_names: list
    draws: np.ndarray  # B x n_stats, NaN where a statistic was undefined
    estimates: dict
    ses: dict
    n_missing: dict
    bias: dict | None = None  # bootstrap only
    full_stats: dict | None = None  # bootstrap only
    gap_draws: np.ndarray | None = None  # bootstrap only: S_b(X_b) - S_b(X)
    eval_draws: np.ndarray | None = None  # bootstrap only: S_b(X)

    def percentile_interval(self, stat: str, lo: float = 0.025, hi: float = 0.975):
        j = self.stat_names.index(stat)
        col = self.draws[:, j]
        col = col[np.isfinite(col)]
        if len(col) == 0:
            return (np.nan, np.nan)
        return (float(np.quantile(col, lo)), float(np.quantile(col, hi)))


@dataclass
class ValidationReport:
    method: str
    B: int
    B_failed: int
    train_fraction: float | None
    levels: list
    reference: object
    loss_name: str
    fit_method: str
    overall: QuantileResult
    by_quantile: list = field(default_factory=list)
    quantiles: tuple = ()
    resample_row_counts: list = field(default_factory=list)


def _rep_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(b,)))


def _split_indices(n: int, frac: float, rng, match_id=None):
    """Disjoint train/test row indices; clusters are never split."""
    if match_id is None:
        perm = rng.permutation(n)
        n_train = int(round(frac * n))
        n_train = min(max(n_train, 1), n - 1)
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])
    clusters = list(dict.fromkeys(np.asarray(match_id, dtype=object).tolist()))
    order = rng.permutation(len(clusters))
    rows_of = {}
    mid = np.asarray(match_id, dtype=object)
    for i, c in enumerate(mid.tolist()):
        rows_of.setdefault(c, []).append(i)
    train_rows = []
    target = frac * n
    for k in order:
        c = clusters[k]
        if len(train_rows) >= target:
            break
        train_rows.extend(rows_of[c])
    train = np.sort(np.asarray(train_rows, dtype=np.int64))
    mask = np.ones(n, dtype=bool)
    mask[train] = False
    test = np.flatnonzero(mask)
    if len(train) == 0 or len(test) == 0:
        raise ValueError("degenerate train/test split; adjust train_fraction")
    return train, test


def _boot_indices(n: int, rng, match_id=None):
    """Bootstrap rows: n with replacement, or whole clusters to at least n rows."""
    if match_id is None:
        return np.sort(rng.integers(0, n, size=n))
    clusters = list(dict.fromkeys(np.asarray(match_id, dtype=object).tolist()))
    rows_of = {}
    for i, c in enumerate(np.asarray(match_id, dtype=object).tolist()):
        rows_of.setdefault(c, []).append(i)
    out = []
    while len(out) < n:
        c = clusters[int(rng.integers(0, len(clusters)))]
        out.extend(rows_of[c])
    return np.asarray(out, dtype=np.int64)


def _cut_scores(scores: np.ndarray, larger: bool) -> np.ndarray:
    return scores.max(axis=1) if larger else scores.min(axis=1)


def _stats_at_cut(model_like: dict, scores: np.ndarray, cut: float,
                  outcome, trt, larger: bool) -> dict:
    recs = recommend_from_scores(scores, model_like["levels"], model_like["reference"],
                                 cut, larger)
    return empirical_subgroup_effects(outcome, trt, recs, larger).flat_stats()


def _collect(names, dicts) -> np.ndarray:
    out = np.full((len(dicts), len(names)), np.nan)
    for i, d in enumerate(dicts):
        for j, nm in enumerate(names):
            v = d.get(nm, np.nan)
            out[i, j] = np.nan if v is None else float(v)
    return out


def validate(model: FittedSubgroupModel, data: Dataset,
             spec: ValidationSpec) -> ValidationReport:
    """Estimate subgroup-conditional effects with overfitting correction.

    Requires the model to have been fit with retain_call=True so the whole
    recipe (propensity included) can be refit on every resample.  Failed
    refits are dropped and counted; more than 20% failures aborts.
    """
    if model.recipe is None:
        raise ValueError("validation requires a model fitted with retain_call=True")
    recipe = model.recipe
    larger = model.larger_outcome_better
    info = {"levels": model.levels, "reference": model.reference}
    n = data.n

    # template statistic names from a throwaway table on the fitted model
    template = empirical_subgroup_effects(data.outcome, data.trt.with_reference(model.reference)
                                          if data.trt.reference != model.reference else data.trt,
                                          model.recommendations, larger).flat_stats()
    names = list(template)

    cut_defs: list = [None] + list(spec.quantiles)
    per_cut_draws: list = [[] for _ in cut_defs]
    failures = 0
    row_counts = []

    for b in range(spec.B):
        rng = _rep_rng(spec.seed, b)
        fit_seed = int(rng.integers(0, 2**31 - 1))
        try:
            if spec.method == TRAIN_TEST:
                tr, te = _split_indices(n, spec.train_fraction, rng, data.match_id)
                refit = fit_subgroup(data.take(tr), recipe, seed=fit_seed)
                train_cut = _cut_scores(refit.benefit_scores, larger)
                te_data = data.take(te)
                te_scores = predict_benefit(refit, te_data.x)
                trt_te = (te_data.trt if te_data.trt.reference == model.reference
                          else te_data.trt.with_reference(model.reference))
                row_counts.append(len(tr))
                for ci, q in enumerate(cut_defs):
                    cut = (refit.cutpoint_value if q is None
                           else float(np.quantile(train_cut, q)))
                    per_cut_draws[ci].append(_stats_at_cut(
                        info, te_scores, cut, te_data.outcome, trt_te, larger))
            else:
                idx = _boot_indices(n, rng, data.match_id)
                bdata = data.take(idx)
                refit = fit_subgroup(bdata, recipe, seed=fit_seed)
                boot_cut = _cut_scores(refit.benefit_scores, larger)
                full_scores = predict_benefit(refit, data.x)
                trt_full = (data.trt if data.trt.reference == model.reference
                            else data.trt.with_reference(model.reference))
                trt_boot = (bdata.trt if bdata.trt.reference == model.reference
                            else bdata.trt.with_reference(model.reference))
                row_counts.append(len(idx))
                for ci, q in enumerate(cut_defs):
                    cut = (refit.cutpoint_value if q is None
                           else float(np.quantile(boot_cut, q)))
                    s_on_boot = _stats_at_cut(info, refit.benefit_scores, cut,
                                              bdata.outcome, trt_boot, larger)
                    s_on_full = _stats_at_cut(info, full_scores, cut,
                                              data.outcome, trt_full, larger)
                    per_cut_draws[ci].append((s_on_boot, s_on_full))
        except (SolverError, ValueError, np.linalg.LinAlgError):
            failures += 1
            for ci in range(len(cut_defs)):
                per_cut_draws[ci].append(None)
            continue

    if failures > 0.2 * spec.B:
        raise RuntimeError(
            f"validation aborted: {failures} of {spec.B} replications failed to refit"
        )

    # full-data statistics per cutpoint definition (bootstrap correction base)
    full_cut_scores = _cut_scores(model.benefit_scores, larger)
    trt_full = (data.trt if data.trt.reference == model.reference
                else data.trt.with_reference(model.reference))
    full_stats_per_cut = []
    for q in cut_defs:
        cut = (model.cutpoint_value if q is None
               else float(np.quantile(full_cut_scores, q)))
        full_stats_per_cut.append(_stats_at_cut(info, model.benefit_scores, cut,
                                                data.outcome, trt_full, larger))

    results = []
    for ci, q in enumerate(cut_defs):
        kept = [d for d in per_cut_draws[ci] if d is not None]
        if spec.method == TRAIN_TEST:
            draws = _collect(names, kept)
            ests = {}
            ses = {}
            miss = {}
            for j, nm in enumerate(names):
                col = draws[:, j]
                fin = np.isfinite(col)
                miss[nm] = int(len(col) - fin.sum())
                ests[nm] = float(np.mean(col[fin])) if fin.any() else np.nan
                ses[nm] = float(np.std(col[fin], ddof=1)) if fin.sum() > 1 else np.nan
            results.append(QuantileResult(quantile=q, stat_names=names, draws=draws,
                                          estimates=ests, ses=ses, n_missing=miss))
        else:
            on_boot = _collect(names, [d[0] for d in kept])
            on_full = _collect(names, [d[1] for d in kept])
            gaps = on_boot - on_full
            full_vec = np.asarray([float(full_stats_per_cut[ci].get(nm, np.nan))
                                   for nm in names])
            corrected = full_vec[None, :] - gaps
            ests = {}
            ses = {}
            miss = {}
            bias = {}
            for j, nm in enumerate(names):
                gap = gaps[:, j]
                fin = np.isfinite(gap)
                miss[nm] = int(len(gap) - fin.sum())
                bias[nm] = float(np.mean(gap[fin])) if fin.any() else np.nan
                if nm.startswith("n["):
                    # resample-averaged group sizes; bias correction is not
                    # meaningful for counts
                    col = on_full[:, j]
                    colf = col[np.isfinite(col)]
                    ests[nm] = float(np.mean(colf)) if len(colf) else np.nan
                else:
                    ests[nm] = (float(full_vec[j]) - bias[nm]
                                if np.isfinite(full_vec[j]) and np.isfinite(bias[nm])
                                else np.nan)
                colx = on_full[:, j]
                finx = np.isfinite(colx)
                ses[nm] = float(np.std(colx[finx], ddof=1)) if finx.sum() > 1 else np.nan
            results.append(QuantileResult(quantile=q, stat_names=names,
                                          draws=corrected,
                                          estimates=ests, ses=ses, n_missing=miss,
                                          bias=bias, full_stats=full_stats_per_cut[ci],
                                          gap_draws=gaps, eval_draws=on_full))

    return ValidationReport(
        method=spec.method,
        B=spec.B,
        B_failed=failures,
        train_fraction=spec.train_fraction if spec.method == TRAIN_TEST else None,
        levels=model.levels,
        reference=model.reference,
        loss_name=model.loss_name,
        fit_method=model.method,
        overall=results[0],
        by_quantile=results[1:],
        quantiles=tuple(spec.quantiles),
        resample_row_counts=row_counts,
    )


def conditional_quantile_report(report: ValidationReport, which) -> ValidationReport:
    """Sub-report keeping only the requested quantile-grid positions (0-based)."""
    which = list(which)
    for i in which:
        if not 0 <= i < len(report.by_quantile):
            raise IndexError(f"quantile index {i} outside the grid of "
                             f"{len(report.by_quantile)}")
    return ValidationReport(
        method=report.method,
        B=report.B,
        B_failed=report.B_failed,
        train_fraction=report.train_fraction,
        levels=report.levels,
        reference=report.reference,
        loss_name=report.loss_name,
        fit_method=report.fit_method,
        overall=report.overall,
        by_quantile=[report.by_quantile[i] for i in which],
        quantiles=tuple(report.quantiles[i] for i in which),
        resample_row_counts=report.resample_row_counts,
    )
