"""End-to-end benefit-score fitting.

Orchestrates propensity estimation, modified-design construction (binary or
multi-category), optional augmentation offsets, solver dispatch, and the
post-fit products: benefit scores, treatment recommendations, in-sample
(biased) subgroup effect tables, and estimand summaries.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np

from .augmentation import AugmentSpec, build_augmentation
from .data_model import Dataset, DataError, Outcome, TreatmentVector, code_binary
from .losses import (A_LEARNING, METHODS, WEIGHTING, estimand_from_score,
                     get_loss, modified_design)
from .propensity import PropensityScores, fit_propensity
from .solvers import (Lasso, SolverError, SolveSpec, make_folds,
                      solve_penalized_glm, solve_weighted_cox,
                      solve_weighted_hinge)
from .survival import rmst


@dataclass(frozen=True)
class CutpointRule:
    """Benefit-score threshold: a number, the median, or a quantile."""

    kind: str  # 'numeric' | 'median' | 'quantile'
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("numeric", "median", "quantile"):
            raise ValueError(f"unknown cutpoint kind {self.kind!r}")
        if self.kind == "quantile" and not 0.0 < self.value < 1.0:
            raise ValueError("cutpoint quantile must lie in (0, 1)")


def parse_cutpoint(spec) -> CutpointRule:
    """Accept 0.7, 'median', or 'quant75'-style cutpoint specifications."""
    if isinstance(spec, CutpointRule):
        return spec
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return CutpointRule("numeric", float(spec))
    if isinstance(spec, str):
        if spec == "median":
            return CutpointRule("median")
        m = re.fullmatch(r"quant(\d+(?:\.\d+)?)", spec)
        if m:
            return CutpointRule("quantile", float(m.group(1)) / 100.0)
        try:
            return CutpointRule("numeric", float(spec))
        except ValueError:
            pass
    raise ValueError(f"cannot parse cutpoint {spec!r}; use a number, 'median', or 'quantNN'")


def resolve_cutpoint(rule: CutpointRule, scores) -> float:
    """Numeric value of a cutpoint rule over a score sample (type-7 quantiles)."""
    if rule.kind == "numeric":
        return float(rule.value)
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("median/quantile cutpoints need a nonempty score vector")
    if rule.kind == "median":
        return float(np.quantile(scores, 0.5))
    return float(np.quantile(scores, rule.value))


@dataclass(frozen=True)
class FitRecipe:
    """Complete, refittable description of a subgroup fit.

    retain_call=True keeps the recipe attached to the fitted model, which
    later validation requires (every resample refits the whole recipe,
    including the propensity procedure).
    """

    loss: object = "sq_loss"
    method: str = WEIGHTING
    propensity: object = None
    augmentation: AugmentSpec | None = None
    penalty: Lasso | None = None
    cutpoint: CutpointRule = field(default_factory=lambda: CutpointRule("numeric", 0.0))
    reference: object = None
    larger_outcome_better: bool | None = None
    retain_call: bool = True
    custom_solver: object = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        object.__setattr__(self, "cutpoint", parse_cutpoint(self.cutpoint))


@dataclass
class EffectTable:
    """Received-by-recommended outcome summaries plus subgroup contrasts.

    cell_stat[r, m] summarizes outcomes of subjects who received level r and
    were recommended level m: means, or restricted mean survival time for
    survival outcomes (truncation per recommended-column comparison).  The
    per-level contrast delta[m] = stat(T=m, rec=m) - stat(T!=m, rec=m); the
    overall contrast compares recommendation-followers with the rest.  These
    in-sample numbers are biased; validation provides corrected ones.
    """

    levels: list
    cell_stat: np.ndarray
    cell_n: np.ndarray
    deltas: dict
    delta_ns: dict
    overall: float
    overall_ns: tuple
    outcome_stat: str
    larger_outcome_better: bool
    biased: bool = True

    def flat_stats(self) -> dict:
        """Flat name -> value view used by validation aggregation."""
        out = {}
        K = len(self.levels)
        for r in range(K):
            for m in range(K):
                out[f"mean[recv={self.levels[r]},rec={self.levels[m]}]"] = self.cell_stat[r, m]
                out[f"n[recv={self.levels[r]},rec={self.levels[m]}]"] = self.cell_n[r, m]
        for lv in self.levels:
            out[f"delta[{lv}]"] = self.deltas[lv]
            out[f"n[{lv}]"] = self.delta_ns[lv]
        out["delta[overall]"] = self.overall
        out["n[agree]"], out["n[disagree]"] = self.overall_ns
        return out


@dataclass
class FittedSubgroupModel:
    """Fitted benefit-score model with recommendations and reporting products."""

    coefficients: np.ndarray  # (K-1, p+1); column 0 is the treatment main effect
    benefit_scores: np.ndarray  # (n, K-1)
    recommendations: np.ndarray
    cutpoint_value: float
    levels: list
    reference: object
    nonref_levels: list
    loss_name: str
    method: str
    larger_outcome_better: bool
    recipe: FitRecipe | None
    seed: int
    covariate_names: list
    effect_table: EffectTable
    score_quantiles: np.ndarray  # (K-1, 5)
    estimand_target: str
    estimand_values: np.ndarray | None
    pi: np.ndarray | None  # P(T = non-reference | x), binary fits
    received_prob: np.ndarray | None
    solver_flags: list
    lambda_selected: object = None
    n_train: int = 0

    @property
    def k_levels(self) -> int:
        return len(self.levels)


def recommend_from_scores(scores, levels, reference, cutpoint: float,
                          larger_better: bool) -> np.ndarray:
    """Apply the threshold rule to benefit scores.

    Binary: the non-reference level when score > c (or < c when smaller
    outcomes are preferred), ties to the reference.  Multi-category: the
    arg-extremal non-reference level when its score passes c, else reference.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    if scores.shape[0] == 1 and scores.shape[1] != len(levels) - 1:
        scores = scores.T
    nonref = [lv for lv in levels if lv != reference]
    n = scores.shape[0]
    rec = np.empty(n, dtype=object)
    if larger_better:
        best = np.argmax(scores, axis=1)
        extreme = scores[np.arange(n), best]
        passes = extreme > cutpoint
    else:
        best = np.argmin(scores, axis=1)
        extreme = scores[np.arange(n), best]
        passes = extreme < cutpoint
    for i in range(n):
        rec[i] = nonref[best[i]] if passes[i] else reference
    return rec


def build_multicat_design(x, trt: TreatmentVector, reference=None,
                          received_prob=None):
    """Stacked block design for K >= 2 treatment levels.

    Non-reference rows carry [1, x] in their own block (sign +1); reference
    rows carry [1, x] in every block with sign -1, so the implied reference
    benefit score is minus the sum of the others and the scores sum to zero
    by construction.  Returns (design, weights, block_map) where weights are
    inverse received-treatment probabilities (ones when no probabilities are
    given, as in matched designs) and block_map lists the non-reference level
    of each coefficient block.
    """
    if reference is not None and reference != trt.reference:
        trt = trt.with_reference(reference)
    levels = trt.levels
    nonref = [lv for lv in levels if lv != trt.reference]
    n = trt.n
    x = np.asarray(x, dtype=float)
    base = np.column_stack([np.ones(n), x])
    width = base.shape[1]
    design = np.zeros((n, width * len(nonref)))
    is_ref = trt.indicator(trt.reference)
    if not is_ref.any():
        raise DataError("reference treatment arm is empty")
    for b, lv in enumerate(nonref):
        rows = trt.indicator(lv)
        design[rows, b * width:(b + 1) * width] = base[rows]
        design[is_ref, b * width:(b + 1) * width] = -base[is_ref]
    if received_prob is None:
        weights = np.ones(n)
    else:
        weights = 1.0 / np.asarray(received_prob, dtype=float)
    return design, weights, list(nonref)


def _check_method(loss, method: str, k_levels: int) -> None:
    if method == A_LEARNING:
        if k_levels > 2:
            raise DataError("the A-learning method supports binary treatment only")
        if loss.solver == "hinge":
            raise DataError("hinge losses support the weighting method only")
    if k_levels > 2 and loss.solver in ("hinge",):
        raise DataError("multi-category fitting supports difference/ratio losses only, "
                        "not hinge losses")


def fit_subgroup(data: Dataset, recipe: FitRecipe, seed: int = 0) -> FittedSubgroupModel:
    """Fit the benefit-score model described by a recipe.

    Pure given (data, recipe, seed); the seed drives CV fold assignment and
    any estimated-propensity internals.
    """
    loss = get_loss(recipe.loss)
    trt = data.trt if recipe.reference is None else data.trt.with_reference(recipe.reference)
    loss.check_outcome(data.outcome.kind,
                       None if data.outcome.kind == "survival" else data.outcome.values)
    K = trt.n_levels
    _check_method(loss, recipe.method, K)
    larger = (data.larger_outcome_better if recipe.larger_outcome_better is None
              else recipe.larger_outcome_better)

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    prop_seed, fold_seed, aug_seed = [int(s) for s in
                                      rng.integers(0, 2**31 - 1, size=3)]

    # propensity scores, or unit weights for matched cohorts
    scores: PropensityScores | None = None
    if recipe.propensity is not None:
        scores = fit_propensity(recipe.propensity, data.x, trt, seed=prop_seed)
    elif data.match_id is None:
        raise DataError("a propensity model is required unless match_id marks a matched cohort")
    elif recipe.method == A_LEARNING:
        raise DataError("A-learning on a matched cohort still needs a propensity model "
                        "for the centered-interaction design")

    n, p = data.n, data.p
    base = np.column_stack([np.ones(n), data.x])
    offset = None
    if recipe.augmentation is not None:
        if loss.solver != "glm":
            raise DataError(f"augmentation is not available for loss {loss.name!r}")
        if K != 2:
            raise DataError("augmentation is available for binary treatment only")
        aug_data = data if recipe.reference is None else replace(data, trt=trt)
        offset = build_augmentation(recipe.augmentation, aug_data, seed=aug_seed)

    folds = None
    if recipe.penalty is not None:
        folds = make_folds(n, recipe.penalty.cv_folds,
                           np.random.default_rng(fold_seed), clusters=data.match_id)
    elif loss.solver == "hinge":
        # the margin solver tunes its cost parameter by CV regardless of penalty
        folds = make_folds(n, 10, np.random.default_rng(fold_seed),
                           clusters=data.match_id)

    pi = None
    nonref_levels: list
    block_map: list
    if K == 2:
        coded = code_binary(trt)
        t = coded.t.astype(float)
        nonref_levels = [coded.positive_level]
        block_map = nonref_levels
        if scores is not None:
            pi = scores.prob_of_level(trt, coded.positive_level)
    else:
        nonref_levels = [lv for lv in trt.levels if lv != trt.reference]
        block_map = nonref_levels

    result_flags: list = []
    lambda_selected = None

    if loss.solver == "hinge":
        y = data.outcome.values
        ipw = np.ones(n) if scores is None else 1.0 / scores.received_prob
        if loss.name == "owl_hinge":
            s = t.copy()
            case_w = ipw * y
        else:  # owl_hinge_flip
            s = np.where(y < 0, -t, t)
            case_w = ipw * np.abs(y)
        res = solve_weighted_hinge(data.x, s, case_w, folds=folds, seed=fold_seed)
        coef_blocks = res.coefficients[None, :]
        lambda_selected = res.lambda_selected
    elif loss.solver == "cox":
        if K != 2:
            raise DataError("survival fitting supports binary treatment only")
        if scores is None:  # matched cohort: unit weights
            design = base * t[:, None]
            w = np.ones(n)
        else:
            design, w = modified_design(recipe.method, base, t, pi)
        res = solve_weighted_cox(design, data.outcome.time, data.outcome.status, w,
                                 penalty=recipe.penalty, folds=folds, seed=fold_seed)
        coef_blocks = res.coefficients[None, :]
        lambda_selected = res.lambda_selected
    else:
        y = data.outcome.values
        if K == 2:
            if scores is None:
                design = base * t[:, None]
                w = np.ones(n)
            else:
                design, w = modified_design(recipe.method, base, t, pi)
        else:
            if recipe.method != WEIGHTING:
                raise DataError("multi-category fitting uses the weighting method")
            received = None if scores is None else scores.received_prob
            design, w, block_map = build_multicat_design(data.x, trt,
                                                         received_prob=received)
        if recipe.custom_solver is not None:
            coefs = recipe.custom_solver(design, y, w, offset=offset,
                                         match_id=data.match_id)
            coefs = np.asarray(coefs, dtype=float)
            if coefs.shape != (design.shape[1],):
                raise DataError("custom solver must return one coefficient per design column")
            res = None
            coef_blocks = coefs.reshape(len(block_map), -1)
        else:
            spec = SolveSpec(loss=loss, penalty=recipe.penalty, offset=offset)
            res = solve_penalized_glm(spec, design, y, w, folds=folds, seed=fold_seed)
            coef_blocks = res.coefficients.reshape(len(block_map), -1)
            lambda_selected = res.lambda_selected

    if res is not None:
        result_flags = list(res.flags)
        if not res.converged:
            raise SolverError(f"solver did not converge: {res.flags}")

    # benefit scores on the original covariates; Cox linear predictors are on
    # the hazard scale, so their benefit score is the negated predictor
    fmat = base @ coef_blocks.T
    if loss.solver == "cox":
        fmat = -fmat

    cut_scores = fmat.max(axis=1) if larger else fmat.min(axis=1)
    cutpoint_value = resolve_cutpoint(recipe.cutpoint, cut_scores)
    recs = recommend_from_scores(fmat, trt.levels, trt.reference, cutpoint_value, larger)

    table = empirical_subgroup_effects(data.outcome, trt, recs, larger)

    target = "score"
    est_values = None
    if loss.estimand is not None:
        target, est_values = estimand_from_score(loss, recipe.method, fmat, pi=pi)

    quants = np.quantile(fmat, [0.0, 0.25, 0.5, 0.75, 1.0], axis=0).T

    return FittedSubgroupModel(
        coefficients=coef_blocks,
        benefit_scores=fmat,
        recommendations=recs,
        cutpoint_value=cutpoint_value,
        levels=trt.levels,
        reference=trt.reference,
        nonref_levels=block_map,
        loss_name=loss.name,
        method=recipe.method,
        larger_outcome_better=larger,
        recipe=recipe if recipe.retain_call else None,
        seed=seed,
        covariate_names=data.covariate_names,
        effect_table=table,
        score_quantiles=quants,
        estimand_target=target,
        estimand_values=est_values,
        pi=pi,
        received_prob=None if scores is None else scores.received_prob,
        solver_flags=result_flags,
        lambda_selected=lambda_selected,
        n_train=n,
    )


def predict_benefit(model: FittedSubgroupModel, newx) -> np.ndarray:
    """Benefit scores for new covariate rows, one column per non-reference level."""
    newx = np.asarray(newx, dtype=float)
    if newx.ndim != 2 or newx.shape[1] != model.coefficients.shape[1] - 1:
        raise DataError(
            f"newx must have {model.coefficients.shape[1] - 1} columns, got {newx.shape}"
        )
    base = np.column_stack([np.ones(newx.shape[0]), newx])
    fmat = base @ model.coefficients.T
    if model.loss_name == "cox_loss":
        fmat = -fmat
    return fmat


def recommend(model: FittedSubgroupModel, newx, cutpoint: float | None = None) -> np.ndarray:
    """Treatment recommendations for new covariate rows."""
    fmat = predict_benefit(model, newx)
    c = model.cutpoint_value if cutpoint is None else cutpoint
    return recommend_from_scores(fmat, model.levels, model.reference, c,
                                 model.larger_outcome_better)


def _cell_indices(trt: TreatmentVector, recs: np.ndarray):
    levels = trt.levels
    rec_arr = np.asarray(recs, dtype=object)
    received = {lv: trt.indicator(lv) for lv in levels}
    recommended = {lv: np.asarray([r == lv for r in rec_arr.tolist()], dtype=bool)
                   for lv in levels}
    return levels, received, recommended


def _rmst_pair(outcome: Outcome, idx_a: np.ndarray, idx_b: np.ndarray):
    """RMSTs of two groups truncated at the smaller of their largest times."""
    if idx_a.sum() == 0 or idx_b.sum() == 0:
        return np.nan, np.nan
    tau = min(outcome.time[idx_a].max(), outcome.time[idx_b].max())
    return (rmst(outcome.time[idx_a], outcome.status[idx_a], tau),
            rmst(outcome.time[idx_b], outcome.status[idx_b], tau))


def empirical_subgroup_effects(outcome: Outcome, trt: TreatmentVector,
                               recommendations, larger_better: bool = True) -> EffectTable:
    """In-sample received-by-recommended outcome table and subgroup contrasts.

    Cell summaries are means, or restricted mean survival times for survival
    outcomes (truncated per compared pair at the smaller of the two largest
    observed times).  Cells without subjects yield NaN entries with zero
    counts; the estimates are biased for the subgroup-conditional effects and
    are flagged as such.
    """
    levels, received, recommended = _cell_indices(trt, np.asarray(recommendations,
                                                                  dtype=object))
    K = len(levels)
    is_surv = outcome.kind == "survival"
    yvals = None if is_surv else outcome.values

    cell_n = np.zeros((K, K), dtype=int)
    cell_stat = np.full((K, K), np.nan)
    for r in range(K):
        for m in range(K):
            idx = received[levels[r]] & recommended[levels[m]]
            cell_n[r, m] = int(idx.sum())

    deltas = {}
    delta_ns = {}
    for m, lv in enumerate(levels):
        in_sub = recommended[lv]
        got = received[lv] & in_sub
        other = ~received[lv] & in_sub
        delta_ns[lv] = int(in_sub.sum())
        if got.sum() == 0 or other.sum() == 0:
            deltas[lv] = np.nan
            continue
        if is_surv:
            a, b = _rmst_pair(outcome, got, other)
            deltas[lv] = a - b
        else:
            deltas[lv] = float(yvals[got].mean() - yvals[other].mean())

    if is_surv:
        # display cells: per recommended column, truncate at the smallest of
        # the column's cell maxima so entries are comparable downward
        for m in range(K):
            col_cells = [received[levels[r]] & recommended[levels[m]] for r in range(K)]
            live = [c for c in col_cells if c.sum() > 0]
            if not live:
                continue
            tau = min(outcome.time[c].max() for c in live)
            for r in range(K):
                if col_cells[r].sum() > 0:
                    cell_stat[r, m] = rmst(outcome.time[col_cells[r]],
                                           outcome.status[col_cells[r]], tau)
    else:
        for r in range(K):
            for m in range(K):
                idx = received[levels[r]] & recommended[levels[m]]
                if idx.sum() > 0:
                    cell_stat[r, m] = float(yvals[idx].mean())

    rec_arr = np.asarray(recommendations, dtype=object)
    agree = np.asarray([rec_arr[i] == trt.labels[i] for i in range(trt.n)], dtype=bool)
    n_agree, n_dis = int(agree.sum()), int((~agree).sum())
    if n_agree == 0 or n_dis == 0:
        overall = np.nan
    elif is_surv:
        a, b = _rmst_pair(outcome, agree, ~agree)
        overall = a - b
    else:
        overall = float(yvals[agree].mean() - yvals[~agree].mean())

    return EffectTable(
        levels=levels, cell_stat=cell_stat, cell_n=cell_n, deltas=deltas,
        delta_ns=delta_ns, overall=overall, overall_ns=(n_agree, n_dis),
        outcome_stat="rmst" if is_surv else "mean",
        larger_outcome_better=larger_better, biased=True,
    )
