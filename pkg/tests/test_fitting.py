import numpy as np
import pytest

from subgroupkit.data_model import (DataError, Dataset, Outcome,
                                    TreatmentVector, code_binary)
from subgroupkit.fitting import (CutpointRule, FitRecipe, build_multicat_design,
                                 empirical_subgroup_effects, fit_subgroup,
                                 parse_cutpoint, predict_benefit, recommend,
                                 resolve_cutpoint)
from subgroupkit.propensity import ConstantPropensity, PluginPropensity
from subgroupkit.solvers import solve_wls


def _toy_dataset(rng, n=200, p=4, delta_coef=(1.0, -0.5)):
    x = rng.normal(size=(n, p))
    t01 = rng.binomial(1, 0.5, n)
    T = 2 * t01 - 1
    delta = x[:, 0] * delta_coef[0] + x[:, 1] * delta_coef[1]
    y = 0.5 * x[:, 2] + delta * T + rng.normal(size=n)
    return Dataset(x=x, outcome=Outcome.continuous(y),
                   trt=TreatmentVector.from_labels(t01)), delta


def test_sq_weighting_reduces_to_wls():
    rng = np.random.default_rng(0)
    ds, _ = _toy_dataset(rng)
    model = fit_subgroup(ds, FitRecipe(loss="sq_loss", method="weighting",
                                       propensity=ConstantPropensity(0.5)))
    coded = code_binary(ds.trt)
    X = np.column_stack([np.ones(ds.n), ds.x]) * coded.t[:, None]
    direct = solve_wls(X, ds.outcome.values, np.full(ds.n, 2.0)).coefficients
    assert np.max(np.abs(model.coefficients[0] - direct)) < 1e-10


def test_benefit_scores_and_predict_roundtrip():
    rng = np.random.default_rng(1)
    ds, _ = _toy_dataset(rng)
    model = fit_subgroup(ds, FitRecipe(propensity=ConstantPropensity(0.5)))
    again = predict_benefit(model, ds.x)
    assert np.array_equal(again, model.benefit_scores)


def test_recommendations_follow_cutpoint_rule():
    rng = np.random.default_rng(2)
    ds, _ = _toy_dataset(rng)
    model = fit_subgroup(ds, FitRecipe(propensity=ConstantPropensity(0.5),
                                       cutpoint=0.0))
    f = model.benefit_scores[:, 0]
    nonref = model.nonref_levels[0]
    expect = np.where(f > 0, nonref, model.reference)
    assert np.array_equal(model.recommendations.astype(object), expect.astype(object))


def test_recommendation_invariance_under_common_shift():
    rng = np.random.default_rng(3)
    ds, _ = _toy_dataset(rng)
    model = fit_subgroup(ds, FitRecipe(propensity=ConstantPropensity(0.5)))
    from subgroupkit.fitting import recommend_from_scores

    f = model.benefit_scores
    a = recommend_from_scores(f, model.levels, model.reference, 0.3, True)
    b = recommend_from_scores(f + 1.7, model.levels, model.reference, 2.0, True)
    assert np.array_equal(a, b)


def test_smaller_outcome_better_flips_comparison():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(150, 3))
    t01 = rng.binomial(1, 0.5, 150)
    T = 2 * t01 - 1
    y = x[:, 0] * T + rng.normal(size=150)
    ds = Dataset(x=x, outcome=Outcome.continuous(y),
                 trt=TreatmentVector.from_labels(t01),
                 larger_outcome_better=False)
    model = fit_subgroup(ds, FitRecipe(propensity=ConstantPropensity(0.5)))
    f = model.benefit_scores[:, 0]
    nonref = model.nonref_levels[0]
    expect = np.where(f < 0, nonref, model.reference)
    assert np.array_equal(model.recommendations.astype(object), expect.astype(object))


def test_cutpoint_parsing_and_resolution():
    assert parse_cutpoint("median").kind == "median"
    assert parse_cutpoint("quant75").value == pytest.approx(0.75)
    assert parse_cutpoint(0.25).value == 0.25
    with pytest.raises(ValueError):
        parse_cutpoint("quant0")
    assert resolve_cutpoint(CutpointRule("median"), [1, 2, 3, 4, 5]) == 3.0
    assert resolve_cutpoint(CutpointRule("numeric", 0.0), [5.0]) == 0.0
    # type-7 interpolation
    assert resolve_cutpoint(CutpointRule("quantile", 0.75), [0, 1, 2, 3, 4]) == 3.0
    assert resolve_cutpoint(CutpointRule("quantile", 0.6), [0, 1, 2, 3, 4]) == \
        pytest.approx(np.quantile([0, 1, 2, 3, 4], 0.6))


def test_median_cutpoint_splits_sample():
    rng = np.random.default_rng(5)
    ds, _ = _toy_dataset(rng, n=201)
    model = fit_subgroup(ds, FitRecipe(propensity=ConstantPropensity(0.5),
                                       cutpoint="median"))
    nonref = model.nonref_levels[0]
    n_trt = int(np.sum(model.recommendations == nonref))
    assert abs(n_trt - 100) <= 1


# ---------------------------------------------------------------------------
# multi-category design
# ---------------------------------------------------------------------------

def test_multicat_design_one_subject_per_arm():
    trt = TreatmentVector.from_labels(["A", "B", "C"], reference="C")
    x = np.ones((3, 1))
    design, w, block_map = build_multicat_design(x, trt)
    assert block_map == ["A", "B"]
    # blocks are [intercept, x]; rows: A -> block A, B -> block B, C -> -both
    assert np.allclose(design[0], [1, 1, 0, 0])
    assert np.allclose(design[1], [0, 0, 1, 1])
    assert np.allclose(design[2], [-1, -1, -1, -1])
    assert np.allclose(w, 1.0)


def test_multicat_sum_to_zero_by_construction():
    rng = np.random.default_rng(6)
    trt = TreatmentVector.from_labels(rng.choice(["A", "B", "C"], 60), reference="C")
    x = rng.normal(size=(60, 3))
    design, _, _ = build_multicat_design(x, trt)
    beta = rng.normal(size=design.shape[1])
    bA, bB = beta[:4], beta[4:]
    base = np.column_stack([np.ones(60), x])
    fA = base @ bA
    fB = base @ bB
    fC = -(fA + fB)
    assert np.allclose(fA + fB + fC, 0.0)


def test_multicat_k2_reduces_to_signflip_design():
    trt = TreatmentVector.from_labels(["a", "b", "a", "b"])
    x = np.random.default_rng(7).normal(size=(4, 2))
    design, _, block_map = build_multicat_design(x, trt)
    coded = code_binary(trt)
    base = np.column_stack([np.ones(4), x])
    assert np.allclose(design, base * coded.t[:, None])
    assert block_map == ["b"]


def test_multicat_empty_reference_rejected():
    trt = TreatmentVector(labels=np.asarray(["A", "B"], dtype=object),
                          levels=["A", "B", "C"], reference="C")
    with pytest.raises(DataError, match="reference treatment arm is empty"):
        build_multicat_design(np.zeros((2, 1)), trt)


def test_multicat_fit_recovers_pairwise_contrast_signs():
    # the fitted per-arm scores are centered effects; the reference contrast
    # is the score difference against the implied reference score -(fA+fB)
    rng = np.random.default_rng(8)
    n, p = 5000, 3
    x = rng.normal(size=(n, p))
    labels = rng.choice(["A", "B", "C"], n)
    trt = TreatmentVector.from_labels(labels, reference="C")
    dA = 1.5 * x[:, 0]
    dB = -1.2 * x[:, 1]
    # effects relative to C: A adds dA, B adds dB, C adds 0
    y = np.where(labels == "A", dA, np.where(labels == "B", dB, 0.0)) + \
        rng.normal(size=n, scale=0.5)
    ds = Dataset(x=x, outcome=Outcome.continuous(y), trt=trt)
    third = PluginPropensity(func=lambda xx, tt: np.full((len(tt), 3), 1 / 3))
    model = fit_subgroup(ds, FitRecipe(loss="sq_loss", propensity=third,
                                       reference="C"))
    fA = model.benefit_scores[:, model.nonref_levels.index("A")]
    fB = model.benefit_scores[:, model.nonref_levels.index("B")]
    fC = -(fA + fB)
    assert np.mean(np.sign(fA - fC) == np.sign(dA)) > 0.9
    assert np.mean(np.sign(fB - fC) == np.sign(dB)) > 0.9
    assert np.mean(np.sign(fA - fB) == np.sign(dA - dB)) > 0.9


def test_multicat_block_permutation_invariance():
    rng = np.random.default_rng(9)
    n = 600
    x = rng.normal(size=(n, 2))
    labels = rng.choice(["A", "B", "C"], n)
    y = np.where(labels == "A", x[:, 0], 0.0) + rng.normal(size=n)
    third = PluginPropensity(func=lambda xx, tt: np.full((len(tt), 3), 1 / 3))
    recs = {}
    for ref in ["C"]:
        ds = Dataset(x=x, outcome=Outcome.continuous(y),
                     trt=TreatmentVector.from_labels(labels, reference=ref))
        m = fit_subgroup(ds, FitRecipe(propensity=third, reference=ref))
        recs[ref] = m.recommendations
    # same data, same reference, levels relabeled so block order changes
    swap = {"A": "B", "B": "A", "C": "C"}
    labels_sw = np.asarray([swap[v] for v in labels], dtype=object)
    ds_sw = Dataset(x=x, outcome=Outcome.continuous(y),
                    trt=TreatmentVector.from_labels(labels_sw, reference="C"))
    m_sw = fit_subgroup(ds_sw, FitRecipe(propensity=third, reference="C"))
    back = np.asarray([swap[v] for v in m_sw.recommendations], dtype=object)
    assert np.mean(back == recs["C"]) > 0.99


def test_alearning_rejected_for_multicategory():
    trt = TreatmentVector.from_labels(["A", "B", "C"] * 10)
    ds = Dataset(x=np.random.default_rng(0).normal(size=(30, 2)),
                 outcome=Outcome.continuous(np.zeros(30)), trt=trt)
    third = PluginPropensity(func=lambda xx, tt: np.full((len(tt), 3), 1 / 3))
    with pytest.raises(DataError, match="A-learning"):
        fit_subgroup(ds, FitRecipe(method="a_learning", propensity=third))


# ---------------------------------------------------------------------------
# empirical effects
# ---------------------------------------------------------------------------

def test_effect_table_hand_example():
    outcome = Outcome.continuous([1.0, 3.0, 2.0, 4.0])
    trt = TreatmentVector.from_labels([1, 1, -1, -1])
    recs = np.asarray([1, -1, 1, -1], dtype=object)
    table = empirical_subgroup_effects(outcome, trt, recs)
    assert table.deltas[1] == pytest.approx(-1.0)     # y1 - y3
    assert table.deltas[-1] == pytest.approx(1.0)     # y4 - y2
    assert table.overall == pytest.approx(0.0)        # mean(1,4) - mean(3,2)


def test_effect_table_empty_cells_are_nan_with_counts():
    outcome = Outcome.continuous([5.0, 5.0, 5.0, 5.0])
    trt = TreatmentVector.from_labels([1, 1, -1, -1])
    recs = np.asarray([1, 1, -1, -1], dtype=object)  # everyone follows
    table = empirical_subgroup_effects(outcome, trt, recs)
    assert np.isnan(table.overall)
    assert table.overall_ns == (4, 0)
    assert np.isnan(table.deltas[1])  # no mismatched arm within the subgroup
    assert table.cell_n[0, 0] == 2 and table.cell_n[0, 1] == 0


def test_effect_table_survival_uses_rmst():
    rng = np.random.default_rng(10)
    n = 400
    time = rng.exponential(1.0, n)
    trt = TreatmentVector.from_labels(rng.binomial(1, 0.5, n))
    recs = np.asarray(rng.binomial(1, 0.5, n), dtype=object)
    outcome = Outcome.survival(time, np.ones(n))
    table = empirical_subgroup_effects(outcome, trt, recs)
    assert table.outcome_stat == "rmst"
    # no censoring and tau beyond all times: RMST = mean of truncated times
    in_sub = np.asarray([r == 1 for r in recs.tolist()])
    got = trt.indicator(1) & in_sub
    other = trt.indicator(0) & in_sub
    tau = min(time[got].max(), time[other].max())
    expect = np.minimum(time[got], tau).mean() - np.minimum(time[other], tau).mean()
    assert table.deltas[1] == pytest.approx(expect, abs=1e-10)


def test_matched_design_unit_weights():
    rng = np.random.default_rng(11)
    n = 120
    x = rng.normal(size=(n, 2))
    t01 = np.tile([0, 1], n // 2)
    y = x[:, 0] * (2 * t01 - 1) + rng.normal(size=n)
    ds = Dataset(x=x, outcome=Outcome.continuous(y),
                 trt=TreatmentVector.from_labels(t01),
                 match_id=np.repeat(np.arange(n // 2), 2))
    model = fit_subgroup(ds, FitRecipe(loss="sq_loss"))  # no propensity needed
    coded = code_binary(ds.trt)
    X = np.column_stack([np.ones(n), x]) * coded.t[:, None]
    direct = solve_wls(X, y, np.ones(n)).coefficients
    assert np.max(np.abs(model.coefficients[0] - direct)) < 1e-10


def test_propensity_required_without_match_id():
    rng = np.random.default_rng(12)
    ds, _ = _toy_dataset(rng, n=50)
    with pytest.raises(DataError, match="propensity"):
        fit_subgroup(ds, FitRecipe())


def test_incompatible_loss_outcome_rejected():
    rng = np.random.default_rng(13)
    ds, _ = _toy_dataset(rng, n=50)
    with pytest.raises(ValueError, match="logistic_loss"):
        fit_subgroup(ds, FitRecipe(loss="logistic_loss",
                                   propensity=ConstantPropensity(0.5)))


def test_owl_hinge_fit_runs():
    rng = np.random.default_rng(14)
    n = 120
    x = rng.normal(size=(n, 3))
    t01 = rng.binomial(1, 0.5, n)
    y = np.abs(2.0 + x[:, 0] * (2 * t01 - 1) + rng.normal(size=n))
    ds = Dataset(x=x, outcome=Outcome.continuous(y),
                 trt=TreatmentVector.from_labels(t01))
    model = fit_subgroup(ds, FitRecipe(loss="owl_hinge",
                                       propensity=ConstantPropensity(0.5)))
    assert model.coefficients.shape == (1, 4)
    assert model.estimand_target == "score"


def test_custom_loss_triple_fit():
    from subgroupkit.losses import custom_loss

    rng = np.random.default_rng(15)
    ds, _ = _toy_dataset(rng)
    # squared loss expressed as a user triple: must equal the builtin fit
    tri = custom_loss(value=lambda y, v: (y - v) ** 2,
                      dv=lambda y, v: -2 * (y - v),
                      d2v=lambda y, v: np.full_like(np.asarray(v, float), 2.0),
                      estimand=None)
    a = fit_subgroup(ds, FitRecipe(loss=tri, propensity=ConstantPropensity(0.5)))
    b = fit_subgroup(ds, FitRecipe(loss="sq_loss", propensity=ConstantPropensity(0.5)))
    assert np.max(np.abs(a.coefficients - b.coefficients)) < 1e-6


def test_custom_solver_plugin():
    rng = np.random.default_rng(16)
    ds, _ = _toy_dataset(rng)

    def ridge_solver(design, y, weights, offset=None, match_id=None):
        lam = 1e-3
        A = design * np.sqrt(weights)[:, None]
        return np.linalg.solve(A.T @ A + lam * np.eye(design.shape[1]),
                               A.T @ (y * np.sqrt(weights)))

    m = fit_subgroup(ds, FitRecipe(propensity=ConstantPropensity(0.5),
                                   custom_solver=ridge_solver))
    assert m.coefficients.shape == (1, ds.p + 1)
    assert np.isfinite(m.benefit_scores).all()


def test_recommend_on_new_data():
    rng = np.random.default_rng(17)
    ds, _ = _toy_dataset(rng)
    model = fit_subgroup(ds, FitRecipe(propensity=ConstantPropensity(0.5)))
    newx = rng.normal(size=(10, ds.p))
    recs = recommend(model, newx)
    f = predict_benefit(model, newx)[:, 0]
    expect = np.where(f > model.cutpoint_value, model.nonref_levels[0],
                      model.reference)
    assert np.array_equal(recs.astype(object), expect.astype(object))


def test_predict_dimension_mismatch():
    rng = np.random.default_rng(18)
    ds, _ = _toy_dataset(rng)
    model = fit_subgroup(ds, FitRecipe(propensity=ConstantPropensity(0.5)))
    with pytest.raises(DataError, match="columns"):
        predict_benefit(model, np.zeros((3, ds.p + 2)))


def test_binary_outcome_logistic_fit_estimand():
    rng = np.random.default_rng(30)
    n, p = 800, 4
    x = rng.normal(size=(n, p))
    t01 = rng.binomial(1, 0.5, n)
    T = 2 * t01 - 1
    eta = 0.3 * x[:, 2] + 0.8 * x[:, 0] * T
    y = rng.binomial(1, 1 / (1 + np.exp(-eta))).astype(float)
    ds = Dataset(x=x, outcome=Outcome.binary(y),
                 trt=TreatmentVector.from_labels(t01))
    m = fit_subgroup(ds, FitRecipe(loss="logistic_loss",
                                   propensity=ConstantPropensity(0.5)))
    assert m.estimand_target == "delta"
    # risk differences live in [-1, 1] and track the interaction sign
    assert np.all(np.abs(m.estimand_values) <= 1.0)
    agree = np.mean(np.sign(m.benefit_scores[:, 0]) == np.sign(x[:, 0]))
    assert agree > 0.8


def test_count_outcome_poisson_fit():
    rng = np.random.default_rng(31)
    n, p = 600, 3
    x = rng.normal(size=(n, p), scale=0.5)
    t01 = rng.binomial(1, 0.5, n)
    T = 2 * t01 - 1
    mu = np.exp(0.2 * x[:, 1] + 0.6 * x[:, 0] * T)
    y = rng.poisson(mu).astype(float)
    ds = Dataset(x=x, outcome=Outcome.count(y),
                 trt=TreatmentVector.from_labels(t01))
    m = fit_subgroup(ds, FitRecipe(loss="poisson_loss",
                                   propensity=ConstantPropensity(0.5)))
    assert m.estimand_target == "delta"
    assert np.corrcoef(m.benefit_scores[:, 0], x[:, 0])[0, 1] > 0.6


def test_multinomial_propensity_multicat_pipeline():
    from subgroupkit.propensity import MultinomialLassoPropensity

    rng = np.random.default_rng(32)
    n, p = 600, 4
    x = rng.normal(size=(n, p))
    eta1 = 0.4 * x[:, 2]
    eta2 = -0.4 * x[:, 3]
    den = 1 + np.exp(eta1) + np.exp(eta2)
    u = rng.random(n)
    labels = np.where(u < np.exp(eta1) / den, "A",
                      np.where(u < (np.exp(eta1) + np.exp(eta2)) / den, "B", "C"))
    y = np.where(labels == "A", 1.2 * x[:, 0], 0.0) + rng.normal(size=n)
    ds = Dataset(x=x, outcome=Outcome.continuous(y),
                 trt=TreatmentVector.from_labels(labels, reference="C"))
    m = fit_subgroup(ds, FitRecipe(
        propensity=MultinomialLassoPropensity(cv_folds=5, path_length=12),
        reference="C"), seed=0)
    assert m.coefficients.shape == (2, p + 1)
    assert set(np.unique(m.recommendations.astype(str))) <= {"A", "B", "C"}
