import numpy as np
import pytest

from subgroupkit.data_model import DataError, TreatmentVector
from subgroupkit.propensity import (ConstantPropensity, LogisticLassoPropensity,
                                    MultinomialLassoPropensity, PluginPropensity,
                                    arm_fraction_propensity, fit_propensity,
                                    overlap_summary, plain_logistic_propensity)


def test_constant_returns_received_probability():
    trt = TreatmentVector.from_labels([-1, 1])
    scores = fit_propensity(ConstantPropensity(0.3), np.zeros((2, 1)), trt)
    assert np.allclose(scores.received_prob, [0.7, 0.3])
    # all-0.5 case
    trt = TreatmentVector.from_labels(["Ctrl", "Trt", "Trt"])
    scores = fit_propensity(ConstantPropensity(0.5), np.zeros((3, 1)), trt)
    assert np.allclose(scores.received_prob, 0.5)


def test_constant_complement_property():
    trt = TreatmentVector.from_labels(["a", "b", "a", "b"])
    scores = fit_propensity(ConstantPropensity(0.37), np.zeros((4, 2)), trt)
    pi_b = scores.prob_of_level(trt, "b")
    pi_a = scores.prob_of_level(trt, "a")
    assert np.allclose(pi_a + pi_b, 1.0)


def test_logistic_lasso_recovers_marginal_rate():
    rng = np.random.default_rng(0)
    n = 2000
    x = rng.normal(size=(n, 8))
    labels = rng.binomial(1, 0.5, n)
    trt = TreatmentVector.from_labels(labels)
    scores = fit_propensity(LogisticLassoPropensity(), x, trt, seed=1)
    assert abs(scores.received_prob.mean() - 0.5) < 0.05
    assert np.all((scores.received_prob > 0) & (scores.received_prob < 1))


def test_row_hash_folds_give_permutation_equivariance():
    rng = np.random.default_rng(1)
    n = 300
    x = rng.normal(size=(n, 5))
    pi = 1 / (1 + np.exp(-x[:, 0]))
    labels = (rng.random(n) < pi).astype(int)
    trt = TreatmentVector.from_labels(labels)
    scores = fit_propensity(LogisticLassoPropensity(cv_folds=5), x, trt, seed=2)

    perm = rng.permutation(n)
    trt_p = TreatmentVector.from_labels(labels[perm])
    scores_p = fit_propensity(LogisticLassoPropensity(cv_folds=5), x[perm], trt_p, seed=2)
    assert np.allclose(scores_p.received_prob, scores.received_prob[perm])


def test_multinomial_rows_sum_to_one_and_match_received():
    rng = np.random.default_rng(2)
    n = 400
    x = rng.normal(size=(n, 4))
    eta1 = 0.5 * x[:, 0]
    eta2 = -0.5 * x[:, 1]
    denom = 1 + np.exp(eta1) + np.exp(eta2)
    p1, p2 = np.exp(eta1) / denom, np.exp(eta2) / denom
    u = rng.random(n)
    labels = np.where(u < p1, "A", np.where(u < p1 + p2, "B", "C"))
    trt = TreatmentVector.from_labels(labels)
    scores = fit_propensity(MultinomialLassoPropensity(cv_folds=5, path_length=15),
                            x, trt, seed=3)
    assert scores.full_matrix.shape == (n, 3)
    assert np.max(np.abs(scores.full_matrix.sum(axis=1) - 1)) < 1e-8
    for j, lv in enumerate(trt.levels):
        mask = trt.indicator(lv)
        assert np.allclose(scores.received_prob[mask], scores.full_matrix[mask, j])


def test_plugin_vector_is_nonreference_probability():
    trt = TreatmentVector.from_labels(["Ctrl", "Trt"])
    plug = PluginPropensity(func=lambda x, labels: np.array([0.3, 0.8]))
    scores = fit_propensity(plug, np.zeros((2, 1)), trt)
    # row 0 received Ctrl: P(received) = 1 - 0.3
    assert np.allclose(scores.received_prob, [0.7, 0.8])


def test_plugin_matrix_and_shape_errors():
    trt = TreatmentVector.from_labels(["A", "B", "C"])
    good = PluginPropensity(func=lambda x, labels: np.full((3, 3), 1 / 3))
    scores = fit_propensity(good, np.zeros((3, 1)), trt)
    assert np.allclose(scores.received_prob, 1 / 3)
    bad = PluginPropensity(func=lambda x, labels: np.zeros((3, 2)))
    with pytest.raises(ValueError, match="3 x 3"):
        fit_propensity(bad, np.zeros((3, 1)), trt)


def test_missing_level_rejected():
    trt = TreatmentVector(labels=np.asarray(["a", "a", "a"], dtype=object),
                          levels=["a", "b"], reference="a")
    with pytest.raises(DataError, match="absent"):
        fit_propensity(LogisticLassoPropensity(), np.zeros((3, 1)), trt)


def test_plain_logistic_and_arm_fraction_helpers():
    rng = np.random.default_rng(4)
    n = 500
    x = rng.normal(size=(n, 3))
    labels = (rng.random(n) < 0.4).astype(int)
    trt = TreatmentVector.from_labels(labels)
    s1 = fit_propensity(plain_logistic_propensity(), x, trt)
    assert abs(s1.prob_of_level(trt, 1).mean() - 0.4) < 0.05
    s2 = fit_propensity(arm_fraction_propensity(), x, trt)
    expect = labels.mean()
    assert np.allclose(np.unique(s2.prob_of_level(trt, 1)), expect)


def test_overlap_single_bin_when_constant():
    trt = TreatmentVector.from_labels(["a", "b", "a", "b"])
    scores = fit_propensity(ConstantPropensity(0.5), np.zeros((4, 1)), trt)
    table = overlap_summary(scores, trt, bins=10)
    for lv in trt.levels:
        assert (table.counts[lv] > 0).sum() == 1
    assert not table.warning


def test_overlap_disjoint_supports_warn():
    rng = np.random.default_rng(5)
    n = 100
    labels = np.array(["A"] * 50 + ["B"] * 50)
    trt = TreatmentVector.from_labels(labels)
    pa = rng.uniform(0.1, 0.4, 50)
    pb = rng.uniform(0.6, 0.9, 50)
    # plugin returns P(non-reference) = P("B")
    pvec = np.concatenate([pa, pb])
    scores = fit_propensity(PluginPropensity(func=lambda x, t: pvec),
                            np.zeros((n, 1)), trt)
    table = overlap_summary(scores, trt, bins=10)
    assert table.warning


def test_overlap_csv_rows_schema():
    trt = TreatmentVector.from_labels(["a", "b", "a", "b"])
    scores = fit_propensity(ConstantPropensity(0.4), np.zeros((4, 1)), trt)
    table = overlap_summary(scores, trt, bins=5)
    rows = table.rows()
    assert len(rows) == 2 * 5
    level, lo, hi, count, dens = rows[0]
    assert level in trt.levels and 0.0 <= lo < hi <= 1.0


def test_overlap_sim3_both_arms_populated():
    # desk-scale simulated data: both arms carry mass over the bulk of (0,1)
    from subgroupkit.simulation import Sim3Config, generate_sim3

    ds, _ = generate_sim3(Sim3Config(n=1000, p=50, seed=0))
    scores = fit_propensity(plain_logistic_propensity(), ds.x, ds.trt)
    table = overlap_summary(scores, ds.trt, bins=10)
    for lv in ds.trt.levels:
        assert table.counts[lv].sum() > 0
        assert table.arm_min[lv] < 0.35 and table.arm_max[lv] > 0.65
