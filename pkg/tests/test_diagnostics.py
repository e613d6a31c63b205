import itertools

import numpy as np
import pytest

from subgroupkit.data_model import Dataset, Outcome, TreatmentVector
from subgroupkit.diagnostics import (PlotData, hommel_adjust, plot_data,
                                     summarize_subgroups)
from subgroupkit.fitting import FitRecipe, fit_subgroup
from subgroupkit.propensity import ConstantPropensity
from subgroupkit.validation import ValidationSpec, validate


def closed_testing_oracle(p):
    """Adjusted p-values from exhaustive closed testing with Simes local tests."""
    p = np.asarray(p, dtype=float)
    n = len(p)
    adj = np.zeros(n)
    for i in range(n):
        best = 0.0
        for r in range(1, n + 1):
            for S in itertools.combinations(range(n), r):
                if i not in S:
                    continue
                ps = np.sort(p[list(S)])
                simes = np.min(len(S) * ps / np.arange(1, len(S) + 1))
                best = max(best, min(simes, 1.0))
        adj[i] = best
    return adj


def test_hommel_equals_closed_testing_exhaustively():
    rng = np.random.default_rng(0)
    for _ in range(400):
        n = int(rng.integers(1, 7))
        p = rng.integers(0, 101, n) * 0.01
        assert np.array_equal(hommel_adjust(p), closed_testing_oracle(p))


def test_hommel_single_p_identity():
    assert hommel_adjust([0.123]).tolist() == [0.123]


def test_hommel_monotone_in_raw_order():
    rng = np.random.default_rng(1)
    for _ in range(50):
        p = rng.random(6)
        adj = hommel_adjust(p)
        order = np.argsort(p)
        assert np.all(np.diff(adj[order]) >= -1e-15)


def test_hommel_known_grid():
    assert np.allclose(hommel_adjust([0.01, 0.02, 0.03, 0.04]),
                       [0.04, 0.04, 0.04, 0.04])


def _model_and_data(rng, n=300):
    x = rng.normal(size=(n, 5))
    x[:, 4] = rng.binomial(1, 0.4, n)  # a binary covariate
    t01 = rng.binomial(1, 0.5, n)
    T = 2 * t01 - 1
    y = x[:, 0] * T + rng.normal(size=n)
    ds = Dataset(x=x, outcome=Outcome.continuous(y),
                 trt=TreatmentVector.from_labels(t01))
    model = fit_subgroup(ds, FitRecipe(propensity=ConstantPropensity(0.5)))
    return ds, model


def test_summarize_differences_exact():
    rng = np.random.default_rng(2)
    ds, model = _model_and_data(rng)
    rows = summarize_subgroups(ds.x, model.recommendations, model.reference,
                               names=ds.covariate_names)
    rec = model.recommendations
    in_ref = np.asarray([r == model.reference for r in rec.tolist()])
    for j, row in enumerate(rows):
        a = ds.x[in_ref, j]
        b = ds.x[~in_ref, j]
        assert row.difference == a.mean() - b.mean()
        assert abs(row.difference - (row.mean_ref_rec - row.mean_other_rec)) < 1e-15
        assert row.se_ref_rec == pytest.approx(a.std(ddof=1) / np.sqrt(len(a)))
    assert rows[4].test == "chi2"
    assert rows[0].test == "welch_t"


def test_summarize_null_rarely_passes_strict_threshold():
    # permutation-null data: with a 0.01 threshold nothing should survive in
    # the vast majority of runs
    hits = 0
    runs = 60
    for rep in range(runs):
        rng = np.random.default_rng(1000 + rep)
        x = rng.normal(size=(120, 6))
        rec = np.asarray(rng.choice([0, 1], 120), dtype=object)
        rows = summarize_subgroups(x, rec, 0, p_threshold=0.01)
        hits += bool(rows)
    assert hits <= runs * 0.05 + 2


def test_summarize_detects_separation():
    rng = np.random.default_rng(3)
    ds, model = _model_and_data(rng, n=400)
    # x0 drives the rule, so its subgroup means must differ strongly
    rows = summarize_subgroups(ds.x, model.recommendations, model.reference,
                               names=ds.covariate_names, p_threshold=0.01)
    assert any(r.name == "x1" for r in rows)


def test_zero_variance_covariate_flagged():
    x = np.column_stack([np.ones(40), np.random.default_rng(4).normal(size=40)])
    rec = np.asarray([0] * 20 + [1] * 20, dtype=object)
    rows = summarize_subgroups(x, rec, 0)
    assert rows[0].zero_variance and rows[0].raw_p == 1.0


def test_plot_data_interaction_rows():
    rng = np.random.default_rng(5)
    ds, model = _model_and_data(rng)
    pd = plot_data(model, "interaction", outcome=ds.outcome, trt=ds.trt)
    assert isinstance(pd, PlotData)
    assert len(pd.rows) == 4  # 2x2 received-by-recommended cells
    assert pd.columns == ["group", "treatment", "value", "n"]


def test_plot_data_density_counts_sum_to_group_sizes():
    rng = np.random.default_rng(6)
    ds, model = _model_and_data(rng)
    pd = plot_data(model, "density", outcome=ds.outcome, trt=ds.trt)
    total = sum(r[4] for r in pd.rows)
    assert total == ds.n


def test_plot_data_conditional_sorted_and_finite():
    rng = np.random.default_rng(7)
    ds, model = _model_and_data(rng)
    pd = plot_data(model, "conditional", outcome=ds.outcome, trt=ds.trt)
    by_trt = {}
    for lv, score, value, smooth in pd.rows:
        by_trt.setdefault(lv, []).append((score, smooth))
        assert np.isfinite(smooth)
    for lv, rows in by_trt.items():
        scores = [r[0] for r in rows]
        assert scores == sorted(scores)


def test_plot_data_validation_kinds():
    rng = np.random.default_rng(8)
    ds, model = _model_and_data(rng, n=200)
    report = validate(model, ds, ValidationSpec(method="train_test", B=4,
                                                quantiles=(0.5, 0.75), seed=0))
    pd = plot_data(report, "boxplot")
    assert pd.columns == ["group", "treatment", "replication", "value"]
    pd = plot_data(report, "conditional")
    assert pd.columns == ["quantile", "group", "treatment", "value", "se"]
    assert len({r[0] for r in pd.rows}) == 2


def test_plot_data_unknown_kind():
    rng = np.random.default_rng(9)
    ds, model = _model_and_data(rng, n=100)
    with pytest.raises(ValueError, match="unknown plot kind"):
        plot_data(model, "sparkline", outcome=ds.outcome, trt=ds.trt)


def test_plot_data_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(10)
    ds, model = _model_and_data(rng, n=100)
    pd = plot_data(model, "interaction", outcome=ds.outcome, trt=ds.trt)
    path = tmp_path / "plot.csv"
    pd.to_csv(path)
    text = path.read_text().splitlines()
    assert text[0] == "# kind: interaction"
    assert text[1].split(",") == ["group", "treatment", "value", "n"]
    assert len(text) == 2 + len(pd.rows)
