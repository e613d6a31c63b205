import numpy as np
import pytest

from subgroupkit.augmentation import AugmentSpec
from subgroupkit.data_model import Dataset, Outcome, TreatmentVector
from subgroupkit.fitting import FitRecipe, fit_subgroup
from subgroupkit.propensity import (ConstantPropensity, LogisticLassoPropensity,
                                    PluginPropensity)
from subgroupkit.serialize import (dump_json, load_json, model_to_dict,
                                   propensity_from_config, propensity_to_config,
                                   recipe_from_config, recipe_to_config,
                                   rehydrate_model, report_text, report_to_dict,
                                   summary_text)
from subgroupkit.solvers import Lasso
from subgroupkit.validation import ValidationSpec, validate


def _fitted(seed=0, **recipe_kw):
    rng = np.random.default_rng(seed)
    n, p = 250, 5
    x = rng.normal(size=(n, p))
    t01 = rng.binomial(1, 0.5, n)
    y = x[:, 0] * (2 * t01 - 1) + rng.normal(size=n)
    ds = Dataset(x=x, outcome=Outcome.continuous(y),
                 trt=TreatmentVector.from_labels(t01))
    recipe = FitRecipe(propensity=ConstantPropensity(0.5), **recipe_kw)
    return ds, fit_subgroup(ds, recipe, seed=seed)


def test_model_json_roundtrip(tmp_path):
    ds, model = _fitted(penalty=Lasso(path_length=25, cv_folds=5))
    d = model_to_dict(model)
    path = tmp_path / "m.json"
    dump_json(d, path)
    back = load_json(path)
    re = rehydrate_model(back, ds)
    assert np.allclose(re.coefficients, model.coefficients)
    assert np.allclose(re.benefit_scores, model.benefit_scores)
    assert np.array_equal(re.recommendations, model.recommendations)
    assert re.cutpoint_value == model.cutpoint_value
    assert re.effect_table.deltas.keys() == model.effect_table.deltas.keys()


def test_recipe_config_roundtrip():
    recipe = FitRecipe(loss="owl_logistic_flip", method="weighting",
                       propensity=LogisticLassoPropensity(cv_folds=7),
                       augmentation=AugmentSpec(arm_weights=(0.25, 0.75)),
                       penalty=Lasso(selection="1se"), cutpoint="quant75",
                       reference=1)
    cfg = recipe_to_config(recipe)
    back = recipe_from_config(cfg)
    assert back.loss == "owl_logistic_flip"
    assert back.propensity.cv_folds == 7
    assert back.augmentation.arm_weights == (0.25, 0.75)
    assert back.penalty.selection == "1se"
    assert back.cutpoint.kind == "quantile" and back.cutpoint.value == 0.75
    assert back.reference == 1


def test_plugin_propensity_not_reconstructible():
    plug = PluginPropensity(func=lambda x, t: np.full(len(t), 0.5), name="mine")
    cfg = propensity_to_config(plug)
    with pytest.raises(ValueError, match="mine"):
        propensity_from_config(cfg)


def test_named_plugin_propensities_roundtrip():
    for kind in ("plain_logistic", "arm_fraction"):
        model = propensity_from_config({"kind": kind})
        assert propensity_to_config(model) == {"kind": kind}


def test_summary_text_blocks():
    ds, model = _fitted()
    text = summary_text(model)
    assert "Average outcomes" in text
    assert "Treatment effects conditional on subgroups" in text
    assert "Benefit score quantiles" in text
    assert "biased" in text
    assert "main effect" in text


def test_report_text_and_dict():
    ds, model = _fitted()
    report = validate(model, ds, ValidationSpec(method="boot", B=4,
                                                quantiles=(0.5,), seed=1))
    text = report_text(report)
    assert "bootstrap bias correction" in text
    assert "SE =" in text
    d = report_to_dict(report, include_draws=False)
    assert d["B"] == 4 and "draws" not in d["overall"]
    d2 = report_to_dict(report)
    assert len(d2["overall"]["draws"]) == 4


def test_non_retained_model_not_serializable():
    ds, model = _fitted(retain_call=False)
    with pytest.raises(ValueError, match="retain_call"):
        model_to_dict(model)
