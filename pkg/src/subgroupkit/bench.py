"""Benchmark harness: fit named method variants on generated data and score
them against the generating truth on an independent test set."""

from __future__ import annotations

import numpy as np

from .augmentation import AugmentSpec
from .fitting import FitRecipe, fit_subgroup, predict_benefit
from .propensity import LogisticLassoPropensity
from .simulation import Sim4Config, evaluate_rule, generate_sim4
from .solvers import Lasso

_METHODS = {
    "sq_w_lasso": dict(loss="sq_loss", method="weighting", lasso=True, aug=False),
    "sq_a_lasso": dict(loss="sq_loss", method="a_learning", lasso=True, aug=False),
    "sq_w_lasso_aug": dict(loss="sq_loss", method="weighting", lasso=True, aug=True),
    "sq_a_lasso_aug": dict(loss="sq_loss", method="a_learning", lasso=True, aug=True),
    "fowl_logistic_w_lasso": dict(loss="owl_logistic_flip", method="weighting",
                                  lasso=True, aug=False),
    "fowl_logistic_w_lasso_aug": dict(loss="owl_logistic_flip", method="weighting",
                                      lasso=True, aug=True),
    "fowl_hinge_w": dict(loss="owl_hinge_flip", method="weighting", lasso=False,
                         aug=False),
}


def bench_methods() -> list:
    return sorted(_METHODS)


def make_recipe(name: str) -> FitRecipe:
    if name not in _METHODS:
        raise ValueError(f"unknown bench method {name!r}; available: {bench_methods()}")
    m = _METHODS[name]
    return FitRecipe(
        loss=m["loss"],
        method=m["method"],
        propensity=LogisticLassoPropensity(),
        penalty=Lasso() if m["lasso"] else None,
        augmentation=AugmentSpec() if m["aug"] else None,
    )


def run_bench(model: int, c: float, p: int, n_train: int, reps: int,
              methods, seed: int = 0) -> list:
    """Rows (method, model, c, repetition, rho, auc, value_gain)."""
    rows = []
    for name in methods:
        make_recipe(name)  # validate names before the expensive loop
    for rep in range(reps):
        cfg = Sim4Config(model=model, p=p, main_effect_scale=c, n_train=n_train,
                         seed=int(np.random.SeedSequence(
                             entropy=seed, spawn_key=(rep,)).generate_state(1)[0]))
        train, test, truth_test, _ = generate_sim4(cfg)
        for name in methods:
            recipe = make_recipe(name)
            fitted = fit_subgroup(train, recipe, seed=rep)
            scores = predict_benefit(fitted, test.x)
            metrics = evaluate_rule(scores[:, 0], truth_test)
            rows.append((name, model, c, rep, metrics.spearman_rho, metrics.auc,
                         metrics.value_gain))
    return rows
