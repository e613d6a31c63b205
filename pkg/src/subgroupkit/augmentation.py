"""Efficiency augmentation: outcome-model predictions averaged over arms.

The built-in variant fits a lasso model of the outcome on main effects and
treatment interactions, predicts on the link scale at both treatment
assignments for every subject, and averages the two predictions.  The result
enters the benefit-score solver as a per-observation offset; the fitted
decision rule's optimality is unchanged while its variance can drop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import Dataset, code_binary
from .solvers import Lasso, SolveSpec, make_folds, solve_penalized_glm

_LINKS = {"continuous": "identity", "binary": "logit", "count": "log"}
_LINK_LOSS = {"continuous": "sq_loss", "binary": "logistic_loss", "count": "poisson_loss"}


@dataclass(frozen=True)
class AugmentSpec:
    """Augmentation configuration.

    kind 'builtin_lasso' fits outcome ~ intercept + trt + x + trt:x with a
    lasso penalty (link chosen by outcome kind) and averages link-scale
    predictions at both arms with weights `arm_weights`.  kind 'plugin'
    delegates to `func(x, y, trt_labels) -> link-scale offset vector`.
    """

    kind: str = "builtin_lasso"
    func: object = None
    arm_weights: tuple = (0.5, 0.5)
    cv_folds: int = 10

    def __post_init__(self):
        if self.kind not in ("builtin_lasso", "plugin"):
            raise ValueError("augmentation kind must be 'builtin_lasso' or 'plugin'")
        if self.kind == "plugin" and self.func is None:
            raise ValueError("plugin augmentation needs a function")
        if abs(sum(self.arm_weights) - 1.0) > 1e-12:
            raise ValueError("arm weights must sum to 1")


def build_augmentation(spec: AugmentSpec, data: Dataset, seed: int = 0) -> np.ndarray:
    """Link-scale offset vector a(x) for every row of `data`.

    Supported for continuous, binary, and count outcomes; survival outcomes
    have no augmentation path.  The same routine is re-run on each resample
    during validation (no state is carried over).
    """
    if data.outcome.kind == "survival":
        raise ValueError("augmentation is not supported for survival outcomes")
    y = data.outcome.values

    if spec.kind == "plugin":
        offset = np.asarray(spec.func(data.x, y, data.trt.labels), dtype=float)
        if offset.shape != (data.n,):
            raise ValueError(
                f"plugin augmentation returned shape {offset.shape}, expected ({data.n},)"
            )
        if not np.all(np.isfinite(offset)):
            raise ValueError("plugin augmentation returned non-finite predictions")
        return offset

    coded = code_binary(data.trt)
    t = coded.t.astype(float)
    n, p = data.n, data.p

    # intercept | trt | x | trt:x, with only the intercept unpenalized
    design = np.column_stack([np.ones(n), t, data.x, data.x * t[:, None]])
    penalized = np.ones(design.shape[1])
    penalized[0] = 0.0

    loss = _LINK_LOSS[data.outcome.kind]
    rng = np.random.default_rng(seed)
    clusters = data.match_id if data.match_id is not None else None
    folds = make_folds(n, spec.cv_folds, rng, clusters=clusters)
    res = solve_penalized_glm(
        SolveSpec(loss=loss, penalty=Lasso(cv_folds=spec.cv_folds)),
        design, y, np.ones(n), folds=folds, penalized=penalized,
    )
    beta = res.coefficients

    a_plus, a_minus = spec.arm_weights
    d_plus = np.column_stack([np.ones(n), np.ones(n), data.x, data.x])
    d_minus = np.column_stack([np.ones(n), -np.ones(n), data.x, -data.x])
    return a_plus * (d_plus @ beta) + a_minus * (d_minus @ beta)
