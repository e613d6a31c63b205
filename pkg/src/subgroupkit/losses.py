"""Loss functions M(y, v), modified design matrices, and estimand transforms.

Each loss carries its value and first/second derivatives in v, the outcome
kinds it accepts, and how a fitted benefit score maps back to a treatment
contrast (difference) or ratio estimand.  The modified-design construction
turns weighted / centered-interaction minimization into a plain weighted
regression on a transformed design matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

WEIGHTING = "weighting"
A_LEARNING = "a_learning"
METHODS = (WEIGHTING, A_LEARNING)


def _sigmoid(v):
    # numerically stable logistic
    out = np.empty_like(np.asarray(v, dtype=float))
    v = np.asarray(v, dtype=float)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def _log1pexp(v):
    # log(1 + exp(v)) without overflow
    v = np.asarray(v, dtype=float)
    out = np.where(v > 30, v, np.log1p(np.exp(np.minimum(v, 30))))
    return out


def _signum(y):
    # sign with sign(0) = +1; irrelevant for flip losses since |y|=0 there
    return np.where(np.asarray(y, dtype=float) < 0, -1.0, 1.0)


@dataclass(frozen=True)
class LossSpec:
    """A loss M(y, v) with derivatives and domain/solver metadata.

    value/dv/d2v are vectorized over (y, v).  `solver` names the routine that
    minimizes the weighted empirical risk: 'glm' (iteratively reweighted
    coordinate descent), 'hinge' (margin solver), or 'cox' (partial
    likelihood).  `estimand` is 'delta', 'gamma', or None when the fitted
    score has no closed-form back-transform.
    """

    name: str
    value: Callable | None
    dv: Callable | None
    d2v: Callable | None
    outcome_kinds: tuple
    requires_nonneg: bool = False
    solver: str = "glm"
    estimand: str | None = None

    def check_outcome(self, kind: str, values: np.ndarray | None) -> None:
        if kind not in self.outcome_kinds:
            raise ValueError(f"loss {self.name!r} does not support {kind} outcomes")
        if self.requires_nonneg and values is not None and np.any(values < 0):
            raise ValueError(f"loss {self.name!r} requires non-negative outcomes")


def _make_losses() -> dict:
    losses = {}

    losses["sq_loss"] = LossSpec(
        name="sq_loss",
        value=lambda y, v: (y - v) ** 2,
        dv=lambda y, v: -2.0 * (y - v),
        d2v=lambda y, v: np.full_like(np.asarray(v, dtype=float), 2.0),
        outcome_kinds=("continuous", "binary", "count"),
        estimand="delta",
    )
    # binomial deviance; the estimand column follows from d/dv = sigma(v) - y
    losses["logistic_loss"] = LossSpec(
        name="logistic_loss",
        value=lambda y, v: _log1pexp(v) - y * np.asarray(v, dtype=float),
        dv=lambda y, v: _sigmoid(v) - y,
        d2v=lambda y, v: _sigmoid(v) * (1.0 - _sigmoid(v)),
        outcome_kinds=("binary",),
        estimand="delta",
    )
    losses["poisson_loss"] = LossSpec(
        name="poisson_loss",
        value=lambda y, v: np.exp(v) - y * np.asarray(v, dtype=float),
        dv=lambda y, v: np.exp(v) - y,
        d2v=lambda y, v: np.exp(v),
        outcome_kinds=("count", "continuous"),
        requires_nonneg=True,
        estimand="delta",
    )
    losses["owl_logistic"] = LossSpec(
        name="owl_logistic",
        value=lambda y, v: y * _log1pexp(-np.asarray(v, dtype=float)),
        dv=lambda y, v: -y * _sigmoid(-np.asarray(v, dtype=float)),
        d2v=lambda y, v: y * _sigmoid(v) * _sigmoid(-np.asarray(v, dtype=float)),
        outcome_kinds=("continuous", "binary", "count"),
        requires_nonneg=True,
        estimand="gamma",
    )
    losses["owl_logistic_flip"] = LossSpec(
        name="owl_logistic_flip",
        value=lambda y, v: np.abs(y) * _log1pexp(-_signum(y) * np.asarray(v, dtype=float)),
        dv=lambda y, v: -np.abs(y) * _signum(y) * _sigmoid(-_signum(y) * np.asarray(v, dtype=float)),
        d2v=lambda y, v: np.abs(y)
        * _sigmoid(_signum(y) * np.asarray(v, dtype=float))
        * _sigmoid(-_signum(y) * np.asarray(v, dtype=float)),
        outcome_kinds=("continuous", "binary", "count"),
    )
    losses["owl_hinge"] = LossSpec(
        name="owl_hinge",
        value=lambda y, v: y * np.maximum(0.0, 1.0 - np.asarray(v, dtype=float)),
        dv=lambda y, v: np.where(np.asarray(v, dtype=float) < 1.0, -y, 0.0),
        d2v=lambda y, v: np.zeros_like(np.asarray(v, dtype=float)),
        outcome_kinds=("continuous", "binary", "count"),
        requires_nonneg=True,
        solver="hinge",
    )
    losses["owl_hinge_flip"] = LossSpec(
        name="owl_hinge_flip",
        value=lambda y, v: np.abs(y) * np.maximum(0.0, 1.0 - _signum(y) * np.asarray(v, dtype=float)),
        dv=lambda y, v: np.where(
            _signum(y) * np.asarray(v, dtype=float) < 1.0, -np.abs(y) * _signum(y), 0.0
        ),
        d2v=lambda y, v: np.zeros_like(np.asarray(v, dtype=float)),
        outcome_kinds=("continuous", "binary", "count"),
        solver="hinge",
    )
    losses["cox_loss"] = LossSpec(
        name="cox_loss",
        value=None,
        dv=None,
        d2v=None,
        outcome_kinds=("survival",),
        solver="cox",
        estimand="gamma",
    )
    return losses


LOSSES = _make_losses()


def get_loss(loss) -> LossSpec:
    """Resolve a loss by name; LossSpec instances pass through (custom losses)."""
    if isinstance(loss, LossSpec):
        return loss
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}; available: {sorted(LOSSES)}")
    return LOSSES[loss]


def custom_loss(value, dv, d2v=None, *, outcome_kinds=("continuous", "binary", "count"),
                requires_nonneg=False, estimand=None) -> LossSpec:
    """Wrap a (value, dv, optional d2v) triple as a plug-in loss.

    Without d2v the loss can only be fit unpenalized (generic minimizer);
    with d2v the full penalized path is available.
    """
    return LossSpec(
        name="custom", value=value, dv=dv, d2v=d2v,
        outcome_kinds=tuple(outcome_kinds), requires_nonneg=requires_nonneg,
        solver="glm", estimand=estimand,
    )


def weighting_weight(t, pi):
    """Inverse-probability weight 1 / (t*pi + (1-t)/2): 1/pi if t=+1, 1/(1-pi) if t=-1."""
    t = np.asarray(t, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0.0) or np.any(pi >= 1.0):
        raise ValueError("propensity must lie strictly inside (0, 1)")
    return 1.0 / (t * pi + (1.0 - t) / 2.0)


def modified_design(method: str, x_with_intercept: np.ndarray, t, pi):
    """Row-scaled design and companion weights for the two estimation methods.

    weighting:  diag(t) @ X with inverse-probability weights;
    a_learning: diag((t+1)/2 - pi) @ X with unit weights.
    The first column of X must be the intercept (treatment main effect).
    """
    X = np.asarray(x_with_intercept, dtype=float)
    t = np.asarray(t, dtype=float)
    if X.ndim != 2 or X.shape[0] != t.shape[0]:
        raise ValueError("design and treatment dimensions do not match")
    if method == WEIGHTING:
        w = weighting_weight(t, pi)
        return X * t[:, None], w
    if method == A_LEARNING:
        pi = np.asarray(pi, dtype=float)
        if pi.shape != t.shape:
            raise ValueError("propensity vector length does not match treatment")
        m = (t + 1.0) / 2.0 - pi
        return X * m[:, None], np.ones_like(t)
    raise ValueError(f"unknown method {method!r}")


def flip_transform(y, v, base: str):
    """Flip-loss value |y| * base_loss(sign(y) * v); admits negative outcomes."""
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    s = _signum(y)
    if base == "logistic":
        return np.abs(y) * _log1pexp(-s * v)
    if base == "hinge":
        return np.abs(y) * np.maximum(0.0, 1.0 - s * v)
    raise ValueError(f"unknown flip base {base!r}")


def estimand_from_score(loss, method: str, f, pi=None):
    """Back-transform a benefit score into the loss's estimand.

    Returns (target, value) with target one of 'delta', 'gamma', 'score'.
    Losses without a closed-form transform return the score unchanged.
    """
    spec = get_loss(loss)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    f = np.asarray(f, dtype=float)
    if spec.estimand is None:
        return "score", f

    if spec.name == "sq_loss":
        return "delta", 2.0 * f if method == WEIGHTING else f.copy()
    if spec.name == "poisson_loss":
        if method == WEIGHTING:
            return "delta", np.exp(f) - np.exp(-f)
        pi = np.asarray(pi, dtype=float)
        return "delta", np.exp((1.0 - pi) * f) - np.exp(-pi * f)
    if spec.name == "logistic_loss":
        if method == WEIGHTING:
            ef = np.exp(f)
            return "delta", (ef - 1.0) / (ef + 1.0)
        pi = np.asarray(pi, dtype=float)
        return "delta", (np.exp(f) - 1.0) / ((np.exp(pi * f) + 1.0) * (1.0 + np.exp((1.0 - pi) * f)))
    if spec.name == "owl_logistic":
        if method == WEIGHTING:
            return "gamma", np.exp(f)
        pi = np.asarray(pi, dtype=float)
        return "gamma", (1.0 + np.exp((1.0 - pi) * f)) / (1.0 + np.exp(-pi * f))
    if spec.name == "cox_loss":
        return "gamma", np.exp(-f)
    return "score", f


def null_effect(target: str) -> float:
    """The no-effect point of an estimand: 0 for differences, 1 for ratios."""
    return {"delta": 0.0, "gamma": 1.0, "score": 0.0}[target]


def _tie_starts_ends(t_sorted: np.ndarray):
    """Per-position indices of the first and last element of each tie run."""
    n = len(t_sorted)
    new_run = np.empty(n, dtype=bool)
    new_run[0] = True
    new_run[1:] = t_sorted[1:] != t_sorted[:-1]
    run_id = np.cumsum(new_run) - 1
    starts = np.flatnonzero(new_run)
    ends = np.append(starts[1:], n) - 1
    return starts[run_id], ends[run_id]


def cox_eta_quantities(eta, time, status, weights):
    """Weighted negative Cox log partial likelihood and its eta-derivatives.

    Breslow handling of tied event times; observation weights enter both the
    event terms and the risk-set sums.  Returns (value, g_eta, curv_eta):
    the per-observation gradient and Hessian diagonal with respect to the
    linear predictor, in the original row order.
    """
    eta = np.asarray(eta, dtype=float)
    time = np.asarray(time, dtype=float)
    status = np.asarray(status, dtype=float)
    w = np.asarray(weights, dtype=float)
    if status.sum() == 0:
        raise ValueError("Cox loss needs at least one observed event")

    order = np.argsort(time, kind="stable")
    t_s, d_s, w_s = time[order], status[order], w[order]
    # guard the exponentials; |eta| this large means the fit already diverged
    r_s = w_s * np.exp(np.clip(eta[order], -200, 200))

    n = len(t_s)
    first_of_run, last_of_run = _tie_starts_ends(t_s)
    # risk[i] = sum of r over {j: t_j >= t_i}; ties share the full risk set
    rev_csum = np.cumsum(r_s[::-1])[::-1]
    risk = rev_csum[first_of_run]

    ev = d_s > 0
    value = -np.sum(w_s[ev] * (eta[order][ev] - np.log(risk[ev])))

    # A_i accumulates w_k/risk_k over events k with t_k <= t_i (i is then in
    # the risk set of k); B_i the same with squared denominators
    csum_a = np.cumsum(np.where(ev, w_s / risk, 0.0))
    csum_b = np.cumsum(np.where(ev, w_s / risk**2, 0.0))
    A = csum_a[last_of_run]
    B = csum_b[last_of_run]

    g_eta = -w_s * d_s + r_s * A
    curv = np.maximum(r_s * A - r_s**2 * B, 0.0)

    inv = np.empty(n, dtype=np.int64)
    inv[order] = np.arange(n)
    return float(value), g_eta[inv], curv[inv]


def cox_negloglik(beta, design, time, status, weights):
    """Weighted negative Cox partial likelihood at beta, plus derivatives.

    Returns (value, gradient, eta_curvature): gradient with respect to beta
    and the per-observation Hessian diagonal with respect to the linear
    predictor (the working weights of the penalized quadratic approximation).
    """
    X = np.asarray(design, dtype=float)
    eta = X @ np.asarray(beta, dtype=float)
    value, g_eta, curv = cox_eta_quantities(eta, time, status, weights)
    return value, X.T @ g_eta, curv
