"""Received-treatment probability estimation and overlap diagnostics.

A propensity model is a refittable procedure, never a frozen probability
vector: resampling-based validation refits it on every resample.  Estimated
variants use lasso-penalized (multinomial) logistic regression with CV-chosen
penalty; fold membership is a hash of row content, so refitting a permuted
copy of the rows returns correspondingly permuted scores.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ._kernels import cd_wls
from .data_model import DataError, TreatmentVector
from .losses import _sigmoid
from .solvers import Lasso, SolveSpec, solve_penalized_glm

PROB_CLIP = 1e-6
_MVV_FLOOR_MULTI = 1e-5


@dataclass(frozen=True)
class PropensityScores:
    """Per-observation probability of the treatment actually received.

    full_matrix, when present, holds P(T = level | x) with columns ordered by
    the treatment levels.
    """

    received_prob: np.ndarray
    levels: list
    full_matrix: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.received_prob, dtype=float)
        if np.any(p <= 0.0) or np.any(p >= 1.0):
            raise ValueError("received-treatment probabilities must lie strictly in (0, 1)")
        object.__setattr__(self, "received_prob", p)
        if self.full_matrix is not None:
            m = np.asarray(self.full_matrix, dtype=float)
            if m.shape != (len(p), len(self.levels)):
                raise ValueError("full_matrix must be n x K with K the number of levels")
            if np.max(np.abs(m.sum(axis=1) - 1.0)) > 1e-8:
                raise ValueError("full_matrix rows must sum to 1")
            object.__setattr__(self, "full_matrix", m)

    def prob_of_level(self, trt: TreatmentVector, level) -> np.ndarray:
        """P(T = level | x); for binary models derived from received_prob."""
        if self.full_matrix is not None:
            return self.full_matrix[:, self.levels.index(level)]
        if len(self.levels) != 2:
            raise ValueError("full matrix required for more than two levels")
        received = trt.indicator(level)
        return np.where(received, self.received_prob, 1.0 - self.received_prob)


def _clip(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)


def _row_fold_hash(x: np.ndarray, labels: np.ndarray, nfolds: int, seed: int) -> np.ndarray:
    """Fold ids from a digest of each row's bytes: permutation-equivariant."""
    n = x.shape[0]
    folds = np.empty(n, dtype=np.int64)
    for i in range(n):
        h = hashlib.blake2b(digest_size=8)
        h.update(np.ascontiguousarray(x[i]).tobytes())
        h.update(str(labels[i]).encode())
        h.update(str(seed).encode())
        folds[i] = int.from_bytes(h.digest(), "little") % nfolds
    return folds


@dataclass(frozen=True)
class ConstantPropensity:
    """Known randomization probability of the non-reference arm."""

    value: float

    def __post_init__(self):
        if not 0.0 < self.value < 1.0:
            raise ValueError("constant propensity must lie in (0, 1)")

    def fit(self, x, trt: TreatmentVector, seed: int = 0) -> PropensityScores:
        if trt.n_levels != 2:
            raise DataError("constant propensity applies to binary treatment only")
        nonref = [lv for lv in trt.levels if lv != trt.reference][0]
        received = trt.indicator(nonref)
        probs = np.where(received, self.value, 1.0 - self.value)
        ref_idx = trt.levels.index(trt.reference)
        full = np.empty((trt.n, 2))
        full[:, ref_idx] = 1.0 - self.value
        full[:, 1 - ref_idx] = self.value
        return PropensityScores(received_prob=probs, levels=trt.levels, full_matrix=full)


@dataclass(frozen=True)
class LogisticLassoPropensity:
    """Binary logistic regression with lasso penalty; lambda by K-fold CV."""

    cv_folds: int = 10
    lambda_rule: str = "min"

    def fit(self, x, trt: TreatmentVector, seed: int = 0) -> PropensityScores:
        if trt.n_levels != 2:
            raise DataError("logistic-lasso propensity applies to binary treatment only")
        _check_levels_present(trt)
        x = np.asarray(x, dtype=float)
        nonref = [lv for lv in trt.levels if lv != trt.reference][0]
        yb = trt.indicator(nonref).astype(float)
        design = np.column_stack([np.ones(len(yb)), x])
        folds = _row_fold_hash(x, trt.labels, self.cv_folds, seed)
        spec = SolveSpec(loss="logistic_loss",
                         penalty=Lasso(cv_folds=self.cv_folds, selection=self.lambda_rule))
        res = solve_penalized_glm(spec, design, yb, np.ones(len(yb)), folds=folds)
        pi = _clip(_sigmoid(design @ res.coefficients))
        probs = np.where(yb > 0, pi, 1.0 - pi)
        ref_idx = trt.levels.index(trt.reference)
        full = np.empty((trt.n, 2))
        full[:, ref_idx] = 1.0 - pi
        full[:, 1 - ref_idx] = pi
        return PropensityScores(received_prob=_clip(probs), levels=trt.levels,
                                full_matrix=full)


@dataclass(frozen=True)
class MultinomialLassoPropensity:
    """Symmetric multinomial logistic lasso by grouped-by-class descent."""

    cv_folds: int = 10
    lambda_rule: str = "min"
    path_length: int = 40
    max_cycles: int = 30

    def fit(self, x, trt: TreatmentVector, seed: int = 0) -> PropensityScores:
        _check_levels_present(trt)
        x = np.asarray(x, dtype=float)
        n = trt.n
        K = trt.n_levels
        design = np.column_stack([np.ones(n), x])
        Y = np.column_stack([trt.indicator(lv).astype(float) for lv in trt.levels])
        folds = _row_fold_hash(x, trt.labels, self.cv_folds, seed)

        lam_max = self._lambda_max(design, Y)
        lambdas = lam_max * (1e-3 ** (np.arange(self.path_length) / (self.path_length - 1)))

        full_path = self._path(design, Y, lambdas)
        fold_ids = np.unique(folds)
        dev = np.zeros((len(fold_ids), len(lambdas)))
        for fi, k in enumerate(fold_ids):
            te = folds == k
            tr = ~te
            path_k = self._path(design[tr], Y[tr], lambdas)
            for li in range(len(lambdas)):
                P = _softmax(design[te] @ path_k[li].T)
                dev[fi, li] = -2.0 * float(np.mean(np.log(np.maximum(
                    (Y[te] * P).sum(axis=1), 1e-12))))
        cvm = dev.mean(axis=0)
        best = int(np.argmin(cvm))
        if self.lambda_rule == "1se":
            se = dev.std(axis=0, ddof=1) / np.sqrt(len(fold_ids))
            best = int(np.flatnonzero(cvm <= cvm[best] + se[best])[0])

        B = full_path[best]
        P = _softmax(design @ B.T)
        P = np.clip(P, PROB_CLIP, 1.0)
        P = P / P.sum(axis=1, keepdims=True)
        received = (Y * P).sum(axis=1)
        return PropensityScores(received_prob=_clip(received), levels=trt.levels,
                                full_matrix=P)

    def _lambda_max(self, design, Y):
        n, K = Y.shape[0], Y.shape[1]
        # gradient at the intercept-only symmetric fit
        pbar = Y.mean(axis=0)
        grad = 0.0
        for k in range(K):
            g = np.abs((design[:, 1:] * (pbar[k] - Y[:, k])[:, None]).sum(axis=0)) / n
            grad = max(grad, float(g.max()))
        return max(grad, 1e-10)

    def _path(self, design, Y, lambdas):
        n, p1 = design.shape
        K = Y.shape[1]
        pen = np.ones(p1)
        pen[0] = 0.0
        B = np.zeros((K, p1))
        out = np.zeros((len(lambdas), K, p1))
        U = np.ascontiguousarray(design)
        for li, lam in enumerate(lambdas):
            for cycle in range(self.max_cycles):
                delta = 0.0
                eta = U @ B.T
                for k in range(K):
                    # class-k update: binary logistic with the log-sum of the
                    # other classes' exponentials held fixed as an offset
                    others = np.delete(eta, k, axis=1)
                    m = others.max(axis=1)
                    offset = m + np.log(np.exp(others - m[:, None]).sum(axis=1))
                    beta_k = B[k].copy()
                    for _ in range(4):
                        v = U @ beta_k
                        pk = _sigmoid(v - offset)
                        mvv = np.maximum(pk * (1.0 - pk), _MVV_FLOOR_MULTI)
                        r = -(pk - Y[:, k]) / mvv
                        col_ssq = (mvv[:, None] * U**2).sum(axis=0) / n
                        b_old = beta_k.copy()
                        cd_wls(U, r, mvv, beta_k, lam, pen, col_ssq, 2_000, 1e-10)
                        if np.max(np.abs(beta_k - b_old)) < 1e-7:
                            break
                    delta = max(delta, float(np.max(np.abs(B[k] - beta_k))))
                    eta[:, k] = U @ beta_k
                    B[k] = beta_k
                if delta < 1e-6:
                    break
            out[li] = B
        return out


def _softmax(eta: np.ndarray) -> np.ndarray:
    e = np.exp(eta - eta.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class PluginPropensity:
    """User propensity procedure over (x, treatment labels).

    For binary treatment the function may return the vector P(T = non-reference
    level | x); for any number of levels it may return the n x K matrix of
    assignment probabilities with columns ordered by the treatment levels.
    """

    func: object
    name: str = "plugin"

    def fit(self, x, trt: TreatmentVector, seed: int = 0) -> PropensityScores:
        out = np.asarray(self.func(np.asarray(x, dtype=float), trt.labels), dtype=float)
        if out.ndim == 2:
            if out.shape != (trt.n, trt.n_levels):
                raise ValueError(
                    f"plugin propensity matrix must be {trt.n} x {trt.n_levels}, got {out.shape}"
                )
            out = np.clip(out, PROB_CLIP, 1.0)
            out = out / out.sum(axis=1, keepdims=True)
            received = np.zeros(trt.n)
            for j, lv in enumerate(trt.levels):
                received[trt.indicator(lv)] = out[trt.indicator(lv), j]
            return PropensityScores(received_prob=_clip(received), levels=trt.levels,
                                    full_matrix=out)
        if out.shape == ():  # scalar constant
            out = np.full(trt.n, float(out))
        if out.shape != (trt.n,):
            raise ValueError("plugin propensity must return a length-n vector or n x K matrix")
        if trt.n_levels != 2:
            raise ValueError("vector-valued plugin propensity needs the n x K matrix form "
                             "for more than two levels")
        # binary vector form is P(T = non-reference | x), as in wrapper
        # functions around a logistic model of the non-reference arm
        pi = _clip(out)
        nonref = [lv for lv in trt.levels if lv != trt.reference][0]
        received = np.where(trt.indicator(nonref), pi, 1.0 - pi)
        ref_idx = trt.levels.index(trt.reference)
        full = np.empty((trt.n, 2))
        full[:, ref_idx] = 1.0 - pi
        full[:, 1 - ref_idx] = pi
        return PropensityScores(received_prob=_clip(received), levels=trt.levels,
                                full_matrix=full)


def _check_levels_present(trt: TreatmentVector) -> None:
    for lv in trt.levels:
        cnt = int(trt.indicator(lv).sum())
        if cnt == 0:
            raise DataError(f"treatment level {lv!r} is absent from the data")
        if cnt < 2:
            raise DataError(f"treatment level {lv!r} has fewer than 2 observations")


def fit_propensity(model, x, trt: TreatmentVector, seed: int = 0) -> PropensityScores:
    """Run a propensity procedure on (x, trt) and validate its output."""
    return model.fit(x, trt, seed=seed)


def plain_logistic_propensity() -> PluginPropensity:
    """Unpenalized logistic-regression propensity (randomization-model workhorse)."""

    def _fit(x, labels):
        trt = TreatmentVector.from_labels(labels)
        if len(trt.levels) != 2:
            raise DataError("plain logistic propensity applies to binary treatment only")
        nonref = [lv for lv in trt.levels if lv != trt.reference][0]
        yb = trt.indicator(nonref).astype(float)
        design = np.column_stack([np.ones(len(yb)), x])
        spec = SolveSpec(loss="logistic_loss", penalty=None, tol=1e-10)
        res = solve_penalized_glm(spec, design, yb, np.ones(len(yb)))
        return _sigmoid(design @ res.coefficients)

    return PluginPropensity(func=_fit, name="plain_logistic")


def arm_fraction_propensity() -> PluginPropensity:
    """Observed non-reference arm fraction as a constant estimated propensity."""

    def _fit(x, labels):
        trt = TreatmentVector.from_labels(labels)
        nonref = [lv for lv in trt.levels if lv != trt.reference][0]
        frac = float(np.mean(trt.indicator(nonref)))
        frac = min(max(frac, PROB_CLIP), 1.0 - PROB_CLIP)
        return np.full(len(labels), frac)

    return PluginPropensity(func=_fit, name="arm_fraction")


@dataclass(frozen=True)
class OverlapTable:
    """Histogram of P(T = first level | x) per received arm, plus range flags."""

    levels: list
    bin_edges: np.ndarray
    counts: dict
    densities: dict
    arm_min: dict
    arm_max: dict
    warning: bool
    warning_detail: str = ""

    def rows(self):
        """Long-format rows (level, bin_lo, bin_hi, count, density)."""
        out = []
        for lv in self.levels:
            for b in range(len(self.bin_edges) - 1):
                out.append((lv, float(self.bin_edges[b]), float(self.bin_edges[b + 1]),
                            int(self.counts[lv][b]), float(self.densities[lv][b])))
        return out


def overlap_summary(scores: PropensityScores, trt: TreatmentVector,
                    bins: int = 10) -> OverlapTable:
    """Histogram the first-level assignment probability within each received arm.

    Flags a warning when some bin holds mass for one arm while another arm
    has none anywhere in that bin's range on the same side (disjoint
    supports over at least one bin).
    """
    if bins < 2:
        raise ValueError("bins must be at least 2")
    first = trt.levels[0]
    prob_first = scores.prob_of_level(trt, first)
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts = {}
    dens = {}
    amin = {}
    amax = {}
    for lv in trt.levels:
        mask = trt.indicator(lv)
        vals = prob_first[mask]
        c, _ = np.histogram(vals, bins=edges)
        counts[lv] = c
        width = 1.0 / bins
        dens[lv] = c / max(len(vals), 1) / width
        amin[lv] = float(vals.min()) if len(vals) else np.nan
        amax[lv] = float(vals.max()) if len(vals) else np.nan

    warning = False
    detail = ""
    lvs = trt.levels
    for i in range(len(lvs)):
        for j in range(i + 1, len(lvs)):
            a, b = lvs[i], lvs[j]
            gap_lo = min(amin[a], amin[b])
            gap_hi = max(amin[a], amin[b])
            if np.floor(gap_hi * bins) - np.ceil(gap_lo * bins) >= 1:
                warning = True
                detail = (f"arm {a!r} and arm {b!r} have no common support below "
                          f"{gap_hi:.3f}")
            gap_lo2 = min(amax[a], amax[b])
            gap_hi2 = max(amax[a], amax[b])
            if np.floor(gap_hi2 * bins) - np.ceil(gap_lo2 * bins) >= 1:
                warning = True
                detail = (f"arm {a!r} and arm {b!r} have no common support above "
                          f"{gap_lo2:.3f}")
    return OverlapTable(levels=lvs, bin_edges=edges, counts=counts, densities=dens,
                        arm_min=amin, arm_max=amax, warning=warning,
                        warning_detail=detail)
