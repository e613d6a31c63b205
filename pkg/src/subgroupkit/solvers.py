"""Weighted empirical-risk minimizers over linear scores.

Closed-form weighted least squares, a glmnet-style penalized GLM with a
geometric lambda path and K-fold cross validation, a dual solver for the
weighted linear hinge loss, and a Newton / penalized solver for the weighted
Cox partial likelihood.  All solvers are pure functions of their inputs and
fold assignments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import cd_wls, cd_wls_gram, smo_hinge
from .losses import LossSpec, cox_eta_quantities, get_loss

_MVV_FLOOR = 1e-5


@dataclass(frozen=True)
class Lasso:
    """L1 penalty settings: path geometry, CV folds, and selection rule."""

    path_length: int = 100
    path_min_ratio: float | None = None  # default 1e-4 if n > p else 1e-2
    cv_folds: int = 10
    selection: str = "min"  # 'min' or '1se'
    metric: str = "deviance"  # 'deviance' or 'auc'
    standardize: bool = True
    lambdas: tuple | None = None  # explicit path override

    def __post_init__(self):
        if self.path_min_ratio is not None and not 0 < self.path_min_ratio < 1:
            raise ValueError("path_min_ratio must lie in (0, 1)")
        if self.selection not in ("min", "1se"):
            raise ValueError("selection must be 'min' or '1se'")
        if self.metric not in ("deviance", "auc"):
            raise ValueError("metric must be 'deviance' or 'auc'")


@dataclass(frozen=True)
class SolveSpec:
    loss: object = "sq_loss"
    penalty: Lasso | None = None
    offset: np.ndarray | None = None
    max_iter: int = 100_000
    tol: float = 1e-10

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class SolveResult:
    coefficients: np.ndarray
    lambda_selected: float | None = None
    cv_curve: dict | None = None  # {'lambdas', 'mean', 'se'} (or cost grid)
    iterations: int = 0
    converged: bool = True
    flags: list = field(default_factory=list)


class SolverError(RuntimeError):
    """Raised when a solver cannot produce a usable solution."""


def make_folds(n: int, nfolds: int, rng: np.random.Generator,
               clusters=None) -> np.ndarray:
    """Random fold ids in [0, nfolds); rows of one cluster share a fold."""
    if nfolds < 2:
        raise ValueError("need at least 2 folds")
    folds = np.empty(n, dtype=np.int64)
    if clusters is None:
        perm = rng.permutation(n)
        folds[perm] = np.arange(n) % nfolds
        return folds
    clusters = np.asarray(clusters, dtype=object)
    uniq = list(dict.fromkeys(clusters.tolist()))  # first-appearance order
    order = rng.permutation(len(uniq))
    cluster_fold = {uniq[k]: i % nfolds for i, k in enumerate(order)}
    for i, c in enumerate(clusters.tolist()):
        folds[i] = cluster_fold[c]
    return folds


def solve_wls(design, y, weights) -> SolveResult:
    """Weighted least squares via the square-root-weighted system.

    Rank-deficient designs fall back to a ridge solve with
    lambda = 1e-8 * trace(X'WX), flagged in the result.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    sw = np.sqrt(w)[:, None]
    A = X * sw
    b = y * sw[:, 0]
    coef, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    flags = []
    if rank < X.shape[1]:
        xtwx = A.T @ A
        lam = 1e-8 * np.trace(xtwx)
        coef = np.linalg.solve(xtwx + lam * np.eye(X.shape[1]), A.T @ b)
        flags.append("rank_deficient_ridge_fallback")
    return SolveResult(coefficients=coef, iterations=1, converged=True, flags=flags)


def _column_scales(X, w, standardize: bool) -> np.ndarray:
    """Per-column weighted root mean squares (uncentered; no-intercept design)."""
    if not standardize:
        return np.ones(X.shape[1])
    wn = w / max(w.sum(), 1e-300)
    sc = np.sqrt(np.maximum((wn[:, None] * X**2).sum(axis=0), 0.0))
    sc[sc <= 0] = 1.0
    return sc


def _objective(loss: LossSpec, eta, y, w, beta, lam, pen) -> float:
    n = len(y)
    with np.errstate(over="ignore"):
        smooth = float(np.sum(w * loss.value(y, eta))) / n
    return smooth + lam * float(np.sum(pen * np.abs(beta)))


def _glm_fit_lambda(loss, U, y, w, offset, beta, lam, pen, tol, max_iter):
    """IRLS + coordinate descent at one lambda; beta updated in place.

    Returns (sweeps, converged).  U is the (already scaled) design.
    """
    n = U.shape[0]
    gaussian = loss.name == "sq_loss"
    tol_inner = tol * max(float(np.mean(w)), 1e-12)

    if gaussian:
        q = 2.0 * w
        col_ssq = (q[:, None] * U**2).sum(axis=0) / n
        r = y - offset - U @ beta
        sweeps = cd_wls(U, r, q, beta, lam, pen, col_ssq, max_iter, tol_inner)
        return sweeps, sweeps < max_iter

    f_old = _objective(loss, U @ beta + offset, y, w, beta, lam, pen)
    total = 0
    for outer in range(100):
        eta = U @ beta + offset
        with np.errstate(over="ignore"):
            mv = loss.dv(y, eta)
            mvv = np.maximum(loss.d2v(y, eta), _MVV_FLOOR)
        q = w * mvv
        if not np.all(np.isfinite(q)) or not np.all(np.isfinite(mv)):
            return total, False
        col_ssq = (q[:, None] * U**2).sum(axis=0) / n
        r = -mv / mvv  # z - eta with z the working response
        beta_old = beta.copy()
        total += cd_wls(U, r, q, beta, lam, pen,
                        col_ssq, max_iter, tol * max(float(np.mean(q)), 1e-12))
        f_new = _objective(loss, U @ beta + offset, y, w, beta, lam, pen)
        halvings = 0
        while (not np.isfinite(f_new) or f_new > f_old + 1e-14) and halvings < 30:
            beta[:] = 0.5 * (beta + beta_old)
            f_new = _objective(loss, U @ beta + offset, y, w, beta, lam, pen)
            halvings += 1
        step = float(np.max(np.abs(beta - beta_old))) if beta.size else 0.0
        if abs(f_old - f_new) <= tol * (abs(f_old) + 1.0) and step <= np.sqrt(tol):
            return total, True
        f_old = f_new
    return total, False


def _glm_path(loss, U, y, w, offset, lambdas, pen, tol, max_iter, beta_init=None):
    """Warm-started fits along a decreasing lambda sequence (scaled design)."""
    n, p = U.shape
    betas = np.zeros((len(lambdas), p))
    beta = np.zeros(p) if beta_init is None else beta_init.copy()
    iterations = 0
    ok = True
    if loss.name == "sq_loss":
        # constant curvature: one Gram matrix serves every lambda, and the
        # coordinate updates drop from O(n) to O(p)
        q = 2.0 * w
        Uq = U * q[:, None]
        G = np.ascontiguousarray(Uq.T @ U / n)
        c = Uq.T @ (y - offset) / n
        u = G @ beta
        tol_abs = tol * max(float(np.mean(q)), 1e-12)
        for k, lam in enumerate(lambdas):
            iterations += cd_wls_gram(G, c, u, beta, lam, pen, max_iter, tol_abs)
            betas[k] = beta
        return betas, iterations, ok
    for k, lam in enumerate(lambdas):
        it, conv = _glm_fit_lambda(loss, U, y, w, offset, beta, lam, pen, tol, max_iter)
        iterations += it
        ok = ok and conv
        betas[k] = beta
    return betas, iterations, ok


def _null_eta(loss, U, y, w, offset, pen, tol, max_iter):
    """Linear predictor with all penalized coefficients held at zero."""
    beta = np.zeros(U.shape[1])
    if np.any(pen == 0):
        # a huge lambda freezes penalized coordinates while free ones fit
        _glm_fit_lambda(loss, U, y, w, offset, beta, 1e30, pen, tol, max_iter)
    return U @ beta + offset, beta


def _lambda_max(loss, U, y, w, offset, pen, tol, max_iter):
    eta0, beta0 = _null_eta(loss, U, y, w, offset, pen, tol, max_iter)
    with np.errstate(over="ignore"):
        grad = (U * (w * loss.dv(y, eta0))[:, None]).sum(axis=0) / len(y)
    lam = float(np.max(np.abs(grad[pen > 0]) / pen[pen > 0]))
    return max(lam, 1e-12), beta0


def _default_path(lam_max: float, penalty: Lasso, n: int, p: int) -> np.ndarray:
    ratio = penalty.path_min_ratio
    if ratio is None:
        ratio = 1e-4 if n > p else 1e-2
    return lam_max * ratio ** (np.arange(penalty.path_length) / (penalty.path_length - 1))


def _rank_auc(y, score) -> float:
    """Midrank Mann-Whitney AUC of `score` against binary labels y."""
    y = np.asarray(y, dtype=float)
    pos = y > 0
    n1 = int(pos.sum())
    n0 = len(y) - n1
    if n1 == 0 or n0 == 0:
        return 0.5
    order = np.argsort(score, kind="stable")
    ranks = np.empty(len(score))
    sorted_scores = np.asarray(score)[order]
    i = 0
    while i < len(score):
        j = i
        while j + 1 < len(score) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return (ranks[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0)


def penalized_glm_path(loss, design, y, weights, lambdas, *, penalized=None,
                       offset=None, standardize=False, tol=1e-12,
                       max_iter=100_000):
    """Coefficients (original scale) at each lambda of an explicit sequence.

    With standardize=True the penalty applies to coefficients measured in
    units of the weighted column scale, exactly as in the CV fitting path.
    """
    loss = get_loss(loss)
    X = np.ascontiguousarray(np.asarray(design, dtype=float))
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    n, p = X.shape
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    pen = np.ones(p) if penalized is None else np.asarray(penalized, dtype=float)
    scales = _column_scales(X, w, standardize)
    U = np.ascontiguousarray(X / scales)
    lambdas = np.asarray(sorted(lambdas, reverse=True), dtype=float)
    betas, _, _ = _glm_path(loss, U, y, w, offset, lambdas, pen, tol, max_iter)
    return lambdas, betas / scales


def kkt_residuals(loss, design, y, weights, beta, lam, *, penalized=None,
                  offset=None, penalty_scales=None):
    """Stationarity residuals of the penalized objective at beta.

    For zero coefficients the residual is the amount by which |gradient|
    exceeds the penalty level; for active ones it is the absolute violation
    of gradient + lam*scale*sign(beta) = 0.  penalty_scales gives the
    per-column effective penalty multiplier (column scale when the fit was
    standardized; ones otherwise).
    """
    loss = get_loss(loss)
    X = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    n, p = X.shape
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    pen = np.ones(p) if penalized is None else np.asarray(penalized, dtype=float)
    sc = np.ones(p) if penalty_scales is None else np.asarray(penalty_scales, dtype=float)
    eta = X @ beta + offset
    grad = (X * (w * loss.dv(y, eta))[:, None]).sum(axis=0) / n
    res = np.empty(p)
    for j in range(p):
        level = lam * pen[j] * sc[j]
        if pen[j] == 0:
            res[j] = abs(grad[j])
        elif beta[j] == 0.0:
            res[j] = max(0.0, abs(grad[j]) - level)
        else:
            res[j] = abs(grad[j] + level * np.sign(beta[j]))
    return res


def solve_penalized_glm(spec: SolveSpec, design, y, weights, folds=None,
                        *, penalized=None, seed=0) -> SolveResult:
    """Penalized (or plain) GLM fit of the weighted objective.

    penalty=None solves the unpenalized problem (squared loss reduces to
    solve_wls).  With a Lasso penalty, coefficients follow a geometric
    lambda path from lambda_max down, the intercept-position column (and any
    other column flagged 0 in `penalized`) is never penalized, and K-fold CV
    picks the lambda; the returned fit is the full-data path solution at the
    selected lambda.
    """
    loss = get_loss(spec.loss)
    if loss.solver != "glm":
        raise ValueError(f"loss {loss.name!r} is not solvable by the GLM routine")
    X = np.ascontiguousarray(np.asarray(design, dtype=float))
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    n, p = X.shape
    offset = np.zeros(n) if spec.offset is None else np.asarray(spec.offset, dtype=float)
    pen = np.ones(p)
    pen[0] = 0.0
    if penalized is not None:
        pen = np.asarray(penalized, dtype=float)

    if spec.penalty is None:
        if loss.name == "sq_loss":
            res = solve_wls(X, y - offset, w)
            return res
        if loss.d2v is None:
            return _solve_smooth_generic(loss, X, y, w, offset)
        beta = np.zeros(p)
        it, conv = _glm_fit_lambda(loss, X, y, w, offset, beta, 0.0,
                                   np.zeros(p), spec.tol, spec.max_iter)
        flags = [] if conv else ["glm_not_converged"]
        return SolveResult(coefficients=beta, iterations=it, converged=conv, flags=flags)
    if loss.d2v is None:
        raise ValueError("penalized fitting needs the loss's second derivative (d2v)")

    penalty = spec.penalty
    scales = _column_scales(X, w, penalty.standardize)
    U = np.ascontiguousarray(X / scales)

    if penalty.lambdas is not None:
        lambdas = np.asarray(sorted(penalty.lambdas, reverse=True), dtype=float)
        beta_init = None
    else:
        lam_max, beta0 = _lambda_max(loss, U, y, w, offset, pen, spec.tol, spec.max_iter)
        lambdas = _default_path(lam_max, penalty, n, p)
        beta_init = beta0

    betas, iterations, ok = _glm_path(loss, U, y, w, offset, lambdas, pen,
                                      spec.tol, spec.max_iter, beta_init)

    if folds is None:
        rng = np.random.default_rng(seed)
        folds = make_folds(n, penalty.cv_folds, rng)
    folds = np.asarray(folds)
    fold_ids = np.unique(folds)
    if len(fold_ids) < 2:
        raise ValueError("cross validation needs at least 2 folds")

    stats = np.empty((len(fold_ids), len(lambdas)))
    for fi, k in enumerate(fold_ids):
        te = folds == k
        tr = ~te
        sc_k = _column_scales(X[tr], w[tr], penalty.standardize)
        U_k = np.ascontiguousarray(X[tr] / sc_k)
        bet_k, it_k, _ = _glm_path(loss, U_k, y[tr], w[tr], offset[tr],
                                   lambdas, pen, spec.tol, spec.max_iter)
        iterations += it_k
        eta_te = (X[te] / sc_k) @ bet_k.T + offset[te][:, None]
        if penalty.metric == "deviance":
            wt = w[te]
            denom = max(wt.sum(), 1e-300)
            with np.errstate(over="ignore"):
                for li in range(len(lambdas)):
                    stats[fi, li] = float(np.sum(wt * loss.value(y[te], eta_te[:, li]))) / denom
        else:
            for li in range(len(lambdas)):
                stats[fi, li] = _rank_auc(y[te], eta_te[:, li])

    cvm = stats.mean(axis=0)
    cvse = stats.std(axis=0, ddof=1) / np.sqrt(len(fold_ids))
    if penalty.metric == "deviance":
        best = int(np.argmin(cvm))
        if penalty.selection == "1se":
            ok_idx = np.flatnonzero(cvm <= cvm[best] + cvse[best])
            best = int(ok_idx[0])  # lambdas sorted descending: first = largest
    else:
        best = int(np.argmax(cvm))
        if penalty.selection == "1se":
            ok_idx = np.flatnonzero(cvm >= cvm[best] - cvse[best])
            best = int(ok_idx[0])

    coef = betas[best] / scales
    flags = [] if ok else ["glm_path_not_converged"]
    return SolveResult(
        coefficients=coef,
        lambda_selected=float(lambdas[best]),
        cv_curve={"lambdas": lambdas.copy(), "mean": cvm, "se": cvse,
                  "metric": penalty.metric, "penalty_scales": scales.copy()},
        iterations=iterations,
        converged=ok,
        flags=flags,
    )


def _solve_smooth_generic(loss, X, y, w, offset) -> SolveResult:
    """Unpenalized minimization for custom losses lacking a second derivative."""
    from scipy.optimize import minimize

    n = X.shape[0]

    def fun(beta):
        eta = X @ beta + offset
        return float(np.sum(w * loss.value(y, eta))) / n

    def jac(beta):
        eta = X @ beta + offset
        return (X * (w * loss.dv(y, eta))[:, None]).sum(axis=0) / n

    out = minimize(fun, np.zeros(X.shape[1]), jac=jac, method="BFGS",
                   options={"maxiter": 1000, "gtol": 1e-9})
    flags = [] if out.success else ["generic_minimizer_not_converged"]
    return SolveResult(coefficients=np.asarray(out.x, dtype=float),
                       iterations=int(out.nit), converged=bool(out.success),
                       flags=flags)


_DEFAULT_COSTS = tuple(2.0 ** k for k in range(-5, 6))


def _hinge_fit(X, s, U, tol, max_iter):
    n, p = X.shape
    alpha = np.zeros(n)
    beta = np.zeros(p)
    iters, b0 = smo_hinge(X, s, U, alpha, beta, max_iter, tol)
    return b0, beta, iters


def solve_weighted_hinge(design, y_sign, case_weights, cost_grid=None,
                         folds=None, *, seed=0, tol=1e-8,
                         max_iter=2_000_000) -> SolveResult:
    """Weighted linear soft-margin fit with CV over the cost parameter.

    Minimizes 0.5*||beta||^2 + C * sum_i w_i * max(0, 1 - s_i(b0 + x_i.beta))
    by dual coordinate ascent on working pairs; C is chosen over `cost_grid`
    by weighted sign-misclassification on held-out folds.  The design carries
    no intercept column; coefficients return as [b0, beta].
    """
    X = np.ascontiguousarray(np.asarray(design, dtype=float))
    s = np.asarray(y_sign, dtype=float)
    w = np.asarray(case_weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("case weights must be non-negative")
    if not np.all(np.isin(s, (-1.0, 1.0))):
        raise ValueError("y_sign entries must be -1 or +1")
    n, p = X.shape

    eff = w > 0
    if len(np.unique(s[eff])) < 2:
        coef = np.concatenate([[s[eff][0] if eff.any() else 0.0], np.zeros(p)])
        return SolveResult(coefficients=coef, converged=True,
                           flags=["degenerate_single_class"])

    grid = np.asarray(cost_grid if cost_grid is not None else _DEFAULT_COSTS, dtype=float)
    if len(grid) > 1:
        if folds is None:
            rng = np.random.default_rng(seed)
            folds = make_folds(n, 10, rng)
        folds = np.asarray(folds)
        fold_ids = np.unique(folds)
        errs = np.zeros((len(fold_ids), len(grid)))
        for fi, k in enumerate(fold_ids):
            te = folds == k
            tr = ~te
            if len(np.unique(s[tr][w[tr] > 0])) < 2:
                errs[fi, :] = np.nan
                continue
            for ci, C in enumerate(grid):
                b0, beta, _ = _hinge_fit(X[tr], s[tr], C * w[tr], tol, max_iter)
                f = b0 + X[te] @ beta
                wt = w[te]
                denom = max(wt.sum(), 1e-300)
                errs[fi, ci] = float(np.sum(wt * (np.sign(f) != s[te]))) / denom
        with np.errstate(invalid="ignore"):
            cvm = np.nanmean(errs, axis=0)
        best = int(np.nanargmin(cvm))
        C_sel = float(grid[best])
        curve = {"costs": grid.copy(), "mean": cvm,
                 "se": np.nanstd(errs, axis=0, ddof=1) / np.sqrt(len(fold_ids))}
    else:
        C_sel = float(grid[0])
        curve = None

    b0, beta, iters = _hinge_fit(X, s, C_sel * w, tol, max_iter)
    converged = iters < max_iter
    flags = [] if converged else ["hinge_not_converged"]
    return SolveResult(
        coefficients=np.concatenate([[b0], beta]),
        lambda_selected=C_sel,
        cv_curve=curve,
        iterations=iters,
        converged=converged,
        flags=flags,
    )


def hinge_objective(design, y_sign, case_weights, cost, coefficients) -> float:
    """Primal value 0.5||beta||^2 + C sum w*hinge at [b0, beta]."""
    X = np.asarray(design, dtype=float)
    b0 = coefficients[0]
    beta = np.asarray(coefficients[1:], dtype=float)
    margins = np.asarray(y_sign, dtype=float) * (b0 + X @ beta)
    return 0.5 * float(beta @ beta) + cost * float(
        np.sum(np.asarray(case_weights, dtype=float) * np.maximum(0.0, 1.0 - margins))
    )


def _cox_full_hessian(eta, design, time, status, weights):
    """Full beta-Hessian of the weighted negative log partial likelihood."""
    X = np.asarray(design, dtype=float)
    time = np.asarray(time, dtype=float)
    status = np.asarray(status, dtype=float)
    w = np.asarray(weights, dtype=float)
    order = np.argsort(time, kind="stable")
    t_s, d_s, w_s, X_s = time[order], status[order], w[order], X[order]
    r_s = w_s * np.exp(np.clip(np.asarray(eta)[order], -200, 200))
    n, p = X_s.shape

    rx = r_s[:, None] * X_s
    # reverse cumulative risk-set sums of r, r*x, and r*x*x'
    cs_r = np.cumsum(r_s[::-1])[::-1]
    cs_rx = np.cumsum(rx[::-1], axis=0)[::-1]
    cs_rxx = np.cumsum((rx[:, :, None] * X_s[:, None, :])[::-1], axis=0)[::-1]

    H = np.zeros((p, p))
    i = 0
    while i < n:
        j = i
        while j + 1 < n and t_s[j + 1] == t_s[i]:
            j += 1
        wev = float(np.sum(w_s[i:j + 1] * d_s[i:j + 1]))
        if wev > 0:
            R = cs_r[i]
            xbar = cs_rx[i] / R
            H += wev * (cs_rxx[i] / R - np.outer(xbar, xbar))
        i = j + 1
    return H


def solve_weighted_cox(design, time, status, weights, penalty: Lasso | None = None,
                       folds=None, *, seed=0, tol=1e-9, max_iter=100) -> SolveResult:
    """Weighted Cox partial-likelihood fit.

    penalty=None runs Newton-Raphson with step halving on the exact weighted
    partial likelihood; a Lasso penalty runs coordinate descent on the
    per-observation quadratic approximation along a lambda path with CV by
    held-out partial-likelihood deviance.  Coefficient norms above 50 flag a
    monotone-likelihood non-convergence.
    """
    X = np.ascontiguousarray(np.asarray(design, dtype=float))
    time = np.asarray(time, dtype=float)
    status = np.asarray(status, dtype=float)
    w = np.asarray(weights, dtype=float)
    if status.sum() < 1:
        raise SolverError("Cox fit needs at least one observed event")
    n, p = X.shape

    if penalty is None:
        beta = np.zeros(p)
        value, g_eta, _ = cox_eta_quantities(X @ beta, time, status, w)
        grad = X.T @ g_eta
        converged = False
        iters = 0
        for it in range(max_iter):
            iters = it + 1
            H = _cox_full_hessian(X @ beta, X, time, status, w)
            # ridge relative to the Hessian scale: keeps the Newton direction
            # meaningful in the flat tail of a separated likelihood
            ridge = 1e-10 * max(float(np.trace(H)) / p, 1e-300)
            try:
                step = np.linalg.solve(H + ridge * np.eye(p), grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, grad, rcond=None)[0]
            stepsize = 1.0
            for _ in range(30):
                cand = beta - stepsize * step
                v_new, g_eta, _ = cox_eta_quantities(X @ cand, time, status, w)
                if v_new <= value + 1e-12:
                    break
                stepsize *= 0.5
            moved = float(np.max(np.abs(cand - beta)))
            beta = cand
            grad_new = X.T @ g_eta
            # a monotone (separated) likelihood keeps taking O(1) steps while
            # the objective flattens; requiring a small step lets the norm
            # guard below catch it
            done = abs(value - v_new) <= tol * (abs(value) + 1.0) and \
                moved <= 1e-6 * (1.0 + np.max(np.abs(beta)))
            value, grad = v_new, grad_new
            if done:
                converged = True
                break
            if np.max(np.abs(beta)) > 50:
                break
        flags = []
        if np.max(np.abs(beta)) > 50:
            converged = False
            flags.append("monotone_likelihood")
        if not converged and "monotone_likelihood" not in flags:
            flags.append("cox_not_converged")
        return SolveResult(coefficients=beta, iterations=iters,
                           converged=converged, flags=flags)

    # penalized path: IRLS on the eta-diagonal quadratic approximation
    pen = np.ones(p)
    pen[0] = 0.0
    scales = _column_scales(X, w, penalty.standardize)
    U = np.ascontiguousarray(X / scales)

    def path_fit(U_m, t_m, s_m, w_m, lambdas):
        pp = U_m.shape[1]
        beta = np.zeros(pp)
        betas = np.zeros((len(lambdas), pp))
        nm = U_m.shape[0]
        total = 0
        ok = True
        for k, lam in enumerate(lambdas):
            f_old = None
            conv = False
            for outer in range(50):
                eta = U_m @ beta
                value, g_eta, curv = cox_eta_quantities(eta, t_m, s_m, w_m)
                f_old = value / nm + lam * float(np.sum(pen * np.abs(beta))) \
                    if f_old is None else f_old
                q = np.maximum(curv, 1e-10)
                r = -g_eta / q
                col_ssq = (q[:, None] * U_m**2).sum(axis=0) / nm
                beta_old = beta.copy()
                total += cd_wls(U_m, r, q, beta, lam, pen, col_ssq, 10_000,
                                1e-11 * max(float(np.mean(q)), 1e-12))
                v_new, _, _ = cox_eta_quantities(U_m @ beta, t_m, s_m, w_m)
                f_new = v_new / nm + lam * float(np.sum(pen * np.abs(beta)))
                halv = 0
                while (not np.isfinite(f_new) or f_new > f_old + 1e-14) and halv < 30:
                    beta = 0.5 * (beta + beta_old)
                    v_new, _, _ = cox_eta_quantities(U_m @ beta, t_m, s_m, w_m)
                    f_new = v_new / nm + lam * float(np.sum(pen * np.abs(beta)))
                    halv += 1
                if abs(f_old - f_new) <= 1e-9 * (abs(f_old) + 1.0):
                    conv = True
                    f_old = f_new
                    break
                f_old = f_new
            ok = ok and conv
            betas[k] = beta
        return betas, total, ok

    def negll(eta, t_m, s_m, w_m):
        return cox_eta_quantities(eta, t_m, s_m, w_m)[0]

    # lambda path from the null model (treatment main effect only)
    betas0, _, _ = path_fit(U, time, status, w, [1e30])
    beta0 = betas0[0]
    _, g_eta0, _ = cox_eta_quantities(U @ beta0, time, status, w)
    grad0 = (U * g_eta0[:, None]).sum(axis=0) / n
    lam_max = max(float(np.max(np.abs(grad0[pen > 0]))), 1e-12)
    lambdas = (_default_path(lam_max, penalty, n, p)
               if penalty.lambdas is None
               else np.asarray(sorted(penalty.lambdas, reverse=True), dtype=float))

    betas, iterations, ok = path_fit(U, time, status, w, lambdas)

    if folds is None:
        rng = np.random.default_rng(seed)
        folds = make_folds(n, penalty.cv_folds, rng)
    folds = np.asarray(folds)
    fold_ids = np.unique(folds)
    stats = np.empty((len(fold_ids), len(lambdas)))
    for fi, k in enumerate(fold_ids):
        te = folds == k
        tr = ~te
        if status[tr].sum() < 1:
            stats[fi, :] = np.nan
            continue
        sc_k = _column_scales(X[tr], w[tr], penalty.standardize)
        U_k = np.ascontiguousarray(X[tr] / sc_k)
        bet_k, it_k, _ = path_fit(U_k, time[tr], status[tr], w[tr], lambdas)
        iterations += it_k
        for li in range(len(lambdas)):
            coef = bet_k[li] / sc_k
            # Verweij & Van Houwelingen: full-sample minus training likelihood
            full = negll(X @ coef, time, status, w)
            train = negll(X[tr] @ coef, time[tr], status[tr], w[tr])
            stats[fi, li] = 2.0 * (full - train)
    with np.errstate(invalid="ignore"):
        cvm = np.nanmean(stats, axis=0)
        cvse = np.nanstd(stats, axis=0, ddof=1) / np.sqrt(len(fold_ids))
    best = int(np.nanargmin(cvm))
    if penalty.selection == "1se":
        ok_idx = np.flatnonzero(cvm <= cvm[best] + cvse[best])
        best = int(ok_idx[0])

    coef = betas[best] / scales
    flags = [] if ok else ["cox_path_not_converged"]
    if np.max(np.abs(coef)) > 50:
        flags.append("monotone_likelihood")
        ok = False
    return SolveResult(
        coefficients=coef,
        lambda_selected=float(lambdas[best]),
        cv_curve={"lambdas": lambdas.copy(), "mean": cvm, "se": cvse,
                  "metric": "cox_deviance", "penalty_scales": scales.copy()},
        iterations=iterations,
        converged=ok,
        flags=flags,
    )
