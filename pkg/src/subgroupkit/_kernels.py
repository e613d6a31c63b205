"""Numba inner loops: coordinate descent for penalized weighted least squares
and a working-pair dual solver for the weighted linear hinge problem.

Pure functions over preallocated arrays; callers own all orchestration
(standardization, IRLS, paths, cross validation).
"""

from numba import njit


@njit(cache=True)
def cd_wls(X, r, q, beta, lam, pen, col_ssq, max_iter, tol):
    """Coordinate descent for (1/(2n)) sum q_i (z_i - x_i.beta)^2 + lam sum pen_j |beta_j|.

    r holds the current residual z - X.beta and is updated in place together
    with beta.  col_ssq[j] = (1/n) sum_i q_i X_ij^2.  Convergence when the
    largest single-coordinate objective-scale change col_ssq[j]*delta^2 drops
    below tol.  Returns the number of full sweeps used.
    """
    n, p = X.shape
    for it in range(max_iter):
        dmax = 0.0
        for j in range(p):
            aj = col_ssq[j]
            if aj <= 0.0:
                continue
            bj = beta[j]
            s = 0.0
            for i in range(n):
                s += q[i] * X[i, j] * r[i]
            s = s / n + aj * bj
            pj = pen[j]
            if pj > 0.0:
                th = lam * pj
                if s > th:
                    bnew = (s - th) / aj
                elif s < -th:
                    bnew = (s + th) / aj
                else:
                    bnew = 0.0
            else:
                bnew = s / aj
            d = bnew - bj
            if d != 0.0:
                for i in range(n):
                    r[i] -= d * X[i, j]
                beta[j] = bnew
                chg = aj * d * d
                if chg > dmax:
                    dmax = chg
        if dmax < tol:
            return it + 1
    return max_iter


@njit(cache=True)
def cd_wls_gram(G, c, u, beta, lam, pen, max_iter, tol):
    """Covariance-update coordinate descent for the quadratic objective
    0.5*beta'G beta - c'beta + lam sum pen_j |beta_j|.

    G is the (p,p) weighted Gram matrix X'QX/n, c = X'Qz/n, and u holds
    G @ beta (updated in place with beta).  Equivalent to cd_wls on the
    underlying least-squares problem but with O(p) coordinate updates, which
    wins whenever n >> p.  Returns sweeps used.
    """
    p = G.shape[0]
    for it in range(max_iter):
        dmax = 0.0
        for j in range(p):
            aj = G[j, j]
            if aj <= 0.0:
                continue
            bj = beta[j]
            s = c[j] - u[j] + aj * bj
            pj = pen[j]
            if pj > 0.0:
                th = lam * pj
                if s > th:
                    bnew = (s - th) / aj
                elif s < -th:
                    bnew = (s + th) / aj
                else:
                    bnew = 0.0
            else:
                bnew = s / aj
            d = bnew - bj
            if d != 0.0:
                for k in range(p):
                    u[k] += d * G[k, j]
                beta[j] = bnew
                chg = aj * d * d
                if chg > dmax:
                    dmax = chg
        if dmax < tol:
            return it + 1
    return max_iter


@njit(cache=True)
def smo_hinge(X, s, U, alpha, beta, max_iter, eps):
    """Working-pair dual ascent for the weighted linear soft-margin problem.

    Solves min_alpha 0.5*||sum_i alpha_i s_i x_i||^2 - sum_i alpha_i subject
    to 0 <= alpha_i <= U_i and sum_i s_i alpha_i = 0 (the dual of
    0.5||beta||^2 + sum_i U_i hinge(s_i(b0 + x_i.beta)) with U_i = C*w_i).
    beta (no intercept) is maintained as sum alpha_i s_i x_i.  Returns
    (iterations, intercept); intercept from the average KKT value of free
    dual variables, midpoint of the violating bounds otherwise.
    """
    n, p = X.shape
    up_val = 0.0
    lo_val = 0.0
    for it in range(max_iter):
        i_up = -1
        i_lo = -1
        up_val = -1e300
        lo_val = 1e300
        for i in range(n):
            xb = 0.0
            for k in range(p):
                xb += X[i, k] * beta[k]
            F = s[i] - xb
            if (s[i] > 0.0 and alpha[i] < U[i]) or (s[i] < 0.0 and alpha[i] > 0.0):
                if F > up_val:
                    up_val = F
                    i_up = i
            if (s[i] > 0.0 and alpha[i] > 0.0) or (s[i] < 0.0 and alpha[i] < U[i]):
                if F < lo_val:
                    lo_val = F
                    i_lo = i
        if i_up < 0 or i_lo < 0 or up_val - lo_val < eps:
            b0 = _intercept(X, s, U, alpha, beta, up_val, lo_val, i_up, i_lo)
            return it, b0
        i = i_up
        j = i_lo
        # second derivative along the feasible direction
        eta = 0.0
        for k in range(p):
            d = X[i, k] - X[j, k]
            eta += d * d
        if eta < 1e-12:
            eta = 1e-12
        delta = (up_val - lo_val) / eta
        # box limits: alpha_i + s_i*delta in [0, U_i]; alpha_j - s_j*delta in [0, U_j]
        if s[i] > 0.0:
            lim = U[i] - alpha[i]
        else:
            lim = alpha[i]
        if delta > lim:
            delta = lim
        if s[j] > 0.0:
            lim = alpha[j]
        else:
            lim = U[j] - alpha[j]
        if delta > lim:
            delta = lim
        if delta <= 0.0:
            b0 = _intercept(X, s, U, alpha, beta, up_val, lo_val, i_up, i_lo)
            return it, b0
        alpha[i] += s[i] * delta
        alpha[j] -= s[j] * delta
        for k in range(p):
            beta[k] += delta * (X[i, k] - X[j, k])
    b0 = _intercept(X, s, U, alpha, beta, up_val, lo_val, -1, -1)
    return max_iter, b0


@njit(cache=True)
def _intercept(X, s, U, alpha, beta, up_val, lo_val, i_up, i_lo):
    n, p = X.shape
    tot = 0.0
    cnt = 0
    for i in range(n):
        if alpha[i] > 1e-10 * U[i] and alpha[i] < U[i] * (1.0 - 1e-10):
            xb = 0.0
            for k in range(p):
                xb += X[i, k] * beta[k]
            tot += s[i] - xb
            cnt += 1
    if cnt > 0:
        return tot / cnt
    if i_up >= 0 and i_lo >= 0:
        return 0.5 * (up_val + lo_val)
    return 0.0
