"""Compiled inner loops for the Riccati right-hand sides.

Per-segment coefficient layouts follow :class:`regime_mv.market_model.Coefficients`
with the segment axis removed: ``rate (ell,)``, ``drift (ell, m)``,
``cov (ell, m, m)``, ``weights (A,)``, ``loading (ell, A, m)``,
``shock (ell, ell, m)`` and ``q (ell, ell)`` with a zero diagonal.
"""

import numba as nb
import numpy as np

ARMIJO = 1e-4
MAX_HALVINGS = 60

STATUS_OK = 0
STATUS_MAXITER = 1
STATUS_NOT_PD = 2


@nb.njit(cache=True)
def chol_solve(A, b):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Returns ``(x, ok)``; ``ok`` is False when the factorization breaks down.
    """
    n = b.size
    L = np.zeros((n, n))
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return np.zeros(n), False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    y = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x, True


@nb.njit(cache=True)
def build_MN(i, P, drift, cov, weights, loading, shock, q):
    """The drift-like vector and second-moment matrix weighted by ``P``."""
    ell, m = drift.shape
    M = P[i] * drift[i].copy()
    N = P[i] * cov[i].copy()
    for a in range(weights.size):
        w = weights[a] * P[i]
        for k in range(m):
            for l in range(m):
                N[k, l] += w * loading[i, a, k] * loading[i, a, l]
    for j in range(ell):
        if j == i or q[i, j] == 0.0:
            continue
        c = q[i, j] * P[j]
        for k in range(m):
            M[k] += c * shock[i, j, k]
            for l in range(m):
                N[k, l] += c * shock[i, j, k] * shock[i, j, l]
    return M, N


@nb.njit(cache=True)
def build_R(i, P, h, shock, q):
    ell, _, m = shock.shape
    R = np.zeros(m)
    for j in range(ell):
        if j == i:
            continue
        c = q[i, j] * P[j] * (h[j] - h[i])
        for k in range(m):
            R[k] += c * shock[i, j, k]
    return R


@nb.njit(cache=True)
def rhs_P(rate, drift, cov, weights, loading, shock, q, P):
    """Time derivative of ``P`` for the unconstrained Riccati system.

    Returns ``(dP, bad)`` where ``bad`` is the first regime whose matrix failed
    to factor, or -1.
    """
    ell = P.size
    dP = np.empty(ell)
    for i in range(ell):
        M, N = build_MN(i, P, drift, cov, weights, loading, shock, q)
        x, ok = chol_solve(N, M)
        if not ok:
            return dP, i
        coupling = 0.0
        for j in range(ell):
            if j != i:
                coupling += q[i, j] * (P[j] - P[i])
        dP[i] = -(2.0 * rate[i] * P[i] - np.dot(M, x) + coupling)
    return dP, -1


@nb.njit(cache=True)
def rhs_h(rate, drift, cov, weights, loading, shock, q, P, h):
    ell = P.size
    dh = np.empty(ell)
    for i in range(ell):
        M, N = build_MN(i, P, drift, cov, weights, loading, shock, q)
        R = build_R(i, P, h, shock, q)
        x, ok = chol_solve(N, R)
        if not ok:
            return dh, i
        coupling = 0.0
        for j in range(ell):
            if j != i:
                coupling += q[i, j] * P[j] * (h[j] - h[i])
        dh[i] = rate[i] * h[i] + (np.dot(M, x) - coupling) / P[i]
    return dh, -1


@nb.njit(cache=True)
def rhs_K(rate, drift, cov, weights, loading, shock, q, P, h, K):
    ell = P.size
    dK = np.empty(ell)
    for i in range(ell):
        M, N = build_MN(i, P, drift, cov, weights, loading, shock, q)
        R = build_R(i, P, h, shock, q)
        x, ok = chol_solve(N, R)
        if not ok:
            return dK, i
        spread = 0.0
        coupling = 0.0
        for j in range(ell):
            if j != i:
                spread += q[i, j] * P[j] * (h[j] - h[i]) ** 2
                coupling += q[i, j] * (K[j] - K[i])
        dK[i] = np.dot(R, x) - spread - coupling
    return dK, -1


# -- the no-shorting Hamiltonians -------------------------------------------
#
# Both signs share one formula: with s = +1 (resp. -1) the "same" coefficients
# are P_+ (resp. P_-) and the "opposite" ones P_- (resp. P_+), and every
# loading, shock and drift enters multiplied by s.


@nb.njit(cache=True)
def h_value(v, s, i, drift, cov, weights, loading, shock, q, Ps, Po):
    ell, m = drift.shape
    val = Ps[i] * np.dot(v, cov[i] @ v) + 2.0 * s * Ps[i] * np.dot(v, drift[i])
    for a in range(weights.size):
        vb = s * np.dot(v, loading[i, a])
        x = 1.0 + vb
        if x >= 0.0:
            jump = Ps[i] * x * x
        else:
            jump = Po[i] * x * x
        val += weights[a] * (jump - Ps[i] - 2.0 * Ps[i] * vb)
    for j in range(ell):
        if j == i or q[i, j] == 0.0:
            continue
        x = 1.0 + s * np.dot(v, shock[i, j])
        if x >= 0.0:
            jump = Ps[j] * x * x
        else:
            jump = Po[j] * x * x
        val += q[i, j] * (jump - Ps[i])
    return val


@nb.njit(cache=True)
def h_grad_hess(v, s, i, drift, cov, weights, loading, shock, q, Ps, Po):
    ell, m = drift.shape
    g = 2.0 * Ps[i] * (cov[i] @ v) + 2.0 * s * Ps[i] * drift[i]
    Hm = 2.0 * Ps[i] * cov[i].copy()
    for a in range(weights.size):
        b = loading[i, a]
        x = 1.0 + s * np.dot(v, b)
        c = Ps[i] if x >= 0.0 else Po[i]
        # d/dv of c x^2 minus the compensator 2 Ps vb
        coef = 2.0 * weights[a] * (c * x - Ps[i]) * s
        for k in range(m):
            g[k] += coef * b[k]
            for l in range(m):
                Hm[k, l] += 2.0 * weights[a] * c * b[k] * b[l]
    for j in range(ell):
        if j == i or q[i, j] == 0.0:
            continue
        gam = shock[i, j]
        x = 1.0 + s * np.dot(v, gam)
        c = Ps[j] if x >= 0.0 else Po[j]
        coef = 2.0 * q[i, j] * c * x * s
        for k in range(m):
            g[k] += coef * gam[k]
            for l in range(m):
                Hm[k, l] += 2.0 * q[i, j] * c * gam[k] * gam[l]
    return g, Hm


@nb.njit(cache=True)
def _residual(v, g, nonneg):
    r = 0.0
    for k in range(v.size):
        if nonneg:
            d = v[k] - max(v[k] - g[k], 0.0)
        else:
            d = g[k]
        r += d * d
    return np.sqrt(r)


@nb.njit(cache=True)
def minimize_h(s, i, drift, cov, weights, loading, shock, q, Ps, Po, nonneg, tol, max_iter):
    """Minimize the sign-``s`` Hamiltonian of regime ``i`` from ``v = 0``.

    Projected Newton steps on the piecewise quadratic, with Armijo backtracking
    along the projection arc and a projected-gradient step as fallback.
    Returns ``(v, value, iterations, residual, status)``.
    """
    m = drift.shape[1]
    v = np.zeros(m)
    f = h_value(v, s, i, drift, cov, weights, loading, shock, q, Ps, Po)
    g, Hm = h_grad_hess(v, s, i, drift, cov, weights, loading, shock, q, Ps, Po)
    scale = 1.0 + np.sqrt(np.dot(g, g))
    res = _residual(v, g, nonneg)
    it = 0
    while res > tol * scale:
        if it >= max_iter:
            return v, f, it, res, STATUS_MAXITER
        it += 1
        # free set: drop coordinates pinned at zero with an outward gradient
        eps_act = min(1e-8, res)
        free = np.ones(m, dtype=np.bool_)
        if nonneg:
            for k in range(m):
                if v[k] <= eps_act and g[k] > 0.0:
                    free[k] = False
        nf = 0
        for k in range(m):
            if free[k]:
                nf += 1
        d = -g.copy()
        newton_ok = False
        if nf > 0:
            idx = np.empty(nf, dtype=np.int64)
            c = 0
            for k in range(m):
                if free[k]:
                    idx[c] = k
                    c += 1
            Hf = np.empty((nf, nf))
            gf = np.empty(nf)
            for a in range(nf):
                gf[a] = -g[idx[a]]
                for b in range(nf):
                    Hf[a, b] = Hm[idx[a], idx[b]]
            df, newton_ok = chol_solve(Hf, gf)
            if newton_ok:
                for a in range(nf):
                    d[idx[a]] = df[a]
        accepted = False
        if newton_ok:
            alpha = 1.0
            for _ in range(MAX_HALVINGS):
                vn = v + alpha * d
                if nonneg:
                    vn = np.maximum(vn, 0.0)
                step = vn - v
                slope = np.dot(g, step)
                fn = h_value(vn, s, i, drift, cov, weights, loading, shock, q, Ps, Po)
                if slope < 0.0 and fn <= f + ARMIJO * slope:
                    accepted = True
                elif fn <= f + 1e-14 * (1.0 + abs(f)):
                    # decrease below round-off: accept if optimality improved
                    gn, _ = h_grad_hess(vn, s, i, drift, cov, weights, loading, shock, q, Ps, Po)
                    if _residual(vn, gn, nonneg) < res:
                        accepted = True
                if accepted:
                    break
                alpha *= 0.5
        if not accepted:
            # projected gradient with a curvature-scaled initial step
            lam_max = 0.0
            for k in range(m):
                rs = 0.0
                for l in range(m):
                    rs += abs(Hm[k, l])
                lam_max = max(lam_max, rs)
            alpha = 1.0 / max(lam_max, 1e-300)
            for _ in range(MAX_HALVINGS):
                vn = v - alpha * g
                if nonneg:
                    vn = np.maximum(vn, 0.0)
                step = vn - v
                fn = h_value(vn, s, i, drift, cov, weights, loading, shock, q, Ps, Po)
                if fn <= f + ARMIJO * np.dot(g, step):
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                # no representable decrease is left
                return v, f, it, res, STATUS_OK if res <= 1e3 * tol * scale else STATUS_MAXITER
        v = vn
        f = fn
        g, Hm = h_grad_hess(v, s, i, drift, cov, weights, loading, shock, q, Ps, Po)
        res = _residual(v, g, nonneg)
    return v, f, it, res, STATUS_OK


@nb.njit(cache=True)
def rhs_constrained(rate, drift, cov, weights, loading, shock, q, Pp, Pm, nonneg, tol, max_iter):
    """Time derivatives of ``(P_+, P_-)`` plus the minimizers.

    Returns ``(dPp, dPm, vp, vm, worst_status, worst_regime)``.
    """
    ell, m = drift.shape
    dPp = np.empty(ell)
    dPm = np.empty(ell)
    vp = np.empty((ell, m))
    vm = np.empty((ell, m))
    worst = STATUS_OK
    where = -1
    for i in range(ell):
        v, val, _, _, st = minimize_h(1.0, i, drift, cov, weights, loading, shock, q, Pp, Pm,
                                      nonneg, tol, max_iter)
        vp[i] = v
        dPp[i] = -(2.0 * rate[i] * Pp[i] + val)
        if st > worst:
            worst, where = st, i
        v, val, _, _, st = minimize_h(-1.0, i, drift, cov, weights, loading, shock, q, Pm, Pp,
                                      nonneg, tol, max_iter)
        vm[i] = v
        dPm[i] = -(2.0 * rate[i] * Pm[i] + val)
        if st > worst:
            worst, where = st, i
    return dPp, dPm, vp, vm, worst, where
