"""Compiled proximal-Newton / coordinate-descent kernel for the L1 logistic path."""

import math

import numpy as np
from numba import njit

WEIGHT_FLOOR = 1e-5
TRACE_LEN = 512

# info columns
INFO_ITERS, INFO_SWEEPS, INFO_KKT, INFO_CONVERGED, INFO_CAPPED = range(5)


@njit(cache=True)
def _soft(u, lam):
    if u > lam:
        return u - lam
    if u < -lam:
        return u + lam
    return 0.0


@njit(cache=True, fastmath=True)
def _evaluate(eta, y, p, w, n):
    """Mean negative log-likelihood at ``eta``; fills probabilities and weights."""
    loss = 0.0
    for i in range(n):
        e = eta[i]
        if e > 0:
            t = math.exp(-e)
            loss += e + math.log1p(t) - y[i] * e
            pi = 1.0 / (1.0 + t)
        else:
            t = math.exp(e)
            loss += math.log1p(t) - y[i] * e
            pi = t / (1.0 + t)
        p[i] = pi
        wi = pi * (1.0 - pi)
        w[i] = wi if wi > WEIGHT_FLOOR else WEIGHT_FLOOR
    return loss / n


@njit(cache=True, fastmath=True)
def _direction(X, d, ws, m, n, deta):
    for i in range(n):
        deta[i] = d[0]
    for a in range(1, m):
        da = d[a]
        if da != 0.0:
            ja = ws[a]
            for i in range(n):
                deta[i] += X[i, ja] * da


@njit(cache=True, fastmath=True)
def _gradient(X, y, p, g, n, q):
    """g[0] = mean(y - p); g[1 + j] = <x_j, y - p> / n."""
    s = 0.0
    for i in range(n):
        s += y[i] - p[i]
    g[0] = s / n
    for j in range(q):
        acc = 0.0
        for i in range(n):
            acc += X[i, j] * (y[i] - p[i])
        g[1 + j] = acc / n


@njit(cache=True)
def _kkt(g, beta, lam, q):
    r = abs(g[0])
    for j in range(q):
        if beta[j] == 0.0:
            v = abs(g[1 + j]) - lam
        elif beta[j] > 0:
            v = abs(g[1 + j] - lam)
        else:
            v = abs(g[1 + j] + lam)
        if v > r:
            r = v
    return r


@njit(cache=True)
def _l1(beta, q):
    s = 0.0
    for j in range(q):
        s += abs(beta[j])
    return s


@njit(cache=True, fastmath=True)
def _gram(X, w, ws, m, n, H, wx):
    """Weighted Gram matrix over the working set (intercept at slot 0)."""
    s = 0.0
    for i in range(n):
        s += w[i]
    H[0, 0] = s / n
    for a in range(1, m):
        ja = ws[a]
        s = 0.0
        for i in range(n):
            v = w[i] * X[i, ja]
            wx[i] = v
            s += v
        H[0, a] = s / n
        H[a, 0] = s / n
        for b in range(a, m):
            jb = ws[b]
            acc = 0.0
            for i in range(n):
                acc += wx[i] * X[i, jb]
            H[a, b] = acc / n
            H[b, a] = acc / n


@njit(cache=True)
def solve_path(X, y, lambdas, b0_init, beta_init, tol, max_sweeps, beta_cap,
               out_b0, out_beta, info, trace):
    """Fit every penalty in ``lambdas`` in order, warm-starting each from the last.

    ``trace`` receives the objective after each outer iteration of the final
    penalty (NaN-padded). Returns the number of trace entries written.
    """
    n, q = X.shape
    beta = beta_init.copy()
    b0 = b0_init
    eta = np.empty(n)
    p = np.empty(n)
    w = np.empty(n)
    eta_new = np.empty(n)
    deta = np.empty(n)
    g = np.empty(q + 1)
    H = np.empty((q + 1, q + 1))
    G = np.empty(q + 1)
    d = np.empty(q + 1)
    ws = np.empty(q + 1, np.int64)
    wx = np.empty(n)
    ws_prev = np.empty(q + 1, np.int64)
    m_prev = -1
    n_trace = 0

    for i in range(n):
        acc = b0
        for j in range(q):
            if beta[j] != 0.0:
                acc += X[i, j] * beta[j]
        eta[i] = acc
    nll = _evaluate(eta, y, p, w, n)
    _gradient(X, y, p, g, n, q)

    for k in range(lambdas.shape[0]):
        lam = lambdas[k]
        last = k == lambdas.shape[0] - 1
        sweeps_total = 0
        converged = False
        capped = False
        iters = 0
        obj = nll + lam * _l1(beta, q)
        if last:
            trace[0] = obj
            n_trace = 1
        kkt = _kkt(g, beta, lam, q)
        fresh = True
        while True:
            if kkt < tol:
                converged = True
                break
            if sweeps_total >= max_sweeps:
                break
            iters += 1
            # working set: intercept, active and KKT-violating coordinates
            m = 1
            ws[0] = -1
            for j in range(q):
                if beta[j] != 0.0 or abs(g[1 + j]) > lam:
                    ws[m] = j
                    m += 1
            # the first pass at a new penalty reuses the previous curvature
            # when the working set is unchanged; backtracking keeps descent
            same = fresh and m == m_prev
            if same:
                for a in range(m):
                    if ws[a] != ws_prev[a]:
                        same = False
                        break
            if not same:
                _gram(X, w, ws, m, n, H, wx)
                for a in range(m):
                    ws_prev[a] = ws[a]
                m_prev = m
            fresh = False
            for a in range(m):
                d[a] = 0.0
                G[a] = -g[ws[a] + 1]
            # coordinate descent on the penalized quadratic model
            # inexact inner solve: accuracy tracks the outer residual
            inner_tol = max(0.1 * tol, 0.01 * kkt)
            while True:
                sweeps_total += 1
                delta_max = 0.0
                for a in range(m):
                    haa = H[a, a]
                    if haa <= 0.0:
                        continue
                    if a == 0:
                        step = -G[0] / haa
                    else:
                        v = beta[ws[a]] + d[a]
                        step = _soft(haa * v - G[a], lam) / haa - v
                    if step != 0.0:
                        d[a] += step
                        for c in range(m):
                            G[c] += H[c, a] * step
                        s = abs(step) * haa
                        if s > delta_max:
                            delta_max = s
                if delta_max < inner_tol or sweeps_total >= max_sweeps:
                    break
            # backtracking keeps the objective non-increasing
            _direction(X, d, ws, m, n, deta)
            t = 1.0
            accepted = False
            while t > 1e-10:
                pen = 0.0
                for j in range(q):
                    pen += abs(beta[j])
                for a in range(1, m):
                    jj = ws[a]
                    pen += abs(beta[jj] + t * d[a]) - abs(beta[jj])
                for i in range(n):
                    eta_new[i] = eta[i] + t * deta[i]
                nll_new = _evaluate(eta_new, y, p, w, n)
                obj_new = nll_new + lam * pen
                if obj_new <= obj + 1e-13 * abs(obj):
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                # restore p, w at the current point
                nll = _evaluate(eta, y, p, w, n)
                break
            change = 0.0
            b0 += t * d[0]
            if abs(t * d[0]) > change:
                change = abs(t * d[0])
            for a in range(1, m):
                jj = ws[a]
                nb = beta[jj] + t * d[a]
                if abs(nb) < 1e-300:
                    nb = 0.0
                if abs(nb - beta[jj]) > change:
                    change = abs(nb - beta[jj])
                beta[jj] = nb
            for i in range(n):
                eta[i] = eta_new[i]
            nll = nll_new
            obj = obj_new
            if last and n_trace < trace.shape[0]:
                trace[n_trace] = obj
                n_trace += 1
            _gradient(X, y, p, g, n, q)
            kkt = _kkt(g, beta, lam, q)
            big = 0.0
            for j in range(q):
                if abs(beta[j]) > big:
                    big = abs(beta[j])
            if big > beta_cap:
                for j in range(q):
                    if beta[j] > beta_cap:
                        beta[j] = beta_cap
                    elif beta[j] < -beta_cap:
                        beta[j] = -beta_cap
                for i in range(n):
                    acc = b0
                    for j in range(q):
                        if beta[j] != 0.0:
                            acc += X[i, j] * beta[j]
                    eta[i] = acc
                nll = _evaluate(eta, y, p, w, n)
                _gradient(X, y, p, g, n, q)
                kkt = _kkt(g, beta, lam, q)
                capped = True
                break
            if kkt < tol:
                converged = True
                break
            if t == 1.0 and change < tol:
                converged = True
                break
        out_b0[k] = b0
        for j in range(q):
            out_beta[k, j] = beta[j]
        info[k, INFO_ITERS] = iters
        info[k, INFO_SWEEPS] = sweeps_total
        info[k, INFO_KKT] = kkt
        info[k, INFO_CONVERGED] = 1.0 if converged else 0.0
        info[k, INFO_CAPPED] = 1.0 if capped else 0.0
    return n_trace
