"""Compiled FISTA loop for the window problem.

Same iteration as :func:`hybridloc.solver.fista_solve`, with ``M`` applied
edge by edge in explicit loops. Used when no per-iteration trace is requested.
"""
import numba
import numpy as np


@numba.njit(cache=True)
def _gradient(zh, g, b, T, n, E, K, p, ei, ej, wn, ai, wa, wv):
    nx = T * n * p
    oy = nx
    ow = oy + T * E * p
    os_ = ow + T * K * p
    for idx in range(g.size):
        g[idx] = -b[idx]
    for tau in range(T):
        for e in range(E):
            xi = (tau * n + ei[e]) * p
            xj = (tau * n + ej[e]) * p
            yy = oy + (tau * E + e) * p
            for c in range(p):
                r = wn[e] * (zh[xi + c] - zh[xj + c] - zh[yy + c])
                g[xi + c] += r
                g[xj + c] -= r
                g[yy + c] -= r
        for e in range(K):
            xi = (tau * n + ai[e]) * p
            ww = ow + (tau * K + e) * p
            for c in range(p):
                r = wa[e] * (zh[xi + c] - zh[ww + c])
                g[xi + c] += r
                g[ww + c] -= r
    for tau in range(1, T):
        for i in range(n):
            xa = (tau * n + i) * p
            xb = ((tau - 1) * n + i) * p
            ss = os_ + ((tau - 1) * n + i) * p
            for c in range(p):
                r = wv[i] * (zh[xa + c] - zh[xb + c] - zh[ss + c])
                g[xa + c] += r
                g[xb + c] -= r
                g[ss + c] -= r


@numba.njit(cache=True)
def _project(z, nx, p, radii):
    for k in range(radii.size):
        base = nx + k * p
        nrm2 = 0.0
        for c in range(p):
            nrm2 += z[base + c] * z[base + c]
        nrm = np.sqrt(nrm2)
        if nrm > radii[k]:
            scale = radii[k] / nrm
            for c in range(p):
                z[base + c] *= scale


@numba.njit(cache=True)
def fista_loop(z0, b, L, radii, T, n, E, K, p, ei, ej, wn, ai, wa, wv, max_iter, tol, rule):
    """Returns ``(z, iterations, converged)``; ``rule`` 0 = (k-2)/(k+1), 1 = (k-1)/k."""
    nx = T * n * p
    size = z0.size
    z_cur = z0.copy()
    _project(z_cur, nx, p, radii)
    z_prev = z_cur.copy()
    zh = np.empty(size)
    g = np.empty(size)
    z_new = np.empty(size)
    iters = 0
    converged = False
    for k in range(1, max_iter + 1):
        if rule == 0:
            c = max(k - 2, 0) / (k + 1.0)
        else:
            c = (k - 1) / float(k)
        for idx in range(size):
            zh[idx] = z_cur[idx] + c * (z_cur[idx] - z_prev[idx])
        _gradient(zh, g, b, T, n, E, K, p, ei, ej, wn, ai, wa, wv)
        for idx in range(size):
            z_new[idx] = zh[idx] - g[idx] / L
        _project(z_new, nx, p, radii)
        step2 = 0.0
        norm2 = 0.0
        for idx in range(size):
            d = z_new[idx] - z_cur[idx]
            step2 += d * d
            norm2 += z_new[idx] * z_new[idx]
        if not np.isfinite(step2):
            return z_cur, -k, False
        tmp = z_prev
        z_prev = z_cur
        z_cur = z_new
        z_new = tmp
        iters = k
        if np.sqrt(step2) / max(1.0, np.sqrt(norm2)) < tol:
            converged = True
            break
    return z_cur, iters, converged


@numba.njit(cache=True)
def node_position(xh, auxh, nbr, sign, wn, wa, alpha, wv, L):
    """``(F1 + F2 + F3 + F4) / L`` for one node; ``auxh`` rows are y, w, s."""
    T, p = xh.shape
    deg = wn.size
    k = wa.size
    ow = T * deg
    os_ = ow + T * k
    total = 0.0
    for e in range(deg):
        total += wn[e]
    for a in range(k):
        total += wa[a]
    out = np.empty((T, p))
    for t in range(T):
        for c in range(p):
            f = xh[t, c] * (L - total)
            for e in range(deg):
                f += wn[e] * (nbr[t, e, c] + sign[e] * auxh[t * deg + e, c])
            for a in range(k):
                f += wa[a] * (auxh[ow + t * k + a, c] + alpha[t, a, c])
            if t >= 1:
                f += wv * (auxh[os_ + t - 1, c] - (xh[t, c] - xh[t - 1, c]))
            if t + 1 < T:
                f -= wv * (auxh[os_ + t, c] - (xh[t + 1, c] - xh[t, c]))
            out[t, c] = f / L
    return out


@numba.njit(cache=True)
def node_aux(xh, auxh, nbr, sign, wn, u_tilde, wa, alpha, q_tilde, wv, v_tilde, radius, L):
    """Projected ``y``, ``w``, ``s`` updates for one node, rows laid out like ``auxh``."""
    T, p = xh.shape
    deg = wn.size
    k = wa.size
    ow = T * deg
    os_ = ow + T * k
    out = np.empty_like(auxh)
    for t in range(T):
        for e in range(deg):
            r = t * deg + e
            for c in range(p):
                diff = sign[e] * (xh[t, c] - nbr[t, e, c])
                out[r, c] = ((L - wn[e]) / L) * auxh[r, c] + u_tilde[t, e, c] / L + (wn[e] / L) * diff
        for a in range(k):
            r = ow + t * k + a
            for c in range(p):
                out[r, c] = (((L - wa[a]) / L) * auxh[r, c] + (wa[a] / L) * (xh[t, c] - alpha[t, a, c])
                             + q_tilde[t, a, c] / L)
        if t >= 1:
            r = os_ + t - 1
            for c in range(p):
                out[r, c] = (((L - wv) / L) * auxh[r, c] + (wv / L) * (xh[t, c] - xh[t - 1, c])
                             + v_tilde[t - 1, c] / L)
    _project(out.ravel(), 0, p, radius)
    return out
