"""Compiled Frisch-Newton kernel for quantile regression.

Each response is solved independently, so results do not depend on how
responses are grouped into batches or on the number of threads.
"""

import numba
import numpy as np

# reassociation lets reductions vectorise; infinities must stay intact
_FM = {"reassoc", "contract"}


@numba.njit(cache=True, nogil=True)
def _cholesky_solve(L, rhs, p, out):
    tmp = np.empty(p)
    for i in range(p):
        acc = rhs[i]
        for k in range(i):
            acc -= L[i, k] * tmp[k]
        tmp[i] = acc / L[i, i]
    for i in range(p - 1, -1, -1):
        acc = tmp[i]
        for k in range(i + 1, p):
            acc -= L[k, i] * out[k]
        out[i] = acc / L[i, i]


@numba.njit(cache=True, nogil=True)
def _cholesky(Q, p, L):
    for i in range(p):
        for j in range(i + 1):
            acc = Q[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            if i == j:
                if acc <= 0.0:
                    return False
                L[i, i] = np.sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    return True


@numba.njit(cache=True, nogil=True)
def _bound(v, dv, n):
    best = np.inf
    for t in range(n):
        if dv[t] < 0.0:
            r = -v[t] / dv[t]
            if r < best:
                best = r
    return best


@numba.njit(cache=True, nogil=True, fastmath=_FM)
def _dot3(a, b, c, n):
    acc = 0.0
    for t in range(n):
        acc += a[t] * b[t] * c[t]
    return acc


@numba.njit(cache=True, nogil=True, fastmath=_FM)
def _dot2(a, b, n):
    acc = 0.0
    for t in range(n):
        acc += a[t] * b[t]
    return acc


@numba.njit(cache=True, nogil=True, fastmath=_FM)
def _xdy(XT, dy, p, n, out):
    for t in range(n):
        out[t] = 0.0
    for j in range(p):
        d = dy[j]
        row = XT[j]
        for t in range(n):
            out[t] += row[t] * d


@numba.njit(cache=True, nogil=True, fastmath=_FM)
def fnb_solve(XT, pinv, yresp, q, beta, eps, max_iter, out):
    """Solve one problem; writes the primal coefficients into ``out``.

    ``XT`` is the transposed (p, n) design.  Returns the number of
    iterations, or -1 if the normal equations lost positive definiteness.
    """
    p, n = XT.shape
    c = -yresp
    b = np.empty(p)
    for j in range(p):
        b[j] = (1.0 - q) * np.sum(XT[j])
    x = np.full(n, 1.0 - q)
    s = np.full(n, q)
    yd = np.empty(p)
    for j in range(p):
        yd[j] = _dot2(pinv[j], c, n)
    z = np.empty(n)
    w = np.empty(n)
    xb = np.empty(n)
    _xdy(XT, yd, p, n, xb)
    scale = 1.0
    for t in range(n):
        r = c[t] - xb[t]
        if r == 0.0:
            r = 0.001
        z[t] = r if r > 0.0 else 0.0
        w[t] = z[t] - r
        scale += abs(yresp[t])

    qd = np.empty(n)
    ra = np.empty(n)
    qra = np.empty(n)
    dx = np.empty(n)
    ds = np.empty(n)
    dz = np.empty(n)
    dw = np.empty(n)
    dxdz = np.empty(n)
    dsdw = np.empty(n)
    xi = np.empty(n)
    Q = np.empty((p, p))
    L = np.zeros((p, p))
    rhs = np.empty(p)
    rhs2 = np.empty(p)
    dy = np.empty(p)

    it = 0
    while it < max_iter:
        gap = _dot2(c, x, n) + np.sum(w) - _dot2(yd, b, p)
        if gap <= eps * scale:
            break
        it += 1
        for t in range(n):
            qd[t] = 1.0 / (z[t] / x[t] + w[t] / s[t])
            ra[t] = z[t] - w[t]
            qra[t] = qd[t] * ra[t]
        for i in range(p):
            rhs[i] = _dot2(XT[i], qra, n)
            for j in range(i + 1):
                Q[i, j] = _dot3(qd, XT[i], XT[j], n)
        if not _cholesky(Q, p, L):
            return -1
        _cholesky_solve(L, rhs, p, dy)
        _xdy(XT, dy, p, n, xb)
        for t in range(n):
            dx[t] = qd[t] * (xb[t] - ra[t])
            ds[t] = -dx[t]
            dz[t] = -z[t] * (dx[t] / x[t] + 1.0)
            dw[t] = -w[t] * (ds[t] / s[t] + 1.0)
        fp = min(beta * min(_bound(x, dx, n), _bound(s, ds, n)), 1.0)
        fd = min(beta * min(_bound(w, dw, n), _bound(z, dz, n)), 1.0)
        if min(fp, fd) < 1.0:
            mu = 0.0
            g = 0.0
            for t in range(n):
                mu += z[t] * x[t] + w[t] * s[t]
                g += ((z[t] + fd * dz[t]) * (x[t] + fp * dx[t])
                      + (w[t] + fd * dw[t]) * (s[t] + fp * ds[t]))
            mu = mu * (g / mu) ** 3 / (2.0 * n)
            for t in range(n):
                dxdz[t] = dx[t] * dz[t]
                dsdw[t] = ds[t] * dw[t]
                xi[t] = mu * (1.0 / x[t] - 1.0 / s[t])
                qra[t] = qd[t] * (dxdz[t] - dsdw[t] - xi[t])
            for i in range(p):
                rhs2[i] = rhs[i] + _dot2(XT[i], qra, n)
            _cholesky_solve(L, rhs2, p, dy)
            _xdy(XT, dy, p, n, xb)
            for t in range(n):
                dx[t] = qd[t] * (xb[t] + xi[t] - ra[t] - dxdz[t] + dsdw[t])
                ds[t] = -dx[t]
                dz[t] = mu / x[t] - z[t] - z[t] * dx[t] / x[t] - dxdz[t]
                dw[t] = mu / s[t] - w[t] - w[t] * ds[t] / s[t] - dsdw[t]
            fp = min(beta * min(_bound(x, dx, n), _bound(s, ds, n)), 1.0)
            fd = min(beta * min(_bound(w, dw, n), _bound(z, dz, n)), 1.0)
        for t in range(n):
            x[t] += fp * dx[t]
            s[t] += fp * ds[t]
            w[t] += fd * dw[t]
            z[t] += fd * dz[t]
        for j in range(p):
            yd[j] += fd * dy[j]
    for j in range(p):
        out[j] = -yd[j]
    return it


@numba.njit(cache=True, nogil=True)
def fnb_batch(X, Y, q, beta, eps, max_iter, out, iters):
    pinv = np.linalg.pinv(X)
    XT = np.ascontiguousarray(X.T)
    for k in range(Y.shape[0]):
        iters[k] = fnb_solve(XT, pinv, Y[k], q, beta, eps, max_iter, out[k])


@numba.njit(cache=True, nogil=True)
def snap_vertex(X, y, coef, q, zero_tol, basis, out):
    """Snap ``coef`` to a basic solution and test its optimality.

    Returns 1 when the vertex is verified optimal, 2 when additional
    zero residuals make the check inconclusive, 0 on failure.
    """
    n, p = X.shape
    r = np.empty(n)
    for t in range(n):
        acc = y[t]
        for j in range(p):
            acc -= X[t, j] * coef[j]
        r[t] = abs(acc)
    order = np.argsort(r, kind="mergesort")
    # Gram-Schmidt over candidate rows, keeping linearly independent ones
    Qb = np.zeros((p, p))
    m = 0
    for kk in range(min(n, 4 * p + 8)):
        t = order[kk]
        v = X[t].copy()
        nrm0 = np.sqrt(np.sum(v * v))
        for i in range(m):
            d = np.sum(Qb[i] * v)
            v -= d * Qb[i]
        nrm = np.sqrt(np.sum(v * v))
        if nrm > 1e-9 * max(nrm0, 1e-300):
            Qb[m] = v / nrm
            basis[m] = t
            m += 1
            if m == p:
                break
    if m < p:
        return 0
    Xh = np.empty((p, p))
    yh = np.empty(p)
    for i in range(p):
        Xh[i] = X[basis[i]]
        yh[i] = y[basis[i]]
    b = np.linalg.solve(Xh, yh)
    g = np.zeros(p)
    inbasis = np.zeros(n, dtype=np.bool_)
    for i in range(p):
        inbasis[basis[i]] = True
    ymax = 0.0
    for t in range(n):
        if abs(y[t]) > ymax:
            ymax = abs(y[t])
    tol = zero_tol * (1.0 + ymax)
    degenerate = False
    for t in range(n):
        if inbasis[t]:
            continue
        acc = y[t]
        for j in range(p):
            acc -= X[t, j] * b[j]
        if abs(acc) <= tol:
            degenerate = True
            continue
        psi = q - 1.0 if acc < 0.0 else q
        for j in range(p):
            g[j] += psi * X[t, j]
    for j in range(p):
        out[j] = b[j]
    if degenerate:
        return 2
    v = np.linalg.solve(Xh.T, -g)
    for j in range(p):
        if v[j] < q - 1.0 - 1e-9 or v[j] > q + 1e-9:
            return 0
    return 1
