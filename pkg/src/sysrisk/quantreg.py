"""Linear quantile regression (Koenker-Bassett check loss).

The solver runs a Frisch-Newton interior point method on the bounded dual
LP, batched over many response vectors that share one design matrix, and
then snaps each solution onto an exact basic (vertex) solution that is
verified against the subgradient optimality conditions.  Problems that fail
verification are re-solved with the HiGHS simplex and snapped again.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from ._fnb import fnb_batch, snap_vertex
from .errors import SampleSizeError, SingularDesignError

__all__ = [
    "QuantileFit",
    "check_loss",
    "fit_quantile",
    "fit_quantile_batch",
    "predict",
    "prune_zero_columns",
]

ZERO_TOL = 1e-12
IPM_BETA = 0.99995
IPM_EPS = 1e-7
IPM_MAX_ITER = 60


@dataclass(frozen=True)
class QuantileFit:
    """Point estimate of a linear conditional quantile.

    ``coefficients`` are reported on the full input design (intercept
    first); pruned all-zero columns carry a coefficient of exactly zero.
    ``basis`` lists the observations interpolated by the vertex solution
    (empty for the closed-form intercept-only case).
    """

    q: float
    coefficients: np.ndarray
    loss: float
    n_obs: int
    basis: tuple[int, ...] = field(default=())
    method: str = "ipm"

    def residuals(self, y, X) -> np.ndarray:
        r = np.asarray(y, dtype=float) - np.asarray(X, dtype=float) @ self.coefficients
        if self.basis:
            r[list(self.basis)] = 0.0
        return r


def check_loss(residuals, q: float) -> float:
    """Sum of rho_q(u) = u * (q - 1{u < 0})."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    u = np.asarray(residuals, dtype=float)
    return float(np.sum(u * (q - (u < 0))))


def predict(fit: QuantileFit, x_row) -> float | np.ndarray:
    x = np.asarray(x_row, dtype=float)
    if x.shape[-1] != fit.coefficients.shape[0]:
        raise ValueError(
            f"regressor length {x.shape[-1]} does not match {fit.coefficients.shape[0]} coefficients"
        )
    return x @ fit.coefficients


def prune_zero_columns(X: np.ndarray) -> np.ndarray:
    """Indices of columns that are not identically zero."""
    return np.flatnonzero(np.any(X != 0.0, axis=0))


def _validate(X: np.ndarray, n: int, q: float) -> np.ndarray:
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    if X.ndim != 2 or X.shape[0] != n:
        raise ValueError(f"design has shape {X.shape}, expected ({n}, p)")
    keep = prune_zero_columns(X)
    if keep.size == 0:
        raise SingularDesignError("design has no nonzero column")
    if n < keep.size:
        raise SampleSizeError(f"{n} observations for {keep.size} regressors")
    if np.linalg.matrix_rank(X[:, keep]) < keep.size:
        raise SingularDesignError("design is rank deficient after dropping zero columns")
    return keep


def _intercept_only(y: np.ndarray, q: float) -> float:
    """Closed-form minimiser for a constant design.

    When the minimising set is an interval, the lower order statistic is
    returned, except at the median where the interval midpoint is used.
    """
    ys = np.sort(y)
    n = ys.size
    nq = n * q
    k = int(np.floor(nq + 1e-12))
    if abs(nq - round(nq)) <= 1e-12 and 0 < round(nq) < n:
        k = int(round(nq))
        lo, hi = ys[k - 1], ys[k]
        return 0.5 * (lo + hi) if q == 0.5 else float(lo)
    return float(ys[min(k, n - 1)])


def _degenerate_vertex_ok(X, y, b, basis, q) -> bool:
    """Optimality check for a vertex with extra zero residuals.

    Every zero-residual observation carries a free subgradient in
    [q-1, q]; optimality is feasibility of the resulting box LP.
    """
    res = y - X @ b
    tol = ZERO_TOL * (1.0 + np.abs(y).max())
    free = np.abs(res) <= tol
    free[list(basis)] = True
    g = X[~free].T @ (q - (res[~free] < 0))
    if not np.any(g):
        return True
    Xf = X[free]
    lp = linprog(np.zeros(Xf.shape[0]), A_eq=Xf.T, b_eq=-g,
                 bounds=[(q - 1.0, q)] * Xf.shape[0], method="highs")
    return lp.status == 0


def _snap(X, y, coef, q):
    p = X.shape[1]
    basis = np.empty(p, dtype=np.int64)
    out = np.empty(p)
    status = snap_vertex(X, y, np.ascontiguousarray(coef), q, ZERO_TOL, basis, out)
    if status == 2:
        status = 1 if _degenerate_vertex_ok(X, y, out, basis, q) else 0
    if status == 1:
        return out, tuple(int(i) for i in basis)
    return None


def _highs(X: np.ndarray, y: np.ndarray, q: float) -> np.ndarray:
    n, p = X.shape
    c = np.concatenate([np.zeros(p), np.full(n, q), np.full(n, 1.0 - q)])
    eye = sparse.identity(n, format="csr")
    A = sparse.hstack([sparse.csr_matrix(X), eye, -eye], format="csr")
    bounds = [(None, None)] * p + [(0, None)] * (2 * n)
    res = linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs-ds")
    if res.status != 0:
        raise SingularDesignError(f"LP solver failed: {res.message}")
    return res.x[:p]


def _finish(X, y, coef, q):
    """Vertex snap with simplex fallback; returns (coef, basis, method)."""
    if np.all(np.isfinite(coef)):
        snapped = _snap(X, y, coef, q)
        if snapped is not None:
            return snapped[0], snapped[1], "ipm"
    lp = _highs(X, y, q)
    snapped = _snap(X, y, lp, q)
    if snapped is not None:
        return snapped[0], snapped[1], "simplex"
    return lp, (), "simplex"


def fit_quantile_batch(Y, X, q: float, chunk: int = 2048) -> list[QuantileFit]:
    """Fit the q-quantile regression of every row of ``Y`` on ``X``.

    The design is validated once and shared; results are identical to
    calling :func:`fit_quantile` row by row.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    X = np.asarray(X, dtype=float)
    n = Y.shape[1]
    keep = _validate(X, n, q)
    if not np.all(np.isfinite(Y)) or not np.all(np.isfinite(X)):
        raise ValueError("non-finite values in quantile regression input")
    Xk = np.ascontiguousarray(X[:, keep])
    p_full = X.shape[1]
    fits: list[QuantileFit] = []

    if keep.size == 1 and Xk[0, 0] > 0 and np.all(Xk == Xk[0, 0]):
        for y in Y:
            coef = np.zeros(p_full)
            coef[keep[0]] = _intercept_only(y, q) / Xk[0, 0]
            fits.append(QuantileFit(q, coef, check_loss(y - X @ coef, q), n, (), "order"))
        return fits

    for start in range(0, Y.shape[0], chunk):
        block = Y[start:start + chunk]
        approx = np.empty((block.shape[0], Xk.shape[1]))
        iters = np.empty(block.shape[0], dtype=np.int64)
        fnb_batch(Xk, block, q, IPM_BETA, IPM_EPS, IPM_MAX_ITER, approx, iters)
        for y, a in zip(block, approx):
            b, basis, method = _finish(Xk, y, a, q)
            coef = np.zeros(p_full)
            coef[keep] = b
            r = y - Xk @ b
            if basis:
                r[list(basis)] = 0.0
            fits.append(QuantileFit(q, coef, check_loss(r, q), n, basis, method))
    return fits


def fit_quantile(y, X, q: float) -> QuantileFit:
    """Minimise sum_t rho_q(y_t - x_t b) over b.

    Raises
    ------
    SampleSizeError
        Fewer observations than (nonzero) regressors.
    SingularDesignError
        Design rank deficient after dropping all-zero columns.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError("response must be one-dimensional")
    return fit_quantile_batch(y[None, :], X, q)[0]
