"""Independent reference implementations used only by the tests."""

import itertools
import math

import numpy as np


def brute_force_quantile_loss(y, X, q):
    """Minimum check loss over all basic solutions (p-point interpolants)."""
    y = np.asarray(y, float)
    X = np.asarray(X, float)
    n, p = X.shape
    best = np.inf
    for h in itertools.combinations(range(n), p):
        Xh = X[list(h)]
        if abs(np.linalg.det(Xh)) < 1e-12:
            continue
        b = np.linalg.solve(Xh, y[list(h)])
        r = y - X @ b
        loss = np.sum(r * (q - (r < 0)))
        best = min(best, loss)
    return best


def grid_quantile_constant(y, q, grid):
    """Check loss of a constant fit evaluated on a grid."""
    y = np.asarray(y, float)
    r = y[None, :] - np.asarray(grid)[:, None]
    return np.sum(r * (q - (r < 0)), axis=1)


def permutation_shapley(values, players, target):
    """Average marginal contribution of ``target`` over all orderings.

    ``values`` maps frozenset -> array; the empty coalition is worth 0.
    """
    total = 0.0
    count = 0
    for order in itertools.permutations(players):
        pos = order.index(target)
        before = frozenset(order[:pos])
        with_t = before | {target}
        v_before = values[before] if before else 0.0
        total = total + (values[with_t] - v_before)
        count += 1
    assert count == math.factorial(len(players))
    return total / count


def newton_logit(y, x, iters=100):
    """Plain Newton-Raphson logistic regression on (1, x)."""
    X = np.column_stack([np.ones_like(x), x])
    b = np.zeros(2)
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-X @ b))
        grad = X.T @ (y - p)
        H = (X * (p * (1 - p))[:, None]).T @ X
        b = b + np.linalg.solve(H, grad)
    p = 1.0 / (1.0 + np.exp(-X @ b))
    return b, float(np.sum(y * np.log(p) + (1 - y) * np.log(1 - p)))


def beck_katz_balanced(X, u, n_groups):
    """PCSE for a balanced panel stacked group-major, via Sigma kron I_T."""
    n, k = X.shape
    T = n // n_groups
    E = u.reshape(n_groups, T).T  # T x N
    sigma = E.T @ E / T
    omega = np.kron(sigma, np.eye(T))
    bread = np.linalg.inv(X.T @ X)
    return bread @ X.T @ omega @ X @ bread


def brute_force_quantile_loss_batched(y, X, q, block=4096):
    """Same minimum as brute_force_quantile_loss, solving bases in blocks."""
    y = np.asarray(y, float)
    X = np.asarray(X, float)
    n, p = X.shape
    combos = np.array(list(itertools.combinations(range(n), p)), dtype=np.int64)
    best = np.inf
    for s in range(0, len(combos), block):
        h = combos[s:s + block]
        Xh = X[h]  # (k, p, p)
        ok = np.abs(np.linalg.det(Xh)) >= 1e-12
        if not ok.any():
            continue
        b = np.linalg.solve(Xh[ok], y[h[ok]][..., None])[..., 0]
        r = y[None, :] - b @ X.T
        loss = np.sum(r * (q - (r < 0)), axis=1)
        best = min(best, float(loss.min()))
    return best
