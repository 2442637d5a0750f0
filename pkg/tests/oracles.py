"""Independent reference computations shared by the test modules."""

import numpy as np
from scipy import optimize


def simplex_grid(J, step=1e-3):
    """All points of the ``J``-donor weight simplex on a lattice of the given step."""
    n = int(round(1 / step))
    if J == 1:
        return np.ones((1, 1))
    if J == 2:
        a = np.arange(n + 1) / n
        return np.column_stack([a, 1 - a])
    if J == 3:
        i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        keep = i + j <= n
        i, j = i[keep], j[keep]
        return np.column_stack([i, j, n - i - j]) / n
    raise ValueError("grid oracle supports at most 3 donors")


def grid_objective(y, X, grid):
    """Smallest pre-period sum of squares over the grid, intercept set to the mean residual."""
    yc = y - y.mean()
    Xc = X - X.mean(axis=1, keepdims=True)
    Q = Xc @ Xc.T
    c = Xc @ yc
    vals = np.einsum("pj,jk,pk->p", grid, Q, grid) - 2 * grid @ c + yc @ yc
    return float(vals.min())


def slsqp_weights(y, X):
    """Intercept and simplex weights by a general-purpose constrained optimiser."""
    J = X.shape[0]

    def f(v):
        r = y - v[0] - v[1:] @ X
        return r @ r

    cons = [{"type": "eq", "fun": lambda v: v[1:].sum() - 1.0}]
    bounds = [(None, None)] + [(0.0, 1.0)] * J
    x0 = np.r_[0.0, np.full(J, 1.0 / J)]
    res = optimize.minimize(f, x0, method="SLSQP", bounds=bounds, constraints=cons,
                            options={"ftol": 1e-14, "maxiter": 500})
    return res.x[0], res.x[1:], res.fun


def tau_lstsq(Y_post, a, B, selectors):
    """Effect vector as an ordinary least-squares problem on the stacked system."""
    N = B.shape[0]
    IB = np.eye(N) - B
    rows = [IB @ A for A in selectors]
    rhs = [IB @ Y_post[:, s] - a for s in range(len(selectors))]
    sol, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
    return sol


def tau_minimize(Y_post, a, B, selectors):
    """Effect vector by direct numerical minimisation of the quadratic objective."""
    N = B.shape[0]
    IB = np.eye(N) - B
    K = selectors[0].shape[1]

    def f(g):
        return sum(float(np.sum((IB @ (Y_post[:, s] - A @ g) - a) ** 2)) for s, A in enumerate(selectors))

    def grad(g):
        return sum(-2 * A.T @ IB.T @ (IB @ (Y_post[:, s] - A @ g) - a) for s, A in enumerate(selectors))

    res = optimize.minimize(f, np.zeros(K), jac=grad, method="BFGS", options={"gtol": 1e-12, "maxiter": 10000})
    return res.x
