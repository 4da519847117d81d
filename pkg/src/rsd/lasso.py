"""Weighted lasso by cyclic coordinate descent, with k-fold CV.

The objective is stated in the problem's own coordinates:

    (1 / (2 sum w)) * sum_i w_i (y_i - x_i beta)^2
        + penalty * sum_{j penalized} |beta_j|

Columns are standardized internally (weighted mean/sd) purely as
numerical preconditioning: the penalty is rescaled per column so the
minimized objective is exactly the one above, and the solution is
back-transformed. An unpenalized constant column is treated as the
intercept and profiled out through the weighted means.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_DEGENERATE_SD = 1e-12


@dataclass
class LassoProblem:
    X: np.ndarray
    y: np.ndarray
    w: np.ndarray
    penalty: float
    penalize_mask: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        m, p = self.X.shape
        if self.y.shape != (m,) or self.w.shape != (m,):
            raise ValueError("X, y and w must have matching row counts")
        if np.any(self.w <= 0):
            raise ValueError("weights must be positive")
        if self.penalty < 0:
            raise ValueError("penalty must be non-negative")
        if self.penalize_mask is None:
            self.penalize_mask = np.ones(p, dtype=bool)
        else:
            self.penalize_mask = np.asarray(self.penalize_mask, dtype=bool)
            if self.penalize_mask.shape != (p,):
                raise ValueError("penalize_mask must have one entry per column")


@dataclass
class LassoFit:
    beta: np.ndarray
    converged: bool
    n_sweeps: int


def soft_threshold(x, threshold):
    return np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)


def objective(X, y, w, beta, penalty, penalize_mask=None) -> float:
    X, y, w, beta = map(np.asarray, (X, y, w, beta))
    if penalize_mask is None:
        penalize_mask = np.ones(X.shape[1], dtype=bool)
    resid = y - X @ beta
    return float(
        0.5 * (w * resid**2).sum() / w.sum()
        + penalty * np.abs(beta[penalize_mask]).sum()
    )


def kkt_residuals(X, y, w, beta, penalty, penalize_mask=None) -> np.ndarray:
    """Per-coordinate violation of the stationarity conditions."""
    X, y, w, beta = map(np.asarray, (X, y, w, beta))
    p = X.shape[1]
    if penalize_mask is None:
        penalize_mask = np.ones(p, dtype=bool)
    grad = -(X * w[:, None]).T @ (y - X @ beta) / w.sum()
    out = np.empty(p)
    for j in range(p):
        if not penalize_mask[j]:
            out[j] = abs(grad[j])
        elif beta[j] == 0.0:
            out[j] = max(0.0, abs(grad[j]) - penalty)
        else:
            out[j] = abs(grad[j] + penalty * np.sign(beta[j]))
    return out


class _Standardized:
    """Preconditioned copy of a problem; maps solutions back."""

    def __init__(self, X, y, w, penalize_mask):
        self.m, self.p = X.shape
        self.wn = w / w.sum()
        self.mask = penalize_mask

        const = (X == X[0]).all(axis=0)
        unpen_const = const & ~penalize_mask
        self.intercept_col = int(np.flatnonzero(unpen_const)[0]) if unpen_const.any() else None

        if self.intercept_col is not None:
            self.x_mean = self.wn @ X
            self.y_mean = float(self.wn @ y)
        else:
            self.x_mean = np.zeros(self.p)
            self.y_mean = 0.0
        Xc = X - self.x_mean
        self.yc = y - self.y_mean
        scale = np.sqrt(self.wn @ Xc**2)
        self.active = scale > _DEGENERATE_SD
        if self.intercept_col is not None:
            self.active[self.intercept_col] = False
        self.scale = np.where(self.active, scale, 1.0)
        self.Xs = Xc / self.scale
        self.Xw = self.Xs * self.wn[:, None]  # weighted columns for gradients

    def penalties(self, penalty: float) -> np.ndarray:
        # penalty * |beta_j| == (penalty / scale_j) * |beta_std_j|
        return np.where(self.mask, penalty / self.scale, 0.0)


def _descend(std: _Standardized, pen: np.ndarray, beta_std: np.ndarray, tol: float, max_iters: int):
    """Cyclic coordinate descent on the standardized problem; columns have
    unit weighted norm so each exact minimization is a soft threshold."""
    r = std.yc - std.Xs @ beta_std
    cols = np.flatnonzero(std.active)
    n_sweeps = 0
    converged = False
    while n_sweeps < max_iters:
        n_sweeps += 1
        max_delta = 0.0
        for j in cols:
            bj = beta_std[j]
            rho = std.Xw[:, j] @ r + bj
            new = soft_threshold(rho, pen[j])
            if new != bj:
                r += std.Xs[:, j] * (bj - new)
                beta_std[j] = new
                delta = abs(new - bj) / std.scale[j]
                if delta > max_delta:
                    max_delta = delta
        if max_delta < tol:
            converged = True
            break
    return beta_std, converged, n_sweeps


def fit(problem: LassoProblem, tol: float = 1e-8, max_iters: int = 10_000) -> LassoFit:
    """Solve a weighted lasso problem to KKT stationarity."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    std = _Standardized(problem.X, problem.y, problem.w, problem.penalize_mask)
    beta_std = np.zeros(std.p)
    beta_std, converged, n_sweeps = _descend(std, std.penalties(problem.penalty), beta_std, tol, max_iters)
    beta = _finish(std, beta_std)
    return LassoFit(beta=beta, converged=converged, n_sweeps=n_sweeps)


def _finish(std: _Standardized, beta_std: np.ndarray) -> np.ndarray:
    beta = np.where(std.active, beta_std / std.scale, 0.0)
    if std.intercept_col is not None:
        col = std.intercept_col
        const_val = std.x_mean[col]  # weighted mean of a constant column is its value
        beta[col] = (std.y_mean - std.x_mean @ beta) / const_val
    return beta


def fit_lasso(X, y, w, penalty, penalize_mask=None, tol: float = 1e-8, max_iters: int = 10_000) -> LassoFit:
    return fit(LassoProblem(X, y, w, penalty, penalize_mask), tol=tol, max_iters=max_iters)


def lambda_max(X, y, w, penalize_mask=None) -> float:
    """Smallest penalty at which every penalized coefficient is zero."""
    X, y, w = map(np.asarray, (X, y, w))
    p = X.shape[1]
    if penalize_mask is None:
        penalize_mask = np.ones(p, dtype=bool)
    penalize_mask = np.asarray(penalize_mask, dtype=bool)
    const = (X == X[0]).all(axis=0)
    if (const & ~penalize_mask).any():
        y_center = (w @ y) / w.sum()
    else:
        y_center = 0.0
    corr = np.abs((X * w[:, None]).T @ (y - y_center)) / w.sum()
    masked = corr[penalize_mask]
    return float(masked.max()) if masked.size else 0.0


def penalty_grid(X, y, w, grid_size: int = 100, penalize_mask=None) -> np.ndarray:
    """Descending log-spaced grid from lambda_max down to 1e-4*lambda_max."""
    lmax = lambda_max(X, y, w, penalize_mask)
    if lmax <= 0:
        return np.zeros(1)
    return np.geomspace(lmax, 1e-4 * lmax, grid_size)


def _fit_path(std: _Standardized, grid: np.ndarray, tol: float, max_iters: int) -> np.ndarray:
    """Warm-started solutions along a descending penalty grid, in
    original coordinates, shape (len(grid), p)."""
    betas = np.empty((grid.size, std.p))
    beta_std = np.zeros(std.p)
    for i, penalty in enumerate(grid):
        beta_std, _, _ = _descend(std, std.penalties(penalty), beta_std, tol, max_iters)
        betas[i] = _finish(std, beta_std.copy())
    return betas


def cv_select(
    X,
    y,
    w,
    folds: int = 5,
    grid_size: int = 100,
    penalize_mask=None,
    seed: int = 0,
    tol: float = 1e-7,
    max_iters: int = 10_000,
    return_curve: bool = False,
):
    """Pick the grid penalty minimizing mean weighted validation error.

    Fold assignment is a seeded permutation, so selection is
    reproducible. Ties go to the largest (first) penalty.
    """
    X, y, w = map(np.asarray, (X, y, w))
    m = X.shape[0]
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if m < folds:
        raise ValueError(f"need at least as many rows ({m}) as folds ({folds})")
    grid = penalty_grid(X, y, w, grid_size, penalize_mask)
    if grid.size == 1 and grid[0] == 0.0:
        return (0.0, grid, np.zeros(1)) if return_curve else 0.0

    order = np.random.default_rng(seed).permutation(m)
    fold_ids = np.empty(m, dtype=int)
    for k, chunk in enumerate(np.array_split(order, folds)):
        fold_ids[chunk] = k

    errors = np.zeros((folds, grid.size))
    for k in range(folds):
        val = fold_ids == k
        std = _Standardized(
            X[~val], y[~val], w[~val],
            np.ones(X.shape[1], dtype=bool) if penalize_mask is None else np.asarray(penalize_mask, dtype=bool),
        )
        betas = _fit_path(std, grid, tol, max_iters)
        preds = X[val] @ betas.T  # (m_val, grid)
        sq = (y[val, None] - preds) ** 2
        errors[k] = (w[val, None] * sq).sum(axis=0) / w[val].sum()

    mean_err = errors.mean(axis=0)
    best = int(np.argmin(mean_err))
    if return_curve:
        return float(grid[best]), grid, mean_err
    return float(grid[best])
