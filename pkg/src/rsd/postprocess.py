"""Turn a chain trace into a final clustering and re-estimated models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .gibbs import ChainTrace
from .lasso import cv_select, fit_lasso
from .state import Dataset, HyperParams

Z_95 = 1.959964  # two-sided 95% normal quantile


@dataclass
class SegmentationResult:
    """Final segmentation: compact labels plus per-segment models.

    ``labels`` are 1-based and compact (every value in 1..K_hat occurs).
    ``intervals`` holds 95% lower/upper bounds per coefficient for the
    ridge re-estimation and is None under the lasso.
    """

    labels: np.ndarray
    K_hat: int
    Beta_hat: np.ndarray
    sigma_hat_sq: np.ndarray
    intervals: np.ndarray | None
    selected_iter: int
    lasso_fallback_segments: list[int] | None = None


def coclustering_matrix(trace: ChainTrace) -> np.ndarray:
    """Pairwise co-assignment frequencies d[i, j] across stored draws."""
    if trace.L < 1:
        raise ValueError("trace must hold at least one stored iteration")
    n = trace.stored_g.shape[1]
    d = np.zeros((n, n))
    for labels in trace.stored_g:
        d += labels[:, None] == labels[None, :]
    return d / trace.L


def dahl_select(trace: ChainTrace, d: np.ndarray) -> int:
    """Index of the stored draw whose partition indicator matrix is
    closest in squared error to the co-clustering matrix (first index on
    ties)."""
    best, best_loss = 0, np.inf
    for l, labels in enumerate(trace.stored_g):
        ind = (labels[:, None] == labels[None, :]).astype(float)
        loss = ((ind - d) ** 2).sum()
        if loss < best_loss - 1e-12:
            best, best_loss = l, loss
    return best


def relabel(raw_labels) -> tuple[np.ndarray, int]:
    """Renumber labels by first appearance to 1..K_hat."""
    raw = np.asarray(raw_labels)
    _, first_pos, inverse = np.unique(raw, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first_pos))
    labels = order[inverse] + 1
    return labels, int(first_pos.size)


def _segment_system(data: Dataset, members: np.ndarray, ridge_c: float):
    Xg = data.X[members]
    wg = data.counts[members]
    precision = (Xg * wg[:, None]).T @ Xg + ridge_c * np.eye(data.p)
    xtwy = (Xg * wg[:, None]).T @ data.y[members]
    return precision, xtwy


def _posterior_sigma_sq(data: Dataset, members: np.ndarray, beta: np.ndarray, hp: HyperParams) -> float:
    resid = data.y[members] - data.X[members] @ beta
    shape = hp.a_sigma + 0.5 * members.sum()
    scale = hp.b_sigma + 0.5 * (data.counts[members] * resid**2).sum()
    if shape > 1.0:
        return scale / (shape - 1.0)
    # posterior mean undefined for tiny segments; fall back to the mode
    return scale / (shape + 1.0)


def reestimate_ridge(data: Dataset, labels: np.ndarray, hp: HyperParams):
    """Closed-form ridge re-estimation per segment.

    Returns coefficient point estimates, error-variance estimates and
    95% interval bounds of shape (K_hat, p, 2).
    """
    labels = np.asarray(labels)
    K_hat = labels.max()
    Beta_hat = np.empty((K_hat, data.p))
    sigma_hat_sq = np.empty(K_hat)
    intervals = np.empty((K_hat, data.p, 2))
    for seg in range(1, K_hat + 1):
        members = labels == seg
        if not members.any():
            raise ValueError(f"segment {seg} has no members")
        precision, xtwy = _segment_system(data, members, hp.ridge_c)
        chol = cho_factor(precision, lower=True)
        beta = cho_solve(chol, xtwy)
        sigma_sq = _posterior_sigma_sq(data, members, beta, hp)
        cov_diag = np.diag(cho_solve(chol, np.eye(data.p)))
        half = Z_95 * np.sqrt(sigma_sq * cov_diag)
        Beta_hat[seg - 1] = beta
        sigma_hat_sq[seg - 1] = sigma_sq
        intervals[seg - 1, :, 0] = beta - half
        intervals[seg - 1, :, 1] = beta + half
    return Beta_hat, sigma_hat_sq, intervals


def reestimate_lasso(data: Dataset, labels: np.ndarray, hp: HyperParams, cv_folds: int = 5, seed: int = 0):
    """Weighted-lasso re-estimation per segment, penalty chosen by CV.

    Segments with fewer than 2 members fall back to the ridge
    re-estimation and are reported in the second return value.
    """
    labels = np.asarray(labels)
    K_hat = labels.max()
    Beta_hat = np.empty((K_hat, data.p))
    fallback = []
    penalize = np.ones(data.p, dtype=bool)
    if data.intercept_col is not None:
        penalize[data.intercept_col] = False
    for seg in range(1, K_hat + 1):
        members = labels == seg
        m = int(members.sum())
        if m < 2:
            fallback.append(seg)
            precision, xtwy = _segment_system(data, members, hp.ridge_c)
            Beta_hat[seg - 1] = cho_solve(cho_factor(precision, lower=True), xtwy)
            continue
        Xg, yg, wg = data.X[members], data.y[members], data.counts[members]
        folds = min(cv_folds, m)
        penalty = cv_select(Xg, yg, wg, folds=max(folds, 2), penalize_mask=penalize, seed=seed + seg)
        Beta_hat[seg - 1] = fit_lasso(Xg, yg, wg, penalty, penalize_mask=penalize).beta
    return Beta_hat, fallback or None


def nearest_labels(train_S: np.ndarray, labels: np.ndarray, query_S: np.ndarray) -> np.ndarray:
    """Label each query point by its Euclidean-nearest training location
    (smallest index on ties)."""
    train_S = np.asarray(train_S, dtype=float)
    query_S = np.asarray(query_S, dtype=float)
    if train_S.shape[0] == 0:
        raise ValueError("training locations are empty")
    d2 = ((query_S[:, None, :] - train_S[None, :, :]) ** 2).sum(axis=2)
    return np.asarray(labels)[np.argmin(d2, axis=1)]


def predict(result: SegmentationResult, train_S: np.ndarray, test: Dataset):
    """Nearest-neighbor membership transfer and per-segment prediction."""
    labels = nearest_labels(train_S, result.labels, test.S)
    preds = np.einsum("np,np->n", test.X, result.Beta_hat[labels - 1])
    return labels, preds


def summarize_trace(
    trace: ChainTrace,
    data: Dataset,
    hp: HyperParams,
    cv_folds: int = 5,
    seed: int = 0,
) -> SegmentationResult:
    """Full post-processing pipeline: co-clustering, draw selection,
    relabeling, and re-estimation under the configured prior."""
    d = coclustering_matrix(trace)
    l_star = dahl_select(trace, d)
    labels, K_hat = relabel(trace.stored_g[l_star])
    fallback = None
    if hp.prior_kind == "ridge":
        Beta_hat, sigma_hat_sq, intervals = reestimate_ridge(data, labels, hp)
    else:
        Beta_hat, fallback = reestimate_lasso(data, labels, hp, cv_folds=cv_folds, seed=seed)
        intervals = None
        sigma_hat_sq = np.array([
            _posterior_sigma_sq(data, labels == seg, Beta_hat[seg - 1], hp)
            for seg in range(1, K_hat + 1)
        ])
    return SegmentationResult(
        labels=labels,
        K_hat=K_hat,
        Beta_hat=Beta_hat,
        sigma_hat_sq=sigma_hat_sq,
        intervals=intervals,
        selected_iter=l_star,
        lasso_fallback_segments=fallback,
    )
