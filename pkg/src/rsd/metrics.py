"""Evaluation metrics for the synthetic benchmark protocol."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import comb


@dataclass
class EvalReport:
    """Flat bundle of the four benchmark metrics."""

    diffk_signed: int
    diffk_abs: int
    ari: float
    rmspe: float
    rmse_coeff: float

    def to_dict(self) -> dict:
        return asdict(self)


def diffk(K_hat: int, K_star: int) -> tuple[int, int]:
    """Signed and absolute error in the estimated segment count."""
    if K_hat < 1 or K_star < 1:
        raise ValueError("segment counts must be >= 1")
    signed = int(K_hat) - int(K_star)
    return signed, abs(signed)


def ari(labels_a, labels_b) -> float:
    """Hubert-Arabie adjusted Rand index.

    Can be negative for worse-than-chance agreement; equals 1 exactly
    when the partitions coincide up to relabeling. The degenerate case
    of two identical trivial partitions returns 1.
    """
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("label vectors must be 1-D with equal length")
    n = a.size
    if n < 2:
        raise ValueError("need at least two items")

    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    n_a, n_b = ai.max() + 1, bi.max() + 1
    table = np.zeros((n_a, n_b))
    np.add.at(table, (ai, bi), 1)

    sum_cells = comb(table, 2).sum()
    sum_rows = comb(table.sum(axis=1), 2).sum()
    sum_cols = comb(table.sum(axis=0), 2).sum()
    expected = sum_rows * sum_cols / comb(n, 2)
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


def rmspe(responses, predictions) -> float:
    """Root mean squared prediction error."""
    y = np.asarray(responses, dtype=float)
    yhat = np.asarray(predictions, dtype=float)
    if y.shape != yhat.shape:
        raise ValueError("responses and predictions must align")
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def rmse_coeff(true_Beta, Beta_hat, true_labels, est_labels) -> float:
    """Coefficient recovery error over test points.

    For each test point, the true segment's true coefficients are
    compared against the assigned segment's estimates, so mislabeling
    is penalized through the coefficients it implies.
    """
    true_Beta = np.asarray(true_Beta, dtype=float)
    Beta_hat = np.asarray(Beta_hat, dtype=float)
    tl = np.asarray(true_labels, dtype=int)
    el = np.asarray(est_labels, dtype=int)
    if tl.shape != el.shape:
        raise ValueError("label vectors must align")
    if true_Beta.shape[1] != Beta_hat.shape[1]:
        raise ValueError("coefficient matrices must share the feature dimension")
    diff = true_Beta[tl - 1] - Beta_hat[el - 1]
    return float(np.sqrt(np.mean(diff**2)))
