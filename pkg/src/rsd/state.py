"""Domain types for data and latent state, plus chain initialization."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .samplers import (
    RngStream,
    UNIT_BOX,
    sample_beta,
    sample_gamma,
    sample_inverse_gamma,
    sample_trunc_normal,
)


@dataclass
class Dataset:
    """Point-referenced observations.

    y : (n,) responses (mean rating per site)
    X : (n, p) feature matrix, intercept column included if configured
    S : (n, 2) rescaled locations in the unit square
    counts : (n,) positive rating counts N_i; the error variance of y_i
        is sigma^2 / N_i
    intercept_col : index of the intercept column in X, or None; under
        the lasso prior that column's shrinkage is held fixed
    """

    y: np.ndarray
    X: np.ndarray
    S: np.ndarray
    counts: np.ndarray
    intercept_col: int | None = None
    feature_names: list[str] | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        self.S = np.asarray(self.S, dtype=float)
        self.counts = np.asarray(self.counts, dtype=float)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def validate(self, unit_square: bool = True) -> "Dataset":
        n = self.n
        if self.X.shape[0] != n or self.S.shape != (n, 2) or self.counts.shape[0] != n:
            raise ValueError("y, X, S and counts must have matching row counts")
        for name, arr in (("y", self.y), ("X", self.X), ("S", self.S), ("counts", self.counts)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
        if np.any(self.counts < 1):
            raise ValueError("every rating count must be >= 1")
        if unit_square and (np.any(self.S < 0) or np.any(self.S > 1)):
            raise ValueError("locations must lie in the unit square")
        if self.intercept_col is not None and not 0 <= self.intercept_col < self.p:
            raise ValueError("intercept_col out of range")
        return self


@dataclass
class HyperParams:
    """Fixed prior constants and truncation levels.

    ``tau0_sq`` is the prior *precision* of the component means; the
    default 1e-3 (prior variance 1000) makes that prior effectively flat
    over the truncation box.
    """

    K: int = 20
    M: int = 10
    tau0_sq: float = 1e-3
    a_tau: float = 0.1
    b_tau: float = 0.1
    a_sigma: float = 0.1
    b_sigma: float = 0.1
    ridge_c: float = 0.01
    lasso_lambda: float = 0.03
    bU_prior: tuple[float, float] = (0.1, 0.1)
    bV_prior: tuple[float, float] = (1.0, 4.0)
    prior_kind: str = "ridge"
    update_dp_rates: bool = True

    # shrinkage scale pinned on the intercept and used throughout ridge
    @property
    def ridge_psi(self) -> float:
        return 1.0 / self.ridge_c

    def validate(self) -> "HyperParams":
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if self.M < 1:
            raise ValueError("M must be at least 1")
        positives = {
            "tau0_sq": self.tau0_sq,
            "a_tau": self.a_tau,
            "b_tau": self.b_tau,
            "a_sigma": self.a_sigma,
            "b_sigma": self.b_sigma,
            "ridge_c": self.ridge_c,
            "lasso_lambda": self.lasso_lambda,
            "bU_prior shape": self.bU_prior[0],
            "bU_prior rate": self.bU_prior[1],
            "bV_prior shape": self.bV_prior[0],
            "bV_prior rate": self.bV_prior[1],
        }
        for name, value in positives.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.prior_kind not in ("ridge", "lasso"):
            raise ValueError(f"prior_kind must be 'ridge' or 'lasso', got {self.prior_kind!r}")
        return self


@dataclass
class ChainConfig:
    """MCMC run settings; (n_iters - burn_in) / thin draws are stored."""

    n_iters: int = 10_000
    burn_in: int = 5_000
    thin: int = 10
    seed: int | None = 0

    @property
    def n_stored(self) -> int:
        return (self.n_iters - self.burn_in) // self.thin

    def validate(self) -> "ChainConfig":
        if not 0 <= self.burn_in < self.n_iters:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_iters")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if (self.n_iters - self.burn_in) % self.thin != 0:
            raise ValueError("n_iters - burn_in must be divisible by thin")
        if self.n_stored < 50:
            raise ValueError("at least 50 stored iterations are required")
        return self


@dataclass
class MCMCState:
    """One full configuration of the latent variables (0-based labels)."""

    g: np.ndarray        # (n,) segment memberships
    h: np.ndarray        # (n,) component memberships
    U: np.ndarray        # (K,) segment sticks, U[K-1] == 1
    q: np.ndarray        # (K,) segment probabilities
    V: np.ndarray        # (K, M) component sticks, V[:, M-1] == 1
    P: np.ndarray        # (K, M) component probabilities per segment
    Mu: np.ndarray       # (K, M, 2) component means inside the unit box
    tau_sq: np.ndarray   # (K,) spatial precisions
    Beta: np.ndarray     # (K, p) regression coefficients
    sigma_sq: np.ndarray  # (K,) error variances
    Psi: np.ndarray      # (K, p) coefficient prior variances
    bU: float
    bV: float

    def copy(self) -> "MCMCState":
        return replace(
            self,
            g=self.g.copy(), h=self.h.copy(), U=self.U.copy(), q=self.q.copy(),
            V=self.V.copy(), P=self.P.copy(), Mu=self.Mu.copy(),
            tau_sq=self.tau_sq.copy(), Beta=self.Beta.copy(),
            sigma_sq=self.sigma_sq.copy(), Psi=self.Psi.copy(),
        )


def stick_break(sticks) -> np.ndarray:
    """Map stick proportions to mixture probabilities.

    The final stick is forced to 1 (truncation closure) so the output
    sums to exactly 1: q[0] = U[0], q[g] = U[g] * prod_{k<g}(1 - U[k]).
    """
    u = np.array(sticks, dtype=float)
    if np.any(u < 0) or np.any(u > 1):
        raise ValueError("stick entries must lie in [0, 1]")
    u[-1] = 1.0
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - u[:-1])])
    return u * remaining


def stick_break_rows(sticks: np.ndarray) -> np.ndarray:
    """Row-wise stick breaking for a (K, M) stick matrix."""
    u = np.array(sticks, dtype=float)
    u[:, -1] = 1.0
    remaining = np.concatenate(
        [np.ones((u.shape[0], 1)), np.cumprod(1.0 - u[:, :-1], axis=1)], axis=1
    )
    return u * remaining


def init_state(data: Dataset, hp: HyperParams, rng: RngStream) -> MCMCState:
    """Draw a starting configuration.

    Memberships start uniform and sticks, means and spatial precisions
    come from their priors. Two choices matter for how fast the chain
    finds well-separated regression segments:

    - coefficients start at the pooled weighted ridge fit replicated to
      every segment plus jitter at a tenth of the shrinkage prior's
      coefficient scale, so the first sweep can already sort points by
      regression fit rather than purely by space;
    - error variances start at the pooled residual scale for every
      segment rather than at prior draws. A prior draw of sigma^2 in the
      thousands turns that segment into a flat absorber on the first
      sweep, and such accidental merges of unrelated segments are nearly
      impossible for the sampler to split later.
    """
    gen = rng.gen
    n, p, K, M = data.n, data.p, hp.K, hp.M

    g = gen.integers(0, K, size=n)
    h = gen.integers(0, M, size=n)

    bU = hp.bU_prior[0] / hp.bU_prior[1]
    bV = hp.bV_prior[0] / hp.bV_prior[1]
    U = np.ones(K)
    U[:-1] = sample_beta(1.0, bU, rng, size=K - 1)
    q = stick_break(U)
    V = np.ones((K, M))
    if M > 1:
        V[:, :-1] = sample_beta(1.0, bV, rng, size=(K, M - 1))
    P = stick_break_rows(V)

    prior_sd = 1.0 / np.sqrt(hp.tau0_sq)
    Mu = sample_trunc_normal(np.zeros((K, M, 2)), prior_sd, UNIT_BOX, rng)
    tau_sq = sample_gamma(hp.a_tau, hp.b_tau, rng, size=K)

    W = data.counts
    gram = (data.X * W[:, None]).T @ data.X + hp.ridge_c * np.eye(p)
    beta0 = np.linalg.solve(gram, (data.X * W[:, None]).T @ data.y)
    pooled_resid = data.y - data.X @ beta0
    sigma0 = max(float((W * pooled_resid**2).mean()), 1e-3)
    sigma_sq = np.full(K, sigma0)
    Beta = beta0[None, :] + 0.1 * np.sqrt(hp.ridge_psi) * gen.standard_normal((K, p))

    if hp.prior_kind == "ridge":
        Psi = np.full((K, p), hp.ridge_psi)
    else:
        Psi = np.ones((K, p))
        if data.intercept_col is not None:
            Psi[:, data.intercept_col] = hp.ridge_psi

    return MCMCState(
        g=g, h=h, U=U, q=q, V=V, P=P, Mu=Mu, tau_sq=tau_sq,
        Beta=Beta, sigma_sq=sigma_sq, Psi=Psi, bU=bU, bV=bV,
    )
