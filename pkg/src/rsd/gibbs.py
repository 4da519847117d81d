"""Blocked Gibbs sweep over all latent variables, and chain orchestration.

Each update draws from the exact full conditional of the joint model
(exact Gaussian densities, including normalization), so posterior
coherence can be verified by conjugacy grids and getting-it-right tests.
The ``*_conditional_params`` helpers are the single source of the
conditional formulas; the ``update_*`` functions draw through them.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .samplers import (
    RngStream,
    UNIT_BOX,
    sample_beta,
    sample_categorical_rows,
    sample_gamma,
    sample_inverse_gamma,
    sample_inverse_gaussian,
    sample_trunc_normal,
)
from .state import ChainConfig, Dataset, HyperParams, MCMCState, init_state, stick_break, stick_break_rows

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)
_BETA_FLOOR = 1e-10
# inverse-Gaussian draws underflow to exactly 0 when mu/lambda exceeds
# ~1/eps; a floor keeps the coefficient precision matrix positive-definite
_INV_PSI_FLOOR = 1e-12


@dataclass
class ChainTrace:
    """Thinned post-burn-in draws from one chain."""

    stored_g: np.ndarray          # (L, n) segment memberships, 0-based
    stored_Beta: np.ndarray       # (L, K, p)
    stored_sigma_sq: np.ndarray   # (L, K)
    stored_K_nonempty: np.ndarray  # (L,)
    stored_iters: np.ndarray      # (L,) sweep numbers

    @property
    def L(self) -> int:
        return self.stored_g.shape[0]


def count_nonempty(labels: np.ndarray) -> int:
    return int(np.unique(labels).size)


def _logsumexp_last(a: np.ndarray) -> np.ndarray:
    """logsumexp over the last axis; rows of all -inf stay -inf."""
    m = a.max(axis=-1)
    finite = np.isfinite(m)
    safe_m = np.where(finite, m, 0.0)
    out = safe_m + np.log(np.exp(a - safe_m[..., None]).sum(axis=-1))
    return np.where(finite, out, -np.inf)


def _spatial_log_density(S: np.ndarray, Mu: np.ndarray, tau_sq: np.ndarray) -> np.ndarray:
    """(n, K, M) log bivariate-normal density of each location under each
    component: log tau^2 - log 2pi - tau^2 * ||s - mu||^2 / 2."""
    K, M = Mu.shape[:2]
    mu_flat = Mu.reshape(K * M, 2)
    out = S @ mu_flat.T
    out *= -2.0
    out += (S**2).sum(axis=1)[:, None]
    out += (mu_flat**2).sum(axis=1)[None, :]
    out = out.reshape(S.shape[0], K, M)
    np.maximum(out, 0.0, out=out)
    out *= (-0.5 * tau_sq)[None, :, None]
    out += (np.log(tau_sq) - _LOG_2PI)[None, :, None]
    return out


def spatial_mixture_log_density(state: MCMCState, data: Dataset) -> np.ndarray:
    """(n, K) log sum_h p_gh N2(s_i; mu_gh, tau_g^-2 I)."""
    dens = _spatial_log_density(data.S, state.Mu, state.tau_sq)
    with np.errstate(divide="ignore"):
        dens += np.log(state.P)[None, :, :]
    return _logsumexp_last(dens)


def segment_log_weights(state: MCMCState, data: Dataset, _mix: np.ndarray | None = None) -> np.ndarray:
    """(n, K) unnormalized log weights for the segment membership draw.

    log q_g + log N(y_i; x_i beta_g, sigma_g^2 / N_i)
            + log sum_h p_gh N2(s_i; mu_gh, tau_g^-2 I);
    terms constant across g are dropped.
    """
    resid = data.y[:, None] - data.X @ state.Beta.T
    loglik_y = (
        -0.5 * np.log(state.sigma_sq)[None, :]
        - 0.5 * data.counts[:, None] * resid**2 / state.sigma_sq[None, :]
    )
    if _mix is None:
        _mix = spatial_mixture_log_density(state, data)
    with np.errstate(divide="ignore"):
        log_q = np.log(state.q)
    return log_q[None, :] + loglik_y + _mix


def _rows_to_probs(logw: np.ndarray, fallback: np.ndarray | None = None, what: str = "") -> np.ndarray:
    """Normalize log weights row-wise; degenerate rows fall back."""
    rowmax = logw.max(axis=1)
    bad = ~np.isfinite(rowmax)
    if np.any(bad):
        if fallback is not None:
            logger.warning(
                "%s weights underflowed for %d observation(s); using spatial-only weights",
                what, int(bad.sum()),
            )
            logw = logw.copy()
            logw[bad] = fallback[bad]
            rowmax = logw.max(axis=1)
            bad = ~np.isfinite(rowmax)
        if np.any(bad):
            logger.warning("%s weights fully degenerate for %d observation(s); using uniform", what, int(bad.sum()))
            logw = logw.copy()
            logw[bad] = 0.0
            rowmax = logw.max(axis=1)
    w = np.exp(logw - rowmax[:, None])
    return w / w.sum(axis=1, keepdims=True)


def update_segment_memberships(state: MCMCState, data: Dataset, hp: HyperParams, rng: RngStream) -> np.ndarray:
    mix = spatial_mixture_log_density(state, data)
    logw = segment_log_weights(state, data, _mix=mix)
    probs = _rows_to_probs(logw, fallback=mix, what="segment membership")
    state.g = sample_categorical_rows(probs, rng)
    return state.g


def component_log_weights(state: MCMCState, data: Dataset) -> np.ndarray:
    """(n, M) unnormalized log weights for the component membership draw
    within each observation's current segment."""
    mu_i = state.Mu[state.g]            # (n, M, 2)
    tau_i = state.tau_sq[state.g]       # (n,)
    diff = data.S[:, None, :] - mu_i
    d2 = np.einsum("nmj,nmj->nm", diff, diff)
    with np.errstate(divide="ignore"):
        log_p = np.log(state.P[state.g])
    return log_p + np.log(tau_i)[:, None] - 0.5 * tau_i[:, None] * d2


def update_component_memberships(state: MCMCState, data: Dataset, hp: HyperParams, rng: RngStream) -> np.ndarray:
    probs = _rows_to_probs(component_log_weights(state, data), what="component membership")
    state.h = sample_categorical_rows(probs, rng)
    return state.h


def mu_conditional_params(state: MCMCState, data: Dataset, hp: HyperParams):
    """Posterior mean (K, M, 2) and per-coordinate variance (K, M) of the
    component means; empty cells revert to the prior."""
    K, M = hp.K, hp.M
    flat = state.g * M + state.h
    n_gh = np.bincount(flat, minlength=K * M).astype(float)
    sums = np.stack(
        [np.bincount(flat, weights=data.S[:, j], minlength=K * M) for j in range(2)], axis=1
    )
    prec = hp.tau0_sq + state.tau_sq[:, None] * n_gh.reshape(K, M)
    mean = state.tau_sq[:, None, None] * sums.reshape(K, M, 2) / prec[:, :, None]
    return mean, 1.0 / prec


def update_component_means(state: MCMCState, data: Dataset, hp: HyperParams, rng: RngStream) -> np.ndarray:
    mean, var = mu_conditional_params(state, data, hp)
    state.Mu = sample_trunc_normal(mean, np.sqrt(var)[:, :, None], UNIT_BOX, rng)
    return state.Mu


def tau_conditional_params(state: MCMCState, data: Dataset, hp: HyperParams):
    """Gamma shape and rate (shape-rate convention) for each segment's
    spatial precision; empty segments get the prior back."""
    n_g = np.bincount(state.g, minlength=hp.K).astype(float)
    d2 = ((data.S - state.Mu[state.g, state.h]) ** 2).sum(axis=1)
    ss = np.bincount(state.g, weights=d2, minlength=hp.K)
    return hp.a_tau + n_g, hp.b_tau + 0.5 * ss


def update_spatial_precisions(state: MCMCState, data: Dataset, hp: HyperParams, rng: RngStream) -> np.ndarray:
    shape, rate = tau_conditional_params(state, data, hp)
    state.tau_sq = sample_gamma(shape, rate, rng)
    return state.tau_sq


def segment_stick_params(state: MCMCState, hp: HyperParams):
    """Beta parameters for the K-1 free segment sticks."""
    n_g = np.bincount(state.g, minlength=hp.K).astype(float)
    tail = np.concatenate([np.cumsum(n_g[::-1])[::-1][1:], [0.0]])
    return 1.0 + n_g[:-1], state.bU + tail[:-1]


def update_segment_sticks(state: MCMCState, hp: HyperParams, rng: RngStream):
    a, b = segment_stick_params(state, hp)
    state.U = np.ones(hp.K)
    state.U[:-1] = sample_beta(a, b, rng)
    state.q = stick_break(state.U)
    if hp.update_dp_rates:
        u = np.clip(state.U[:-1], None, 1.0 - 1e-12)
        shape = hp.bU_prior[0] + (hp.K - 1)
        rate = hp.bU_prior[1] - np.log1p(-u).sum()
        state.bU = float(sample_gamma(shape, rate, rng))
    return state.U, state.q, state.bU


def component_stick_params(state: MCMCState, hp: HyperParams):
    """Beta parameters for the (K, M-1) free component sticks."""
    K, M = hp.K, hp.M
    n_gh = np.bincount(state.g * M + state.h, minlength=K * M).astype(float).reshape(K, M)
    tail = np.concatenate(
        [np.cumsum(n_gh[:, ::-1], axis=1)[:, ::-1][:, 1:], np.zeros((K, 1))], axis=1
    )
    return 1.0 + n_gh[:, :-1], state.bV + tail[:, :-1]


def update_component_sticks(state: MCMCState, hp: HyperParams, rng: RngStream):
    K, M = hp.K, hp.M
    state.V = np.ones((K, M))
    if M > 1:
        a, b = component_stick_params(state, hp)
        state.V[:, :-1] = sample_beta(a, b, rng)
    state.P = stick_break_rows(state.V)
    if hp.update_dp_rates and M > 1:
        v = np.clip(state.V[:, :-1], None, 1.0 - 1e-12)
        shape = hp.bV_prior[0] + K * (M - 1)
        rate = hp.bV_prior[1] - np.log1p(-v).sum()
        state.bV = float(sample_gamma(shape, rate, rng))
    return state.V, state.P, state.bV


def beta_conditional_params(state: MCMCState, data: Dataset, hp: HyperParams, g: int):
    """Posterior mean and precision of segment g's coefficients.

    The draw is N(mean, sigma_g^2 * precision^-1); with no members the
    precision is just diag(1/psi), i.e. the prior.
    """
    members = state.g == g
    Xg = data.X[members]
    wg = data.counts[members]
    precision = (Xg * wg[:, None]).T @ Xg + np.diag(1.0 / state.Psi[g])
    xtwy = (Xg * wg[:, None]).T @ data.y[members]
    chol = cho_factor(precision, lower=True)
    mean = cho_solve(chol, xtwy)
    return mean, precision, chol


def update_coefficients(state: MCMCState, data: Dataset, hp: HyperParams, rng: RngStream) -> np.ndarray:
    gen = rng.gen if isinstance(rng, RngStream) else rng
    for g in range(hp.K):
        mean, _, chol = beta_conditional_params(state, data, hp, g)
        z = gen.standard_normal(data.p)
        # precision = L L^T, so L^-T z has covariance precision^-1
        state.Beta[g] = mean + np.sqrt(state.sigma_sq[g]) * solve_triangular(
            chol[0], z, lower=True, trans="T"
        )
    return state.Beta


def sigma_conditional_params(state: MCMCState, data: Dataset, hp: HyperParams):
    """Inverse-gamma shape and scale per segment, at the current Beta."""
    n_g = np.bincount(state.g, minlength=hp.K).astype(float)
    resid = data.y - np.einsum("np,np->n", data.X, state.Beta[state.g])
    ss = np.bincount(state.g, weights=data.counts * resid**2, minlength=hp.K)
    return hp.a_sigma + 0.5 * n_g, hp.b_sigma + 0.5 * ss


def update_error_variances(state: MCMCState, data: Dataset, hp: HyperParams, rng: RngStream) -> np.ndarray:
    shape, scale = sigma_conditional_params(state, data, hp)
    state.sigma_sq = sample_inverse_gamma(shape, scale, rng)
    return state.sigma_sq


def update_psi(state: MCMCState, hp: HyperParams, rng: RngStream, intercept_col: int | None = None) -> np.ndarray:
    """Ridge: fixed shrinkage scale; lasso: scale-mixture draw per
    coefficient, with the intercept's scale pinned."""
    if hp.prior_kind == "ridge":
        state.Psi[:] = hp.ridge_psi
        return state.Psi
    babs = np.abs(state.Beta)
    n_clamped = int((babs < _BETA_FLOOR).sum())
    if n_clamped:
        logger.warning("clamped %d near-zero coefficient(s) in shrinkage update", n_clamped)
    babs = np.maximum(babs, _BETA_FLOOR)
    lam = hp.lasso_lambda
    mu_prime = lam * np.sqrt(state.sigma_sq)[:, None] / babs
    inv_psi = np.maximum(sample_inverse_gaussian(mu_prime, lam**2, rng), _INV_PSI_FLOOR)
    state.Psi = 1.0 / inv_psi
    if intercept_col is not None:
        state.Psi[:, intercept_col] = hp.ridge_psi
    return state.Psi


def sweep(state: MCMCState, data: Dataset, hp: HyperParams, rng: RngStream) -> None:
    """One full Gibbs pass in the fixed update order."""
    update_segment_memberships(state, data, hp, rng)
    update_component_memberships(state, data, hp, rng)
    update_component_means(state, data, hp, rng)
    update_spatial_precisions(state, data, hp, rng)
    update_segment_sticks(state, hp, rng)
    update_component_sticks(state, hp, rng)
    update_coefficients(state, data, hp, rng)
    update_error_variances(state, data, hp, rng)
    update_psi(state, hp, rng, intercept_col=data.intercept_col)


def joint_log_density(state: MCMCState, data: Dataset, hp: HyperParams) -> float:
    """Log density of (data, latents) under the model, up to additive
    constants shared by all states (truncation normalizers, pinned
    shrinkage scales). Used to rank exploratory starting states."""
    tiny = 1e-300
    g, h = state.g, state.h
    resid = data.y - np.einsum("np,np->n", data.X, state.Beta[g])
    var_y = state.sigma_sq[g] / data.counts
    lp = float(np.sum(-0.5 * (np.log(var_y) + resid**2 / var_y)))
    d2 = ((data.S - state.Mu[g, h]) ** 2).sum(axis=1)
    lp += float(np.sum(np.log(state.tau_sq[g]) - 0.5 * state.tau_sq[g] * d2))
    lp += float(np.sum(np.log(np.maximum(state.q[g], tiny))))
    lp += float(np.sum(np.log(np.maximum(state.P[g, h], tiny))))

    # parameter priors
    prior_var = state.sigma_sq[:, None] * state.Psi
    lp += float(np.sum(-0.5 * (np.log(prior_var) + state.Beta**2 / prior_var)))
    lp += float(np.sum(
        (hp.a_sigma + 1.0) * -np.log(state.sigma_sq) - hp.b_sigma / state.sigma_sq
    ))
    lp += float(np.sum(
        (hp.a_tau - 1.0) * np.log(state.tau_sq) - hp.b_tau * state.tau_sq
    ))
    lp += float(np.sum(-0.5 * hp.tau0_sq * state.Mu**2))
    u = np.clip(state.U[:-1], tiny, 1.0 - 1e-12)
    lp += float((hp.K - 1) * np.log(state.bU) + (state.bU - 1.0) * np.log1p(-u).sum())
    if hp.M > 1:
        v = np.clip(state.V[:, :-1], tiny, 1.0 - 1e-12)
        lp += float(hp.K * (hp.M - 1) * np.log(state.bV) + (state.bV - 1.0) * np.log1p(-v).sum())
    aU, bU_rate = hp.bU_prior
    lp += float((aU - 1.0) * np.log(state.bU) - bU_rate * state.bU)
    aV, bV_rate = hp.bV_prior
    lp += float((aV - 1.0) * np.log(state.bV) - bV_rate * state.bV)
    if hp.prior_kind == "lasso":
        psi = state.Psi.copy()
        if data.intercept_col is not None:
            psi[:, data.intercept_col] = 1.0  # pinned scale, constant factor
        lp += float(np.sum(-0.5 * hp.lasso_lambda**2 * psi))
    return lp


def select_initial_state(
    data: Dataset,
    hp: HyperParams,
    rng: RngStream,
    n_scans: int = 4,
    scan_sweeps: int = 150,
) -> MCMCState:
    """Short exploratory chains from dispersed starts; the state with the
    highest joint density continues as the main chain's start.

    A single diffuse start can fall into a mode where unrelated
    regression segments are merged under an inflated error variance;
    per-observation Gibbs moves essentially never split such a segment,
    while a correct mode beats a merged one by thousands of nats, so a
    handful of cheap scans reliably avoids the trap.
    """
    if n_scans <= 1 or scan_sweeps <= 0:
        return init_state(data, hp, rng)
    best_state, best_lp = None, -np.inf
    for stream in rng.spawn(n_scans):
        state = init_state(data, hp, stream)
        for _ in range(scan_sweeps):
            sweep(state, data, hp, stream)
        lp = joint_log_density(state, data, hp)
        if lp > best_lp:
            best_state, best_lp = state, lp
    return best_state


def run_chain(
    data: Dataset,
    hp: HyperParams,
    cfg: ChainConfig,
    rng: RngStream | None = None,
    callback=None,
    return_state: bool = False,
    init_scans: int = 4,
    init_scan_sweeps: int = 150,
):
    """Run the sampler and collect thinned post-burn-in draws.

    The starting state is chosen by a few short exploratory scans (see
    ``select_initial_state``); set ``init_scans=1`` for a single cold
    start. ``callback(iteration, n_iters, state)``, when given, is
    invoked after every sweep for progress logging.
    """
    hp.validate()
    cfg.validate()
    if rng is None:
        rng = RngStream(cfg.seed)

    state = select_initial_state(
        data, hp, rng, n_scans=init_scans, scan_sweeps=min(init_scan_sweeps, cfg.burn_in)
    )
    L = cfg.n_stored
    stored_g = np.empty((L, data.n), dtype=np.int32)
    stored_Beta = np.empty((L, hp.K, data.p))
    stored_sigma_sq = np.empty((L, hp.K))
    stored_K_nonempty = np.empty(L, dtype=np.int32)
    stored_iters = np.empty(L, dtype=np.int64)

    idx = 0
    for t in range(1, cfg.n_iters + 1):
        sweep(state, data, hp, rng)
        if t > cfg.burn_in and (t - cfg.burn_in) % cfg.thin == 0:
            stored_g[idx] = state.g
            stored_Beta[idx] = state.Beta
            stored_sigma_sq[idx] = state.sigma_sq
            stored_K_nonempty[idx] = count_nonempty(state.g)
            stored_iters[idx] = t
            idx += 1
        if callback is not None:
            callback(t, cfg.n_iters, state)

    trace = ChainTrace(
        stored_g=stored_g,
        stored_Beta=stored_Beta,
        stored_sigma_sq=stored_sigma_sq,
        stored_K_nonempty=stored_K_nonempty,
        stored_iters=stored_iters,
    )
    if return_state:
        return trace, state
    return trace
