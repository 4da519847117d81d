"""sklearn-style estimator wrapping the sampler and post-processing."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted

from .gibbs import run_chain
from .io import IDENTITY_TRANSFORM, LocationTransform, rescale_locations
from .postprocess import nearest_labels, summarize_trace
from .samplers import RngStream
from .state import ChainConfig, Dataset, HyperParams


class SpatialSegmentRegressor(BaseEstimator):
    """Spatial segmentation with per-segment regularized regression.

    Jointly infers the number of spatial segments, their (possibly
    disconnected) shapes, and per-segment ridge- or lasso-regularized
    coefficients by blocked Gibbs sampling, then extracts a single
    partition by least-squares draw selection and re-estimates each
    segment's model.

    Parameters
    ----------
    prior : {'ridge', 'lasso'}
        Coefficient shrinkage scheme.
    max_segments, max_components : int
        Truncation levels of the two stick-breaking priors.
    n_iters, burn_in, thin : int
        Chain length controls; (n_iters - burn_in) / thin draws are kept.
    rescale : {'auto', True, False}
        'auto' fits a bounding-box map onto the unit square only when
        locations fall outside it.
    random_state : int
        Chain seed; identical seeds reproduce fits exactly.

    Attributes
    ----------
    labels_ : (n,) final 1-based segment labels
    n_segments_ : number of non-empty segments
    coef_ : (n_segments_, n_features) re-estimated coefficients
    intercept_ : (n_segments_,) re-estimated intercepts
    conf_int_ : 95% bounds, ridge prior only
    """

    def __init__(
        self,
        prior: str = "ridge",
        max_segments: int = 20,
        max_components: int = 10,
        n_iters: int = 10_000,
        burn_in: int = 5_000,
        thin: int = 10,
        ridge_c: float = 0.01,
        lasso_lambda: float = 0.03,
        mean_prior_precision: float = 1e-3,
        a_tau: float = 0.1,
        b_tau: float = 0.1,
        a_sigma: float = 0.1,
        b_sigma: float = 0.1,
        bU_prior: tuple = (0.1, 0.1),
        bV_prior: tuple = (1.0, 4.0),
        update_dp_rates: bool = True,
        add_intercept: bool = True,
        cv_folds: int = 5,
        rescale: str | bool = "auto",
        random_state: int = 0,
        callback=None,
    ):
        self.prior = prior
        self.max_segments = max_segments
        self.max_components = max_components
        self.n_iters = n_iters
        self.burn_in = burn_in
        self.thin = thin
        self.ridge_c = ridge_c
        self.lasso_lambda = lasso_lambda
        self.mean_prior_precision = mean_prior_precision
        self.a_tau = a_tau
        self.b_tau = b_tau
        self.a_sigma = a_sigma
        self.b_sigma = b_sigma
        self.bU_prior = bU_prior
        self.bV_prior = bV_prior
        self.update_dp_rates = update_dp_rates
        self.add_intercept = add_intercept
        self.cv_folds = cv_folds
        self.rescale = rescale
        self.random_state = random_state
        self.callback = callback

    def _hyper_params(self) -> HyperParams:
        return HyperParams(
            K=self.max_segments,
            M=self.max_components,
            tau0_sq=self.mean_prior_precision,
            a_tau=self.a_tau,
            b_tau=self.b_tau,
            a_sigma=self.a_sigma,
            b_sigma=self.b_sigma,
            ridge_c=self.ridge_c,
            lasso_lambda=self.lasso_lambda,
            bU_prior=tuple(self.bU_prior),
            bV_prior=tuple(self.bV_prior),
            prior_kind=self.prior,
            update_dp_rates=self.update_dp_rates,
        ).validate()

    def _map_locations(self, locations, fit: bool) -> np.ndarray:
        locations = check_array(locations, dtype=float)
        if locations.shape[1] != 2:
            raise ValueError("locations must have two columns")
        if fit:
            inside = np.all((locations >= 0) & (locations <= 1))
            if self.rescale is True or (self.rescale == "auto" and not inside):
                S, self.transform_ = rescale_locations(locations[:, 0], locations[:, 1])
            elif self.rescale not in (False, True, "auto"):
                raise ValueError("rescale must be 'auto', True or False")
            else:
                if not inside:
                    raise ValueError(
                        "locations outside the unit square; pass rescale='auto' or True"
                    )
                S, self.transform_ = locations, IDENTITY_TRANSFORM
            return S
        return self.transform_.apply(locations[:, 0], locations[:, 1])

    def _assemble(self, X, y, locations, counts, fit: bool) -> Dataset:
        X = check_array(X, dtype=float)
        if y is not None:
            y = check_array(y, dtype=float, ensure_2d=False)
        S = self._map_locations(locations, fit=fit)
        if counts is None:
            counts = np.ones(X.shape[0])
        counts = check_array(counts, dtype=float, ensure_2d=False)
        check_consistent_length(X, S, counts, *([y] if y is not None else []))
        if self.add_intercept:
            X = np.column_stack([np.ones(X.shape[0]), X])
        return Dataset(
            y=y if y is not None else np.zeros(X.shape[0]),
            X=X,
            S=S,
            counts=counts,
            intercept_col=0 if self.add_intercept else None,
        )

    def fit(self, X, y, locations, counts=None):
        """Run the sampler on point-referenced data.

        locations are raw (x, y) pairs; counts are the per-observation
        rating counts N_i (default 1), which weight the error variance.
        """
        data = self._assemble(X, y, locations, counts, fit=True)
        data.validate()
        hp = self._hyper_params()
        cfg = ChainConfig(
            n_iters=self.n_iters, burn_in=self.burn_in, thin=self.thin, seed=self.random_state
        ).validate()
        rng = RngStream(self.random_state)
        self.trace_ = run_chain(data, hp, cfg, rng=rng, callback=self.callback)
        self.result_ = summarize_trace(
            self.trace_, data, hp, cv_folds=self.cv_folds, seed=self.random_state
        )

        self.n_features_in_ = data.p - (1 if self.add_intercept else 0)
        self.labels_ = self.result_.labels
        self.n_segments_ = self.result_.K_hat
        beta = self.result_.Beta_hat
        if self.add_intercept:
            self.intercept_ = beta[:, 0].copy()
            self.coef_ = beta[:, 1:].copy()
        else:
            self.intercept_ = np.zeros(beta.shape[0])
            self.coef_ = beta.copy()
        self.conf_int_ = self.result_.intervals
        self.sigma_sq_ = self.result_.sigma_hat_sq
        self.train_locations_ = data.S
        return self

    def predict_segments(self, locations) -> np.ndarray:
        """Segment labels for new locations by nearest training point."""
        check_is_fitted(self, "labels_")
        S = self._map_locations(check_array(locations, dtype=float), fit=False)
        return nearest_labels(self.train_locations_, self.labels_, S)

    def predict(self, X, locations) -> np.ndarray:
        """Predicted responses for new points."""
        check_is_fitted(self, "labels_")
        X = check_array(X, dtype=float)
        labels = self.predict_segments(locations)
        return self.intercept_[labels - 1] + np.einsum(
            "np,np->n", X, self.coef_[labels - 1]
        )
