"""Spatial market segmentation via regularized Bayesian mixture
regression with Dirichlet process priors."""

__version__ = "0.1.0"

from .estimator import SpatialSegmentRegressor
from .gibbs import ChainTrace, run_chain
from .metrics import EvalReport, ari, diffk, rmse_coeff, rmspe
from .postprocess import SegmentationResult, summarize_trace
from .samplers import RngStream, TruncBox
from .simulate import SimFactors, SimScenario, enumerate_factor_grid, generate_scenario, high_dim_factors
from .state import ChainConfig, Dataset, HyperParams, MCMCState, stick_break

__all__ = [
    "ChainConfig",
    "ChainTrace",
    "Dataset",
    "EvalReport",
    "HyperParams",
    "MCMCState",
    "RngStream",
    "SegmentationResult",
    "SimFactors",
    "SimScenario",
    "SpatialSegmentRegressor",
    "TruncBox",
    "ari",
    "diffk",
    "enumerate_factor_grid",
    "generate_scenario",
    "high_dim_factors",
    "rmse_coeff",
    "rmspe",
    "run_chain",
    "stick_break",
    "summarize_trace",
    "__version__",
]
