"""Bayesian additive model with GP routine and event components, fitted by EP."""

__version__ = "0.1.0"

from .data import Dataset, GroundTruth, Observation, load_dataset, save_dataset, validate  # noqa: E402
from .ep import EPConfig, FittedModel, Hyperparams, fit, log_marginal_likelihood  # noqa: E402
from .estimator import BayesianAdditiveModel  # noqa: E402
from .kernels import LinearKernelParams, SeArdParams  # noqa: E402
from .prediction import PredictiveDistribution, predict_total  # noqa: E402
from .simulate import ToyParams, generate_toy  # noqa: E402

__all__ = [
    "BayesianAdditiveModel", "Dataset", "EPConfig", "FittedModel", "GroundTruth", "Hyperparams",
    "LinearKernelParams", "Observation", "PredictiveDistribution", "SeArdParams", "ToyParams", "fit", "generate_toy",
    "load_dataset", "log_marginal_likelihood", "predict_total", "save_dataset", "validate",
]
