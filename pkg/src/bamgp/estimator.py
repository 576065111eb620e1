"""scikit-learn style front end for the additive model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.metrics import r2_score
from sklearn.utils.validation import check_is_fitted

from .data import Dataset, Observation, as_dataset, check_dataset
from .ep import EPConfig, Hyperparams, fit
from .hyperopt import OptConfig, optimize
from .kernels import SeArdParams
from .prediction import predict_dataset


def _with_targets(ds: Dataset, y) -> Dataset:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != len(ds):
        raise ValueError(f"y has {y.shape[0]} entries for {len(ds)} observations")
    obs = [Observation(o.id, t, o.routine_features, o.event_features) for o, t in zip(ds, y)]
    return Dataset(obs, ds.d_routine, ds.d_event)


class BayesianAdditiveModel(RegressorMixin, BaseEstimator):
    """Routine + events additive model with GP components, fitted by EP.

    ``X`` is a :class:`~bamgp.data.Dataset` (or a path / list of
    observations); targets default to the totals stored in it.

    Parameters
    ----------
    likelihood : {"truncated_gaussian", "poisson"}
    routine_kernel, event_kernel : kernel params or None
        None means unit SE-ARD kernels sized to the data.
    beta_r, beta_e, noise_v : float
    damping, max_iters, tol, quad_nodes : EP settings.
    optimize : bool
        Select hyperparameters by type-II maximum likelihood before fitting.
    opt_config : OptConfig or None
    """

    def __init__(self, likelihood="truncated_gaussian", routine_kernel=None, event_kernel=None,
                 beta_r=0.2, beta_e=0.2, noise_v=0.01, damping=0.5, max_iters=200, tol=1e-4,
                 quad_nodes=20, optimize=False, opt_config=None):
        self.likelihood = likelihood
        self.routine_kernel = routine_kernel
        self.event_kernel = event_kernel
        self.beta_r = beta_r
        self.beta_e = beta_e
        self.noise_v = noise_v
        self.damping = damping
        self.max_iters = max_iters
        self.tol = tol
        self.quad_nodes = quad_nodes
        self.optimize = optimize
        self.opt_config = opt_config

    def _initial_hyperparams(self, ds):
        kr = self.routine_kernel or SeArdParams(1.0, (1.0,) * ds.d_routine)
        ke = self.event_kernel or SeArdParams(1.0, (1.0,) * ds.d_event)
        return Hyperparams(kr, ke, self.beta_r, self.beta_e, self.noise_v, self.likelihood)

    def fit(self, X, y=None):
        ds = as_dataset(X)
        if y is not None:
            ds = _with_targets(ds, y)
        check_dataset(ds)
        hp = self._initial_hyperparams(ds)
        if self.optimize:
            cfg = self.opt_config or OptConfig(quad_nodes=self.quad_nodes)
            res = optimize(ds, hp, cfg)
            hp = res.hyperparams
            self.opt_result_ = res
        self.model_ = fit(ds, hp, EPConfig(self.damping, self.max_iters, self.tol, self.quad_nodes))
        self.hyperparams_ = hp
        self.converged_ = self.model_.converged
        self.n_iter_ = self.model_.n_iter
        self.log_evidence_ = self.model_.log_evidence
        self.training_ids_ = ds.ids
        return self

    def predict_distribution(self, X):
        """Per-observation :class:`~bamgp.prediction.PredictiveDistribution` list."""
        check_is_fitted(self, "model_")
        return predict_dataset(self.model_, as_dataset(X))

    def predict(self, X, return_std=False):
        """Predictive means of the totals (and standard deviations if asked)."""
        preds = self.predict_distribution(X)
        mean = np.array([p.total[0] for p in preds])
        if return_std:
            return mean, np.sqrt([p.total[1] for p in preds])
        return mean

    def decompose(self):
        """Posterior component marginals of the training data.

        Returns ``(routine_mean, routine_var, event_mean, event_var)``, the
        event arrays stacked in dataset order.
        """
        check_is_fitted(self, "model_")
        return (*self.model_.routine_marginals(), *self.model_.event_marginals())

    def score(self, X, y=None, sample_weight=None):
        ds = as_dataset(X)
        target = ds.y if y is None else np.asarray(y, dtype=float)
        return r2_score(target, self.predict(ds), sample_weight=sample_weight)
