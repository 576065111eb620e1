"""Comparison models: Bayesian linear regression, exact GP regression, BAM-LR.

The linear and GP baselines see each observation as one input vector: the
routine features, optionally followed by the sum of its event feature
vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import RBF, ConstantKernel, WhiteKernel

from .data import Dataset, Observation
from .ep import EPConfig, FittedModel, Hyperparams, fit
from .kernels import LinearKernelParams, SeArdParams

PRIOR_GRID = np.logspace(-3, 3, 25)
NOISE_GRID = np.logspace(-4, 2, 31)


def design(ds: Dataset, use_events: bool, intercept: bool = True) -> np.ndarray:
    """Per-observation inputs ``[1, x^r, sum_i x^{e_i}]``."""
    cols = [np.ones((len(ds), 1))] if intercept else []
    cols.append(np.asarray(ds.routine))
    if use_events:
        summed = np.zeros((len(ds), ds.d_event))
        np.add.at(summed, ds.owner, ds.events)
        cols.append(summed)
    return np.hstack(cols)


# ---------------------------------------------------------------------------
# Bayesian linear regression
# ---------------------------------------------------------------------------

def _blr_posterior(Z, y, prior_var, noise_var):
    d = Z.shape[1]
    A = Z.T @ Z / noise_var + np.eye(d) / prior_var
    L = linalg.cholesky(A, lower=True)
    S = linalg.cho_solve((L, True), np.eye(d))
    w = S @ (Z.T @ y) / noise_var
    return w, S, L


def blr_log_evidence(Z, y, prior_var, noise_var) -> float:
    """log N(y | 0, prior_var Z Z^T + noise_var I), computed in weight space."""
    n, d = Z.shape
    w, S, L = _blr_posterior(Z, y, prior_var, noise_var)
    resid = y - Z @ w
    return float(-0.5 * n * np.log(2 * np.pi * noise_var) - 0.5 * d * np.log(prior_var)
                 - np.sum(np.log(np.diag(L)))
                 - 0.5 * resid @ resid / noise_var - 0.5 * w @ w / prior_var)


@dataclass
class BlrModel:
    weights: np.ndarray
    cov: np.ndarray
    prior_var: float
    noise_var: float
    use_events: bool
    d_routine: int
    log_evidence: float

    def predict(self, ds: Dataset):
        """Predictive mean and variance of the totals (noise included)."""
        Z = design(ds, self.use_events)
        return Z @ self.weights, np.einsum("ij,jk,ik->i", Z, self.cov, Z) + self.noise_var

    def _routine_idx(self):
        return slice(0, 1 + self.d_routine)

    def _event_idx(self):
        return slice(1 + self.d_routine, None)


def fit_blr(ds: Dataset, use_events: bool = True, prior_var: float | None = None,
            noise_var: float | None = None) -> BlrModel:
    """Conjugate Bayesian linear regression with an isotropic weight prior.

    Variances left as None are chosen by maximizing the evidence over a
    log-spaced grid.  An empty dataset returns the prior.
    """
    Z = design(ds, use_events)
    y = np.asarray(ds.y, dtype=float)
    d = Z.shape[1]
    if len(ds) == 0:
        pv = prior_var or 1.0
        return BlrModel(np.zeros(d), pv * np.eye(d), pv, noise_var or 1.0, use_events, ds.d_routine, 0.0)
    pgrid = PRIOR_GRID if prior_var is None else [prior_var]
    ngrid = NOISE_GRID if noise_var is None else [noise_var]
    best = max(((blr_log_evidence(Z, y, p, s), p, s) for p in pgrid for s in ngrid), key=lambda t: t[0])
    lz, pv, nv = best
    w, S, _ = _blr_posterior(Z, y, pv, nv)
    return BlrModel(w, S, float(pv), float(nv), use_events, ds.d_routine, lz)


def blr_decompose(model: BlrModel, obs: Observation):
    """Gaussian shares ``(routine, [event_1, ...])`` as (mean, variance) pairs.

    The intercept is attributed to the routine share.  Shares are linear in
    the weights, so they can be negative.
    """
    if not model.use_events:
        raise ValueError("decomposition needs a model fitted with event features")
    zr = np.r_[1.0, obs.routine_features]
    ir, ie = model._routine_idx(), model._event_idx()
    routine = (float(zr @ model.weights[ir]), float(zr @ model.cov[ir, ir] @ zr))
    Se = model.cov[ie, ie]
    events = [(float(x @ model.weights[ie]), float(x @ Se @ x)) for x in obs.event_features]
    return routine, events


# ---------------------------------------------------------------------------
# exact GP regression
# ---------------------------------------------------------------------------

@dataclass
class GpModel:
    gpr: GaussianProcessRegressor
    offset: float
    use_events: bool
    kernel: SeArdParams
    noise_var: float
    log_evidence: float

    def predict(self, ds: Dataset):
        """Predictive mean and variance of the totals (noise included)."""
        Z = design(ds, self.use_events, intercept=False)
        m, sd = self.gpr.predict(Z, return_std=True)
        # the white-noise kernel is part of kernel_.diag, so sd already includes noise
        return m + self.offset, sd ** 2


def _sk_kernel(k: SeArdParams, noise, fixed):
    bounds = "fixed" if fixed else (1e-5, 1e5)
    return (ConstantKernel(k.signal_variance, bounds)
            * RBF(np.array(k.length_scales), bounds)
            + WhiteKernel(noise, "fixed" if fixed else (1e-6, 1e2)))


def fit_gp_baseline(ds: Dataset, use_events: bool = True, hp: tuple | None = None,
                    optimize: bool = True, n_restarts: int = 2, random_state: int = 0) -> GpModel:
    """Exact GP regression on the per-observation inputs, targets centered.

    ``hp`` is ``(SeArdParams, noise_var)``; it is the starting point when
    ``optimize`` is true (L-BFGS on the exact evidence) and used as is otherwise.
    """
    Z = design(ds, use_events, intercept=False)
    y = np.asarray(ds.y, dtype=float)
    offset = float(y.mean())
    if hp is None:
        hp = (SeArdParams(float(np.var(y)) or 1.0, (1.0,) * Z.shape[1]), 0.1 * (float(np.var(y)) or 1.0))
    k0, noise0 = hp
    gpr = GaussianProcessRegressor(_sk_kernel(k0, noise0, not optimize), alpha=0.0,
                                   optimizer="fmin_l_bfgs_b" if optimize else None,
                                   n_restarts_optimizer=n_restarts if optimize else 0,
                                   normalize_y=False, random_state=random_state)
    gpr.fit(Z, y - offset)
    ck, rbf, white = gpr.kernel_.k1.k1, gpr.kernel_.k1.k2, gpr.kernel_.k2
    kernel = SeArdParams(ck.constant_value, tuple(np.atleast_1d(rbf.length_scale)))
    return GpModel(gpr, offset, use_events, kernel, float(white.noise_level),
                   float(gpr.log_marginal_likelihood_value_))


# ---------------------------------------------------------------------------
# BAM-LR
# ---------------------------------------------------------------------------

def linear_hyperparams(weight_variance=1.0, bias_variance=1.0, beta=0.2, noise_v=0.01) -> Hyperparams:
    k = LinearKernelParams(weight_variance, bias_variance)
    return Hyperparams(k, k, beta, beta, noise_v, "truncated_gaussian")


def fit_bam_lr(ds: Dataset, hp: Hyperparams | None = None, cfg: EPConfig | None = None) -> FittedModel:
    """The additive model with linear-kernel components and truncated likelihoods."""
    hp = hp or linear_hyperparams()
    if not (isinstance(hp.routine_kernel, LinearKernelParams)
            and isinstance(hp.event_kernel, LinearKernelParams)):
        raise ValueError("BAM-LR needs linear kernels for both components")
    if hp.component_likelihood != "truncated_gaussian":
        raise ValueError("BAM-LR uses truncated-Gaussian components")
    return fit(ds, hp, cfg)
