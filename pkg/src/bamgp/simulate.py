"""Synthetic routine + events data with known component values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import Dataset, GroundTruth, Observation
from .kernels import SeArdParams, gram, jitter_cholesky


@dataclass(frozen=True)
class ToyParams:
    dim: int = 2
    signal_variance: float = 2.0
    length_scale: float = 1.0
    beta: float = 0.2
    noise_v: float = 0.01
    event_rate: float = 1.0

    @property
    def kernel(self) -> SeArdParams:
        return SeArdParams(self.signal_variance, (self.length_scale,) * self.dim)


def _sample_gp(X, kernel, rng):
    if X.shape[0] == 0:
        return np.zeros(0)
    K = gram(X, kernel)
    L, _ = jitter_cholesky(K, scale=kernel.scale)
    return L @ rng.standard_normal(X.shape[0])


def _sample_truncated(f, beta, rng):
    sd = np.sqrt(beta)
    return stats.truncnorm.rvs(-f / sd, np.inf, loc=f, scale=sd, size=f.shape, random_state=rng)


def generate_toy(n: int, seed: int = 0, p: ToyParams | None = None) -> tuple[Dataset, GroundTruth]:
    """Sample ``n`` observations from the additive truncated-GP model.

    Features are uniform on the unit cube, the number of events per
    observation is Poisson, and both latent functions are drawn jointly over
    all sampled inputs.  Everything comes from one seeded stream.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    p = p or ToyParams()
    rng = np.random.default_rng(seed)
    Xr = rng.uniform(size=(n, p.dim))
    counts = rng.poisson(p.event_rate, size=n)
    Xe = rng.uniform(size=(int(counts.sum()), p.dim))
    fr = _sample_gp(Xr, p.kernel, rng)
    fe = _sample_gp(Xe, p.kernel, rng)
    yr = _sample_truncated(fr, p.beta, rng)
    ye = _sample_truncated(fe, p.beta, rng) if fe.size else np.zeros(0)
    owner = np.repeat(np.arange(n), counts)
    noise = rng.normal(0.0, np.sqrt(p.noise_v), size=n)
    y = yr + np.bincount(owner, weights=ye, minlength=n) + noise

    ids = [f"t{i:05d}" for i in range(n)]
    bounds = np.r_[0, np.cumsum(counts)]
    obs = [Observation(ids[i], y[i], Xr[i], Xe[bounds[i]:bounds[i + 1]].reshape(-1, p.dim))
           for i in range(n)]
    truth = GroundTruth.from_arrays(ids, yr, [ye[bounds[i]:bounds[i + 1]] for i in range(n)])
    return Dataset(obs, p.dim, p.dim), truth
