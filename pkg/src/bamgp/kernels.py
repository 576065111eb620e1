"""Covariance functions and Gram-matrix construction."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)


class CholeskyError(linalg.LinAlgError):
    """Gram matrix could not be factorized even after jitter escalation."""


def _check_dims(x, x2, d=None):
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.shape[-1] != x2.shape[-1] or (d is not None and x.shape[-1] != d):
        raise ValueError(f"dimension mismatch: {x.shape[-1]}, {x2.shape[-1]}"
                         + (f", expected {d}" if d is not None else ""))
    return x, x2


@dataclass(frozen=True)
class SeArdParams:
    """Squared-exponential kernel with one length-scale per input dimension."""

    signal_variance: float
    length_scales: tuple

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.length_scales))
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        if not (np.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise ValueError("signal_variance must be positive and finite")
        if not ls or not all(np.isfinite(v) and v > 0 for v in ls):
            raise ValueError("length_scales must be positive and finite")

    kind = "se_ard"

    @property
    def dim(self):
        return len(self.length_scales)

    @property
    def scale(self):
        return self.signal_variance

    def __call__(self, X, X2):
        """Cross-covariance matrix between the rows of ``X`` and ``X2``."""
        X, X2 = _check_dims(np.atleast_2d(X), np.atleast_2d(X2), self.dim)
        ls = np.asarray(self.length_scales)
        A, B = X / ls, X2 / ls
        # explicit differences keep the result exactly symmetric
        sq = np.zeros((A.shape[0], B.shape[0]))
        for d in range(A.shape[1]):
            sq += (A[:, d, None] - B[None, :, d]) ** 2
        return self.signal_variance * np.exp(-0.5 * sq)

    def diag(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.signal_variance)

    def to_dict(self):
        return {"type": self.kind, "signal_variance": self.signal_variance,
                "length_scales": list(self.length_scales)}


@dataclass(frozen=True)
class LinearKernelParams:
    """Dot-product kernel ``w * x.x' + b``; a GP with it is Bayesian linear regression."""

    weight_variance: float
    bias_variance: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "weight_variance", float(self.weight_variance))
        object.__setattr__(self, "bias_variance", float(self.bias_variance))
        if not (np.isfinite(self.weight_variance) and self.weight_variance > 0):
            raise ValueError("weight_variance must be positive and finite")
        if not (np.isfinite(self.bias_variance) and self.bias_variance >= 0):
            raise ValueError("bias_variance must be nonnegative and finite")

    kind = "linear"
    dim = None

    @property
    def scale(self):
        return self.weight_variance + self.bias_variance

    def __call__(self, X, X2):
        X, X2 = _check_dims(np.atleast_2d(X), np.atleast_2d(X2))
        return self.weight_variance * (X @ X2.T) + self.bias_variance

    def diag(self, X):
        X = np.atleast_2d(X)
        return self.weight_variance * np.einsum("ij,ij->i", X, X) + self.bias_variance

    def to_dict(self):
        return {"type": self.kind, "weight_variance": self.weight_variance,
                "bias_variance": self.bias_variance}


def kernel_from_dict(d: dict):
    kind = d.get("type", "se_ard" if "length_scales" in d else "linear")
    if kind == "se_ard":
        return SeArdParams(d["signal_variance"], tuple(d["length_scales"]))
    if kind == "linear":
        return LinearKernelParams(d["weight_variance"], d.get("bias_variance", 0.0))
    raise ValueError(f"unknown kernel type {kind!r}")


def se_ard(x, x2, p: SeArdParams) -> float:
    x, x2 = _check_dims(x, x2, p.dim)
    r = (x - x2) / np.asarray(p.length_scales)
    return float(p.signal_variance * np.exp(-0.5 * np.dot(r, r)))


def linear(x, x2, p: LinearKernelParams) -> float:
    x, x2 = _check_dims(x, x2)
    return float(p.weight_variance * np.dot(x, x2) + p.bias_variance)


def gram(X, kernel, jitter: float = 0.0) -> np.ndarray:
    """Symmetric Gram matrix with ``jitter`` added to the diagonal."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("gram needs at least one input")
    K = kernel(X, X)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += jitter
    return K


def jitter_cholesky(K, scale: float = 1.0, start: float = 1e-8, stop: float = 1e-4):
    """Lower Cholesky factor of ``K``, escalating diagonal jitter on failure.

    Tries ``K`` with ``start * scale`` added, then x10 per retry up to
    ``stop * scale``.  Returns ``(L, jitter_used)``.
    """
    n = K.shape[0]
    jit = start * scale
    while True:
        try:
            L = linalg.cholesky(K + jit * np.eye(n), lower=True, check_finite=False)
            if jit > start * scale:
                logger.debug("cholesky needed jitter %.3g", jit)
            return L, jit
        except linalg.LinAlgError:
            jit *= 10.0
            if jit > stop * scale * (1 + 1e-9):
                raise CholeskyError(f"matrix not positive definite with jitter up to {stop * scale:.3g}")
