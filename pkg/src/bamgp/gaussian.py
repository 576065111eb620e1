"""One-dimensional Gaussian messages and the moment computations EP needs.

Messages are kept in natural parameters (precision ``tau`` and
precision-times-mean ``nu``) so that the flat message, ``tau == 0``, is
representable and products/quotients are additions/subtractions.  Most
functions here are vectorized over numpy arrays; the :class:`Gaussian1D`
wrapper gives a scalar interface on top.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special

LOG_2PI = math.log(2.0 * math.pi)
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)

# z below this uses the asymptotic series for the truncated-normal moments
_SERIES_Z = -15.0
# coefficients in powers of 1/z^2 (see _left_tail_series)
_MEAN_SERIES = np.array([1, -2, 10, -74, 706, -8162, 110410, -1708394,
                         29752066, -576037442, 12277827850], dtype=float)
_VAR_SERIES = np.array([1, -6, 50, -518, 6354, -89782, 1435330, -25625910,
                        505785122, -10944711398, 257834384850], dtype=float)


class QuadratureError(ArithmeticError):
    """Quadrature produced a non-positive or non-finite normalizer."""


@dataclass(frozen=True)
class Gaussian1D:
    """A possibly improper 1-D Gaussian in natural parameters."""

    precision: float = 0.0
    precision_mean: float = 0.0

    @classmethod
    def from_moments(cls, mean: float, variance: float) -> "Gaussian1D":
        if not variance > 0:
            raise ValueError("variance must be positive")
        return cls(1.0 / variance, mean / variance)

    @classmethod
    def uniform(cls) -> "Gaussian1D":
        return cls(0.0, 0.0)

    @property
    def is_uniform(self) -> bool:
        return self.precision == 0.0

    @property
    def is_proper(self) -> bool:
        return self.precision > 0.0

    @property
    def mean(self) -> float:
        if not self.is_proper:
            raise ValueError("improper Gaussian has no mean")
        return self.precision_mean / self.precision

    @property
    def variance(self) -> float:
        if not self.is_proper:
            raise ValueError("improper Gaussian has no variance")
        return 1.0 / self.precision

    def __mul__(self, other):
        return multiply(self, other)[0]

    def __truediv__(self, other):
        return divide(self, other)


class MomentResult(NamedTuple):
    mean: float
    variance: float
    log_z: float


def log_gauss(x, mean, var):
    """log N(x | mean, var), elementwise."""
    x, mean, var = np.asarray(x, dtype=float), np.asarray(mean, dtype=float), np.asarray(var, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def multiply(a: Gaussian1D, b: Gaussian1D) -> tuple[Gaussian1D, float]:
    """Product of two Gaussians and the log of its normalizing constant.

    For two proper factors the constant is ``log N(m_a | m_b, v_a + v_b)``;
    if either factor is flat it is defined as 0.
    """
    out = Gaussian1D(a.precision + b.precision, a.precision_mean + b.precision_mean)
    if a.is_proper and b.is_proper:
        return out, float(log_gauss(a.mean, b.mean, a.variance + b.variance))
    return out, 0.0


def divide(a: Gaussian1D, b: Gaussian1D) -> Gaussian1D:
    """Quotient ``a / b``; the result may have negative precision."""
    return Gaussian1D(a.precision - b.precision, a.precision_mean - b.precision_mean)


def log_norm_cdf(z):
    """log Phi(z), accurate far into both tails."""
    out = special.log_ndtr(z)
    return float(out) if np.ndim(out) == 0 else out


def _inverse_mills(z):
    """N(z) / Phi(z), stable for very negative z."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    neg = z < 0
    out[neg] = SQRT_2_OVER_PI / special.erfcx(-z[neg] / math.sqrt(2.0))
    pos = ~neg
    out[pos] = np.exp(-0.5 * z[pos] ** 2 - 0.5 * LOG_2PI - special.log_ndtr(z[pos]))
    return out


def _left_tail_series(z):
    """Mean and variance factors of N(0,1) truncated to x > -z for z << 0.

    Returns ``(u, d)`` with ``u = r + z`` and ``d = 1 - z r - r^2`` where
    ``r = N(z)/Phi(z)``; both suffer cancellation if formed directly.
    """
    t = -z
    s = 1.0 / (t * t)
    u = np.polyval(_MEAN_SERIES[::-1], s) / t
    d = np.polyval(_VAR_SERIES[::-1], s) * s
    return u, d


def trunc_moments(mu, var):
    """Moments of ``1{x>0} N(x | mu, var)``, vectorized.

    Returns ``(mean, variance, log_z)`` where ``log_z = log Phi(mu/sigma)``.
    """
    mu = np.asarray(mu, dtype=float)
    var = np.asarray(var, dtype=float)
    mu, var = np.broadcast_arrays(mu, var)
    sd = np.sqrt(var)
    z = mu / sd
    u = np.empty(z.shape)
    d = np.empty(z.shape)
    far = z < _SERIES_Z
    near = ~far
    r = _inverse_mills(z[near])
    u[near] = r + z[near]
    d[near] = 1.0 - r * (r + z[near])
    u[far], d[far] = _left_tail_series(z[far])
    mean = sd * u
    # d < 1 always, but 1 - d can fall below machine precision when z >> 0
    variance = np.minimum(var * d, np.nextafter(var, 0.0))
    return mean, variance, special.log_ndtr(z)


def trunc_gauss_moments(mu: float, sigma2: float) -> MomentResult:
    """Mean, variance and log-normalizer of ``1{x>0} N(x | mu, sigma2)``."""
    if not (np.isfinite(mu) and np.isfinite(sigma2)):
        raise ValueError("trunc_gauss_moments needs finite inputs")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    m, v, lz = trunc_moments(mu, sigma2)
    return MomentResult(float(m), float(v), float(lz))


# ---------------------------------------------------------------------------
# Poisson component under the continuous relaxation
#     h(y, f) = 1{y > 0} exp(y f - e^f - lgamma(y + 1))
# ---------------------------------------------------------------------------

def lognormal_rate_moments(mean_f, var_f):
    """Mean and variance of y when y | f ~ Poisson(e^f) and f ~ N(mean_f, var_f)."""
    mean_f = np.asarray(mean_f, dtype=float)
    var_f = np.asarray(var_f, dtype=float)
    lam = np.exp(mean_f + 0.5 * var_f)
    var_lam = np.expm1(var_f) * lam ** 2
    return lam, lam + var_lam


def _gh(n):
    x, w = np.polynomial.hermite.hermgauss(n)
    return math.sqrt(2.0) * x, w / math.sqrt(math.pi)


def _gl(n):
    return np.polynomial.legendre.leggauss(n)


def _log_relaxed_poisson(y, f):
    return y * f - np.exp(f) - special.gammaln(y + 1.0)


def _conditional_f_laplace(y, a, A, iters=30):
    """Mode and curvature scale of ``y f - e^f - (f - a)^2 / 2A`` in f.

    The objective is strictly concave, so damped-free Newton from a
    bracketed start converges; ``y`` broadcasts against ``a``/``A``.
    """
    # start at the better of the prior mean and the likelihood mode
    f = np.minimum(a + A * y, np.log(np.maximum(y, 1e-300)) + 0.0 * a)
    f = np.where(np.isfinite(f), f, a)
    for _ in range(iters):
        ef = np.exp(f)
        g = y - ef - (f - a) / A
        h = ef + 1.0 / A
        step = g / h
        f = f + step
        if np.all(np.abs(step) < 1e-13 * (1.0 + np.abs(f))):
            break
    return f, 1.0 / np.sqrt(np.exp(f) + 1.0 / A)


def _laplace_log_marginal(y, a, A, b, B):
    """Laplace approximation of the unnormalized y-marginal of the tilted density."""
    fm, fs = _conditional_f_laplace(y, a, A)
    return (log_gauss(y, b, B) + _log_relaxed_poisson(y, fm) + log_gauss(fm, a, A)
            + 0.5 * LOG_2PI + np.log(fs))


def _y_panels(a, A, b, B, n_probe=160, drop=38.0):
    """Panel edges (S, 5) on the y axis for the tilted density.

    The y range is taken where the approximate marginal is within ``drop``
    nats of its maximum; interior edges sit at approximate 2%, 50% and 98%
    quantiles so one panel resolves a spike at 0 and one covers a long tail.
    """
    lam_hi = np.exp(np.minimum(a + 9.0 * np.sqrt(A), 30.0))
    y_max = np.maximum(b + 12.0 * np.sqrt(B), 1.0)
    y_max = np.minimum(y_max, lam_hi + 12.0 * np.sqrt(lam_hi) + 20.0)
    y_max = np.maximum(y_max, 5.0)
    t = np.linspace(0.0, 1.0, n_probe)
    # quadratic spacing puts more probes near 0
    probe = y_max[:, None] * (0.5 * t + 0.5 * t ** 2)
    probe[:, 0] = 1e-9 * y_max
    L = _laplace_log_marginal(probe, a[:, None], A[:, None], b[:, None], B[:, None])
    L = np.where(np.isfinite(L), L, -np.inf)
    keep = L > L.max(axis=1, keepdims=True) - drop
    idx = np.arange(n_probe)
    first = np.where(keep, idx, n_probe).min(axis=1)
    last = np.where(keep, idx, -1).max(axis=1)
    rows = np.arange(len(a))
    lo = probe[rows, np.maximum(first - 1, 0)]
    lo = np.where(first == 0, 0.0, lo)
    hi = probe[rows, np.minimum(last + 1, n_probe - 1)]
    dens = np.exp(L - L.max(axis=1, keepdims=True))
    cdf = np.concatenate([np.zeros((len(a), 1)),
                          np.cumsum(0.5 * (dens[:, 1:] + dens[:, :-1]) * np.diff(probe, axis=1), axis=1)],
                         axis=1)
    cdf /= cdf[:, -1:]
    edges = [lo]
    for q in (0.02, 0.5, 0.98):
        k = np.argmax(cdf >= q, axis=1)
        edges.append(np.clip(probe[rows, k], lo, hi))
    edges.append(hi)
    E = np.stack(edges, axis=1)
    return np.maximum.accumulate(E, axis=1)


def _tilted_grid(a, A, b, B, n):
    """Nodes and log-weights of the tilted density on an adapted grid.

    The y axis is four Gauss-Legendre panels of n nodes each (see
    :func:`_y_panels`); for each y node the f axis uses n Gauss-Hermite nodes
    on the Laplace approximation of the f-conditional.  Shapes: (S, 4n, 2n).
    """
    # the f-conditionals are skewed, so the f axis gets twice as many nodes
    xh, wh = _gh(2 * n)
    xl, wl = _gl(n)
    E = _y_panels(a, A, b, B)
    half = 0.5 * (E[:, 1:] - E[:, :-1])
    y = (E[:, :-1, None] + half[..., None] * (xl + 1.0)).reshape(len(a), -1)
    with np.errstate(divide="ignore"):
        logwy = (np.log(half)[..., None] + np.log(wl)).reshape(len(a), -1)
    fm, fs = _conditional_f_laplace(y, a[:, None], A[:, None])
    f = fm[..., None] + fs[..., None] * xh
    logw = (logwy[..., None]
            + np.log(wh) - log_gauss(f, fm[..., None], fs[..., None] ** 2)
            + _log_relaxed_poisson(y[..., None], f)
            + log_gauss(f, a[:, None, None], A[:, None, None])
            + log_gauss(y, b[:, None], B[:, None])[..., None])
    return f, np.broadcast_to(y[..., None], logw.shape), logw


def _grid_moments(f, y, logw):
    S = logw.shape[0]
    flat = logw.reshape(S, -1)
    log_z = special.logsumexp(flat, axis=1)
    p = np.exp(flat - log_z[:, None])
    ff = f.reshape(S, -1)
    yy = y.reshape(S, -1)
    # row sums rather than einsum, whose summation order can depend on the batch size
    mf = (p * ff).sum(axis=1)
    my = (p * yy).sum(axis=1)
    df = ff - mf[:, None]
    dy = yy - my[:, None]
    vf = (p * df * df).sum(axis=1)
    vy = (p * dy * dy).sum(axis=1)
    cfy = (p * df * dy).sum(axis=1)
    return log_z, mf, vf, my, vy, cfy


def poisson_tilted(a, A, b, B, n: int = 20):
    """Moments of the tilted density ``h(y, f) N(f|a, A) N(y|b, B)``, vectorized.

    Returns ``(log_z, mf, vf, my, vy, cov_fy)``; sites whose normalizer is not
    finite and positive come back as NaN.
    """
    a, A, b, B = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (a, A, b, B))
    a, A, b, B = (np.array(v) for v in np.broadcast_arrays(a, A, b, B))
    log_z, mf, vf, my, vy, cfy = _grid_moments(*_tilted_grid(a, A, b, B, n))
    bad = ~(np.isfinite(log_z) & (vf > 0) & (vy > 0) & np.isfinite(mf) & np.isfinite(my))
    if np.any(bad):
        for arr in (log_z, mf, vf, my, vy, cfy):
            arr[bad] = np.nan
    return log_z, mf, vf, my, vy, cfy


def poisson_tilted_moments(cavity_f: Gaussian1D, cavity_y: Gaussian1D,
                           quad_nodes: int = 20) -> tuple[MomentResult, MomentResult]:
    """y and f marginal moments of the relaxed-Poisson tilted distribution.

    Both results carry the same log-normalizer.  Raises
    :class:`QuadratureError` if the quadrature normalizer is not positive.
    """
    if not (cavity_f.is_proper and cavity_y.is_proper):
        raise ValueError("poisson_tilted_moments needs proper cavities")
    log_z, mf, vf, my, vy, _ = poisson_tilted(
        cavity_f.mean, cavity_f.variance, cavity_y.mean, cavity_y.variance, quad_nodes)
    if not np.isfinite(log_z[0]):
        raise QuadratureError("non-positive quadrature normalizer")
    return (MomentResult(float(my[0]), float(vy[0]), float(log_z[0])),
            MomentResult(float(mf[0]), float(vf[0]), float(log_z[0])))


def relaxed_poisson_moments(f, n: int = 40):
    """Mean and variance of y under the normalized density ∝ h(y, f), y > 0."""
    f = np.atleast_1d(np.asarray(f, dtype=float))
    lam = np.exp(f)
    xl, wl = _gl(n)
    # the density is concentrated around lam with spread ~sqrt(lam); for small
    # lam it decays like lam^y
    sd = np.sqrt(lam + 1.0)
    hi = lam + 12.0 * sd + 40.0 / np.maximum(-f, 1.0)
    lo = np.maximum(lam - 12.0 * sd, 0.0)
    half = 0.5 * (hi - lo)
    y = lo[:, None] + half[:, None] * (xl + 1.0)
    logw = np.log(half)[:, None] + np.log(wl) + _log_relaxed_poisson(y, f[:, None])
    log_z = special.logsumexp(logw, axis=1)
    p = np.exp(logw - log_z[:, None])
    m = (p * y).sum(axis=1)
    v = (p * (y - m[:, None]) ** 2).sum(axis=1)
    return m, v
