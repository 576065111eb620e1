"""Expectation propagation for the additive routine + events model.

Factor graph, per observation n with events i = 1..E_n::

    g_r -- f_n^r -- h_n^r -- y_n^r --\\
                                      k_n  (total y_n ~ N(sum, v))
    g_e -- f_n^ei -- h_n^ei -- y_n^ei -/

``g`` are the two GP priors, ``h`` the component likelihoods (truncated
Gaussian or relaxed Poisson) and ``k`` the Gaussian sum factor.  Every
variable has exactly two neighbours, so each variable-to-factor message
equals the factor-to-variable message arriving from the other side; only
factor-to-variable messages are stored.

All component-level arrays are stacked: the first N entries are routine
components (one per observation), the remaining M entries are event
components in dataset order.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .data import Dataset, check_dataset
from .gaussian import log_gauss, lognormal_rate_moments, poisson_tilted, trunc_moments
from .kernels import LinearKernelParams, SeArdParams, gram, jitter_cholesky, kernel_from_dict

logger = logging.getLogger(__name__)

LIKELIHOODS = ("truncated_gaussian", "poisson")


@dataclass(frozen=True)
class Hyperparams:
    routine_kernel: SeArdParams | LinearKernelParams
    event_kernel: SeArdParams | LinearKernelParams
    beta_r: float = 0.2
    beta_e: float = 0.2
    noise_v: float = 0.01
    component_likelihood: str = "truncated_gaussian"

    def __post_init__(self):
        for name in ("beta_r", "beta_e", "noise_v"):
            val = float(getattr(self, name))
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be positive and finite, got {val}")
            object.__setattr__(self, name, val)
        lik = {"trunc": "truncated_gaussian", "truncated": "truncated_gaussian"}.get(
            self.component_likelihood, self.component_likelihood)
        if lik not in LIKELIHOODS:
            raise ValueError(f"unknown likelihood {self.component_likelihood!r}")
        object.__setattr__(self, "component_likelihood", lik)

    def to_dict(self) -> dict:
        return {
            "routine_kernel": self.routine_kernel.to_dict(),
            "event_kernel": self.event_kernel.to_dict(),
            "beta_r": self.beta_r,
            "beta_e": self.beta_e,
            "noise_v": self.noise_v,
            "component_likelihood": self.component_likelihood,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(kernel_from_dict(d["routine_kernel"]), kernel_from_dict(d["event_kernel"]),
                   d.get("beta_r", 0.2), d.get("beta_e", 0.2), d.get("noise_v", 0.01),
                   d.get("component_likelihood", "truncated_gaussian"))

    @classmethod
    def default(cls, d_routine: int, d_event: int, likelihood="truncated_gaussian"):
        return cls(SeArdParams(1.0, (1.0,) * d_routine), SeArdParams(1.0, (1.0,) * d_event),
                   0.2, 0.2, 0.01, likelihood)


@dataclass(frozen=True)
class EPConfig:
    damping: float = 0.5
    max_iters: int = 200
    tol: float = 1e-4
    quad_nodes: int = 20

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must be in (0, 1]")
        if self.max_iters < 1 or self.quad_nodes < 1 or not self.tol > 0:
            raise ValueError("max_iters, quad_nodes and tol must be positive")


class Problem:
    """Everything about a (dataset, hyperparams) pair that EP treats as fixed."""

    def __init__(self, ds: Dataset, hp: Hyperparams):
        self.ds = ds
        self.hp = hp
        self.N = len(ds)
        self.M = len(ds.owner)
        self.C = self.N + self.M
        self.owner = np.concatenate([np.arange(self.N), ds.owner]).astype(int)
        self.is_event = np.r_[np.zeros(self.N, bool), np.ones(self.M, bool)]
        self.beta = np.where(self.is_event, hp.beta_e, hp.beta_r)
        self.y = ds.y
        # no nugget: every factorization is of I + S^1/2 K S^1/2, which stays
        # positive definite for singular K (duplicate inputs, linear kernels)
        self.K_r = gram(ds.routine, hp.routine_kernel)
        self.K_e = gram(ds.events, hp.event_kernel) if self.M else np.zeros((0, 0))

    def block(self, which):
        if which == "routine":
            return slice(0, self.N), self.K_r
        if which == "event":
            return slice(self.N, self.C), self.K_e
        raise ValueError(f"which must be 'routine' or 'event', got {which!r}")


@dataclass
class EPState:
    """Natural parameters of every stored message, one entry per component.

    ``site`` is h -> f (the site approximation sent to the GP), ``cav`` is
    g -> f (the GP cavity), ``hy`` is h -> y and ``ky`` is k -> y.
    """

    site_tau: np.ndarray
    site_nu: np.ndarray
    cav_tau: np.ndarray
    cav_nu: np.ndarray
    hy_tau: np.ndarray
    hy_nu: np.ndarray
    ky_tau: np.ndarray
    ky_nu: np.ndarray
    skipped: int = 0

    @classmethod
    def uniform(cls, C: int) -> "EPState":
        z = lambda: np.zeros(C)  # noqa: E731
        return cls(z(), z(), z(), z(), z(), z(), z(), z())

    def copy(self) -> "EPState":
        return EPState(*(getattr(self, k).copy() for k in self._arrays()), skipped=self.skipped)

    @staticmethod
    def _arrays():
        return ("site_tau", "site_nu", "cav_tau", "cav_nu", "hy_tau", "hy_nu", "ky_tau", "ky_nu")

    def damped_arrays(self):
        return np.concatenate([self.site_tau, self.site_nu, self.hy_tau, self.hy_nu,
                               self.ky_tau, self.ky_nu])


def _moments(tau, nu):
    ok = tau > 0
    safe = np.where(ok, tau, 1.0)
    return np.where(ok, nu / safe, 0.0), np.where(ok, 1.0 / safe, np.inf)


@dataclass
class GPPosterior:
    """Approximate posterior of one latent GP given its site approximations."""

    K: np.ndarray
    site_tau: np.ndarray
    site_nu: np.ndarray
    L: np.ndarray
    sW: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    alpha: np.ndarray

    @classmethod
    def from_sites(cls, K, tau, nu):
        n = K.shape[0]
        if n == 0:
            e = np.zeros(0)
            return cls(K, tau, nu, np.zeros((0, 0)), e, e, e, e)
        sW = np.sqrt(np.maximum(tau, 0.0))
        B = np.eye(n) + sW[:, None] * K * sW[None, :]
        L, _ = jitter_cholesky(B, start=1e-14)
        V = linalg.solve_triangular(L, sW[:, None] * K, lower=True, check_finite=False)
        var = np.diag(K) - np.einsum("ij,ij->j", V, V)
        # alpha = (K + S^-1)^-1 mu_tilde, written so flat sites need no inverse
        Knu = K @ nu
        z = sW * linalg.cho_solve((L, True), sW * Knu, check_finite=False)
        alpha = nu - z
        mean = K @ alpha
        return cls(K, tau, nu, L, sW, mean, var, alpha)

    def predict(self, Kx, kxx):
        """Latent predictive mean and variance given cross-covariances ``Kx`` (n, q)."""
        mean = Kx.T @ self.alpha
        if self.L.size:
            v = linalg.solve_triangular(self.L, self.sW[:, None] * Kx, lower=True, check_finite=False)
            var = kxx - np.einsum("ij,ij->j", v, v)
        else:
            var = np.array(kxx, dtype=float)
        return mean, np.maximum(var, 1e-300)

    def log_evidence_part(self, cav_tau, cav_nu):
        """log Z_g - sum_n log Z_{f_n}: the GP prior with its sites, minus overlaps.

        Stable for flat sites (tau = 0), which contribute nothing.
        """
        if self.K.shape[0] == 0:
            return 0.0
        tt, tn = self.site_tau, self.site_nu
        Sigma_nu = self.K @ self.alpha  # Sigma @ nu_tilde
        out = -np.sum(np.log(np.diag(self.L)))
        out += 0.5 * tn @ Sigma_nu
        out += 0.5 * np.sum(cav_nu * ((tt / cav_tau) * cav_nu - 2.0 * tn) / (tt + cav_tau))
        out -= 0.5 * np.sum(tn ** 2 / (cav_tau + tt))
        out += 0.5 * np.sum(np.log1p(tt / cav_tau))
        return float(out)


def gp_posterior(prob: Problem, state: EPState, which: str) -> GPPosterior:
    sl, K = prob.block(which)
    return GPPosterior.from_sites(K, state.site_tau[sl], state.site_nu[sl])


def gp_to_site_messages(state: EPState, prob: Problem, which: str) -> GPPosterior:
    """Refresh the GP -> f cavity messages of one component family in place.

    Computes q(f) from the current sites and divides each site back out.
    Returns the posterior used.
    """
    sl, _ = prob.block(which)
    post = gp_posterior(prob, state, which)
    if post.var.size:
        with np.errstate(divide="ignore", invalid="ignore"):
            state.cav_tau[sl] = 1.0 / post.var - state.site_tau[sl]
            state.cav_nu[sl] = post.mean / post.var - state.site_nu[sl]
    return post


def sum_factor_messages(state: EPState, prob: Problem, hp: Hyperparams, n=None) -> None:
    """Update the k_n -> y messages in place (all observations, or those in ``n``).

    The message to one component is N(y_n - sum of other means, v + sum of
    other variances) over the incoming h -> y messages; it stays flat while
    any other incoming message is flat.
    """
    flat = ~(state.hy_tau > 0)
    mean, var = _moments(state.hy_tau, state.hy_nu)
    mean = np.where(flat, 0.0, mean)
    var = np.where(flat, 0.0, var)
    S_m = np.bincount(prob.owner, weights=mean, minlength=prob.N)
    S_v = np.bincount(prob.owner, weights=var, minlength=prob.N)
    n_flat = np.bincount(prob.owner, weights=flat.astype(float), minlength=prob.N)
    others_flat = n_flat[prob.owner] - flat > 0
    m_out = prob.y[prob.owner] - (S_m[prob.owner] - mean)
    v_out = hp.noise_v + (S_v[prob.owner] - var)
    tau = np.where(others_flat, 0.0, 1.0 / v_out)
    nu = np.where(others_flat, 0.0, m_out / v_out)
    sel = slice(None) if n is None else np.isin(prob.owner, np.atleast_1d(n))
    state.ky_tau[sel] = tau[sel]
    state.ky_nu[sel] = nu[sel]


def _tilted_truncated(a, A, beta, ky_tau, ky_nu):
    """Moments of the truncated component factor with its two cavities.

    Returns ``(log_z, my, vy, mf, vf)``.  With a flat y-cavity the f-side is
    left uninformed (returned as NaN) and log_z is 0.
    """
    s = A + beta
    k_ok = ky_tau > 0
    s0 = 1.0 / (1.0 / s + ky_tau)
    m0 = s0 * (a / s + ky_nu)
    my, vy, log_phi = trunc_moments(m0, s0)
    c = A / s
    mf = a + c * (my - a)
    vf = A - c * A + c * c * vy
    b, B = _moments(np.where(k_ok, ky_tau, 1.0), np.where(k_ok, ky_nu, 0.0))
    log_z = np.where(k_ok, log_gauss(a, b, s + B) + log_phi, 0.0)
    mf = np.where(k_ok, mf, np.nan)
    vf = np.where(k_ok, vf, np.nan)
    return log_z, my, vy, mf, vf


def _tilted_poisson(a, A, ky_tau, ky_nu, quad_nodes):
    k_ok = ky_tau > 0
    log_z = np.zeros_like(a)
    my, vy = lognormal_rate_moments(a, A)
    mf = np.full_like(a, np.nan)
    vf = np.full_like(a, np.nan)
    if np.any(k_ok):
        b, B = ky_nu[k_ok] / ky_tau[k_ok], 1.0 / ky_tau[k_ok]
        lz, mf_, vf_, my_, vy_, _ = poisson_tilted(a[k_ok], A[k_ok], b, B, quad_nodes)
        log_z[k_ok] = lz
        mf[k_ok], vf[k_ok], my[k_ok], vy[k_ok] = mf_, vf_, my_, vy_
    return log_z, my, vy, mf, vf


def tilted(state: EPState, prob: Problem, hp: Hyperparams, quad_nodes: int, idx=None):
    """Tilted moments for components ``idx`` at the current cavities."""
    idx = slice(None) if idx is None else idx
    a, A = _moments(state.cav_tau[idx], state.cav_nu[idx])
    A = np.where(np.isfinite(A), A, 1.0)
    if hp.component_likelihood == "truncated_gaussian":
        return _tilted_truncated(a, A, prob.beta[idx], state.ky_tau[idx], state.ky_nu[idx])
    return _tilted_poisson(a, A, state.ky_tau[idx], state.ky_nu[idx], quad_nodes)


def component_factor_messages(state: EPState, prob: Problem, hp: Hyperparams,
                              cfg: EPConfig, n=None) -> None:
    """Update h -> y and h -> f messages in place by moment matching, with damping.

    Components whose GP cavity has non-positive precision are skipped, as
    is any individual outgoing message that would come out with negative
    precision or whose quadrature failed.
    """
    sel = np.arange(prob.C) if n is None else np.flatnonzero(np.isin(prob.owner, np.atleast_1d(n)))
    cav_ok = state.cav_tau[sel] > 0
    idx = sel[cav_ok]
    skipped = int((~cav_ok).sum())
    if idx.size == 0:
        state.skipped += skipped
        return
    log_z, my, vy, mf, vf = tilted(state, prob, hp, cfg.quad_nodes, idx)
    d = cfg.damping

    with np.errstate(divide="ignore", invalid="ignore"):
        new_hy_tau = 1.0 / vy - state.ky_tau[idx]
        new_hy_nu = my / vy - state.ky_nu[idx]
        new_site_tau = 1.0 / vf - state.cav_tau[idx]
        new_site_nu = mf / vf - state.cav_nu[idx]

    ok_y = np.isfinite(new_hy_tau) & np.isfinite(new_hy_nu) & (new_hy_tau > 0)
    ok_f = np.isfinite(new_site_tau) & np.isfinite(new_site_nu) & (new_site_tau >= 0)
    # a flat y-cavity carries no information back to f
    ok_f &= state.ky_tau[idx] > 0
    skipped += int((~ok_y).sum())

    iy = idx[ok_y]
    state.hy_tau[iy] = d * new_hy_tau[ok_y] + (1 - d) * state.hy_tau[iy]
    state.hy_nu[iy] = d * new_hy_nu[ok_y] + (1 - d) * state.hy_nu[iy]
    jf = idx[ok_f]
    state.site_tau[jf] = d * new_site_tau[ok_f] + (1 - d) * state.site_tau[jf]
    state.site_nu[jf] = d * new_site_nu[ok_f] + (1 - d) * state.site_nu[jf]
    state.skipped += skipped


def ep_sweep(state: EPState, prob: Problem, hp: Hyperparams, cfg: EPConfig):
    """One full iteration of the message schedule; returns the GP posteriors."""
    post_r = gp_to_site_messages(state, prob, "routine")
    post_e = gp_to_site_messages(state, prob, "event")
    component_factor_messages(state, prob, hp, cfg)
    sum_factor_messages(state, prob, hp)
    component_factor_messages(state, prob, hp, cfg)
    return post_r, post_e


@dataclass
class FittedModel:
    """Result of an EP fit; immutable by convention."""

    hp: Hyperparams
    cfg: EPConfig
    state: EPState
    post_routine: GPPosterior
    post_event: GPPosterior
    n_obs: int
    owner: np.ndarray
    X_routine: np.ndarray
    X_event: np.ndarray
    fingerprint: str
    converged: bool
    n_iter: int
    log_evidence: float
    trace: list = field(default_factory=list)

    @property
    def N(self):
        return self.n_obs

    def component_marginals(self):
        """Means and variances of q(y) for all stacked components."""
        tau = self.state.hy_tau + self.state.ky_tau
        nu = self.state.hy_nu + self.state.ky_nu
        return _moments(tau, nu)

    def routine_marginals(self):
        m, v = self.component_marginals()
        return m[: self.N], v[: self.N]

    def event_marginals(self):
        m, v = self.component_marginals()
        return m[self.N:], v[self.N:]

    def latent_marginals(self, which="routine"):
        post = self.post_routine if which == "routine" else self.post_event
        return post.mean, post.var


def _log_evidence(state: EPState, prob: Problem, hp: Hyperparams, cfg: EPConfig,
                  post_r: GPPosterior, post_e: GPPosterior) -> float:
    out = 0.0
    for which, post in (("routine", post_r), ("event", post_e)):
        sl, _ = prob.block(which)
        out += post.log_evidence_part(state.cav_tau[sl], state.cav_nu[sl])
    log_zh = tilted(state, prob, hp, cfg.quad_nodes)[0]
    out += float(np.sum(log_zh))
    hm, hv = _moments(state.hy_tau, state.hy_nu)
    km, kv = _moments(state.ky_tau, state.ky_nu)
    S_m = np.bincount(prob.owner, weights=hm, minlength=prob.N)
    S_v = np.bincount(prob.owner, weights=hv, minlength=prob.N)
    out += float(np.sum(log_gauss(prob.y, S_m, hp.noise_v + S_v)))
    out -= float(np.sum(log_gauss(hm, km, hv + kv)))
    return out


def log_marginal_likelihood(model: FittedModel, ds: Dataset | None = None) -> float:
    """EP approximation to log p(y | inputs, hyperparameters)."""
    if ds is None:
        return model.log_evidence
    prob = Problem(ds, model.hp)
    state = model.state.copy()
    post_r = gp_to_site_messages(state, prob, "routine")
    post_e = gp_to_site_messages(state, prob, "event")
    return _log_evidence(state, prob, model.hp, model.cfg, post_r, post_e)


def _finish(state, prob, hp, cfg, converged, n_iter, trace) -> FittedModel:
    post_r = gp_to_site_messages(state, prob, "routine")
    post_e = gp_to_site_messages(state, prob, "event")
    with np.errstate(all="ignore"):
        lz = _log_evidence(state, prob, hp, cfg, post_r, post_e)
    if not np.isfinite(lz):
        lz = -np.inf
    ds = prob.ds
    return FittedModel(hp, cfg, state, post_r, post_e, prob.N, ds.owner.copy(),
                       np.array(ds.routine), np.array(ds.events), ds.fingerprint(),
                       converged, n_iter, lz, trace)


def fit(ds: Dataset, hp: Hyperparams, cfg: EPConfig | None = None,
        init: EPState | None = None) -> FittedModel:
    """Run EP to convergence (or ``cfg.max_iters``) and return the fitted model.

    Non-convergence is reported through ``FittedModel.converged``.
    """
    cfg = cfg or EPConfig()
    check_dataset(ds)
    prob = Problem(ds, hp)
    state = init.copy() if init is not None else EPState.uniform(prob.C)
    trace = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        before = state.damped_arrays()
        ep_sweep(state, prob, hp, cfg)
        after = state.damped_arrays()
        delta = float(np.max(np.abs(after - before))) if after.size else 0.0
        trace.append({"iter": it, "max_change": delta,
                      "site_norm": float(np.linalg.norm(np.r_[state.site_tau, state.site_nu])),
                      "hy_norm": float(np.linalg.norm(np.r_[state.hy_tau, state.hy_nu]))})
        if it > 1 and delta < cfg.tol:
            converged = True
            break
    if not converged:
        logger.info("EP did not converge in %d iterations (last change %.3g)", it, trace[-1]["max_change"])
    return _finish(state, prob, hp, cfg, converged, it, trace)


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

SNAPSHOT_VERSION = 1


def to_snapshot(model: FittedModel) -> dict:
    s = model.state
    return {
        "version": SNAPSHOT_VERSION,
        "hyperparams": model.hp.to_dict(),
        "config": {"damping": model.cfg.damping, "max_iters": model.cfg.max_iters,
                   "tol": model.cfg.tol, "quad_nodes": model.cfg.quad_nodes},
        "fingerprint": model.fingerprint,
        "converged": bool(model.converged),
        "n_iter": int(model.n_iter),
        "log_evidence": model.log_evidence if np.isfinite(model.log_evidence) else None,
        "n_routine": int(model.N),
        "n_event": int(len(model.owner)),
        "sites": {
            "routine": {"precision": s.site_tau[: model.N].tolist(),
                        "precision_mean": s.site_nu[: model.N].tolist()},
            "event": {"precision": s.site_tau[model.N:].tolist(),
                      "precision_mean": s.site_nu[model.N:].tolist()},
        },
        "component_messages": {
            "from_likelihood": {"precision": s.hy_tau.tolist(), "precision_mean": s.hy_nu.tolist()},
            "from_sum": {"precision": s.ky_tau.tolist(), "precision_mean": s.ky_nu.tolist()},
        },
    }


class SnapshotMismatch(ValueError):
    """Snapshot does not belong to the dataset it is paired with."""


def from_snapshot(snap: dict, ds: Dataset) -> FittedModel:
    """Rebuild a fitted model from a snapshot and the dataset it was fitted on."""
    if snap.get("fingerprint") != ds.fingerprint():
        raise SnapshotMismatch("snapshot fingerprint does not match dataset ids")
    hp = Hyperparams.from_dict(snap["hyperparams"])
    cfg = EPConfig(**snap["config"])
    prob = Problem(ds, hp)
    if snap["n_routine"] != prob.N or snap["n_event"] != prob.M:
        raise SnapshotMismatch("snapshot component counts do not match dataset")
    st = EPState.uniform(prob.C)
    st.site_tau[:] = snap["sites"]["routine"]["precision"] + snap["sites"]["event"]["precision"]
    st.site_nu[:] = snap["sites"]["routine"]["precision_mean"] + snap["sites"]["event"]["precision_mean"]
    cm = snap["component_messages"]
    st.hy_tau[:] = cm["from_likelihood"]["precision"]
    st.hy_nu[:] = cm["from_likelihood"]["precision_mean"]
    st.ky_tau[:] = cm["from_sum"]["precision"]
    st.ky_nu[:] = cm["from_sum"]["precision_mean"]
    model = _finish(st, prob, hp, cfg, bool(snap["converged"]), int(snap["n_iter"]), [])
    if snap.get("log_evidence") is not None:
        model.log_evidence = float(snap["log_evidence"])
    return model


def save_snapshot(model: FittedModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_snapshot(model), fh)
        fh.write("\n")


def load_snapshot(path, ds: Dataset) -> FittedModel:
    with open(path, encoding="utf-8") as fh:
        snap = json.load(fh)
    return from_snapshot(snap, ds)
