"""Predictive distributions for latents, component shares and totals."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .ep import FittedModel
from .gaussian import _gh, trunc_moments

SHARE_QUAD_NODES = 20


@dataclass(frozen=True)
class PredictiveDistribution:
    """Gaussian summaries of one future observation and its components."""

    routine: tuple
    events: tuple
    total: tuple

    def to_record(self, id=None) -> dict:
        rec = {"total": {"mean": self.total[0], "var": self.total[1]},
               "routine": {"mean": self.routine[0], "var": self.routine[1]},
               "events": [{"mean": m, "var": v} for m, v in self.events]}
        if id is not None:
            rec = {"id": id, **rec}
        return rec


def _component(model: FittedModel, which: str):
    if which == "routine":
        return model.post_routine, model.X_routine, model.hp.routine_kernel, model.hp.beta_r
    if which == "event":
        return model.post_event, model.X_event, model.hp.event_kernel, model.hp.beta_e
    raise ValueError(f"which must be 'routine' or 'event', got {which!r}")


def _as_queries(x_star, kernel):
    X = np.asarray(x_star, dtype=float)
    X = X.reshape(1, -1) if X.ndim == 1 else X
    if X.ndim != 2:
        raise ValueError("query points must be a vector or a 2-D array")
    if kernel.dim is not None and X.shape[1] != kernel.dim:
        raise ValueError(f"dimension mismatch: query has {X.shape[1]}, kernel expects {kernel.dim}")
    return X


def predict_latent_batch(model: FittedModel, X_star, which: str = "routine"):
    """Latent predictive means and variances at the rows of ``X_star``.

    All queries share the stored factorization of the component's GP.
    """
    post, X, kernel, _ = _component(model, which)
    Xq = _as_queries(X_star, kernel)
    kxx = kernel.diag(Xq)
    if Xq.shape[0] == 0:
        return np.zeros(0), np.zeros(0)
    if X.shape[0] == 0:
        return np.zeros(Xq.shape[0]), kxx.astype(float)
    mean = np.empty(Xq.shape[0])
    var = np.empty(Xq.shape[0])
    # one column at a time keeps batch and single-query results bit-identical
    for j in range(Xq.shape[0]):
        m, v = post.predict(kernel(X, Xq[j:j + 1]), kxx[j:j + 1])
        mean[j], var[j] = m[0], min(v[0], kxx[j])
    return mean, var


def predict_latent(model: FittedModel, x_star, which: str = "routine") -> tuple[float, float]:
    m, v = predict_latent_batch(model, np.atleast_2d(x_star), which)
    return float(m[0]), float(v[0])


def share_moments(mean_f, var_f, beta, likelihood: str, quad_nodes: int = SHARE_QUAD_NODES):
    """Predictive mean and variance of a component given its latent N(mean_f, var_f)."""
    mean_f = np.asarray(mean_f, dtype=float)
    var_f = np.asarray(var_f, dtype=float)
    if likelihood == "truncated_gaussian":
        m, v, _ = trunc_moments(mean_f, var_f + beta)
        return m, v
    # Poisson(e^f) moments averaged over f.  EP uses h as a likelihood in f,
    # which places f near log y; renormalizing the relaxed density over y
    # instead would inflate small shares (its mean exceeds e^f for e^f < 3)
    x, w = _gh(quad_nodes)
    lam = np.exp(mean_f[..., None] + np.sqrt(var_f)[..., None] * x)
    m = lam @ w
    v = (lam + lam * lam) @ w - m * m
    return m, np.maximum(v, m)


def predict_component_share_batch(model: FittedModel, X_star, which: str = "routine"):
    mf, vf = predict_latent_batch(model, X_star, which)
    beta = model.hp.beta_r if which == "routine" else model.hp.beta_e
    return share_moments(mf, vf, beta, model.hp.component_likelihood)


def predict_component_share(model: FittedModel, x_star, which: str = "routine") -> tuple[float, float]:
    m, v = predict_component_share_batch(model, np.atleast_2d(x_star), which)
    return float(m[0]), float(v[0])


def assemble(routine, events, noise_v) -> PredictiveDistribution:
    """Combine share moments into the total: means add, variances add on top of noise."""
    mu = routine[0]
    var = noise_v + routine[1]
    for m, v in events:
        mu = mu + m
        var = var + v
    ev = tuple((float(m), float(v)) for m, v in events)
    return PredictiveDistribution((float(routine[0]), float(routine[1])), ev, (float(mu), float(var)))


def predict_total(model: FittedModel, x_star_routine, x_star_events=()) -> PredictiveDistribution:
    r = predict_component_share(model, x_star_routine, "routine")
    X_e = np.asarray(x_star_events, dtype=float)
    ev = []
    if X_e.size:
        m, v = predict_component_share_batch(model, X_e.reshape(len(X_e), -1), "event")
        ev = list(zip(m.tolist(), v.tolist()))
    return assemble(r, ev, model.hp.noise_v)


def predict_dataset(model: FittedModel, ds: Dataset) -> list[PredictiveDistribution]:
    """Predictive distributions for every observation of ``ds`` (its totals are ignored)."""
    mr, vr = predict_component_share_batch(model, ds.routine, "routine")
    if len(ds.owner):
        me, ve = predict_component_share_batch(model, ds.events, "event")
    else:
        me = ve = np.zeros(0)
    bounds = np.r_[0, np.cumsum(ds.n_events)]
    out = []
    for n in range(len(ds)):
        sl = slice(bounds[n], bounds[n + 1])
        out.append(assemble((mr[n], vr[n]), list(zip(me[sl].tolist(), ve[sl].tolist())), model.hp.noise_v))
    return out


def write_predictions(preds, ids, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, p in zip(ids, preds):
            fh.write(json.dumps(p.to_record(i)) + "\n")


def decomposition_records(model: FittedModel, ds: Dataset) -> list[dict]:
    """Posterior component marginals for the training observations."""
    rm, rv = model.routine_marginals()
    em, ev = model.event_marginals()
    bounds = np.r_[0, np.cumsum(ds.n_events)]
    recs = []
    for n, o in enumerate(ds):
        sl = slice(bounds[n], bounds[n + 1])
        recs.append({"id": o.id, "y": o.y,
                     "routine": {"mean": float(rm[n]), "var": float(rv[n])},
                     "events": [{"mean": float(m), "var": float(v)} for m, v in zip(em[sl], ev[sl])]})
    return recs
