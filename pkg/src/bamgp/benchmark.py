"""Cross-validated comparison of all models on simulated data."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import blr_decompose, fit_blr, fit_gp_baseline, linear_hyperparams
from .data import Dataset, GroundTruth
from .ep import EPConfig, Hyperparams, fit
from .evaluation import (cv_folds, decomposition_table, evaluate_decomposition, metrics,
                         prediction_table, summarize)
from .hyperopt import OptConfig, optimize
from .kernels import SeArdParams
from .prediction import predict_dataset
from .simulate import ToyParams, generate_toy

logger = logging.getLogger(__name__)

MODELS = ("BLR", "GP", "BAM-LR", "BAM-GP (poisson)", "BAM-GP (trunc.)")
DECOMP_MODELS = ("BLR", "BAM-LR", "BAM-GP (poisson)", "BAM-GP (trunc.)")


@dataclass(frozen=True)
class BenchConfig:
    n: int = 1000
    k: int = 10
    models: tuple = MODELS
    toy: ToyParams = field(default_factory=ToyParams)
    ep: EPConfig = field(default_factory=EPConfig)
    # Poisson fits use fewer nodes per axis; see the README for the trade-off
    poisson_quad_nodes: int = 10
    hyperopt_n: int = 200
    hyperopt: OptConfig = field(default_factory=OptConfig)
    poisson_hyperopt_n: int = 100
    poisson_hyperopt: OptConfig = field(default_factory=lambda: OptConfig(
        n_restarts=1, max_evals=80, quad_nodes=8))
    use_events_in_baselines: bool = True

    def to_dict(self):
        d = asdict(self)
        d["models"] = list(self.models)
        return d


def _initial_hyperparams(ds: Dataset, likelihood: str) -> Hyperparams:
    """Data-scaled starting point for type-II maximum likelihood."""
    vy = float(np.var(ds.y)) or 1.0
    if likelihood == "poisson":
        kr = SeArdParams(1.0, (1.0,) * ds.d_routine)
        ke = SeArdParams(1.0, (1.0,) * ds.d_event)
        return Hyperparams(kr, ke, 0.2, 0.2, 0.1 * vy, "poisson")
    kr = SeArdParams(vy, (1.0,) * ds.d_routine)
    ke = SeArdParams(vy, (1.0,) * ds.d_event)
    return Hyperparams(kr, ke, 0.1 * vy, 0.1 * vy, 0.1 * vy)


def _linear_init(ds: Dataset) -> Hyperparams:
    vy = float(np.var(ds.y)) or 1.0
    return linear_hyperparams(vy, vy, 0.1 * vy, 0.1 * vy)


def select_hyperparams(ds: Dataset, cfg: BenchConfig, seed: int) -> dict:
    """Type-II ML for the three additive models on seeded subsamples of ``ds``."""
    rng = np.random.default_rng(seed)
    out = {}
    wanted = set(cfg.models)

    def sub(n):
        return ds.subset(np.sort(rng.choice(len(ds), min(n, len(ds)), replace=False)))

    sub_main = sub(cfg.hyperopt_n)
    sub_pois = sub(cfg.poisson_hyperopt_n)
    if "BAM-GP (trunc.)" in wanted:
        out["BAM-GP (trunc.)"] = optimize(sub_main, _initial_hyperparams(ds, "truncated_gaussian"),
                                          cfg.hyperopt)
    if "BAM-LR" in wanted:
        out["BAM-LR"] = optimize(sub_main, _linear_init(ds), cfg.hyperopt)
    if "BAM-GP (poisson)" in wanted:
        out["BAM-GP (poisson)"] = optimize(sub_pois, _initial_hyperparams(ds, "poisson"),
                                           cfg.poisson_hyperopt)
    return out


def _ep_cfg(cfg: BenchConfig, name: str) -> EPConfig:
    if name == "BAM-GP (poisson)":
        e = cfg.ep
        return EPConfig(e.damping, e.max_iters, e.tol, cfg.poisson_quad_nodes)
    return cfg.ep


def _predict_totals(name, train: Dataset, test: Dataset, cfg: BenchConfig, hps: dict):
    ev = cfg.use_events_in_baselines
    if name == "BLR":
        return fit_blr(train, use_events=ev).predict(test)[0]
    if name == "GP":
        return fit_gp_baseline(train, use_events=ev, n_restarts=1).predict(test)[0]
    model = fit(train, hps[name].hyperparams, _ep_cfg(cfg, name))
    return np.array([p.total[0] for p in predict_dataset(model, test)])


def _decompose(name, ds: Dataset, cfg: BenchConfig, hps: dict):
    if name == "BLR":
        m = fit_blr(ds, use_events=True)
        shares = [blr_decompose(m, o) for o in ds]
        return (np.array([r[0] for r, _ in shares]),
                np.array([e[0] for _, es in shares for e in es]))
    model = fit(ds, hps[name].hyperparams, _ep_cfg(cfg, name))
    return model.routine_marginals()[0], model.event_marginals()[0]


def run_benchmark(seed: int = 0, cfg: BenchConfig | None = None,
                  data: tuple[Dataset, GroundTruth] | None = None) -> dict:
    """Regenerate the toy data, cross-validate every model and score decompositions.

    Returns a JSON-ready dict with per-fold metrics, summaries and the two
    TSV tables.
    """
    cfg = cfg or BenchConfig()
    t0 = time.time()
    ds, gt = data if data is not None else generate_toy(cfg.n, seed, cfg.toy)
    hps = select_hyperparams(ds, cfg, seed)
    folds = cv_folds(ds, cfg.k)
    per_fold = {name: [] for name in MODELS if name in cfg.models}
    for f, (train_ids, test_ids) in enumerate(folds):
        train, test = ds.select_ids(train_ids), ds.select_ids(test_ids)
        for name in per_fold:
            pred = _predict_totals(name, train, test, cfg, hps)
            per_fold[name].append(metrics(test.y, pred))
        logger.info("fold %d done (%.0fs)", f, time.time() - t0)
    summaries = {name: summarize(v) for name, v in per_fold.items()}

    decomp = {}
    for name in DECOMP_MODELS:
        if name in cfg.models:
            r, e = _decompose(name, ds, cfg, hps)
            decomp[name] = evaluate_decomposition(r, e, ds, gt)

    return {
        "seed": seed,
        "config": cfg.to_dict(),
        "hyperparams": {k: v.to_dict() for k, v in hps.items()},
        "prediction": {"per_fold": per_fold, "summary": summaries},
        "decomposition": decomp,
        "prediction_tsv": prediction_table(summaries),
        "decomposition_tsv": decomposition_table(decomp),
        "seconds": time.time() - t0,
    }
