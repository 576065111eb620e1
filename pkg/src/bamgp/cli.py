"""Command-line entry point: ``bamgp <command> [options]``.

Machine-readable results go to stdout (JSON or TSV), diagnostics to stderr.
Exit codes: 0 success (including a fit that did not converge), 2 usage or
validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .data import DataFormatError, load_dataset, load_ground_truth, read_jsonl, save_dataset, save_ground_truth
from .ep import EPConfig, Hyperparams, SnapshotMismatch, fit, load_snapshot, save_snapshot
from .evaluation import evaluate_decomposition, metrics, write_json
from .hyperopt import HyperoptError, OptConfig, ard_relevance, optimize, relevance_tsv
from .kernels import CholeskyError
from .prediction import decomposition_records, predict_dataset, write_predictions
from .simulate import ToyParams, generate_toy

logger = logging.getLogger("bamgp")

QUAD_ENV = "BAMGP_QUAD_NODES"
LIKELIHOOD = {"trunc": "truncated_gaussian", "poisson": "poisson"}


class UsageError(Exception):
    pass


def _default_quad_nodes():
    raw = os.environ.get(QUAD_ENV)
    if raw is None:
        return 20
    try:
        val = int(raw)
    except ValueError:
        raise UsageError(f"{QUAD_ENV} must be a positive integer, got {raw!r}") from None
    if val < 1:
        raise UsageError(f"{QUAD_ENV} must be a positive integer, got {raw!r}")
    return val


def _positive_int(text):
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return val


def _emit(obj):
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _load_hyperparams(path, ds, likelihood):
    if path is None:
        return Hyperparams.default(ds.d_routine, ds.d_event, likelihood)
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    d = d.get("hyperparams", d)
    d["component_likelihood"] = likelihood
    return Hyperparams.from_dict(d)


def _ep_config(args):
    quad = args.quad_nodes if args.quad_nodes is not None else _default_quad_nodes()
    return EPConfig(args.damping, args.max_iters, args.tol, quad)


def cmd_simulate(args):
    p = ToyParams(dim=args.dim, beta=args.beta, noise_v=args.noise_v,
                  signal_variance=args.signal_variance, length_scale=args.length_scale)
    ds, gt = generate_toy(args.n, args.seed, p)
    save_dataset(ds, args.out)
    if args.truth_out:
        save_ground_truth(gt, ds, args.truth_out)
    _emit({"n": len(ds), "events": int(len(ds.owner)), "out": args.out, "truth_out": args.truth_out})


def cmd_fit(args):
    ds = load_dataset(args.data)
    lik = LIKELIHOOD[args.likelihood]
    hp = _load_hyperparams(args.hyperparams, ds, lik)
    model = fit(ds, hp, _ep_config(args))
    save_snapshot(model, args.out_snapshot)
    _emit({"converged": model.converged, "n_iter": model.n_iter,
           "log_evidence": model.log_evidence, "snapshot": args.out_snapshot,
           "skipped_updates": model.state.skipped})


def cmd_predict(args):
    train = load_dataset(args.train)
    model = load_snapshot(args.snapshot, train)
    query = load_dataset(args.data)
    preds = predict_dataset(model, query)
    if args.out:
        write_predictions(preds, query.ids, args.out)
        _emit({"n": len(preds), "out": args.out})
    else:
        for i, p in zip(query.ids, preds):
            _emit(p.to_record(i))


def cmd_decompose(args):
    ds = load_dataset(args.data)
    model = load_snapshot(args.snapshot, ds)
    recs = decomposition_records(model, ds)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for r in recs:
                fh.write(json.dumps(r) + "\n")
        _emit({"n": len(recs), "out": args.out})
    else:
        for r in recs:
            _emit(r)


def cmd_hyperopt(args):
    ds = load_dataset(args.data)
    lik = LIKELIHOOD[args.likelihood]
    init = _load_hyperparams(args.init, ds, lik)
    quad = args.quad_nodes if args.quad_nodes is not None else _default_quad_nodes()
    cfg = OptConfig(n_restarts=args.restarts, max_evals=args.max_evals,
                    inner_max_iters=args.inner_max_iters, quad_nodes=quad, seed=args.seed)
    res = optimize(ds, init, cfg)
    out = {**res.to_dict(), "config": cfg.to_dict()}
    if args.out:
        write_json(out, args.out)
    if args.relevance_tsv:
        kern = res.hyperparams.routine_kernel if args.component == "routine" else res.hyperparams.event_kernel
        if not hasattr(kern, "length_scales"):
            raise UsageError("relevance ranking needs an SE-ARD kernel")
        names = (args.feature_names.split(",") if args.feature_names
                 else [f"x{i}" for i in range(len(kern.length_scales))])
        with open(args.relevance_tsv, "w", encoding="utf-8") as fh:
            fh.write(relevance_tsv(ard_relevance(kern, names)))
    _emit(out)


def _read_predictions(path):
    return {str(rec["id"]): rec for _, rec in read_jsonl(path)}


def cmd_evaluate(args):
    ds = load_dataset(args.data)
    preds = _read_predictions(args.predictions)
    missing = [i for i in ds.ids if i not in preds]
    if missing:
        raise DataFormatError(f"predictions missing ids: {missing[:5]}")
    out = {"totals": metrics(ds.y, [preds[i]["total"]["mean"] for i in ds.ids])}
    if args.truth:
        gt = load_ground_truth(args.truth)
        r = np.array([preds[i]["routine"]["mean"] for i in ds.ids])
        e = np.array([ev["mean"] for i in ds.ids for ev in preds[i]["events"]])
        out["decomposition"] = evaluate_decomposition(r, e, ds, gt)
    _emit(out)


def cmd_benchmark(args):
    from .benchmark import MODELS, BenchConfig, run_benchmark

    models = MODELS if args.models == "all" else tuple(m.strip() for m in args.models.split(","))
    unknown = [m for m in models if m not in MODELS]
    if unknown:
        raise UsageError(f"unknown models {unknown}; choose from {list(MODELS)}")
    toy = ToyParams(dim=args.dim, beta=args.beta)
    cfg = BenchConfig(n=args.n, k=args.k, models=models, toy=toy)
    res = run_benchmark(args.seed, cfg)
    if args.out_json:
        write_json({k: v for k, v in res.items() if not k.endswith("_tsv")}, args.out_json)
    sys.stdout.write(res["prediction_tsv"])
    sys.stdout.write("\n")
    sys.stdout.write(res["decomposition_tsv"])


def build_parser():
    p = argparse.ArgumentParser(prog="bamgp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def ep_flags(sp):
        sp.add_argument("--damping", type=float, default=0.5)
        sp.add_argument("--max-iters", type=_positive_int, default=200)
        sp.add_argument("--tol", type=float, default=1e-4)
        sp.add_argument("--quad-nodes", type=_positive_int, default=None,
                        help=f"quadrature nodes per axis (default ${QUAD_ENV} or 20)")

    s = sub.add_parser("simulate", help="generate toy data with ground truth")
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--truth-out")
    s.add_argument("--dim", type=_positive_int, default=2)
    s.add_argument("--beta", type=float, default=0.2)
    s.add_argument("--noise-v", type=float, default=0.01)
    s.add_argument("--signal-variance", type=float, default=2.0)
    s.add_argument("--length-scale", type=float, default=1.0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="run EP and write a snapshot")
    s.add_argument("--data", required=True)
    s.add_argument("--hyperparams")
    s.add_argument("--likelihood", choices=sorted(LIKELIHOOD), default="trunc")
    s.add_argument("--out-snapshot", required=True)
    ep_flags(s)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", help="predictive distributions at new inputs")
    s.add_argument("--snapshot", required=True)
    s.add_argument("--train", required=True, help="dataset the snapshot was fitted on")
    s.add_argument("--data", required=True, help="query observations (totals ignored)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("decompose", help="posterior component marginals of the training data")
    s.add_argument("--snapshot", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_decompose)

    s = sub.add_parser("hyperopt", help="type-II maximum likelihood")
    s.add_argument("--data", required=True)
    s.add_argument("--init")
    s.add_argument("--likelihood", choices=sorted(LIKELIHOOD), default="trunc")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--restarts", type=_positive_int, default=2)
    s.add_argument("--max-evals", type=_positive_int, default=150)
    s.add_argument("--inner-max-iters", type=_positive_int, default=60)
    s.add_argument("--quad-nodes", type=_positive_int, default=None)
    s.add_argument("--out")
    s.add_argument("--relevance-tsv")
    s.add_argument("--component", choices=["routine", "event"], default="routine")
    s.add_argument("--feature-names", help="comma-separated names for the ranked features")
    s.set_defaults(func=cmd_hyperopt)

    s = sub.add_parser("evaluate", help="score predictions (and decompositions) against data")
    s.add_argument("--data", required=True)
    s.add_argument("--predictions", required=True)
    s.add_argument("--truth")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("benchmark", help="cross-validated comparison on regenerated toy data")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--k", type=_positive_int, default=10)
    s.add_argument("--n", type=_positive_int, default=1000)
    s.add_argument("--models", default="all")
    s.add_argument("--dim", type=_positive_int, default=2)
    s.add_argument("--beta", type=float, default=0.2)
    s.add_argument("--out-json")
    s.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CholeskyError, np.linalg.LinAlgError, ArithmeticError, HyperoptError) as exc:
        # LinAlgError is a ValueError, so this must come before the usage handler
        print(f"bamgp {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (UsageError, DataFormatError, SnapshotMismatch, json.JSONDecodeError, KeyError,
            ValueError, OSError) as exc:
        print(f"bamgp {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
