"""Metrics, temporal cross-validation folds and decomposition scoring."""

from __future__ import annotations

import json
import math

import numpy as np

from .data import Dataset, GroundTruth

METRICS = ("rae", "corrcoef", "r2")


def metrics(y_true, y_pred) -> dict:
    """RAE (x100), Pearson correlation and R^2 of predictions.

    ``r2`` is clamped at 0 for reporting; the unclamped value is ``r2_raw``.
    """
    y = np.asarray(y_true, dtype=float)
    p = np.asarray(y_pred, dtype=float)
    if y.shape != p.shape or y.ndim != 1 or y.size == 0:
        raise ValueError("y_true and y_pred must be equal-length nonempty vectors")
    dev = y - y.mean()
    sst = float(dev @ dev)
    if sst == 0.0:
        raise ValueError("y_true is constant; corrcoef and r2 are undefined")
    err = p - y
    rae = 100.0 * float(np.sum(np.abs(err)) / np.sum(np.abs(dev)))
    r2_raw = 1.0 - float(err @ err) / sst
    pdev = p - p.mean()
    denom = math.sqrt(float(pdev @ pdev) * sst)
    corr = float(pdev @ dev) / denom if denom > 0 else 0.0
    return {"rae": rae, "corrcoef": corr, "r2": max(r2_raw, 0.0), "r2_raw": r2_raw}


def cv_folds(ds: Dataset, k: int, group_key=None) -> list[tuple[list[str], list[str]]]:
    """Contiguous k-fold split in dataset order.

    ``group_key`` maps an observation to a group label; consecutive
    observations with equal labels form one group and are never split.
    Fold sizes (in groups) differ by at most one.
    """
    ids = ds.ids
    if group_key is None:
        groups = [[i] for i in ids]
    else:
        groups, last = [], object()
        for o in ds:
            key = group_key(o)
            if not groups or key != last:
                groups.append([])
            groups[-1].append(o.id)
            last = key
    if not 1 <= k <= len(groups):
        raise ValueError(f"k={k} must be between 1 and the number of groups ({len(groups)})")
    folds = []
    for block in np.array_split(np.arange(len(groups)), k):
        test = [i for g in block for i in groups[g]]
        tset = set(test)
        folds.append(([i for i in ids if i not in tset], test))
    return folds


def evaluate_decomposition(routine_pred, event_pred, ds: Dataset, gt: GroundTruth) -> dict:
    """Pooled metrics for routine values (component A) and event values (component B).

    ``event_pred`` is stacked in ``ds.events`` order.
    """
    gt.check_aligned(ds)
    out = {"A": metrics(gt.routine_values(ds), routine_pred)}
    ev = gt.event_values(ds)
    if ev.size:
        if len(event_pred) != ev.size:
            raise ValueError(f"{len(event_pred)} event predictions for {ev.size} events")
        out["B"] = metrics(ev, event_pred)
    return out


def summarize(per_fold: list[dict]) -> dict:
    """Mean and standard error of each metric across folds."""
    out = {}
    for m in (*METRICS, "r2_raw"):
        vals = np.array([f[m] for f in per_fold], dtype=float)
        se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        out[m] = {"mean": float(vals.mean()), "stderr": se}
    return out


def format_cell(mean, stderr=None, digits=3) -> str:
    return f"{mean:.{digits}f}" if stderr is None else f"{mean:.{digits}f} ({stderr:.{digits}f})"


def prediction_table(summaries: dict) -> str:
    """TSV with one row per model: RAE, CorrCoef, R2 as "mean (stderr)"."""
    lines = ["model\tRAE\tCorrCoef\tR2"]
    for name, s in summaries.items():
        lines.append("\t".join([name] + [format_cell(s[m]["mean"], s[m]["stderr"]) for m in METRICS]))
    return "\n".join(lines) + "\n"


def decomposition_table(results: dict) -> str:
    """TSV with one row per (component, model)."""
    lines = ["component\tmodel\tRAE\tCorrCoef\tR2"]
    for comp in ("A", "B"):
        for name, r in results.items():
            if comp in r:
                lines.append("\t".join([comp, name] + [format_cell(r[comp][m]) for m in METRICS]))
    return "\n".join(lines) + "\n"


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
