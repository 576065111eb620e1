import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bamgp.data import Dataset, GroundTruth, Observation
from bamgp.evaluation import (cv_folds, decomposition_table, evaluate_decomposition, format_cell, metrics,
                              prediction_table, summarize, write_json)
from bamgp.simulate import generate_toy


def test_metrics_perfect_and_mean():
    y = np.array([1.0, 3.0, 2.0, 6.0])
    m = metrics(y, y)
    assert m["rae"] == 0 and m["corrcoef"] == pytest.approx(1.0) and m["r2"] == 1.0
    m = metrics(y, np.full(4, y.mean()))
    assert m["rae"] == pytest.approx(100.0) and m["r2"] == 0.0


def test_metrics_clamp_keeps_raw():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    p = np.array([4.0, 1.0, 5.0, 0.0])
    m = metrics(y, p)
    assert m["r2"] == 0.0 and m["r2_raw"] < 0


def test_metrics_errors():
    with pytest.raises(ValueError):
        metrics([1.0, 1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        metrics([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        metrics([], [])


vec = arrays(float, 12, elements=st.floats(-100, 100))


@settings(max_examples=150)
@given(vec, vec, st.floats(0.01, 100))
def test_metric_identities(y, p, c):
    if np.ptp(y) < 1e-3:
        return
    m = metrics(y, p)
    assert metrics(c * y, c * p)["rae"] == pytest.approx(m["rae"], rel=1e-9)
    sse = sum((a - b) ** 2 for a, b in zip(y, p))
    ybar = sum(y) / len(y)
    sst = sum((a - ybar) ** 2 for a in y)
    assert m["r2_raw"] == pytest.approx(1 - sse / sst, rel=1e-9, abs=1e-9)
    if np.ptp(p) > 1e-3:
        assert m["corrcoef"] == pytest.approx(np.corrcoef(y, p)[0, 1], abs=1e-9)


def test_folds_contiguous():
    ds = Dataset([Observation(f"o{i}", float(i), [0.0]) for i in range(10)])
    folds = cv_folds(ds, 5)
    assert [f[1] for f in folds] == [[f"o{2 * j}", f"o{2 * j + 1}"] for j in range(5)]
    for train, test in folds:
        assert sorted(train + test) == sorted(ds.ids) and not set(train) & set(test)
    with pytest.raises(ValueError):
        cv_folds(ds, 11)


def test_folds_respect_groups():
    ds = Dataset([Observation(f"o{i}", float(i), [float(i // 3)]) for i in range(12)])
    folds = cv_folds(ds, 3, group_key=lambda o: o.routine_features[0])
    for train, test in folds:
        days_test = {int(t[1:]) // 3 for t in test}
        days_train = {int(t[1:]) // 3 for t in train}
        assert not days_test & days_train
    with pytest.raises(ValueError):
        cv_folds(ds, 5, group_key=lambda o: o.routine_features[0])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 60), st.integers(1, 12))
def test_folds_partition(n, k):
    if k > n:
        return
    ds = Dataset([Observation(f"o{i}", 0.0, [0.0]) for i in range(n)])
    folds = cv_folds(ds, k)
    tests = [t for _, t in folds]
    assert sorted(sum(tests, [])) == sorted(ds.ids)
    sizes = [len(t) for t in tests]
    assert max(sizes) - min(sizes) <= 1


def test_decomposition_scoring():
    ds, gt = generate_toy(30, seed=0)
    r = gt.routine_values(ds)
    e = gt.event_values(ds)
    out = evaluate_decomposition(r, e, ds, gt)
    assert out["A"]["r2"] == 1.0 and out["B"]["rae"] == 0.0
    with pytest.raises(ValueError):
        evaluate_decomposition(r, e[:-1], ds, gt)


def test_decomposition_pooled_permutation_invariant():
    ds = Dataset([Observation("a", 3.0, [0.0], [[0.1], [0.2]]), Observation("b", 2.0, [0.0], [[0.3]]),
                  Observation("c", 1.0, [0.0])])
    routine = {"a": 1.0, "b": 0.5, "c": 1.0}
    gt = GroundTruth(routine, {"a": [1.0, 2.0], "b": [1.5], "c": []})
    gt_swapped = GroundTruth(routine, {"a": [2.0, 1.0], "b": [1.5], "c": []})
    a = evaluate_decomposition(np.ones(3), np.array([0.9, 1.8, 1.4]), ds, gt)["B"]
    b = evaluate_decomposition(np.ones(3), np.array([1.8, 0.9, 1.4]), ds, gt_swapped)["B"]
    assert a == pytest.approx(b)


def test_tables_and_json(tmp_path):
    per_fold = [metrics([1.0, 2.0, 3.0], [1.1, 2.0, 2.7]), metrics([1.0, 2.0, 3.0], [0.9, 2.2, 3.1])]
    s = summarize(per_fold)
    assert s["r2"]["stderr"] > 0
    tsv = prediction_table({"m1": s, "m2": s})
    rows = tsv.strip().split("\n")
    assert rows[0] == "model\tRAE\tCorrCoef\tR2" and len(rows) == 3
    assert rows[1].split("\t")[3] == format_cell(s["r2"]["mean"], s["r2"]["stderr"])
    assert format_cell(0.94123, 0.0051) == "0.941 (0.005)"
    dt = decomposition_table({"m": {"A": per_fold[0], "B": per_fold[1]}})
    assert [r.split("\t")[0] for r in dt.strip().split("\n")[1:]] == ["A", "B"]
    write_json({"x": 1}, tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text()) == {"x": 1}
