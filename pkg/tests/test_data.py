import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bamgp.data import (DataFormatError, Dataset, GroundTruth, Observation, as_dataset, check_dataset,
                        load_dataset, load_ground_truth, save_dataset, save_ground_truth, validate)
from bamgp.simulate import generate_toy


def write_lines(path, recs):
    path.write_text("".join(json.dumps(r) + "\n" for r in recs))
    return path


def test_load_two_records(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [
        {"id": "a", "y": 3.0, "routine": [1, 2, 3], "events": [[0.5, 0.1]]},
        {"id": "b", "y": 1.0, "routine": [0, 0, 1], "events": []},
    ])
    ds = load_dataset(p)
    assert len(ds) == 2 and ds.d_routine == 3 and ds.d_event == 2
    assert ds.ids == ["a", "b"]
    assert ds[1].n_events == 0
    np.testing.assert_array_equal(ds.owner, [0])


def test_wrong_event_length_names_record(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [
        {"id": "a", "y": 3.0, "routine": [1.0], "events": [[0.5, 0.1]]},
        {"id": "bad", "y": 1.0, "routine": [0.0], "events": [[0.3]]},
    ])
    with pytest.raises(DataFormatError, match="bad"):
        load_dataset(p)


def test_parse_error_names_line(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"id": "a", "y": 1, "routine": [1], "events": []}\n{not json\n')
    with pytest.raises(DataFormatError, match="line 2"):
        load_dataset(p)


def test_missing_field(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [{"id": "a", "routine": [1], "events": []}])
    with pytest.raises(DataFormatError, match="'y'"):
        load_dataset(p)


def test_validate_clean_and_violations():
    good = Dataset([Observation("a", 1.0, [0.1]), Observation("b", 2.0, [0.2], [[0.3]])])
    assert validate(good) == []
    dup = Dataset([Observation("a", 1.0, [0.1]), Observation("a", 2.0, [0.2])])
    v = validate(dup)
    assert len(v) == 1 and "'a'" in v[0]
    nan = Dataset([Observation("a", float("nan"), [0.1])])
    v = validate(nan)
    assert len(v) == 1 and "'y'" in v[0]
    with pytest.raises(DataFormatError):
        check_dataset(dup)


def test_event_dimension_violation():
    ds = Dataset([Observation("a", 1.0, [0.1], [[0.1, 0.2]]), Observation("b", 1.0, [0.1], [[0.3]])],
                 1, 2)
    v = validate(ds)
    assert len(v) == 1 and "'b'" in v[0]


def test_dataset_arrays_are_read_only():
    ds, _ = generate_toy(10, seed=0)
    with pytest.raises(ValueError):
        ds.y[0] = 1.0
    with pytest.raises(ValueError):
        ds[0].routine_features[0] = 1.0


@pytest.mark.parametrize("seed", range(5))
def test_simulator_output_validates(seed):
    ds, gt = generate_toy(50, seed=seed)
    assert validate(ds) == []
    gt.check_aligned(ds)


def test_round_trip(tmp_path):
    ds, gt = generate_toy(30, seed=1)
    save_dataset(ds, tmp_path / "d.jsonl")
    save_ground_truth(gt, ds, tmp_path / "t.jsonl")
    ds2 = load_dataset(tmp_path / "d.jsonl")
    assert ds2 == ds
    assert ds2.fingerprint() == ds.fingerprint()
    save_dataset(ds2, tmp_path / "d2.jsonl")
    assert (tmp_path / "d.jsonl").read_bytes() == (tmp_path / "d2.jsonl").read_bytes()
    gt2 = load_ground_truth(tmp_path / "t.jsonl")
    np.testing.assert_array_equal(gt2.event_values(ds2), gt.event_values(ds))


finite = st.floats(-1e6, 1e6, allow_nan=False)


@st.composite
def observations(draw):
    n = draw(st.integers(1, 6))
    out = []
    for i in range(n):
        e = draw(st.integers(0, 3))
        out.append(Observation(f"id{i}", draw(finite), draw(st.lists(finite, min_size=2, max_size=2)),
                               np.array(draw(st.lists(st.lists(finite, min_size=3, max_size=3),
                                                      min_size=e, max_size=e))).reshape(e, 3)))
    return Dataset(out, 2, 3)


@settings(max_examples=40, deadline=None)
@given(observations())
def test_round_trip_property(tmp_path_factory, ds):
    p = tmp_path_factory.mktemp("rt") / "d.jsonl"
    save_dataset(ds, p)
    back = load_dataset(p)
    assert back.d_routine == 2
    assert [o.n_events for o in back] == [o.n_events for o in ds]
    assert all(a == b for a, b in zip(back, ds))


def test_ground_truth_misalignment():
    ds = Dataset([Observation("a", 1.0, [0.1], [[0.2], [0.3]])])
    gt = GroundTruth({"a": 0.5}, {"a": [0.1]})
    with pytest.raises(DataFormatError, match="'a'"):
        gt.event_values(ds)


def test_as_dataset(tmp_path):
    ds, _ = generate_toy(5, seed=0)
    assert as_dataset(ds) is ds
    assert as_dataset(list(ds)) == ds
    save_dataset(ds, tmp_path / "d.jsonl")
    assert as_dataset(tmp_path / "d.jsonl") == ds
    with pytest.raises(TypeError):
        as_dataset([1, 2])
