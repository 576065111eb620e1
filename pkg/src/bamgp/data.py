"""Datasets with a variable number of event inputs per observation.

Each observation carries one routine feature vector, zero or more event
feature vectors and the observed total.  On disk a dataset is JSON-lines,
one observation per line::

    {"id": "t0", "y": 12.5, "routine": [0.1, 0.4], "events": [[0.3, 0.2]]}

Ground truth for simulated data lives in a parallel file keyed by id::

    {"id": "t0", "routine": 7.1, "events": [5.3]}
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataFormatError(ValueError):
    """Raised when a dataset file or record is malformed."""


@dataclass(frozen=True, eq=False)
class Observation:
    id: str
    y: float
    routine_features: np.ndarray
    event_features: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        r = np.asarray(self.routine_features, dtype=float).reshape(-1)
        e = np.asarray(self.event_features, dtype=float)
        if e.size == 0:
            e = e.reshape(0, e.shape[-1] if e.ndim == 2 else 0)
        elif e.ndim == 1:
            raise DataFormatError(f"record {self.id!r}: events must be a list of vectors")
        r.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "routine_features", r)
        object.__setattr__(self, "event_features", e)

    @property
    def n_events(self) -> int:
        return self.event_features.shape[0]

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "y": self.y,
            "routine": self.routine_features.tolist(),
            "events": self.event_features.tolist(),
        }

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return (
            self.id == other.id
            and (self.y == other.y or (math.isnan(self.y) and math.isnan(other.y)))
            and np.array_equal(self.routine_features, other.routine_features)
            and self.n_events == other.n_events
            # empty event arrays compare equal whatever their column count
            and (self.n_events == 0 or np.array_equal(self.event_features, other.event_features))
        )

    __hash__ = None


class Dataset:
    """An ordered, immutable collection of observations.

    Besides the observation list, the flattened arrays used by the inference
    code are precomputed: ``y`` (N,), ``routine`` (N, d_routine),
    ``events`` (M, d_event) stacked over all observations, and ``owner`` (M,)
    mapping each stacked event row to its observation index.
    """

    def __init__(self, observations: Iterable[Observation], d_routine: int | None = None,
                 d_event: int | None = None):
        self.observations = tuple(observations)
        if d_routine is None:
            d_routine = self.observations[0].routine_features.shape[0] if self.observations else 1
        if d_event is None:
            d_event = next(
                (o.event_features.shape[1] for o in self.observations if o.n_events), 1
            )
        self.d_routine = int(d_routine)
        self.d_event = int(d_event)
        self._build_arrays()

    def _build_arrays(self):
        n = len(self.observations)
        self.y = np.array([o.y for o in self.observations], dtype=float)
        self.n_events = np.array([o.n_events for o in self.observations], dtype=int)
        routine = np.full((n, self.d_routine), np.nan)
        for i, o in enumerate(self.observations):
            if o.routine_features.shape[0] == self.d_routine:
                routine[i] = o.routine_features
        rows = [o.event_features for o in self.observations
                if o.n_events and o.event_features.shape[1] == self.d_event]
        ok = [o.n_events if (o.n_events and o.event_features.shape[1] == self.d_event) else 0
              for o in self.observations]
        self.events = np.vstack(rows) if rows else np.zeros((0, self.d_event))
        self.owner = np.repeat(np.arange(n), ok)
        self.routine = routine
        for a in (self.y, self.n_events, self.routine, self.events, self.owner):
            a.setflags(write=False)

    def __len__(self):
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations)

    def __getitem__(self, i):
        return self.observations[i]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.d_routine == other.d_routine
            and self.d_event == other.d_event
            and len(self) == len(other)
            and all(a == b for a, b in zip(self.observations, other.observations))
        )

    __hash__ = None

    def __repr__(self):
        return (f"Dataset(N={len(self)}, d_routine={self.d_routine}, "
                f"d_event={self.d_event}, events={len(self.owner)})")

    @property
    def ids(self) -> list[str]:
        return [o.id for o in self.observations]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """Dataset restricted to ``indices`` (order preserved as given)."""
        return Dataset([self.observations[i] for i in indices], self.d_routine, self.d_event)

    def select_ids(self, ids: Iterable[str]) -> "Dataset":
        pos = {o.id: i for i, o in enumerate(self.observations)}
        return self.subset([pos[i] for i in ids])

    def fingerprint(self) -> str:
        """Content hash of the observation ids, in order."""
        h = hashlib.sha256()
        for i in self.ids:
            h.update(i.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()


@dataclass(frozen=True)
class GroundTruth:
    """True component values aligned with a dataset by id and event index."""

    routine: dict
    events: dict

    @classmethod
    def from_arrays(cls, ids, routine, events):
        return cls(dict(zip(ids, map(float, routine))),
                   {i: [float(v) for v in e] for i, e in zip(ids, events)})

    def routine_values(self, ds: Dataset) -> np.ndarray:
        return np.array([self.routine[i] for i in ds.ids])

    def event_values(self, ds: Dataset) -> np.ndarray:
        """Event values stacked in the same order as ``ds.events``."""
        out = []
        for o in ds:
            vals = self.events[o.id]
            if len(vals) != o.n_events:
                raise DataFormatError(f"ground truth for {o.id!r} has {len(vals)} events, "
                                      f"dataset has {o.n_events}")
            out.extend(vals)
        return np.array(out, dtype=float)

    def check_aligned(self, ds: Dataset) -> None:
        missing = [i for i in ds.ids if i not in self.routine or i not in self.events]
        if missing:
            raise DataFormatError(f"ground truth missing ids: {missing[:5]}")
        self.event_values(ds)


def validate(ds: Dataset) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    problems = []
    seen = set()
    for o in ds.observations:
        if o.id in seen:
            problems.append(f"duplicate id {o.id!r}")
        seen.add(o.id)
        if not math.isfinite(o.y):
            problems.append(f"record {o.id!r}: field 'y' is not finite ({o.y})")
        if o.routine_features.shape[0] != ds.d_routine:
            problems.append(f"record {o.id!r}: routine dimension "
                            f"{o.routine_features.shape[0]} != {ds.d_routine}")
        elif not np.all(np.isfinite(o.routine_features)):
            problems.append(f"record {o.id!r}: routine features not finite")
        if o.n_events:
            if o.event_features.shape[1] != ds.d_event:
                problems.append(f"record {o.id!r}: event dimension "
                                f"{o.event_features.shape[1]} != {ds.d_event}")
            elif not np.all(np.isfinite(o.event_features)):
                problems.append(f"record {o.id!r}: event features not finite")
    return problems


def check_dataset(ds: Dataset) -> Dataset:
    problems = validate(ds)
    if problems:
        raise DataFormatError("invalid dataset: " + "; ".join(problems[:10]))
    return ds


def _parse_record(rec, lineno):
    if not isinstance(rec, dict):
        raise DataFormatError(f"line {lineno}: expected a JSON object")
    for key in ("y", "routine", "events"):
        if key not in rec:
            raise DataFormatError(f"line {lineno}: missing field {key!r}")
    rid = str(rec.get("id", f"obs{lineno}"))
    events = rec["events"]
    if not isinstance(events, list) or any(not isinstance(e, list) for e in events):
        raise DataFormatError(f"line {lineno} (record {rid!r}): 'events' must be a list of lists")
    try:
        lengths = {len(e) for e in events}
        if len(lengths) > 1:
            raise DataFormatError(f"record {rid!r}: event vectors of unequal length")
        ev = np.array(events, dtype=float).reshape(len(events), lengths.pop() if lengths else 0)
        return Observation(rid, float(rec["y"]), np.array(rec["routine"], dtype=float), ev)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DataFormatError):
            raise
        raise DataFormatError(f"line {lineno} (record {rid!r}): {exc}") from exc


def read_jsonl(path) -> list[tuple[int, dict]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append((lineno, json.loads(line)))
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"line {lineno}: {exc.msg}") from exc
    return out


def load_dataset(path, format: str = "jsonl") -> Dataset:
    """Read and validate a JSON-lines dataset, preserving file order."""
    if format != "jsonl":
        raise ValueError(f"unsupported format {format!r}")
    obs = [_parse_record(rec, lineno) for lineno, rec in read_jsonl(path)]
    if not obs:
        raise DataFormatError(f"{path}: no records")
    ds = Dataset(obs)
    check_dataset(ds)
    return ds


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for o in ds:
            fh.write(json.dumps(o.to_record()) + "\n")


def save_ground_truth(gt: GroundTruth, ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in ds.ids:
            fh.write(json.dumps({"id": i, "routine": gt.routine[i], "events": gt.events[i]}) + "\n")


def load_ground_truth(path) -> GroundTruth:
    routine, events = {}, {}
    for lineno, rec in read_jsonl(path):
        try:
            routine[str(rec["id"])] = float(rec["routine"])
            events[str(rec["id"])] = [float(v) for v in rec["events"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"line {lineno}: {exc}") from exc
    return GroundTruth(routine, events)


def as_dataset(X) -> Dataset:
    """Coerce estimator input (Dataset, list of Observation, path) to a Dataset."""
    if isinstance(X, Dataset):
        return X
    if isinstance(X, (str, Path)):
        return load_dataset(X)
    X = list(X)
    if X and not all(isinstance(o, Observation) for o in X):
        raise TypeError("expected a Dataset, a path, or a sequence of Observation")
    return Dataset(X)
