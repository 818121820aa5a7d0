"""Sparse longitudinal observations grouped by subject.

Data are per-subject irregular (time, value) pairs. Subjects keep their input
order, observations are sorted by time within subject, and the raw time range
is retained so results can be reported in the original units after the times
have been mapped onto [0, 1].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SubjectRecord",
    "SparseFunctionalDataset",
    "load_csv",
    "from_rows",
    "rescale_time",
]

CSV_HEADER = ["subject_id", "time", "value"]


@dataclass
class SubjectRecord:
    """One subject's observations, sorted by time on construction."""

    id: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        v = np.asarray(self.values, dtype=float).ravel()
        if t.size != v.size:
            raise ValueError(
                f"subject {self.id!r}: {t.size} times but {v.size} values"
            )
        if t.size == 0:
            raise ValueError(f"subject {self.id!r} has no observations")
        order = np.argsort(t, kind="stable")  # ties keep input order
        self.times = t[order]
        self.values = v[order]

    @property
    def m(self) -> int:
        return self.times.size


@dataclass
class SparseFunctionalDataset:
    """Subjects in stable input order, plus the raw input time range.

    `time_domain` is the (t_min, t_max) of the data before any rescaling and
    is what maps normalized times back to original units.
    """

    subjects: list
    time_domain: tuple

    def __post_init__(self):
        if not self.subjects:
            raise ValueError("dataset has no subjects")

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def counts(self) -> np.ndarray:
        return np.array([s.m for s in self.subjects])

    def all_times(self) -> np.ndarray:
        return np.concatenate([s.times for s in self.subjects])

    def all_values(self) -> np.ndarray:
        return np.concatenate([s.values for s in self.subjects])

    def subject(self, subject_id: str) -> SubjectRecord:
        for s in self.subjects:
            if s.id == subject_id:
                return s
        raise KeyError(f"no subject with id {subject_id!r}")

    def to_unit(self, t):
        """Map original-unit times onto [0, 1] using the stored domain."""
        lo, hi = self.time_domain
        t = np.asarray(t, dtype=float)
        if hi == lo:
            return np.zeros_like(t)
        return (t - lo) / (hi - lo)

    def to_original(self, t):
        """Inverse of `to_unit`."""
        lo, hi = self.time_domain
        return lo + np.asarray(t, dtype=float) * (hi - lo)


def _build(records) -> SparseFunctionalDataset:
    t_all = np.concatenate([r.times for r in records])
    return SparseFunctionalDataset(
        subjects=list(records), time_domain=(float(t_all.min()), float(t_all.max()))
    )


def from_rows(rows) -> SparseFunctionalDataset:
    """Group (subject_id, time, value) triples into a dataset.

    Subjects appear in first-appearance order; duplicate (subject, time)
    pairs are retained.
    """
    groups: dict = {}
    order: list = []
    for sid, t, v in rows:
        sid = str(sid)
        if sid not in groups:
            groups[sid] = ([], [])
            order.append(sid)
        groups[sid][0].append(float(t))
        groups[sid][1].append(float(v))
    if not order:
        raise ValueError("no observation rows")
    return _build([SubjectRecord(id=sid, times=groups[sid][0], values=groups[sid][1]) for sid in order])


def load_csv(path) -> SparseFunctionalDataset:
    """Read a `subject_id,time,value` CSV into a dataset.

    Rows are grouped by subject in first-appearance order and sorted by time
    within subject. Malformed rows raise with the offending file row number
    (the header is row 1).
    """
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: file is empty")
        if [h.strip() for h in header] != CSV_HEADER:
            raise ValueError(
                f"{path}: expected header {','.join(CSV_HEADER)}, got {','.join(header)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}: row {lineno}: expected 3 fields, got {len(row)}")
            sid = row[0].strip()
            if not sid:
                raise ValueError(f"{path}: row {lineno}: empty subject_id")
            try:
                t = float(row[1])
                v = float(row[2])
            except ValueError:
                raise ValueError(f"{path}: row {lineno}: non-numeric time or value") from None
            if not (math.isfinite(t) and math.isfinite(v)):
                raise ValueError(f"{path}: row {lineno}: non-finite time or value")
            rows.append((sid, t, v))
    if not rows:
        raise ValueError(f"{path}: no observation rows")
    return from_rows(rows)


def rescale_time(ds: SparseFunctionalDataset) -> SparseFunctionalDataset:
    """Map all times affinely onto [0, 1].

    The original (t_min, t_max) is stored on the result for inverse mapping.
    A dataset already spanning exactly [0, 1] is returned unchanged, which
    makes the operation idempotent.
    """
    t = ds.all_times()
    lo, hi = float(t.min()), float(t.max())
    if hi == lo:
        raise ValueError("all observation times are identical; the time domain is degenerate")
    if lo == 0.0 and hi == 1.0:
        return ds
    scaled = [
        SubjectRecord(id=s.id, times=(s.times - lo) / (hi - lo), values=s.values.copy())
        for s in ds.subjects
    ]
    return SparseFunctionalDataset(subjects=scaled, time_domain=(lo, hi))
