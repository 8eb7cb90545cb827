"""Parsing, validation and alignment of label, prediction and annotation files.

Everything downstream works on an :class:`EvalFrame`: clean labels plus any
number of machine prediction sets and human annotation sets, all indexed by
the same sorted tuple of sample ids. Arrays held by these containers are
made read-only at construction.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .exceptions import (
    ColumnMismatch,
    CoverageMismatch,
    DuplicateClass,
    DuplicateId,
    DuplicateSampleId,
    IngestError,
    LabelOutOfRange,
    MalformedValue,
    MissingSampleId,
    NegativeTime,
    PartialTimes,
    RowNotNormalized,
    TooFewClasses,
)

#: Maximum allowed deviation of a probability row sum from 1.
SIMPLEX_TOL = 1e-6

SOFT = "soft"
HARD = "hard"


def _frozen(arr):
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def _check_ids(sample_ids, path=None):
    seen = set()
    for i, sid in enumerate(sample_ids):
        if not isinstance(sid, str) or sid == "":
            raise MissingSampleId(f"empty sample id at position {i}", path=path)
        if sid in seen:
            raise DuplicateSampleId(f"sample id {sid!r} appears twice", path=path)
        seen.add(sid)


@dataclass(frozen=True)
class LabelSpace:
    """Ordered class names; class ``i`` is ``class_names[i]``."""

    class_names: tuple

    def __post_init__(self):
        names = tuple(str(n) for n in self.class_names)
        object.__setattr__(self, "class_names", names)
        if len(set(names)) != len(names):
            dup = next(n for n in names if names.count(n) > 1)
            raise DuplicateClass(f"class name {dup!r} repeated")
        if len(names) < 2:
            raise TooFewClasses(f"need at least 2 classes, got {len(names)}")

    @property
    def K(self) -> int:
        return len(self.class_names)

    def index(self, name: str) -> int:
        return self.class_names.index(name)


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """One classifier's outputs: probability rows (soft) or class indices (hard).

    Soft rows within ``SIMPLEX_TOL`` of the simplex are renormalized exactly
    so later code can rely on each row summing to one.
    """

    classifier_id: str
    sample_ids: tuple
    values: np.ndarray
    n_classes: int
    group: Optional[str] = None

    def __post_init__(self):
        ids = tuple(self.sample_ids)
        object.__setattr__(self, "sample_ids", ids)
        _check_ids(ids)
        vals = np.asarray(self.values)
        K = int(self.n_classes)
        if vals.ndim == 2:
            vals = vals.astype(float)
            if vals.shape != (len(ids), K):
                raise ColumnMismatch(
                    f"{self.classifier_id}: expected shape {(len(ids), K)}, got {vals.shape}"
                )
            vals = _normalize_rows(vals, self.classifier_id)
        elif vals.ndim == 1:
            if len(vals) != len(ids):
                raise ColumnMismatch(f"{self.classifier_id}: {len(vals)} labels for {len(ids)} ids")
            vals = _as_labels(vals, K, self.classifier_id)
        else:
            raise ColumnMismatch(f"{self.classifier_id}: values must be 1-D or 2-D")
        object.__setattr__(self, "values", _frozen(vals))

    @property
    def id(self) -> str:
        return self.classifier_id

    @property
    def kind(self) -> str:
        return SOFT if self.values.ndim == 2 else HARD

    @property
    def labels(self) -> np.ndarray:
        """Predicted class per sample; argmax ties go to the lowest index."""
        if self.kind == HARD:
            return self.values
        return np.argmax(self.values, axis=1)

    @property
    def probabilities(self) -> np.ndarray:
        if self.kind != SOFT:
            raise AttributeError(f"{self.classifier_id} holds hard labels only")
        return self.values

    def reindex(self, sample_ids: Sequence[str]) -> "PredictionSet":
        pos = {s: i for i, s in enumerate(self.sample_ids)}
        order = [pos[s] for s in sample_ids]
        return PredictionSet(self.classifier_id, tuple(sample_ids), self.values[order],
                             self.n_classes, self.group)

    def __len__(self):
        return len(self.sample_ids)


@dataclass(frozen=True, eq=False)
class AnnotationSet:
    """One human annotator's hard labels, optionally with seconds per sample."""

    annotator_id: str
    sample_ids: tuple
    labels: np.ndarray
    n_classes: int
    times: Optional[np.ndarray] = None

    def __post_init__(self):
        ids = tuple(self.sample_ids)
        object.__setattr__(self, "sample_ids", ids)
        _check_ids(ids)
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or len(labels) != len(ids):
            raise ColumnMismatch(f"{self.annotator_id}: {labels.shape} labels for {len(ids)} ids")
        object.__setattr__(self, "labels", _frozen(_as_labels(labels, self.n_classes, self.annotator_id)))
        if self.times is not None:
            times = np.asarray(self.times, dtype=float)
            if times.shape != (len(ids),):
                raise PartialTimes(f"{self.annotator_id}: times do not cover every sample")
            if not np.all(np.isfinite(times)):
                raise MalformedValue(f"{self.annotator_id}: non-finite annotation time")
            if np.any(times < 0):
                raise NegativeTime(f"{self.annotator_id}: negative annotation time")
            object.__setattr__(self, "times", _frozen(times))

    @property
    def id(self) -> str:
        return self.annotator_id

    kind = HARD

    def reindex(self, sample_ids: Sequence[str]) -> "AnnotationSet":
        pos = {s: i for i, s in enumerate(self.sample_ids)}
        order = [pos[s] for s in sample_ids]
        times = None if self.times is None else self.times[order]
        return AnnotationSet(self.annotator_id, tuple(sample_ids), self.labels[order],
                             self.n_classes, times)

    def __len__(self):
        return len(self.sample_ids)


LabelSet = Union[PredictionSet, AnnotationSet]


@dataclass(frozen=True, eq=False)
class EvalFrame:
    """Clean labels and every classifier, aligned on ``sample_ids``."""

    label_space: LabelSpace
    sample_ids: tuple
    truth: np.ndarray
    machines: tuple = ()
    humans: tuple = ()
    _index: dict = field(default_factory=dict, repr=False)

    @property
    def K(self) -> int:
        return self.label_space.K

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def machine_ids(self) -> list:
        return [m.classifier_id for m in self.machines]

    @property
    def human_ids(self) -> list:
        return [h.annotator_id for h in self.humans]

    def get(self, set_id: str) -> LabelSet:
        try:
            return self._index[set_id]
        except KeyError:
            raise KeyError(f"no classifier or annotator named {set_id!r}") from None

    def resolve(self, items: Iterable) -> list:
        """Map ids (or sets already in the frame) to the frame's own sets."""
        return [self.get(it) if isinstance(it, str) else self.get(it.id) for it in items]

    def correct(self, item) -> np.ndarray:
        s = self.get(item) if isinstance(item, str) else item
        return s.labels == self.truth


def build_frame(truth: Mapping[str, int], machines: Sequence[PredictionSet] = (),
                humans: Sequence[AnnotationSet] = (), label_space: LabelSpace = None) -> EvalFrame:
    """Align every set to the truth ids; any coverage gap is an error."""
    if label_space is None:
        raise IngestError("label_space is required")
    if not truth:
        raise IngestError("truth is empty")
    if not machines and not humans:
        raise IngestError("need at least one machine or human set")
    ids = tuple(sorted(truth))
    _check_ids(ids)
    truth_arr = _as_labels(np.array([truth[s] for s in ids]), label_space.K, "truth")

    seen = set()
    for s in list(machines) + list(humans):
        if s.id in seen:
            raise DuplicateId(f"id {s.id!r} used by more than one set")
        seen.add(s.id)
        if s.n_classes != label_space.K:
            raise ColumnMismatch(f"{s.id}: {s.n_classes} classes, label space has {label_space.K}")
        have = set(s.sample_ids)
        want = set(ids)
        if have != want:
            raise CoverageMismatch(s.id, missing=want - have, extra=have - want)

    ms = tuple(m.reindex(ids) for m in machines)
    hs = tuple(h.reindex(ids) for h in humans)
    index = {s.id: s for s in ms + hs}
    return EvalFrame(label_space, ids, _frozen(truth_arr), ms, hs, index)


# ---------------------------------------------------------------------------
# file parsing


def parse_label_space(path) -> LabelSpace:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IngestError(f"cannot read class list: {exc}", path=path) from exc
    names = [ln.strip() for ln in lines if ln.strip()]
    seen = set()
    for i, n in enumerate(names):
        if n in seen:
            raise DuplicateClass(f"class name {n!r} repeated", path=path, row=i + 1)
        seen.add(n)
    if len(names) < 2:
        raise TooFewClasses(f"need at least 2 classes, got {len(names)}", path=path)
    return LabelSpace(tuple(names))


def _read_csv(path):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IngestError(f"cannot read file: {exc}", path=path) from exc
    if not rows:
        raise ColumnMismatch("missing header", path=path, row=1)
    header = [h.strip() for h in rows[0]]
    body = [(i + 2, r) for i, r in enumerate(rows[1:]) if any(c.strip() for c in r)]
    return header, body


def _collect_id(sid, seen, path, rownum):
    sid = sid.strip()
    if not sid:
        raise MissingSampleId("empty sample id", path=path, row=rownum)
    if sid in seen:
        raise DuplicateSampleId(f"sample id {sid!r} repeated", path=path, row=rownum)
    seen.add(sid)
    return sid


def _parse_label(text, K, path, rownum):
    try:
        lab = int(text.strip())
    except ValueError:
        raise MalformedValue(f"label {text!r} is not an integer", path=path, row=rownum) from None
    if not 0 <= lab < K:
        raise LabelOutOfRange(f"label {lab} outside [0, {K})", path=path, row=rownum)
    return lab


def _parse_float(text, path, rownum):
    try:
        val = float(text.strip())
    except ValueError:
        raise MalformedValue(f"value {text!r} is not a number", path=path, row=rownum) from None
    if not np.isfinite(val):
        raise MalformedValue(f"value {text!r} is not finite", path=path, row=rownum)
    return val


def _check_width(row, width, path, rownum):
    if len(row) != width:
        raise ColumnMismatch(f"expected {width} columns, found {len(row)}", path=path, row=rownum)


def parse_truth(path, label_space: LabelSpace) -> dict:
    header, body = _read_csv(path)
    if header != ["sample_id", "label"]:
        raise ColumnMismatch(f"truth header must be sample_id,label, got {','.join(header)}",
                             path=path, row=1)
    seen = set()
    out = {}
    for rownum, row in body:
        _check_width(row, 2, path, rownum)
        sid = _collect_id(row[0], seen, path, rownum)
        out[sid] = _parse_label(row[1], label_space.K, path, rownum)
    if not out:
        raise IngestError("truth file has no rows", path=path)
    return out


def _id_from_path(path, prefix):
    stem = os.path.splitext(os.path.basename(str(path)))[0]
    return stem[len(prefix):] if stem.startswith(prefix) else stem


def parse_predictions(path, label_space: LabelSpace, classifier_id: str = None,
                      group: str = None) -> PredictionSet:
    """Read ``sample_id,p_0..p_{K-1}`` (soft) or ``sample_id,label`` (hard)."""
    K = label_space.K
    header, body = _read_csv(path)
    cid = classifier_id or _id_from_path(path, "predictions_")
    soft_header = ["sample_id"] + [f"p_{i}" for i in range(K)]
    if header == soft_header:
        seen, ids, rows = set(), [], []
        for rownum, row in body:
            _check_width(row, K + 1, path, rownum)
            ids.append(_collect_id(row[0], seen, path, rownum))
            vec = [_parse_float(c, path, rownum) for c in row[1:]]
            if any(v < 0 or v > 1 for v in vec):
                raise RowNotNormalized("probability outside [0, 1]", path=path, row=rownum)
            total = sum(vec)
            if abs(total - 1.0) > SIMPLEX_TOL:
                raise RowNotNormalized(f"row sums to {total!r}", path=path, row=rownum)
            rows.append(vec)
        values = np.array(rows, dtype=float).reshape(len(ids), K)
    elif header == ["sample_id", "label"]:
        seen, ids, labs = set(), [], []
        for rownum, row in body:
            _check_width(row, 2, path, rownum)
            ids.append(_collect_id(row[0], seen, path, rownum))
            labs.append(_parse_label(row[1], K, path, rownum))
        values = np.array(labs, dtype=np.int64)
    else:
        raise ColumnMismatch(
            f"header {','.join(header)!r} is neither sample_id,label nor sample_id,p_0..p_{K - 1}",
            path=path, row=1)
    if not ids:
        raise IngestError("prediction file has no rows", path=path)
    return PredictionSet(cid, tuple(ids), values, K, group)


def parse_annotations(path, label_space: LabelSpace, annotator_id: str = None) -> AnnotationSet:
    """Read ``sample_id,label[,time_seconds]``."""
    K = label_space.K
    header, body = _read_csv(path)
    aid = annotator_id or _id_from_path(path, "annotations_")
    if header == ["sample_id", "label"]:
        has_time = False
    elif header == ["sample_id", "label", "time_seconds"]:
        has_time = True
    else:
        raise ColumnMismatch(f"annotation header {','.join(header)!r} not recognised",
                             path=path, row=1)
    seen, ids, labs, times = set(), [], [], []
    for rownum, row in body:
        if has_time and len(row) == 2:
            raise PartialTimes("time_seconds missing", path=path, row=rownum)
        _check_width(row, 3 if has_time else 2, path, rownum)
        ids.append(_collect_id(row[0], seen, path, rownum))
        labs.append(_parse_label(row[1], K, path, rownum))
        if has_time:
            if not row[2].strip():
                raise PartialTimes("time_seconds missing", path=path, row=rownum)
            t = _parse_float(row[2], path, rownum)
            if t < 0:
                raise NegativeTime(f"time {t!r} is negative", path=path, row=rownum)
            times.append(t)
    if not ids:
        raise IngestError("annotation file has no rows", path=path)
    return AnnotationSet(aid, tuple(ids), np.array(labs, dtype=np.int64), K,
                         np.array(times) if has_time else None)


# ---------------------------------------------------------------------------
# serialization


def fmt_float(x: float) -> str:
    """17 significant digits: enough to round-trip any double."""
    return format(float(x), ".17g")


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def format_label_space(label_space: LabelSpace) -> str:
    return "".join(n + "\n" for n in label_space.class_names)


def format_truth(truth: Mapping[str, int]) -> str:
    return _csv_text(["sample_id", "label"], [[s, int(truth[s])] for s in sorted(truth)])


def format_predictions(pred: PredictionSet) -> str:
    order = sorted(range(len(pred)), key=lambda i: pred.sample_ids[i])
    if pred.kind == SOFT:
        header = ["sample_id"] + [f"p_{i}" for i in range(pred.n_classes)]
        rows = [[pred.sample_ids[i]] + [fmt_float(v) for v in pred.values[i]] for i in order]
    else:
        header = ["sample_id", "label"]
        rows = [[pred.sample_ids[i], int(pred.values[i])] for i in order]
    return _csv_text(header, rows)


def format_annotations(ann: AnnotationSet) -> str:
    order = sorted(range(len(ann)), key=lambda i: ann.sample_ids[i])
    if ann.times is None:
        return _csv_text(["sample_id", "label"],
                         [[ann.sample_ids[i], int(ann.labels[i])] for i in order])
    return _csv_text(["sample_id", "label", "time_seconds"],
                     [[ann.sample_ids[i], int(ann.labels[i]), fmt_float(ann.times[i])]
                      for i in order])


# ---------------------------------------------------------------------------
# helpers


def _normalize_rows(vals, name):
    if np.any(~np.isfinite(vals)) or np.any(vals < 0) or np.any(vals > 1):
        raise RowNotNormalized(f"{name}: probability outside [0, 1]")
    sums = vals.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > SIMPLEX_TOL)
    if bad.size:
        raise RowNotNormalized(f"{name}: row {int(bad[0])} sums to {sums[bad[0]]!r}")
    return vals / sums[:, None]


def _as_labels(vals, K, name):
    vals = np.asarray(vals)
    if vals.size and not np.issubdtype(vals.dtype, np.integer):
        if not np.all(np.equal(np.mod(vals, 1), 0)):
            raise MalformedValue(f"{name}: labels must be integers")
    vals = vals.astype(np.int64)
    if vals.size and (vals.min() < 0 or vals.max() >= K):
        raise LabelOutOfRange(f"{name}: labels must lie in [0, {K})")
    return vals
