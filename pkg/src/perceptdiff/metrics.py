"""Perceptual-difference metrics over an :class:`~perceptdiff.ingest.EvalFrame`.

All per-sample outputs are numpy arrays aligned with ``frame.sample_ids``.
Classifier arguments accept either set objects or their ids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .estimators import DifficultyBinner
from .exceptions import (
    AnalysisError,
    CannotBalance,
    DegenerateConditioning,
    EmptySelection,
    KindMismatch,
    MissingTimes,
)
from .ingest import SOFT, AnnotationSet, EvalFrame, PredictionSet

MACHINE_CONFIDENCE = "machine_confidence"
MACHINE_AGREEMENT = "machine_agreement"
HUMAN_AGREEMENT = "human_agreement"
HUMAN_ENTROPY = "human_entropy"
ANNOTATION_TIME = "annotation_time"

#: Metrics for which a larger score means an easier sample.
HIGHER_IS_EASIER = {MACHINE_CONFIDENCE: True, MACHINE_AGREEMENT: True, HUMAN_AGREEMENT: True,
                    HUMAN_ENTROPY: False, ANNOTATION_TIME: False}

ERROR_FILTERS = ("both", "row", "either")


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Row-normalized confusion with the raw integer counts kept alongside.

    Rows with no samples are all-zero in ``cells`` and flagged in
    ``empty_rows`` instead of holding NaN.
    """

    counts: np.ndarray
    cells: np.ndarray
    empty_rows: np.ndarray

    @classmethod
    def from_counts(cls, counts) -> "ConfusionMatrix":
        counts = np.asarray(counts, dtype=np.int64)
        totals = counts.sum(axis=1)
        empty = totals == 0
        cells = np.zeros(counts.shape, dtype=float)
        cells[~empty] = counts[~empty] / totals[~empty, None]
        for a in (counts, cells, empty):
            a.setflags(write=False)
        return cls(counts, cells, empty)

    @property
    def K(self) -> int:
        return self.counts.shape[0]

    @property
    def n_samples(self) -> int:
        return int(self.counts.sum())

    @property
    def row_counts(self) -> np.ndarray:
        return self.counts.sum(axis=1)


@dataclass(frozen=True, eq=False)
class Correctness:
    classifier_id: str
    sample_ids: tuple
    bits: np.ndarray

    def as_dict(self) -> dict:
        return dict(zip(self.sample_ids, self.bits.tolist()))


@dataclass(frozen=True, eq=False)
class DifficultyScore:
    """Per-sample difficulty values plus the bin spec used for stratifying.

    ``group_size`` is set for agreement scores (values are j / group_size).
    """

    metric: str
    values: np.ndarray
    bins: dict = field(default_factory=dict)
    group_size: Optional[int] = None
    source: tuple = ()

    @property
    def higher_is_easier(self) -> bool:
        return HIGHER_IS_EASIER.get(self.metric, True)


@dataclass
class StratifiedAccuracy:
    """Accuracy per difficulty bin for a list of classifiers.

    ``per_classifier[id][b]`` and the entries of ``bands[group][b]`` are None
    when bin ``b`` holds no samples.
    """

    metric: str
    bins: list
    per_classifier: dict
    bands: dict

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "bins": self.bins,
            "per_classifier": self.per_classifier,
            "bands": self.bands,
        }


def _labels(item, frame: EvalFrame):
    if isinstance(item, np.ndarray):
        return item
    if isinstance(item, str):
        item = frame.get(item)
    return item.labels


def _soft(item, frame) -> PredictionSet:
    s = frame.get(item) if isinstance(item, str) else item
    if getattr(s, "kind", None) != SOFT:
        raise KindMismatch(f"{s.id} must carry probability vectors")
    return s


def correctness(item, frame: EvalFrame) -> Correctness:
    s = frame.get(item) if isinstance(item, str) else item
    bits = s.labels == frame.truth
    bits.setflags(write=False)
    return Correctness(s.id, frame.sample_ids, bits)


def accuracy(item, frame: EvalFrame) -> float:
    """Fraction of samples whose prediction matches the clean label."""
    return float(np.mean(_labels(item, frame) == frame.truth))


def _as_mask(filter, frame):
    if filter is None:
        return np.ones(frame.n_samples, dtype=bool)
    if callable(filter):
        mask = np.array([bool(filter(s)) for s in frame.sample_ids])
    else:
        mask = np.asarray(filter)
        if mask.dtype != bool:
            wanted = set(mask.tolist())
            mask = np.array([s in wanted for s in frame.sample_ids])
    if mask.shape != (frame.n_samples,):
        raise ValueError("filter mask does not match the frame")
    return mask


def confusion(preds, frame: EvalFrame, reference=None,
              filter: Union[None, np.ndarray, Callable, Sequence[str]] = None) -> ConfusionMatrix:
    """``counts[p, q]`` = #samples with reference label p and prediction q.

    ``reference`` defaults to the clean labels; pass another set to compare
    two classifiers directly. ``filter`` is a boolean mask, a predicate on
    sample ids, or an iterable of ids to keep.
    """
    pred = _labels(preds, frame)
    ref = frame.truth if reference is None else _labels(reference, frame)
    mask = _as_mask(filter, frame)
    if not mask.any():
        raise EmptySelection("filter selects no samples")
    K = frame.K
    counts = np.bincount(ref[mask] * K + pred[mask], minlength=K * K).reshape(K, K)
    return ConfusionMatrix.from_counts(counts)


def _pair_mask(ca, cb, error_filter):
    if error_filter == "both":
        return ~ca & ~cb
    if error_filter == "row":
        return ~ca
    if error_filter == "either":
        return ~ca | ~cb
    raise ValueError(f"error_filter must be one of {ERROR_FILTERS}")


def pair_error_counts(a, b, frame: EvalFrame, error_filter: str = "both") -> np.ndarray:
    """Counts of (a's label, b's label) over the samples picked by ``error_filter``."""
    la, lb = _labels(a, frame), _labels(b, frame)
    mask = _pair_mask(la == frame.truth, lb == frame.truth, error_filter)
    K = frame.K
    return np.bincount(la[mask] * K + lb[mask], minlength=K * K).reshape(K, K)


def error_pairs(group_a, group_b, frame: EvalFrame) -> list:
    """Ordered (a, b) pairs with a from A, b from B, never pairing a set with itself."""
    A, B = frame.resolve(group_a), frame.resolve(group_b)
    if not A or not B:
        raise AnalysisError("both groups must be nonempty")
    return [(a, b) for a in A for b in B if a.id != b.id]


def group_error_confusion(group_a, group_b, frame: EvalFrame,
                          error_filter: str = "both") -> ConfusionMatrix:
    """Aggregated mistake confusion between two groups of classifiers.

    Integer counts are summed over every ordered pair first and normalized
    once at the end. Rows index the A member's label, columns the B member's.
    """
    pairs = error_pairs(group_a, group_b, frame)
    if not pairs:
        raise EmptySelection("no pairs of distinct classifiers")
    total = np.zeros((frame.K, frame.K), dtype=np.int64)
    for a, b in pairs:
        total += pair_error_counts(a, b, frame, error_filter)
    if total.sum() == 0:
        raise EmptySelection("no sample selected by the error filter for any pair")
    return ConfusionMatrix.from_counts(total)


def pairwise_error_confusions(group_a, group_b, frame: EvalFrame,
                              error_filter: str = "both") -> list:
    """One mistake confusion per ordered pair, skipping pairs with no selected samples."""
    out = []
    for a, b in error_pairs(group_a, group_b, frame):
        counts = pair_error_counts(a, b, frame, error_filter)
        if counts.sum():
            out.append(ConfusionMatrix.from_counts(counts))
    return out


def _one_hot_mean(humans, frame):
    hs = frame.resolve(humans)
    if not hs:
        raise AnalysisError("need at least one human annotation set")
    K, n = frame.K, frame.n_samples
    counts = np.zeros((n, K), dtype=np.int64)
    for h in hs:
        counts[np.arange(n), h.labels] += 1
    return counts, len(hs)


def sample_distribution_diff(machine, humans, frame: EvalFrame, norm: str = "l1"):
    """Distance between a model's probability vector and the human vote share.

    Returns ``(values, mean)`` where ``values`` is aligned with the frame's
    sample ids. With the L1 norm every value lies in [0, 2].
    """
    m = _soft(machine, frame)
    counts, k = _one_hot_mean(humans, frame)
    diff = m.probabilities - counts / k
    if norm == "l1":
        sd = np.minimum(np.abs(diff).sum(axis=1), 2.0)  # rounding guard
    elif norm == "l2":
        sd = np.minimum(np.sqrt((diff ** 2).sum(axis=1)), math.sqrt(2.0))
    else:
        raise ValueError("norm must be 'l1' or 'l2'")
    return sd, float(np.mean(sd))


def default_bins(metric: str, K: int, group_size: Optional[int] = None) -> dict:
    """Default bin spec per metric (see :class:`DifficultyBinner`)."""
    if metric == MACHINE_CONFIDENCE:
        return {"strategy": "uniform", "n_bins": 10, "value_range": (0.0, 1.0)}
    if metric in (MACHINE_AGREEMENT, HUMAN_AGREEMENT):
        return {"strategy": "levels", "levels": [j / group_size for j in range(group_size + 1)]}
    if metric == HUMAN_ENTROPY:
        return {"strategy": "uniform", "n_bins": 10, "value_range": (0.0, math.log(K))}
    if metric == ANNOTATION_TIME:
        return {"strategy": "quantile", "n_bins": 10}
    raise ValueError(f"unknown metric {metric!r}")


def _score(metric, values, K, group_size=None, source=()):
    values = np.asarray(values, dtype=float)
    values.setflags(write=False)
    return DifficultyScore(metric, values, default_bins(metric, K, group_size), group_size,
                           tuple(source))


def machine_confidence(machine, frame: EvalFrame) -> DifficultyScore:
    """Largest class probability per sample."""
    m = _soft(machine, frame)
    return _score(MACHINE_CONFIDENCE, m.probabilities.max(axis=1), frame.K, source=(m.id,))


def agreement(group, frame: EvalFrame, exclude: Optional[str] = None,
              metric: Optional[str] = None) -> DifficultyScore:
    """Share of group members (minus ``exclude``) that get each sample right."""
    members = [s for s in frame.resolve(group) if s.id != exclude]
    if not members:
        raise AnalysisError("agreement group is empty after exclusion")
    hits = np.zeros(frame.n_samples, dtype=np.int64)
    for s in members:
        hits += s.labels == frame.truth
    k = len(members)
    if metric is None:
        metric = HUMAN_AGREEMENT if all(isinstance(s, AnnotationSet) for s in members) \
            else MACHINE_AGREEMENT
    return _score(metric, hits / k, frame.K, k, [s.id for s in members])


def human_entropy(humans, frame: EvalFrame) -> DifficultyScore:
    """Natural-log entropy of the annotators' empirical label distribution."""
    counts, k = _one_hot_mean(humans, frame)
    p = counts / k
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(counts > 0, -p * np.log(np.where(counts > 0, p, 1.0)), 0.0)
    h = np.clip(terms.sum(axis=1), 0.0, math.log(frame.K))  # rounding guard
    return _score(HUMAN_ENTROPY, h, frame.K, source=[s.id for s in frame.resolve(humans)])


def mean_time(humans, frame: EvalFrame) -> DifficultyScore:
    hs = frame.resolve(humans)
    if not hs:
        raise AnalysisError("need at least one human annotation set")
    lacking = [h.id for h in hs if getattr(h, "times", None) is None]
    if lacking:
        raise MissingTimes(f"no annotation times for {', '.join(lacking)}")
    t = np.mean([h.times for h in hs], axis=0)
    return _score(ANNOTATION_TIME, t, frame.K, source=[h.id for h in hs])


def stratify(classifiers, difficulty: DifficultyScore, frame: EvalFrame,
             bins: Optional[dict] = None, groups: Optional[dict] = None) -> StratifiedAccuracy:
    """Accuracy of each classifier within each difficulty bin.

    ``bins`` is a :class:`DifficultyBinner` parameter dict and defaults to
    ``difficulty.bins``. ``groups`` maps a band name to classifier ids; the
    default is a single band ``"all"`` over ``classifiers``. Samples outside
    every bin are ignored.
    """
    sets = frame.resolve(classifiers)
    if difficulty.values.shape != (frame.n_samples,):
        raise ValueError("difficulty score does not cover the frame")
    spec = dict(bins if bins is not None else difficulty.bins)
    try:
        binner = DifficultyBinner(**spec).fit(difficulty.values)
    except (TypeError, ValueError) as exc:
        raise AnalysisError(f"malformed bin spec {spec!r}: {exc}") from None
    idx = binner.transform(difficulty.values)
    nb = binner.n_bins_
    n_in = np.bincount(idx[idx >= 0], minlength=nb)
    bin_rows = [{"lo": lo, "hi": hi, "n_samples": int(c)}
                for (lo, hi), c in zip(binner.bin_bounds(), n_in)]

    per = {}
    for s in sets:
        right = np.bincount(idx[idx >= 0], weights=(s.labels == frame.truth)[idx >= 0],
                            minlength=nb)
        per[s.id] = [None if n_in[b] == 0 else float(right[b] / n_in[b]) for b in range(nb)]

    if groups is None:
        groups = {"all": [s.id for s in sets]}
    bands = {}
    for name, ids in groups.items():
        rows = []
        for b in range(nb):
            vals = [per[i][b] for i in ids if i in per and per[i][b] is not None]
            if not vals:
                rows.append(None)
            else:
                rows.append({"min": min(vals), "mean": float(np.mean(vals)), "max": max(vals)})
        bands[name] = rows
    return StratifiedAccuracy(difficulty.metric, bin_rows, per, bands)


def stratified_points(strat: StratifiedAccuracy, ids=None, use_bin_means: bool = False):
    """(bin position, accuracy) pairs for trend fitting.

    Bin position is the level for discrete bins and the midpoint otherwise.
    By default every (classifier, nonempty bin) is one point; with
    ``use_bin_means`` the band mean over ``ids`` is one point per bin.
    """
    ids = list(strat.per_classifier) if ids is None else list(ids)
    xs = [(b["lo"] + b["hi"]) / 2.0 for b in strat.bins]
    pts = []
    if use_bin_means:
        for i, x in enumerate(xs):
            vals = [strat.per_classifier[c][i] for c in ids if strat.per_classifier[c][i] is not None]
            if vals:
                pts.append((x, float(np.mean(vals))))
        return pts
    for c in ids:
        for i, x in enumerate(xs):
            v = strat.per_classifier[c][i]
            if v is not None:
                pts.append((x, v))
    return pts


def balanced_subset(reference: Correctness, frame: EvalFrame, seed: int) -> list:
    """Equal numbers of ``reference``-correct and -incorrect sample ids.

    ``m = min(#correct, #incorrect)`` ids are drawn from each side without
    replacement using a PCG64 stream keyed on ``seed`` and the reference
    classifier id. Output is sorted.
    """
    from .synth import make_rng

    bits = np.asarray(reference.bits, dtype=bool)
    right = np.flatnonzero(bits)
    wrong = np.flatnonzero(~bits)
    if right.size == 0 or wrong.size == 0:
        raise CannotBalance(f"{reference.classifier_id} is all-correct or all-incorrect")
    m = min(right.size, wrong.size)
    rng = make_rng(seed, "balanced", reference.classifier_id)
    keys = rng.random(right.size + wrong.size)
    # lowest-m random keys per side: uniform sampling without replacement
    pick_r = right[np.argsort(keys[:right.size], kind="stable")[:m]]
    pick_w = wrong[np.argsort(keys[right.size:], kind="stable")[:m]]
    ids = reference.sample_ids
    return sorted(ids[i] for i in np.concatenate([pick_r, pick_w]))


def matching_percentage(a: Correctness, b: Correctness, subset: Sequence[str]) -> float:
    """Mean of P(a right | b right) and P(a wrong | b wrong) on ``subset``."""
    if not len(subset):
        raise DegenerateConditioning("empty subset")
    da, db = a.as_dict(), b.as_dict()
    try:
        ab = [(da[s], db[s]) for s in subset]
    except KeyError as exc:
        raise AnalysisError(f"sample {exc.args[0]!r} missing from correctness map") from None
    b_right = [x for x, y in ab if y]
    b_wrong = [x for x, y in ab if not y]
    if not b_right or not b_wrong:
        raise DegenerateConditioning(f"{b.classifier_id} is constant on the subset")
    p_right = sum(b_right) / len(b_right)
    p_wrong = sum(1 for x in b_wrong if not x) / len(b_wrong)
    return (p_right + p_wrong) / 2.0


QUADRANTS = ("easy_easy", "easy_hard", "hard_easy", "hard_hard")


def quadrant_confusions(machine_diff: DifficultyScore, human_diff: DifficultyScore,
                        thresholds, classifier, frame: EvalFrame) -> dict:
    """Confusion of ``classifier`` vs clean labels inside each difficulty quadrant.

    A sample is easy for a score when it lies on the easy side of its
    threshold: ``>=`` for scores where higher is easier (confidence,
    agreement), ``<`` for the others (entropy, time). Keys name the machine
    side first. Empty quadrants map to ``{"n_samples": 0, "confusion": None}``.
    """
    th_m, th_h = thresholds
    for d in (machine_diff, human_diff):
        if d.values.shape != (frame.n_samples,):
            raise ValueError("difficulty score does not cover the frame")

    def easy(d, th):
        return d.values >= th if d.higher_is_easier else d.values < th

    em, eh = easy(machine_diff, th_m), easy(human_diff, th_h)
    masks = {"easy_easy": em & eh, "easy_hard": em & ~eh,
             "hard_easy": ~em & eh, "hard_hard": ~em & ~eh}
    out = {}
    for name in QUADRANTS:
        mask = masks[name]
        n = int(mask.sum())
        out[name] = {"n_samples": n,
                     "confusion": confusion(classifier, frame, filter=mask) if n else None}
    return out
