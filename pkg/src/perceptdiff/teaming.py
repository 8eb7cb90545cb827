"""Post-hoc human-machine teaming.

Two composition modes:

* ``oracle``: a sample counts as correct when either party is correct
  (upper bound; the base prediction is kept when both are wrong).
* ``swap``: the base model keeps its prediction unless its confidence is at
  most ``eta``, in which case the partner's label is used.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .estimators import ConfidenceSwapClassifier, MajorityVote
from .exceptions import AnalysisError, KindMismatch, ZeroVariance
from .ingest import SOFT, AnnotationSet, EvalFrame, PredictionSet
from .stats import TTestResult, decide, paired_t_test

ORACLE = "oracle"
SWAP = "swap"
MODES = (ORACLE, SWAP)

DEFAULT_GRID = tuple(round(0.1 * i, 10) for i in range(11))
AGGRE_ID = "aggre"


@dataclass(frozen=True, eq=False)
class ComposedClassifier:
    base_id: str
    partner_id: str
    mode: str
    eta: Optional[float]
    predictions: np.ndarray
    swap_mask: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        return self.predictions

    @property
    def n_swapped(self) -> int:
        return int(self.swap_mask.sum())


@dataclass(frozen=True)
class TeamingCell:
    base_acc: float
    partner_acc: float
    teamed_acc: float

    @property
    def boost(self) -> float:
        return self.teamed_acc - self.base_acc


def majority_vote(humans: Sequence[AnnotationSet], tie: str = "first",
                  annotator_id: str = AGGRE_ID) -> AnnotationSet:
    """Plurality label per sample over aligned annotation sets.

    ``tie`` is ``"first"`` (label of the earliest annotator in list order
    among the tied labels) or ``"random:<seed>"``.
    """
    hs = list(humans)
    if len(hs) < 2:
        raise AnalysisError("majority vote needs at least 2 annotation sets")
    ids = hs[0].sample_ids
    if any(h.sample_ids != ids for h in hs[1:]):
        raise AnalysisError("annotation sets are not aligned")
    K = hs[0].n_classes
    if tie == "first":
        voter = MajorityVote(n_classes=K, tie="first")
    elif tie.startswith("random:"):
        voter = MajorityVote(n_classes=K, tie="random", random_state=int(tie.split(":", 1)[1]))
    else:
        raise ValueError(f"tie must be 'first' or 'random:<seed>', got {tie!r}")
    X = np.column_stack([h.labels for h in hs])
    return AnnotationSet(annotator_id, ids, voter.fit_predict(X), K)


def _set(item, frame):
    return frame.get(item) if isinstance(item, str) else item


def _acc(labels, frame):
    return float(np.mean(labels == frame.truth))


def oracle_team(base, partner, frame: EvalFrame):
    """Correct wherever either party is correct; returns (composed, cell)."""
    b, p = _set(base, frame), _set(partner, frame)
    b_right = b.labels == frame.truth
    use_partner = ~b_right & (p.labels == frame.truth)
    preds = np.where(use_partner, p.labels, b.labels)
    composed = ComposedClassifier(b.id, p.id, ORACLE, None, preds, use_partner)
    cell = TeamingCell(_acc(b.labels, frame), _acc(p.labels, frame), _acc(preds, frame))
    return composed, cell


def realistic_team(base, partner, eta: float, frame: EvalFrame):
    """Swap the base's prediction for the partner's where confidence <= eta."""
    b, p = _set(base, frame), _set(partner, frame)
    if getattr(b, "kind", None) != SOFT:
        raise KindMismatch(f"base {b.id} must carry probability vectors")
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    X = np.column_stack([b.probabilities, p.labels])
    clf = ConfidenceSwapClassifier(eta=eta).fit(X, frame.truth)
    preds = clf.predict(X)
    mask = clf.swap_mask(X)
    composed = ComposedClassifier(b.id, p.id, SWAP, float(eta), preds, mask)
    cell = TeamingCell(_acc(b.labels, frame), _acc(p.labels, frame), _acc(preds, frame))
    return composed, cell


def team(base, partner, frame: EvalFrame, mode: str = ORACLE, eta: Optional[float] = None):
    if mode == ORACLE:
        return oracle_team(base, partner, frame)
    if mode == SWAP:
        if eta is None:
            raise ValueError("swap mode needs eta")
        return realistic_team(base, partner, eta, frame)
    raise ValueError(f"mode must be one of {MODES}")


@dataclass
class EtaTest:
    eta: float
    mean_acc: float
    result: Optional[TTestResult]
    p: float
    retain: bool
    degenerate: bool


@dataclass
class ThresholdSelection:
    eta_star: float
    fallback: bool
    grid: list
    tests: list
    acc: np.ndarray
    best: np.ndarray
    base_ids: list

    def to_dict(self) -> dict:
        return {
            "eta_star": self.eta_star,
            "fallback": self.fallback,
            "grid": self.grid,
            "bases": self.base_ids,
            "best_acc": self.best.tolist(),
            "tests": [
                {"eta": t.eta, "mean_acc": t.mean_acc,
                 "statistic": None if t.result is None else t.result.statistic,
                 "df": None if t.result is None else t.result.df,
                 "p": t.p, "retain": t.retain, "degenerate": t.degenerate}
                for t in self.tests
            ],
        }


def swap_accuracy_table(bases, partner, frame: EvalFrame, grid) -> np.ndarray:
    """Teamed accuracy per (base, eta)."""
    p = _set(partner, frame)
    out = np.zeros((len(bases), len(grid)))
    for i, b in enumerate(bases):
        for j, eta in enumerate(grid):
            out[i, j] = realistic_team(b, p, eta, frame)[1].teamed_acc
    return out


def select_threshold(bases, partner, frame: EvalFrame, grid=DEFAULT_GRID,
                     alpha: float = 0.05) -> ThresholdSelection:
    """Smallest eta whose per-base accuracies are indistinguishable from each
    base's best accuracy over the grid (paired t-test, retain at ``alpha``).

    When every paired difference is exactly zero the test is degenerate and
    the null is retained. A constant nonzero difference rejects. If no eta
    is retained, the eta with the highest mean accuracy is returned with
    ``fallback=True``.
    """
    bs = [_set(b, frame) for b in bases]
    if len(bs) < 2:
        raise AnalysisError("threshold selection needs at least 2 base models")
    grid = [float(g) for g in grid]
    if not grid:
        raise AnalysisError("eta grid is empty")
    if any(not 0.0 <= g <= 1.0 for g in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise AnalysisError("eta grid must be strictly increasing within [0, 1]")
    acc = swap_accuracy_table(bs, partner, frame, grid)
    best = acc.max(axis=1)
    tests = []
    for j, eta in enumerate(grid):
        col = acc[:, j]
        diff = col - best
        try:
            res = paired_t_test(col, best)
            p, degenerate = res.p_two_sided, False
        except ZeroVariance:
            res, degenerate = None, True
            p = 1.0 if np.all(diff == 0.0) else 0.0
        retain = not decide(p, alpha).reject_null
        tests.append(EtaTest(eta, float(col.mean()), res, p, retain, degenerate))
    retained = [t.eta for t in tests if t.retain]
    if retained:
        eta_star, fallback = retained[0], False
    else:
        eta_star, fallback = grid[int(np.argmax(acc.mean(axis=0)))], True
    return ThresholdSelection(eta_star, fallback, grid, tests, acc, best, [b.id for b in bs])


@dataclass
class PairResult:
    base: str
    partner: str
    pool: str
    cell: TeamingCell
    n_swapped: int


def best_pair_search(frame: EvalFrame, base_pool, partner_pools: dict, mode: str = ORACLE,
                     eta: Optional[float] = None, extra_sets: Sequence = ()):
    """Best partner per (base, pool) by boost, plus the full permutation table.

    ``partner_pools`` maps a pool name to classifier ids or sets. Sets not in
    the frame (e.g. a majority-vote ``aggre``) are passed in ``extra_sets``
    or directly as pool members. Ties on boost go to the smallest partner id.
    Returns ``(best_rows, all_rows)``, both sorted by (base, pool, partner).
    """
    extra = {s.id: s for s in extra_sets}

    def lookup(item):
        if not isinstance(item, str):
            return item
        return extra[item] if item in extra else frame.get(item)

    bases = sorted((lookup(b) for b in base_pool), key=lambda s: s.id)
    if not bases:
        raise AnalysisError("base pool is empty")
    best_rows, all_rows = [], []
    for b in bases:
        for pool_name in sorted(partner_pools):
            members = sorted((lookup(p) for p in partner_pools[pool_name]), key=lambda s: s.id)
            members = [p for p in members if p.id != b.id]
            if not members:
                raise AnalysisError(f"pool {pool_name!r} is empty after excluding {b.id}")
            results = []
            for p in members:
                composed, cell = team(b, p, frame, mode, eta)
                r = PairResult(b.id, p.id, pool_name, cell, composed.n_swapped)
                results.append(r)
                all_rows.append(r)
            top = max(results, key=lambda r: r.cell.boost)
            best_rows.append(top)
    all_rows.sort(key=lambda r: (r.base, r.pool, r.partner))
    return best_rows, all_rows
