"""scikit-learn compatible estimators behind the binning, voting, swap and
trend-fitting steps.

These are plain ``BaseEstimator`` subclasses so they clone, pipeline and
grid-search like any other sklearn component. The functional API in
:mod:`perceptdiff.metrics`, :mod:`perceptdiff.teaming` and
:mod:`perceptdiff.stats` is built on top of them.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import KindMismatch


class DifficultyBinner(TransformerMixin, BaseEstimator):
    """Assign difficulty scores to bins.

    Parameters
    ----------
    strategy : {"uniform", "quantile", "levels", "edges"}, default="uniform"
        ``uniform`` splits ``value_range`` into ``n_bins`` equal half-open
        intervals with the last one closed. ``quantile`` places edges at the
        empirical quantiles seen in ``fit``. ``levels`` maps each score to the
        nearest of ``levels`` (discrete scores such as agreement j/k).
        ``edges`` uses ``edges`` verbatim.
    n_bins : int, default=10
    value_range : tuple of float, optional
        Range for ``uniform``; defaults to the fitted data's min and max.
    levels : array-like, optional
        Discrete values for ``levels``.
    edges : array-like, optional
        Increasing bin edges for ``edges``.
    atol : float, default=1e-9
        Matching tolerance for ``levels``.

    Attributes
    ----------
    bin_edges_ : ndarray of shape (n_bins + 1,)
        Present for every strategy except ``levels``.
    levels_ : ndarray of shape (n_bins,)
        Present for ``levels`` only.
    n_bins_ : int
    """

    def __init__(self, strategy="uniform", n_bins=10, value_range=None, levels=None,
                 edges=None, atol=1e-9):
        self.strategy = strategy
        self.n_bins = n_bins
        self.value_range = value_range
        self.levels = levels
        self.edges = edges
        self.atol = atol

    def fit(self, X, y=None):
        x = _as_scores(X)
        if self.strategy == "levels":
            if self.levels is None:
                raise ValueError("strategy='levels' needs levels")
            lv = np.asarray(self.levels, dtype=float)
            if lv.ndim != 1 or lv.size == 0 or np.any(np.diff(lv) <= 0):
                raise ValueError("levels must be a non-empty increasing sequence")
            self.levels_ = lv
            self.n_bins_ = lv.size
            return self
        if self.strategy == "uniform":
            if int(self.n_bins) < 1:
                raise ValueError("n_bins must be >= 1")
            lo, hi = self.value_range if self.value_range is not None else (x.min(), x.max())
            if not hi > lo:
                raise ValueError(f"empty range [{lo}, {hi}]")
            edges = np.linspace(lo, hi, int(self.n_bins) + 1)
        elif self.strategy == "quantile":
            if int(self.n_bins) < 1:
                raise ValueError("n_bins must be >= 1")
            edges = np.quantile(x, np.linspace(0.0, 1.0, int(self.n_bins) + 1))
            # tied quantiles collapse; keep distinct edges only
            edges = np.unique(edges)
            if edges.size < 2:
                edges = np.array([edges[0], edges[0]])
        elif self.strategy == "edges":
            if self.edges is None:
                raise ValueError("strategy='edges' needs edges")
            edges = np.asarray(self.edges, dtype=float)
            if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
                raise ValueError("edges must be an increasing sequence of length >= 2")
        else:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        self.bin_edges_ = np.asarray(edges, dtype=float)
        self.n_bins_ = self.bin_edges_.size - 1
        return self

    def transform(self, X):
        """Bin index per score; -1 for scores outside every bin."""
        check_is_fitted(self, "n_bins_")
        x = _as_scores(X)
        if self.strategy == "levels":
            dist = np.abs(x[:, None] - self.levels_[None, :])
            idx = np.argmin(dist, axis=1)
            idx[dist[np.arange(x.size), idx] > self.atol] = -1
            return idx
        edges = self.bin_edges_
        idx = np.searchsorted(edges, x, side="right") - 1
        # last bin is closed on the right
        idx[x == edges[-1]] = self.n_bins_ - 1
        idx[(x < edges[0]) | (x > edges[-1])] = -1
        return idx

    def bin_bounds(self):
        """(lo, hi) per bin; for levels both ends equal the level."""
        check_is_fitted(self, "n_bins_")
        if self.strategy == "levels":
            return [(float(v), float(v)) for v in self.levels_]
        e = self.bin_edges_
        return [(float(e[i]), float(e[i + 1])) for i in range(self.n_bins_)]


class MajorityVote(BaseEstimator):
    """Plurality vote over annotator columns.

    ``X`` has one row per sample and one column per annotator. With
    ``tie="first"`` a tie goes to the label of the left-most annotator whose
    label is among the tied ones; ``tie="random"`` draws uniformly among the
    tied labels with ``random_state``.
    """

    def __init__(self, n_classes=None, tie="first", random_state=0):
        self.n_classes = n_classes
        self.tie = tie
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.int64)
        self.n_classes_ = int(self.n_classes) if self.n_classes is not None else int(X.max()) + 1
        self.classes_ = np.arange(self.n_classes_)
        return self

    def predict(self, X):
        check_is_fitted(self, "n_classes_")
        X = check_array(X, dtype=np.int64)
        n, k = X.shape
        if k < 1:
            raise ValueError("need at least one annotator column")
        counts = np.zeros((n, self.n_classes_), dtype=np.int64)
        for j in range(k):
            counts[np.arange(n), X[:, j]] += 1
        top = counts.max(axis=1)
        tied = counts == top[:, None]
        if self.tie == "first":
            in_tie = tied[np.arange(n)[:, None], X]
            first = np.argmax(in_tie, axis=1)
            return X[np.arange(n), first]
        if self.tie == "random":
            from .synth import make_rng

            rng = make_rng(self.random_state, "majority-vote-tie")
            u = rng.random(n)
            n_tied = tied.sum(axis=1)
            pick = np.minimum((u * n_tied).astype(np.int64), n_tied - 1)
            # pick-th tied label in class-index order
            rank = np.cumsum(tied, axis=1) - 1
            hit = tied & (rank == pick[:, None])
            return np.argmax(hit, axis=1)
        raise ValueError(f"unknown tie rule {self.tie!r}")

    def fit_predict(self, X, y=None):
        return self.fit(X).predict(X)


class ConfidenceSwapClassifier(ClassifierMixin, BaseEstimator):
    """Keep a model's prediction unless its confidence is at most ``eta``,
    in which case the partner's label is used.

    ``X`` stacks the model's class-probability columns with one final column
    holding the partner's label: shape ``(n_samples, n_classes + 1)``.
    Probability columns must already be row-normalized.

    Parameters
    ----------
    eta : float or "auto", default=0.5
        Swap threshold in [0, 1]. ``"auto"`` picks the value from ``grid``
        with the best training accuracy (smallest eta on ties).
    grid : array-like, optional
        Candidate thresholds for ``eta="auto"``; default 0.0, 0.1, ..., 1.0.
    """

    def __init__(self, eta=0.5, grid=None):
        self.eta = eta
        self.grid = grid

    def _split(self, X):
        X = check_array(X, dtype=float)
        if X.shape[1] < 3:
            raise KindMismatch("need at least two probability columns plus a partner column")
        return X[:, :-1], X[:, -1].astype(np.int64)

    def fit(self, X, y):
        proba, partner = self._split(X)
        y = np.asarray(y, dtype=np.int64)
        self.n_classes_ = proba.shape[1]
        self.classes_ = np.arange(self.n_classes_)
        if isinstance(self.eta, str):
            if self.eta != "auto":
                raise ValueError(f"unknown eta {self.eta!r}")
            grid = np.round(np.linspace(0, 1, 11), 10) if self.grid is None else np.asarray(self.grid, float)
            accs = [np.mean(swap_predict(proba, partner, g)[0] == y) for g in grid]
            self.eta_ = float(grid[int(np.argmax(accs))])
        else:
            if not 0.0 <= float(self.eta) <= 1.0:
                raise ValueError("eta must lie in [0, 1]")
            self.eta_ = float(self.eta)
        return self

    def predict(self, X):
        check_is_fitted(self, "eta_")
        proba, partner = self._split(X)
        return swap_predict(proba, partner, self.eta_)[0]

    def swap_mask(self, X):
        check_is_fitted(self, "eta_")
        proba, partner = self._split(X)
        return swap_predict(proba, partner, self.eta_)[1]


def swap_predict(proba, partner, eta):
    conf = proba.max(axis=1)
    mask = conf <= eta
    return np.where(mask, partner, np.argmax(proba, axis=1)), mask


class LinearTrend(RegressorMixin, BaseEstimator):
    """Least-squares line ``y = intercept_ + coef_ * x`` with coefficient
    p-values (two-sided t-test, n - 2 degrees of freedom).

    After ``fit`` the full :class:`perceptdiff.stats.OlsFit` is kept in
    ``fit_``.
    """

    def fit(self, X, y):
        from .stats import ols_fit

        x = _as_scores(X)
        y = np.asarray(y, dtype=float).ravel()
        if x.shape != y.shape:
            raise ValueError("X and y lengths differ")
        self.fit_ = ols_fit(list(zip(x.tolist(), y.tolist())))
        self.coef_ = np.array([self.fit_.slope])
        self.intercept_ = self.fit_.intercept
        self.pvalues_ = np.array([self.fit_.intercept_p, self.fit_.slope_p], dtype=object)
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        return self.intercept_ + self.coef_[0] * _as_scores(X)


def _as_scores(X):
    x = np.asarray(X, dtype=float)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    if x.ndim != 1:
        raise ValueError("expected a 1-D array of scores or a single column")
    if x.size == 0:
        raise ValueError("no scores")
    if not np.all(np.isfinite(x)):
        raise ValueError("scores must be finite")
    return x
