"""Student-t distribution, paired t-tests, simple OLS and the confusion-matrix
diagonal/off-diagonal comparison.

The t CDF goes through the regularized incomplete beta function, evaluated
with the modified Lentz continued fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import AnalysisError, SingularDesign, ZeroVariance

P_FLOOR = 1e-300
_CF_EPS = 1e-14
_CF_TINY = 1e-300
_CF_MAXITER = 10_000


@dataclass(frozen=True)
class TTestResult:
    statistic: float
    df: int
    p_two_sided: float
    n: int


@dataclass(frozen=True)
class OlsFit:
    slope: float
    intercept: float
    slope_p: Optional[float]
    intercept_p: Optional[float]
    n: int
    r2: float
    slope_t: Optional[float] = None
    intercept_t: Optional[float] = None
    ss_res: float = 0.0


@dataclass(frozen=True)
class Decision:
    alpha: float
    reject_null: bool


def _betacf(a, b, x):
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAXITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    # the fraction converges fast only below the mean; use the mirror otherwise
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def _t_tail(t: float, df: float) -> float:
    """P(T > |t|)."""
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return 0.5 * betainc(df / 2.0, 0.5, x)


def t_cdf(t: float, df) -> float:
    """CDF of Student's t with ``df`` degrees of freedom."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if math.isnan(t):
        raise ValueError("t is NaN")
    if t == 0.0:
        return 0.5
    tail = _t_tail(t, df)
    return tail if t < 0 else 1.0 - tail


def t_two_sided_p(t: float, df) -> float:
    """Two-sided p-value, floored at ``P_FLOOR``."""
    if df < 1:
        raise ValueError("df must be >= 1")
    return min(1.0, max(P_FLOOR, 2.0 * _t_tail(t, df)))


def paired_t_test(xs: Sequence[float], ys: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on ``xs - ys``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise AnalysisError(f"paired samples need equal 1-D lengths, got {x.shape} and {y.shape}")
    n = x.size
    if n < 2:
        raise AnalysisError("paired t-test needs at least 2 pairs")
    d = x - y
    if np.all(d == d[0]):
        raise ZeroVariance("all paired differences are identical")
    mean = math.fsum(d) / n
    sd = math.sqrt(math.fsum((d - mean) ** 2) / (n - 1))
    if sd == 0.0:
        raise ZeroVariance("paired differences have zero variance")
    stat = mean / (sd / math.sqrt(n))
    return TTestResult(stat, n - 1, t_two_sided_p(stat, n - 1), n)


def ols_fit(points) -> OlsFit:
    """Least-squares line through ``(x, y)`` points with coefficient t-tests.

    p-values and t statistics are None when n < 3, or when a coefficient and
    its standard error are both zero.
    """
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise AnalysisError("points must be (x, y) pairs")
    n = pts.shape[0]
    if n < 2:
        raise AnalysisError("need at least 2 points")
    x, y = pts[:, 0], pts[:, 1]
    xbar = math.fsum(x) / n
    ybar = math.fsum(y) / n
    dx = x - xbar
    sxx = math.fsum(dx * dx)
    if sxx == 0.0:
        raise SingularDesign("all x values are equal")
    slope = math.fsum(dx * (y - ybar)) / sxx
    intercept = ybar - slope * xbar
    resid = y - (intercept + slope * x)
    ss_res = math.fsum(resid * resid)
    ss_tot = math.fsum((y - ybar) ** 2)
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res == 0.0 else 0.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    if n < 3:
        return OlsFit(slope, intercept, None, None, n, r2, ss_res=ss_res)
    s2 = ss_res / (n - 2)
    se_slope = math.sqrt(s2 / sxx)
    se_int = math.sqrt(s2 * (1.0 / n + xbar * xbar / sxx))
    slope_t, slope_p = _coef_test(slope, se_slope, n - 2)
    int_t, int_p = _coef_test(intercept, se_int, n - 2)
    return OlsFit(slope, intercept, slope_p, int_p, n, r2, slope_t, int_t, ss_res)


def _coef_test(est, se, df):
    if se == 0.0:
        if est == 0.0:
            return None, None
        return math.copysign(math.inf, est), P_FLOOR
    t = est / se
    return t, t_two_sided_p(t, df)


def decide(p: float, alpha: float = 0.05) -> Decision:
    """Reject only when p < alpha; p == alpha keeps the null."""
    if not (0.0 <= p <= 1.0 and 0.0 <= alpha <= 1.0):
        raise ValueError("p and alpha must lie in [0, 1]")
    return Decision(alpha, p < alpha)


def _family_mean(mats, K):
    cells = np.zeros((K, K))
    used = np.zeros(K, dtype=np.int64)
    for m in mats:
        if m.K != K:
            raise AnalysisError("confusion matrices disagree on K")
        keep = ~m.empty_rows
        cells[keep] += m.cells[keep]
        used += keep
    have = used > 0
    cells[have] /= used[have, None]
    return cells, have


def diag_offdiag_test(c1, c2, pooling: str = "cells") -> dict:
    """Paired t-tests of diagonal and off-diagonal confusion cells between
    two families of matrices.

    ``pooling="cells"`` averages each family cellwise (empty rows left out of
    the average) and pairs the K diagonal and K(K-1) off-diagonal positions.
    Rows that are empty in every matrix of either family are dropped.
    ``pooling="pairs"`` pairs ``c1[i]`` with ``c2[i]`` and pools every
    (pair, position) as one observation; both families must then have the
    same length.
    """
    c1, c2 = list(c1), list(c2)
    if not c1 or not c2:
        raise AnalysisError("both families need at least one matrix")
    K = c1[0].K
    diag_mask = np.eye(K, dtype=bool)
    if pooling == "cells":
        m1, h1 = _family_mean(c1, K)
        m2, h2 = _family_mean(c2, K)
        rows = h1 & h2
        dx, dy = m1[rows][diag_mask[rows]], m2[rows][diag_mask[rows]]
        ox, oy = m1[rows][~diag_mask[rows]], m2[rows][~diag_mask[rows]]
    elif pooling == "pairs":
        if len(c1) != len(c2):
            raise AnalysisError("pooling='pairs' needs families of equal size")
        dx, dy, ox, oy = [], [], [], []
        for a, b in zip(c1, c2):
            if a.K != K or b.K != K:
                raise AnalysisError("confusion matrices disagree on K")
            rows = ~a.empty_rows & ~b.empty_rows
            dx.extend(a.cells[rows][diag_mask[rows]])
            dy.extend(b.cells[rows][diag_mask[rows]])
            ox.extend(a.cells[rows][~diag_mask[rows]])
            oy.extend(b.cells[rows][~diag_mask[rows]])
    else:
        raise ValueError("pooling must be 'cells' or 'pairs'")
    return {"diag": paired_t_test(dx, dy), "offdiag": paired_t_test(ox, oy)}
