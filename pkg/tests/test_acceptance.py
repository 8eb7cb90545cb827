"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also repeated in the pytest terminal summary. Run alone with

    pytest tests/test_acceptance.py -v
"""

import filecmp
import functools
import itertools
import math
import os
import time

import numpy as np
import pytest

from perceptdiff import metrics as M
from perceptdiff import teaming as T
from perceptdiff.cli import main
from perceptdiff.metrics import Correctness
from perceptdiff.stats import ols_fit, paired_t_test, t_cdf
from perceptdiff.synth import (
    HumanSpec,
    MachineSpec,
    PopulationConfig,
    generate,
    make_rng,
    noisy_confusion,
)

from conftest import make_frame, population

GOLDEN = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures", "golden")

RESULTS = {}


def criterion(num, title):
    """Record PASS/FAIL (with detail) for one criterion and print it."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            detail = ""
            try:
                detail = fn(*args, **kwargs) or ""
            except BaseException as exc:
                line = f"[{num:2d}] FAIL {title}: {type(exc).__name__}: {exc}".splitlines()[0]
                RESULTS[num] = line
                print(line)
                raise
            line = f"[{num:2d}] PASS {title}" + (f" ({detail})" if detail else "")
            RESULTS[num] = line
            print(line)

        return run

    return wrap


def _check_runtime(elapsed, limit):
    assert elapsed < limit, f"runtime {elapsed:.2f}s exceeds {limit}s"


# 1 -------------------------------------------------------------------------

@criterion(1, "oracle teaming equals brute-force union, bounds hold (50 frames, N=1000, K=10)")
def test_c01_oracle_equivalence():
    t0 = time.perf_counter()
    n_pairs = 0
    for seed in range(50):
        f = generate(population(seed, n=1000, K=10, n_machines=4, n_humans=3, rho=0.5))
        ids = list(f.machine_ids) + list(f.human_ids)
        right = {i: {s for s, y in zip(f.sample_ids, f.get(i).labels == f.truth) if y} for i in ids}
        for a, b in itertools.permutations(ids, 2):
            _, cell = T.oracle_team(a, b, f)
            brute = len(right[a] | right[b]) / f.n_samples
            assert cell.teamed_acc == brute, (seed, a, b, cell.teamed_acc, brute)
            assert max(cell.base_acc, cell.partner_acc) <= cell.teamed_acc
            assert cell.teamed_acc <= min(1.0, cell.base_acc + cell.partner_acc)
            n_pairs += 1
    elapsed = time.perf_counter() - t0
    _check_runtime(elapsed, 5.0)
    return f"{n_pairs} pairs, {elapsed:.2f}s"


# 2 -------------------------------------------------------------------------

@criterion(2, "swap at eta=0 equals base accuracy, at eta=1 equals partner accuracy")
def test_c02_swap_endpoints():
    frames = [generate(population(100 + s, n=1000, K=10)) for s in range(5)]
    t0 = time.perf_counter()
    n_pairs = 0
    for f in frames:
        for b in f.machine_ids:
            for p in (x for x in list(f.machine_ids) + list(f.human_ids) if x != b):
                acc_b = np.count_nonzero(f.get(b).labels == f.truth) / f.n_samples
                acc_p = np.count_nonzero(f.get(p).labels == f.truth) / f.n_samples
                assert T.realistic_team(b, p, 0.0, f)[1].teamed_acc == acc_b
                assert T.realistic_team(b, p, 1.0, f)[1].teamed_acc == acc_p
                n_pairs += 1
    elapsed = time.perf_counter() - t0
    _check_runtime(elapsed, 2.0)
    return f"{n_pairs} pairs, {elapsed:.2f}s"


# 3 -------------------------------------------------------------------------

@criterion(3, "self-stratification OLS slope 1 and intercept 0 within 1e-9")
def test_c03_self_stratification():
    f = generate(population(7, n=2000, K=10, n_machines=13, n_humans=1, rho=0.4,
                            machine_acc=0.75))
    t0 = time.perf_counter()
    group = list(f.machine_ids)
    strat = M.stratify(group, M.agreement(group, f), f)
    worst = 0.0
    for use_means in (False, True):
        fit = ols_fit(M.stratified_points(strat, group, use_bin_means=use_means))
        assert abs(fit.slope - 1.0) <= 1e-9, fit
        assert abs(fit.intercept) < 1e-9, fit
        worst = max(worst, abs(fit.slope - 1.0), abs(fit.intercept))
    elapsed = time.perf_counter() - t0
    _check_runtime(elapsed, 1.0)
    return f"max deviation {worst:.1e}, {elapsed:.3f}s"


# 4 -------------------------------------------------------------------------

@criterion(4, "empirical confusion within 0.01 of the generating Q at n=100,000")
def test_c04_confusion_convergence():
    K = 4
    rng = make_rng(4, "acceptance-Q")
    Qm = noisy_confusion(K, 0.7, rng)
    Qh = noisy_confusion(K, 0.55, rng)
    cfg = PopulationConfig(K=K, n_samples=100_000, machines=[MachineSpec("m", Qm, 0.0, 2.0)],
                           humans=[HumanSpec("h", Qh)], seed=2024)
    t0 = time.perf_counter()
    f = generate(cfg)
    worst = 0.0
    for cid, Q in (("m", Qm), ("h", Qh)):
        emp = M.confusion(cid, f).cells
        worst = max(worst, float(np.max(np.abs(emp - Q))))
    elapsed = time.perf_counter() - t0
    assert worst <= 0.01, worst
    _check_runtime(elapsed, 10.0)
    return f"max cell error {worst:.4f}, {elapsed:.2f}s"


# 5 -------------------------------------------------------------------------

def _t_cdf_quadrature(t, df):
    from scipy import integrate

    lognorm = math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)

    def dens(x):
        return math.exp(lognorm - (df + 1) / 2 * math.log1p(x * x / df))

    half, _ = integrate.quad(dens, 0.0, abs(t), epsabs=1e-14, epsrel=1e-13, limit=500)
    return 0.5 + math.copysign(half, t)


@criterion(5, "t CDF within 1e-9 of quadrature on 500 points, symmetry within 1e-10")
def test_c05_t_cdf():
    rng = np.random.default_rng(500)
    dfs = rng.integers(1, 201, 500)
    ts = np.concatenate([rng.uniform(-8, 8, 400), rng.uniform(-60, 60, 100)])
    oracle = [_t_cdf_quadrature(float(t), int(d)) for t, d in zip(ts, dfs)]
    t0 = time.perf_counter()
    got = [t_cdf(float(t), int(d)) for t, d in zip(ts, dfs)]
    sym = [t_cdf(float(t), int(d)) + t_cdf(-float(t), int(d)) - 1.0 for t, d in zip(ts, dfs)]
    elapsed = time.perf_counter() - t0
    err = max(abs(a - b) for a, b in zip(got, oracle))
    serr = max(abs(s) for s in sym)
    assert err <= 1e-9, err
    assert serr <= 1e-10, serr
    _check_runtime(elapsed, 5.0)
    return f"max error {err:.1e}, symmetry {serr:.1e}, {elapsed:.2f}s"


# 6 -------------------------------------------------------------------------

@criterion(6, "paired t and OLS hand oracles to 1e-12")
def test_c06_hand_oracles():
    r = paired_t_test([1, 2, 3], [0, 0, 0])
    assert abs(r.statistic - 2 * math.sqrt(3)) <= 1e-12 and r.df == 2
    flat = ols_fit([(0, 1), (1, 1), (2, 1)])
    assert abs(flat.slope) <= 1e-12 and abs(flat.intercept - 1) <= 1e-12
    exact = ols_fit([(0, 0), (1, 1)])
    assert abs(exact.slope - 1) <= 1e-12 and abs(exact.intercept) <= 1e-12
    line = ols_fit([(x, -1.5 * x + 0.25) for x in (-2.0, 0.0, 0.5, 3.0, 7.0)])
    assert abs(line.slope + 1.5) <= 1e-12 and abs(line.intercept - 0.25) <= 1e-12
    return "2*sqrt(3), flat line, exact fits"


# 7 -------------------------------------------------------------------------

def _bounds_frame(seed, n, K, k_m, k_h):
    rng = make_rng(seed, "bounds")
    truth = rng.integers(0, K, n)
    ms = {}
    for i in range(k_m):
        raw = rng.random((n, K)) ** rng.choice([1, 5, 40], size=(n, 1))
        raw[: n // 50] = 1.0  # exactly uniform rows
        raw[n // 50: n // 25] = np.eye(K)[rng.integers(0, K, n // 25 - n // 50)]  # one-hot rows
        ms[f"m{i}"] = raw / raw.sum(axis=1, keepdims=True)
    hs = {f"h{i}": np.where(rng.random(n) < 0.6, truth, rng.integers(0, K, n)) for i in range(k_h)}
    return make_frame(truth, machines=ms, humans=hs, K=K)


@criterion(7, "metric bounds over 10,000 randomized samples, zero violations")
def test_c07_metric_bounds():
    violations = {}
    total = 0
    for seed, (K, n, k_m, k_h) in enumerate([(10, 6000, 3, 5), (2, 2000, 2, 2), (3, 2000, 4, 3)]):
        f = _bounds_frame(seed, n, K, k_m, k_h)
        total += n
        hs, ms = list(f.human_ids), list(f.machine_ids)
        for m in ms:
            mc = M.machine_confidence(m, f).values
            violations["MC"] = violations.get("MC", 0) + int(np.sum((mc < 1 / K - 1e-15) | (mc > 1)))
            sd, mean = M.sample_distribution_diff(m, hs, f)
            violations["SD"] = violations.get("SD", 0) + int(np.sum((sd < 0) | (sd > 2)))
            c = M.confusion(m, f)
            rows = c.cells.sum(axis=1)[~c.empty_rows]
            violations["rows"] = violations.get("rows", 0) + int(np.sum(np.abs(rows - 1) > 1e-12))
        ent = M.human_entropy(hs, f).values
        violations["entropy"] = violations.get("entropy", 0) + int(
            np.sum((ent < 0) | (ent > math.log(K))))
        for grp in (ms, hs):
            ag = M.agreement(grp, f).values
            k = len(grp)
            levels = {j / k for j in range(k + 1)}
            violations["agreement"] = violations.get("agreement", 0) + sum(
                v not in levels for v in ag.tolist())
    assert total == 10_000
    assert sum(violations.values()) == 0, violations
    return f"{total} samples, violations {violations}"


# 8 -------------------------------------------------------------------------

@criterion(8, "matching self=1, anti=0; balanced_subset reproducible over 100 trials")
def test_c08_matching_identities():
    rng = np.random.default_rng(8)
    ids = tuple(f"s{i:03d}" for i in range(200))
    for _ in range(20):
        bits = rng.random(200) < rng.uniform(0.1, 0.9)
        a = Correctness("a", ids, bits)
        anti = Correctness("x", ids, ~bits)
        sub = list(ids)
        assert M.matching_percentage(a, a, sub) == 1.0
        assert M.matching_percentage(anti, a, sub) == 0.0
    f = generate(population(8, n=500, K=10))
    ref = M.correctness(f.machine_ids[0], f)
    first = M.balanced_subset(ref, f, 2**64 - 1)
    for trial in range(100):
        seed = int(rng.integers(0, 2**63)) if trial % 2 else 2**64 - 1
        s1 = M.balanced_subset(ref, f, seed)
        s2 = M.balanced_subset(M.correctness(f.machine_ids[0], f), f, seed)
        assert s1 == s2
        if seed == 2**64 - 1:
            assert s1 == first
    return f"subset size {len(first)}"


# 9 -------------------------------------------------------------------------

def _mean_matching(f, rows, cols, seed):
    corr = {i: M.correctness(i, f) for i in set(rows) | set(cols)}
    vals = []
    for b in cols:
        sub = M.balanced_subset(corr[b], f, seed)
        vals.extend(M.matching_percentage(corr[a], corr[b], sub) for a in rows if a != b)
    return float(np.mean(vals))


@criterion(9, "machine-machine matching exceeds human-machine matching in 20/20 seeds (rho=0.8)")
def test_c09_correlation_direction():
    wins, margins = 0, []
    for seed in range(20):
        f = generate(population(900 + seed, n=2000, K=10, n_machines=5, n_humans=3, rho=0.8,
                                machine_acc=0.8, human_acc=0.8))
        ms, hs = list(f.machine_ids), list(f.human_ids)
        mm = _mean_matching(f, ms, ms, seed)
        hm = (_mean_matching(f, hs, ms, seed) + _mean_matching(f, ms, hs, seed)) / 2
        margins.append(mm - hm)
        wins += mm > hm
    assert wins == 20, margins
    return f"min margin {min(margins):.3f}"


# 10 ------------------------------------------------------------------------

@criterion(10, "report all on the 200-sample fixture is byte-identical to golden, twice")
def test_c10_golden(tmp_path):
    cfg = os.path.join(GOLDEN, "input", "run.json")
    expected = os.path.join(GOLDEN, "expected")
    names = sorted(os.listdir(expected))
    times = []
    for run in ("a", "b"):
        out = tmp_path / run
        t0 = time.perf_counter()
        assert main(["report", "all", "--config", cfg, "--out", str(out)]) == 0
        times.append(time.perf_counter() - t0)
        assert sorted(os.listdir(out)) == names
        match, mismatch, errors = filecmp.cmpfiles(expected, out, names, shallow=False)
        assert not mismatch and not errors, (mismatch, errors)
    _check_runtime(max(times), 2.0)
    return f"{len(names)} files, runs {times[0]:.2f}s/{times[1]:.2f}s"


# 11 ------------------------------------------------------------------------

def _threshold_oracle(frame, bases, partner, grid, alpha):
    """Enumerate eta, recompute swap accuracies by loops, test with scipy."""
    from scipy import stats as sps

    truth = frame.truth.tolist()
    plabs = frame.get(partner).labels.tolist()
    acc = []
    for b in bases:
        P = frame.get(b).probabilities
        row = []
        for eta in grid:
            hits = 0
            for i in range(frame.n_samples):
                conf = max(P[i])
                pred = plabs[i] if conf <= eta else int(np.argmax(P[i]))
                hits += pred == truth[i]
            row.append(hits / frame.n_samples)
        acc.append(row)
    acc = np.array(acc)
    best = acc.max(axis=1)
    for j, eta in enumerate(grid):
        d = acc[:, j] - best
        if np.all(d == 0):
            return eta
        if np.all(d == d[0]):
            continue
        if not sps.ttest_rel(acc[:, j], best).pvalue < alpha:
            return eta
    return grid[int(np.argmax(acc.mean(axis=0)))]


@criterion(11, "select_threshold eta* equals brute-force oracle across 10 seeds (5 bases)")
def test_c11_threshold_oracle():
    grid = [round(0.1 * i, 10) for i in range(11)]
    picks = []
    for seed in range(10):
        f = generate(population(1100 + seed, n=600, K=10, n_machines=5, n_humans=1, rho=0.3,
                                machine_acc=0.7, human_acc=0.85, sharpness=1.5))
        bases = list(f.machine_ids)
        sel = T.select_threshold(bases, "h0", f, grid, 0.05)
        want = _threshold_oracle(f, bases, "h0", grid, 0.05)
        assert sel.eta_star == want, (seed, sel.eta_star, want)
        picks.append(sel.eta_star)
    return f"eta* per seed {picks}"


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
