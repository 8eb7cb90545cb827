"""Report builders behind ``perceptdiff report``.

Each builder returns ``{file name: text}``; nothing touches the disk until
:func:`write_atomic` commits the whole batch. Output is deterministic for
identical inputs and options: no timestamps, canonical ordering, floats in
``repr`` form.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from . import metrics as M
from .exceptions import AnalysisError, IngestError
from .ingest import (
    SOFT,
    EvalFrame,
    build_frame,
    fmt_float,
    parse_annotations,
    parse_label_space,
    parse_predictions,
    parse_truth,
)
from .stats import decide, diag_offdiag_test, ols_fit
from .teaming import (
    AGGRE_ID,
    ORACLE,
    SWAP,
    best_pair_search,
    majority_vote,
    select_threshold,
)

REPORTS = ("accuracy", "confusion", "difficulty", "matching", "stats", "teaming")


@dataclass
class ReportOptions:
    alpha: float = 0.05
    seed: int = 0
    error_filter: str = "both"
    sd_norm: str = "l1"
    pooling: str = "cells"
    tie: str = "first"
    mode: str = ORACLE
    eta: Optional[float] = None
    eta_grid: list = field(default_factory=lambda: [round(0.1 * i, 10) for i in range(11)])
    fit_points: str = "per-classifier"
    bins: dict = field(default_factory=dict)
    quadrant_thresholds: tuple = (0.5, 0.5)
    swap_partner: Optional[str] = None


# ---------------------------------------------------------------------------
# loading


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def load_frame(cfg):
    """Parse every file named by a :class:`~perceptdiff.config.RunConfig`.

    Returns ``(frame, records)`` where ``records`` lists per-file row counts
    and digests in load order.
    """
    records = []

    def rec(path, kind, set_id, rows):
        records.append({"file": os.path.basename(path), "kind": kind, "id": set_id,
                        "rows": rows, "sha256": sha256_file(path)})

    ls = parse_label_space(cfg.classes)
    rec(cfg.classes, "classes", None, ls.K)
    truth = parse_truth(cfg.truth, ls)
    rec(cfg.truth, "truth", None, len(truth))
    machines = []
    for p in cfg.predictions:
        m = parse_predictions(p, ls)
        if m.classifier_id in cfg.groups:
            m = type(m)(m.classifier_id, m.sample_ids, m.values, m.n_classes,
                        cfg.groups[m.classifier_id])
        machines.append(m)
        rec(p, f"predictions:{m.kind}", m.classifier_id, len(m))
    humans = []
    for p in cfg.annotations:
        h = parse_annotations(p, ls)
        humans.append(h)
        rec(p, "annotations" + (":timed" if h.times is not None else ""), h.annotator_id, len(h))
    try:
        frame = build_frame(truth, machines, humans, ls)
    except IngestError as exc:
        if exc.path is None:
            src = {r["id"]: r["file"] for r in records if r["id"]}
            set_id = getattr(exc, "set_id", None)
            if set_id in src:
                exc.args = (f"{src[set_id]}: {exc.args[0]}",)
        raise
    return frame, records


# ---------------------------------------------------------------------------
# formatting helpers


def _num(x):
    if x is None:
        return None
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (str, type(None))):
        return obj
    return _num(obj)


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _f(x):
    return "" if x is None else fmt_float(x)


def digest_of(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(json.dumps(_clean(a), separators=(",", ":")).encode("utf-8"))
        h.update(b"|")
    return h.hexdigest()[:16]


def confusion_files(name, cm, class_names) -> dict:
    cells = _csv(["reference"] + list(class_names),
                 [[c] + [fmt_float(v) for v in row] for c, row in zip(class_names, cm.cells)])
    counts = _csv(["reference"] + list(class_names) + ["row_total", "empty"],
                  [[c] + [int(v) for v in row] + [int(row.sum()), int(e)]
                   for c, row, e in zip(class_names, cm.counts, cm.empty_rows)])
    return {f"confusion_{name}.csv": cells, f"confusion_{name}_counts.csv": counts}


def score_file(frame, values) -> str:
    return _csv(["sample_id", "value"], [[s, fmt_float(v)] for s, v in zip(frame.sample_ids, values)])


# ---------------------------------------------------------------------------
# report builders


class Context:
    """Shared state for one report run: frame, options and derived sets."""

    def __init__(self, frame: EvalFrame, opts: ReportOptions):
        self.frame = frame
        self.opts = opts
        self.skipped = []
        self.machines = sorted(frame.machine_ids)
        self.humans = sorted(frame.human_ids)
        self.soft = [m for m in self.machines if frame.get(m).kind == SOFT]
        self._aggre = None

    @property
    def aggre(self):
        if self._aggre is None and len(self.humans) >= 2:
            self._aggre = majority_vote(self.frame.resolve(self.humans), tie=self.opts.tie)
        return self._aggre

    def skip(self, what, why):
        self.skipped.append({"report": what, "reason": why})

    def bins_for(self, score):
        override = self.opts.bins.get(score.metric)
        return dict(override) if override is not None else score.bins


def build_accuracy(ctx: Context) -> dict:
    f = ctx.frame
    rows = []
    for m in ctx.machines:
        rows.append([m, "machine", f.get(m).kind, fmt_float(M.accuracy(m, f))])
    for h in ctx.humans:
        rows.append([h, "human", "hard", fmt_float(M.accuracy(h, f))])
    if ctx.aggre is not None:
        rows.append([AGGRE_ID, "aggregate", "hard", fmt_float(M.accuracy(ctx.aggre, f))])
    return {"accuracy.csv": _csv(["classifier_id", "role", "kind", "accuracy"], rows)}


def build_confusion(ctx: Context) -> dict:
    f, names = ctx.frame, ctx.frame.label_space.class_names
    out = {}
    for cid in ctx.machines + ctx.humans:
        out.update(confusion_files(f"{cid}_vs_truth", M.confusion(cid, f), names))
    families = {"humans": ctx.humans, "machines": ctx.machines}
    for a, b in (("humans", "humans"), ("humans", "machines"), ("machines", "machines")):
        name = f"{a}_vs_{b}"
        if not families[a] or not families[b]:
            ctx.skip(f"confusion_{name}", f"no {a if not families[a] else b}")
            continue
        try:
            cm = M.group_error_confusion(families[a], families[b], f, ctx.opts.error_filter)
        except AnalysisError as exc:
            ctx.skip(f"confusion_{name}", str(exc))
            continue
        out.update(confusion_files(name, cm, names))
    if ctx.humans and len(ctx.humans) >= 1:
        hdiff = M.agreement(ctx.humans, f)
        for m in ctx.soft:
            quads = M.quadrant_confusions(M.machine_confidence(m, f), hdiff,
                                          ctx.opts.quadrant_thresholds, m, f)
            body = {"classifier": m, "machine_score": M.MACHINE_CONFIDENCE,
                    "human_score": M.HUMAN_AGREEMENT,
                    "thresholds": list(ctx.opts.quadrant_thresholds), "quadrants": {}}
            for q, v in quads.items():
                cm = v["confusion"]
                body["quadrants"][q] = {
                    "n_samples": v["n_samples"],
                    "cells": None if cm is None else cm.cells,
                    "counts": None if cm is None else cm.counts,
                }
            out[f"quadrants_{m}.json"] = dump_json(body)
    return out


def _strat_json(strat, score, bins):
    d = strat.to_dict()
    d["bin_spec"] = bins
    d["source"] = list(score.source)
    return dump_json(d)


def _groups(ctx, ids):
    g = {}
    ms = [i for i in ids if i in ctx.machines]
    hs = [i for i in ids if i in ctx.humans]
    if ms:
        g["machines"] = ms
    if hs:
        g["humans"] = hs
    return g


def stratifications(ctx: Context) -> dict:
    """Stratified accuracies keyed by output stem; cached on the context."""
    if hasattr(ctx, "_strats"):
        return ctx._strats
    f = ctx.frame
    everyone = ctx.machines + ctx.humans
    out = {}
    for m in ctx.soft:
        score = M.machine_confidence(m, f)
        ids = [m] + ctx.humans
        bins = ctx.bins_for(score)
        out[f"machine_confidence_{m}"] = (score, bins,
                                          M.stratify(ids, score, f, bins, _groups(ctx, ids)))
    if ctx.machines:
        score = M.agreement(ctx.machines, f, metric=M.MACHINE_AGREEMENT)
        bins = ctx.bins_for(score)
        out["machine_agreement"] = (score, bins,
                                    M.stratify(everyone, score, f, bins, _groups(ctx, everyone)))
    if len(ctx.machines) >= 2:
        per, first = {}, None
        for m in ctx.machines:
            score = M.agreement(ctx.machines, f, exclude=m, metric=M.MACHINE_AGREEMENT)
            bins = ctx.bins_for(score)
            s = M.stratify([m], score, f, bins)
            per[m] = s.per_classifier[m]
            first = first or (score, bins, s)
        score, bins, s = first
        loo = M.StratifiedAccuracy(s.metric, s.bins, per,
                                   {"machines": _band_rows(per, len(s.bins))})
        out["machine_agreement_loo"] = (score, bins, loo)
    if ctx.humans:
        score = M.agreement(ctx.humans, f, metric=M.HUMAN_AGREEMENT)
        bins = ctx.bins_for(score)
        out["human_agreement"] = (score, bins,
                                  M.stratify(everyone, score, f, bins, _groups(ctx, everyone)))
        score = M.human_entropy(ctx.humans, f)
        bins = ctx.bins_for(score)
        out["human_entropy"] = (score, bins,
                                M.stratify(everyone, score, f, bins, _groups(ctx, everyone)))
        hs = f.resolve(ctx.humans)
        if all(h.times is not None for h in hs):
            score = M.mean_time(ctx.humans, f)
            bins = ctx.bins_for(score)
            out["annotation_time"] = (score, bins,
                                      M.stratify(everyone, score, f, bins, _groups(ctx, everyone)))
        else:
            ctx.skip("annotation_time", "not every annotation set carries times")
    ctx._strats = out
    return out


def _band_rows(per, nb):
    rows = []
    for b in range(nb):
        vals = [v[b] for v in per.values() if v[b] is not None]
        rows.append(None if not vals else
                    {"min": min(vals), "mean": float(np.mean(vals)), "max": max(vals)})
    return rows


def build_difficulty(ctx: Context) -> dict:
    f = ctx.frame
    out = {}
    for stem, (score, bins, strat) in stratifications(ctx).items():
        if stem != "machine_agreement_loo":
            out[f"difficulty_{stem}.csv"] = score_file(f, score.values)
        out[f"stratified_{stem}.json"] = _strat_json(strat, score, bins)
    if ctx.humans and ctx.soft:
        summary = {"norm": ctx.opts.sd_norm, "humans": ctx.humans, "expected": {}}
        for m in ctx.soft:
            sd, mean = M.sample_distribution_diff(m, ctx.humans, f, ctx.opts.sd_norm)
            out[f"sample_difference_{m}.csv"] = score_file(f, sd)
            summary["expected"][m] = mean
        out["sample_difference_summary.json"] = dump_json(summary)
    return out


def build_matching(ctx: Context) -> dict:
    f = ctx.frame
    ids = ctx.machines + ctx.humans
    corr = {i: M.correctness(i, f) for i in ids}
    subsets, sizes = {}, {}
    for b in ids:
        try:
            subsets[b] = M.balanced_subset(corr[b], f, ctx.opts.seed)
            sizes[b] = len(subsets[b])
        except AnalysisError as exc:
            subsets[b] = None
            sizes[b] = None
            ctx.skip(f"matching column {b}", str(exc))
    matrix = []
    for a in ids:
        row = []
        for b in ids:
            if subsets[b] is None:
                row.append(None)
            else:
                row.append(M.matching_percentage(corr[a], corr[b], subsets[b]))
        matrix.append(row)
    body = {"reference": "column", "seed": ctx.opts.seed, "ids": ids,
            "roles": {i: ("machine" if i in ctx.machines else "human") for i in ids},
            "subset_size": sizes, "matrix": matrix}
    table = _csv(["classifier_id"] + ids, [[a] + [_f(v) for v in row] for a, row in zip(ids, matrix)])
    return {"matching.json": dump_json(body), "matching.csv": table}


def _entry(name, res, alpha, pooling, digest, **extra):
    d = {"name": name}
    if res is None:
        d.update({"statistic": None, "df": None, "p": None, "alpha": alpha, "reject_null": None})
    else:
        d.update({"statistic": res.statistic, "df": res.df, "p": res.p_two_sided,
                  "alpha": alpha, "reject_null": decide(res.p_two_sided, alpha).reject_null})
    d["pooling"] = pooling
    d["inputs_digest"] = digest
    d.update(extra)
    return d


def stats_tests(ctx: Context) -> list:
    f, o = ctx.frame, ctx.opts
    tests = []
    fam = {}
    if len(ctx.humans) >= 2:
        fam["HH"] = M.pairwise_error_confusions(ctx.humans, ctx.humans, f, o.error_filter)
    if len(ctx.machines) >= 2:
        fam["MM"] = M.pairwise_error_confusions(ctx.machines, ctx.machines, f, o.error_filter)
    if ctx.humans and ctx.machines:
        fam["HM"] = M.pairwise_error_confusions(ctx.humans, ctx.machines, f, o.error_filter)
    for t1, t2 in (("MM", "HH"), ("HM", "HH"), ("MM", "HM")):
        if t1 not in fam or t2 not in fam:
            continue
        digest = digest_of([c.counts for c in fam[t1]], [c.counts for c in fam[t2]])
        try:
            res = diag_offdiag_test(fam[t1], fam[t2], o.pooling)
        except AnalysisError as exc:
            for part in ("diag", "offdiag"):
                tests.append(_entry(f"confusion_{part}:{t1}_vs_{t2}", None, o.alpha, o.pooling,
                                    digest, error=f"{type(exc).__name__}: {exc}"))
            continue
        for part in ("diag", "offdiag"):
            tests.append(_entry(f"confusion_{part}:{t1}_vs_{t2}", res[part], o.alpha, o.pooling,
                                digest, n=res[part].n))

    strats = stratifications(ctx)
    use_means = o.fit_points == "bin-means"
    conf_keys = [k for k in strats if k.startswith("machine_confidence_")]
    series = {}
    if conf_keys:
        mpts, hpts = [], []
        for k in conf_keys:
            m = k[len("machine_confidence_"):]
            strat = strats[k][2]
            mpts += M.stratified_points(strat, [m], use_means)
            if ctx.humans:
                hpts += M.stratified_points(strat, ctx.humans, use_means)
        series["machine_confidence"] = {"machines": mpts, "humans": hpts}
    if "machine_agreement" in strats:
        strat = strats["machine_agreement"][2]
        series["machine_agreement"] = {
            "machines": M.stratified_points(strat, ctx.machines, use_means),
            "humans": M.stratified_points(strat, ctx.humans, use_means) if ctx.humans else [],
        }
    for metric, groups in series.items():
        for who, pts in groups.items():
            if not pts:
                continue
            digest = digest_of(pts)
            name = f"ols:{metric}:{who}"
            try:
                fit = ols_fit(pts)
            except AnalysisError as exc:
                tests.append(_entry(name, None, o.alpha, o.fit_points, digest,
                                    error=f"{type(exc).__name__}: {exc}"))
                continue
            entry = {"name": name, "statistic": fit.slope_t,
                     "df": fit.n - 2 if fit.n >= 3 else None, "p": fit.slope_p, "alpha": o.alpha,
                     "reject_null": None if fit.slope_p is None else decide(fit.slope_p, o.alpha).reject_null,
                     "pooling": o.fit_points, "inputs_digest": digest,
                     "slope": fit.slope, "intercept": fit.intercept,
                     "intercept_statistic": fit.intercept_t, "intercept_p": fit.intercept_p,
                     "r2": fit.r2, "n": fit.n}
            tests.append(entry)

    sel = threshold_selections(ctx)
    for group, s in sel.items():
        digest = digest_of(s.acc)
        for t in s.tests:
            tests.append({"name": f"swap_threshold:{group}:eta={t.eta!r}",
                          "statistic": None if t.result is None else t.result.statistic,
                          "df": None if t.result is None else t.result.df,
                          "p": t.p, "alpha": o.alpha, "reject_null": not t.retain,
                          "pooling": "bases", "inputs_digest": digest,
                          "mean_acc": t.mean_acc, "degenerate": t.degenerate})
    return tests


def _swap_partner(ctx):
    if ctx.opts.swap_partner is not None:
        if ctx.opts.swap_partner == AGGRE_ID and ctx.aggre is not None:
            return ctx.aggre
        return ctx.frame.get(ctx.opts.swap_partner)
    if ctx.humans:
        return ctx.frame.get(ctx.humans[0])
    return None


def threshold_selections(ctx: Context) -> dict:
    if hasattr(ctx, "_sel"):
        return ctx._sel
    partner = _swap_partner(ctx)
    sel = {}
    if partner is None:
        ctx.skip("swap_threshold", "no human partner")
    else:
        groups = {"all": [m for m in ctx.soft if m != partner.id]}
        for m in groups["all"]:
            g = ctx.frame.get(m).group
            if g:
                groups.setdefault(f"group={g}", []).append(m)
        for name, bases in groups.items():
            if len(bases) < 2:
                ctx.skip(f"swap_threshold:{name}", "fewer than 2 soft base models")
                continue
            sel[name] = select_threshold(bases, partner, ctx.frame, ctx.opts.eta_grid, ctx.opts.alpha)
    ctx._sel = sel
    return sel


def build_stats(ctx: Context) -> dict:
    body = {"alpha": ctx.opts.alpha, "pooling": ctx.opts.pooling,
            "fit_points": ctx.opts.fit_points, "error_filter": ctx.opts.error_filter,
            "tests": stats_tests(ctx)}
    return {"stats_report.json": dump_json(body)}


def build_teaming(ctx: Context) -> dict:
    f, o = ctx.frame, ctx.opts
    mode = o.mode
    eta = o.eta
    selection = None
    if mode == SWAP:
        sel = threshold_selections(ctx)
        selection = sel.get("all")
        if eta is None:
            if selection is None:
                raise AnalysisError("swap mode needs --eta or at least 2 soft machines and a "
                                    "human partner for threshold selection")
            eta = selection.eta_star
        bases = ctx.soft
    else:
        bases = ctx.machines
    if not bases:
        raise AnalysisError("no base models for teaming")
    pools, extra = {}, []
    if ctx.humans:
        pools["human"] = ctx.humans
    if ctx.aggre is not None:
        pools["aggre"] = [AGGRE_ID]
        extra.append(ctx.aggre)
    if len(ctx.machines) >= 2:
        pools["model"] = ctx.machines
    if not pools:
        raise AnalysisError("no partner pools for teaming")
    best, rows = best_pair_search(f, bases, pools, mode, eta, extra)
    cells = [{"base": r.base, "partner_pool": r.pool, "best_partner": r.partner,
              "base_acc": r.cell.base_acc, "partner_acc": r.cell.partner_acc,
              "teamed_acc": r.cell.teamed_acc, "boost": r.cell.boost,
              "n_swapped": r.n_swapped} for r in best]
    body = {"mode": mode, "eta": eta if mode == SWAP else None, "grid": o.eta_grid,
            "eta_star": None if selection is None else selection.eta_star,
            "threshold_selection": None if selection is None else selection.to_dict(),
            "aggre_tie_rule": o.tie if ctx.aggre is not None else None,
            "cells": cells}
    table = _csv(["base", "partner_pool", "partner", "base_acc", "partner_acc", "teamed_acc",
                  "boost", "n_swapped"],
                 [[r.base, r.pool, r.partner, fmt_float(r.cell.base_acc),
                   fmt_float(r.cell.partner_acc), fmt_float(r.cell.teamed_acc),
                   fmt_float(r.cell.boost), r.n_swapped] for r in rows])
    return {"teaming_report.json": dump_json(body), "teaming_matrix.csv": table}


BUILDERS = {
    "accuracy": build_accuracy,
    "confusion": build_confusion,
    "difficulty": build_difficulty,
    "matching": build_matching,
    "stats": build_stats,
    "teaming": build_teaming,
}


def build_reports(frame: EvalFrame, which: str, opts: ReportOptions, manifest_extra=None) -> dict:
    names = list(REPORTS) if which == "all" else [which]
    ctx = Context(frame, opts)
    files = {}
    for n in names:
        files.update(BUILDERS[n](ctx))
    manifest = {
        "tool": "perceptdiff",
        "version": __version__,
        "reports": names,
        "seed": opts.seed,
        "options": asdict(opts),
        **(manifest_extra or {}),
        "skipped": ctx.skipped,
        "files": {k: hashlib.sha256(v.encode("utf-8")).hexdigest() for k, v in sorted(files.items())},
    }
    files["manifest.json"] = dump_json(manifest)
    return files


def write_atomic(out_dir, files: dict):
    """Write every file via a temp file and ``os.replace``."""
    os.makedirs(out_dir, exist_ok=True)
    staged = []
    try:
        for name, text in sorted(files.items()):
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", suffix=".tmp", dir=out_dir)
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, os.path.join(out_dir, name)))
    except BaseException:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise
    for tmp, dest in staged:
        os.replace(tmp, dest)
