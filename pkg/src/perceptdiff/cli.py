"""Command-line entry point.

    perceptdiff validate --config run.json --out reports/
    perceptdiff report {accuracy,confusion,difficulty,matching,stats,teaming,all} ...
    perceptdiff synth gen --config population.json --out data/

Exit codes: 0 success, 2 validation failure, 3 computation error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .config import RunConfig
from .exceptions import AnalysisError, ConfigError, IngestError
from .reports import REPORTS, ReportOptions, build_reports, dump_json, load_frame, write_atomic
from .synth import PopulationConfig, generate_population, render_files

EXIT_OK, EXIT_INVALID, EXIT_COMPUTE, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("perceptdiff")


def _u64(text):
    v = int(text)
    if not 0 <= v <= 2**64 - 1:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _alpha(text):
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return v


def _grid(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None


def _bin_override(text):
    """METRIC=STRATEGY[:N] or METRIC=<json object>."""
    if "=" not in text:
        raise argparse.ArgumentTypeError("expected METRIC=SPEC")
    metric, spec = text.split("=", 1)
    if spec.lstrip().startswith("{"):
        return metric, json.loads(spec)
    strategy, _, n = spec.partition(":")
    d = {"strategy": strategy}
    if n:
        d["n_bins"] = int(n)
    return metric, d


def _global_flags(p, suppress):
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--config", help="run or population config (JSON)", **kw)
    p.add_argument("--out", help="output directory", **kw)
    p.add_argument("--seed", type=_u64, help="64-bit seed overriding the config", **kw)
    p.add_argument("--alpha", type=_alpha, help="significance level overriding the config", **kw)


def build_parser():
    parser = argparse.ArgumentParser(prog="perceptdiff", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"perceptdiff {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check inputs and write validation.json")
    _global_flags(p, suppress=True)

    p = sub.add_parser("report", help="compute reports")
    _global_flags(p, suppress=True)
    p.add_argument("which", choices=list(REPORTS) + ["all"])
    p.add_argument("--error-filter", choices=["both", "row", "either"], default="both",
                   help="samples entering mistake confusions (default: both wrong)")
    p.add_argument("--sd-norm", choices=["l1", "l2"], default="l1")
    p.add_argument("--pooling", choices=["cells", "pairs"], default="cells",
                   help="how per-pair confusions enter the diagonal/off-diagonal tests")
    p.add_argument("--fit-points", choices=["per-classifier", "bin-means"],
                   default="per-classifier", help="points used for accuracy-vs-difficulty fits")
    p.add_argument("--tie", default="first", help="majority-vote tie rule: first | random:<seed>")
    p.add_argument("--mode", choices=["oracle", "swap"], default="oracle")
    p.add_argument("--eta", type=float, help="swap threshold (default: selected from the grid)")
    p.add_argument("--grid", type=_grid, help="comma-separated eta grid")
    p.add_argument("--bins", type=_bin_override, action="append", default=[],
                   metavar="METRIC=SPEC", help="bin override, e.g. machine_confidence=uniform:5")

    p = sub.add_parser("synth", help="synthetic populations")
    synth_sub = p.add_subparsers(dest="synth_command", required=True)
    g = synth_sub.add_parser("gen", help="write ingest-format files for a population config")
    _global_flags(g, suppress=True)
    return parser


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + m for m in missing))


def cmd_validate(args):
    _need(args, "config", "out")
    cfg = RunConfig.load(args.config)
    try:
        frame, records = load_frame(cfg)
    except IngestError as exc:
        write_atomic(args.out, {"validation.json": dump_json(
            {"status": "error", "error": type(exc).__name__, "message": str(exc)})})
        raise
    body = {"status": "ok", "n_samples": frame.n_samples, "K": frame.K,
            "machines": sorted(frame.machine_ids), "humans": sorted(frame.human_ids),
            "files": records}
    write_atomic(args.out, {"validation.json": dump_json(body)})
    print(f"ok: {frame.n_samples} samples, {len(frame.machines)} machines, "
          f"{len(frame.humans)} humans")
    return EXIT_OK


def cmd_report(args):
    _need(args, "config", "out")
    cfg = RunConfig.load(args.config)
    seed = args.seed if getattr(args, "seed", None) is not None else cfg.seed
    alpha = args.alpha if getattr(args, "alpha", None) is not None else cfg.alpha
    bins = dict(cfg.bins)
    bins.update(dict(args.bins))
    grid = args.grid if args.grid is not None else cfg.eta_grid
    if not grid or grid != sorted(set(grid)) or any(not 0 <= g <= 1 for g in grid):
        raise ConfigError("eta grid must be strictly increasing within [0, 1]")
    opts = ReportOptions(alpha=alpha, seed=seed, error_filter=args.error_filter,
                         sd_norm=args.sd_norm, pooling=args.pooling, tie=args.tie,
                         mode=args.mode, eta=args.eta, eta_grid=list(grid),
                         fit_points=args.fit_points, bins=bins,
                         quadrant_thresholds=cfg.quadrant_thresholds,
                         swap_partner=cfg.swap_partner)
    frame, records = load_frame(cfg)
    extra = {"config_digest": cfg.digest(),
             "inputs": {r["file"]: r["sha256"] for r in records}}
    files = build_reports(frame, args.which, opts, extra)
    write_atomic(args.out, files)
    print(f"wrote {len(files)} files to {args.out}")
    return EXIT_OK


def cmd_synth_gen(args):
    _need(args, "config", "out")
    seed = getattr(args, "seed", None)
    pc = PopulationConfig.load(args.config, seed=seed)
    pop = generate_population(pc)
    files = render_files(pop)
    groups = {m.id: m.group for m in pc.machines if m.group}
    run = {"classes": "classes.txt", "truth": "truth.csv",
           "predictions": sorted(k for k in files if k.startswith("predictions_")),
           "annotations": sorted(k for k in files if k.startswith("annotations_")),
           "seed": pc.seed}
    if groups:
        run["groups"] = groups
    files["run.json"] = json.dumps(run, indent=2) + "\n"
    write_atomic(args.out, files)
    print(f"wrote {len(files)} files to {args.out}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "report":
            return cmd_report(args)
        return cmd_synth_gen(args)
    except IngestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except AnalysisError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
