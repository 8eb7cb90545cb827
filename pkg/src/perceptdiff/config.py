"""Run configuration: which files to load and how to analyse them.

A run config is a JSON object; relative paths resolve against the config
file's directory and may be glob patterns::

    {
      "classes": "classes.txt",
      "truth": "truth.csv",
      "predictions": ["predictions_*.csv"],
      "annotations": ["annotations_*.csv"],
      "groups": {"CE": "pretrained"},
      "bins": {"machine_confidence": {"strategy": "uniform", "n_bins": 5,
                                      "value_range": [0, 1]}},
      "eta_grid": [0.4, 0.5, 0.6],
      "alpha": 0.05,
      "seed": 0,
      "quadrant_thresholds": [0.5, 0.5],
      "swap_partner": "h1"
    }
"""

from __future__ import annotations

import glob
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

from .exceptions import ConfigError
from .synth import MAX_SEED
from .teaming import DEFAULT_GRID

_KNOWN = {"classes", "truth", "predictions", "annotations", "groups", "bins", "eta_grid",
          "alpha", "seed", "quadrant_thresholds", "swap_partner"}


@dataclass
class RunConfig:
    classes: str
    truth: str
    predictions: list = field(default_factory=list)
    annotations: list = field(default_factory=list)
    groups: dict = field(default_factory=dict)
    bins: dict = field(default_factory=dict)
    eta_grid: list = field(default_factory=lambda: list(DEFAULT_GRID))
    alpha: float = 0.05
    seed: int = 0
    quadrant_thresholds: tuple = (0.5, 0.5)
    swap_partner: Optional[str] = None
    source: Optional[str] = None
    raw: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not 0.0 < float(self.alpha) < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}", path=self.source)
        if not isinstance(self.seed, int) or not 0 <= self.seed <= MAX_SEED:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}",
                              path=self.source)
        grid = [float(g) for g in self.eta_grid]
        if not grid or any(not 0.0 <= g <= 1.0 for g in grid) or grid != sorted(set(grid)):
            raise ConfigError("eta_grid must be a strictly increasing list within [0, 1]",
                              path=self.source)
        self.eta_grid = grid
        if len(self.quadrant_thresholds) != 2:
            raise ConfigError("quadrant_thresholds must be a pair", path=self.source)
        self.quadrant_thresholds = tuple(float(x) for x in self.quadrant_thresholds)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}", path=path) from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object", path=path)
        unknown = set(raw) - _KNOWN
        if unknown:
            raise ConfigError(f"unknown field(s) {sorted(unknown)}", path=path)
        for key in ("classes", "truth"):
            if key not in raw:
                raise ConfigError(f"missing required field {key!r}", path=path)
        base = os.path.dirname(os.path.abspath(path))
        preds = _expand(raw.get("predictions", []), base, path, "predictions")
        anns = _expand(raw.get("annotations", []), base, path, "annotations")
        return cls(
            classes=_resolve(raw["classes"], base),
            truth=_resolve(raw["truth"], base),
            predictions=preds,
            annotations=anns,
            groups=dict(raw.get("groups", {})),
            bins=dict(raw.get("bins", {})),
            eta_grid=raw.get("eta_grid", list(DEFAULT_GRID)),
            alpha=raw.get("alpha", 0.05),
            seed=raw.get("seed", 0),
            quadrant_thresholds=tuple(raw.get("quadrant_thresholds", (0.5, 0.5))),
            swap_partner=raw.get("swap_partner"),
            source=str(path),
            raw=raw,
        )

    def digest(self) -> str:
        """Hash of the config as written (paths as given, not resolved)."""
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _resolve(p, base):
    return p if os.path.isabs(p) else os.path.join(base, p)


def _expand(entries, base, cfg_path, field_name):
    if isinstance(entries, str):
        entries = [entries]
    out = []
    for e in entries:
        full = _resolve(e, base)
        if glob.has_magic(full):
            hits = sorted(glob.glob(full))
            if not hits:
                raise ConfigError(f"{field_name}: pattern {e!r} matches no file", path=cfg_path)
            out.extend(hits)
        else:
            out.append(full)
    return out
