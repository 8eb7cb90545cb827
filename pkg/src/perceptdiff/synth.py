"""Synthetic human/machine populations with known generating confusions.

Each machine's label on a sample is, with probability ``shared_error_weight``,
a draw shared by all machines (taken once per sample from
``shared_confusion``), and otherwise an independent draw from its own
confusion row. Humans always draw independently. The expected confusion of a
machine is therefore ``rho * S + (1 - rho) * Q``.

Random streams are numpy ``PCG64`` generators keyed by (seed, purpose,
classifier id), so adding or removing a classifier leaves every other
stream untouched. Only ``Generator.random`` doubles are consumed; categorical
and exponential draws are done by inverse CDF here.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ConfigError
from .ingest import (
    AnnotationSet,
    EvalFrame,
    LabelSpace,
    PredictionSet,
    build_frame,
    format_annotations,
    format_label_space,
    format_predictions,
    format_truth,
)

MAX_SEED = 2**64 - 1
_ROW_TOL = 1e-9


def make_rng(seed: int, *key: str) -> np.random.Generator:
    """Independent PCG64 stream for ``seed`` and a tuple of string keys."""
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    spawn_key = tuple(zlib.crc32(k.encode("utf-8")) for k in key)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=spawn_key)))


@dataclass
class MachineSpec:
    id: str
    confusion: np.ndarray
    shared_error_weight: float = 0.0
    confidence_sharpness: float = 1.0
    group: Optional[str] = None


@dataclass
class HumanSpec:
    id: str
    confusion: np.ndarray
    mean_easy: Optional[float] = None
    mean_hard: Optional[float] = None


@dataclass
class PopulationConfig:
    K: int
    n_samples: int
    machines: list = field(default_factory=list)
    humans: list = field(default_factory=list)
    class_prior: Optional[np.ndarray] = None
    shared_confusion: Optional[np.ndarray] = None
    class_names: Optional[list] = None
    seed: int = 0

    def __post_init__(self):
        self.K = int(self.K)
        if self.K < 2:
            raise ConfigError("K must be at least 2")
        if int(self.n_samples) < 1:
            raise ConfigError("n_samples must be at least 1")
        self.n_samples = int(self.n_samples)
        if self.class_prior is None:
            self.class_prior = np.full(self.K, 1.0 / self.K)
        self.class_prior = _check_simplex(self.class_prior, (self.K,), "class_prior")
        if not self.machines and not self.humans:
            raise ConfigError("population needs at least one machine or human")
        ids = [m.id for m in self.machines] + [h.id for h in self.humans]
        if len(set(ids)) != len(ids):
            raise ConfigError("classifier ids must be unique")
        for i, m in enumerate(self.machines):
            m.confusion = _check_simplex(m.confusion, (self.K, self.K), f"machines[{i}].confusion")
            if not 0.0 <= m.shared_error_weight <= 1.0:
                raise ConfigError(f"machines[{i}].shared_error_weight must lie in [0, 1]")
            if not m.confidence_sharpness > 0:
                raise ConfigError(f"machines[{i}].confidence_sharpness must be positive")
        for i, h in enumerate(self.humans):
            h.confusion = _check_simplex(h.confusion, (self.K, self.K), f"humans[{i}].confusion")
            if (h.mean_easy is None) != (h.mean_hard is None):
                raise ConfigError(f"humans[{i}].time_model needs both mean_easy and mean_hard")
            if h.mean_easy is not None and (h.mean_easy < 0 or h.mean_hard < 0):
                raise ConfigError(f"humans[{i}].time_model means must be nonnegative")
        if self.shared_confusion is None:
            if self.machines:
                self.shared_confusion = np.mean([m.confusion for m in self.machines], axis=0)
            else:
                self.shared_confusion = np.eye(self.K)
        self.shared_confusion = _check_simplex(self.shared_confusion, (self.K, self.K),
                                               "shared_confusion")
        if self.class_names is None:
            self.class_names = [f"class_{i}" for i in range(self.K)]
        if len(self.class_names) != self.K:
            raise ConfigError("class_names length must equal K")
        if not 0 <= int(self.seed) <= MAX_SEED:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, d: dict, seed: Optional[int] = None) -> "PopulationConfig":
        try:
            machines = [
                MachineSpec(m["id"], np.asarray(m["confusion"], float),
                            float(m.get("shared_error_weight", 0.0)),
                            float(m.get("confidence_sharpness", 1.0)), m.get("group"))
                for m in d.get("machine_specs", [])
            ]
            humans = []
            for h in d.get("human_specs", []):
                tm = h.get("time_model") or {}
                humans.append(HumanSpec(h["id"], np.asarray(h["confusion"], float),
                                        tm.get("mean_easy"), tm.get("mean_hard")))
            return cls(
                K=d["K"], n_samples=d["n_samples"], machines=machines, humans=humans,
                class_prior=None if d.get("class_prior") is None else np.asarray(d["class_prior"], float),
                shared_confusion=None if d.get("shared_confusion") is None
                else np.asarray(d["shared_confusion"], float),
                class_names=d.get("class_names"),
                seed=d.get("seed", 0) if seed is None else seed,
            )
        except KeyError as exc:
            raise ConfigError(f"missing required field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path, seed: Optional[int] = None) -> "PopulationConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}", path=path) from None
        try:
            return cls.from_dict(d, seed)
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], path=path) from None


def _check_simplex(arr, shape, name):
    try:
        a = np.asarray(arr, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} is not numeric") from None
    if a.shape != shape:
        raise ConfigError(f"{name} has shape {a.shape}, expected {shape}")
    if np.any(~np.isfinite(a)) or np.any(a < 0):
        raise ConfigError(f"{name} has negative or non-finite entries")
    sums = a.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > _ROW_TOL):
        raise ConfigError(f"{name} rows must sum to 1")
    return a


def _categorical(u, rows):
    """Inverse-CDF draw: one class per uniform ``u`` using matching ``rows``."""
    cum = np.cumsum(rows, axis=1)
    out = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(out, rows.shape[1] - 1)


def _soft_vectors(labels, correct, u, K, sharpness):
    # mass w on the chosen label; sharper models are more confident when
    # right and less confident when wrong
    w = np.where(correct, u ** (1.0 / sharpness), u ** sharpness)
    c = 1.0 / K + (1.0 - 1.0 / K) * w
    other = (1.0 - c) / (K - 1)
    vec = np.repeat(other[:, None], K, axis=1)
    vec[np.arange(len(labels)), labels] = c
    return vec


@dataclass
class Population:
    """Generated data: the frame plus the truth mapping used to build it."""

    frame: EvalFrame
    truth: dict
    shared_labels: np.ndarray


def generate_population(config: PopulationConfig) -> Population:
    K, n, seed = config.K, config.n_samples, config.seed
    width = len(str(n - 1))
    ids = tuple(f"s{i:0{width}d}" for i in range(n))

    u = make_rng(seed, "truth").random(n)
    truth = _categorical(u, np.broadcast_to(config.class_prior, (n, K)))
    shared = _categorical(make_rng(seed, "shared").random(n), config.shared_confusion[truth])
    shared_err = shared != truth

    machines = []
    for m in config.machines:
        r = make_rng(seed, "machine", m.id).random((3, n))
        own = _categorical(r[0], m.confusion[truth])
        labels = np.where(r[1] < m.shared_error_weight, shared, own)
        # 1 - u lies in (0, 1], keeping mass strictly above 1/K
        vec = _soft_vectors(labels, labels == truth, 1.0 - r[2], K, m.confidence_sharpness)
        machines.append(PredictionSet(m.id, ids, vec, K, m.group))

    humans = []
    for h in config.humans:
        r = make_rng(seed, "human", h.id).random((2, n))
        labels = _categorical(r[0], h.confusion[truth])
        times = None
        if h.mean_easy is not None:
            mean = np.where(shared_err, h.mean_hard, h.mean_easy)
            times = -mean * np.log1p(-r[1])
        humans.append(AnnotationSet(h.id, ids, labels, K, times))

    truth_map = dict(zip(ids, truth.tolist()))
    frame = build_frame(truth_map, machines, humans, LabelSpace(tuple(config.class_names)))
    return Population(frame, truth_map, shared)


def generate(config: PopulationConfig) -> EvalFrame:
    """Sample an :class:`EvalFrame` from ``config``."""
    return generate_population(config).frame


def expected_confusion(config: PopulationConfig, classifier_id: str) -> np.ndarray:
    for m in config.machines:
        if m.id == classifier_id:
            rho = m.shared_error_weight
            return rho * config.shared_confusion + (1.0 - rho) * m.confusion
    for h in config.humans:
        if h.id == classifier_id:
            return np.array(h.confusion, copy=True)
    raise KeyError(f"unknown classifier id {classifier_id!r}")


def render_files(pop: Population) -> dict:
    """Ingest-format file contents keyed by file name."""
    frame = pop.frame
    files = {
        "classes.txt": format_label_space(frame.label_space),
        "truth.csv": format_truth(pop.truth),
    }
    for m in frame.machines:
        files[f"predictions_{m.classifier_id}.csv"] = format_predictions(m)
    for h in frame.humans:
        files[f"annotations_{h.annotator_id}.csv"] = format_annotations(h)
    return files


def noisy_confusion(K: int, accuracy: float, rng: np.random.Generator = None) -> np.ndarray:
    """Row-stochastic matrix with ``accuracy`` on the diagonal.

    Off-diagonal mass is uniform when ``rng`` is None, otherwise drawn from a
    flat Dirichlet via normalized exponentials.
    """
    Q = np.zeros((K, K))
    for p in range(K):
        if rng is None:
            w = np.ones(K - 1)
        else:
            w = -np.log1p(-rng.random(K - 1))
        w = w / w.sum() * (1.0 - accuracy)
        Q[p] = np.insert(w, p, accuracy)
    return Q
