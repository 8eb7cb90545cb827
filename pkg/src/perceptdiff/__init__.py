"""Quantify how human annotators and machine classifiers differ, test those
differences, and simulate post-hoc human-machine teaming."""

__version__ = "0.1.0"

from .exceptions import AnalysisError, IngestError, PerceptDiffError  # noqa: E402
from .ingest import (  # noqa: E402
    AnnotationSet,
    EvalFrame,
    LabelSpace,
    PredictionSet,
    build_frame,
    parse_annotations,
    parse_label_space,
    parse_predictions,
    parse_truth,
)

__all__ = [
    "AnalysisError",
    "AnnotationSet",
    "EvalFrame",
    "IngestError",
    "LabelSpace",
    "PerceptDiffError",
    "PredictionSet",
    "build_frame",
    "parse_annotations",
    "parse_label_space",
    "parse_predictions",
    "parse_truth",
]
