"""Exception hierarchy.

Input problems derive from :class:`IngestError` (CLI exit code 2); problems
that only show up while computing a metric or test derive from
:class:`AnalysisError` (exit code 3).
"""


class PerceptDiffError(Exception):
    """Base class for every error raised by this package."""


class IngestError(PerceptDiffError, ValueError):
    """A file or in-memory input failed validation.

    ``path`` and ``row`` locate the offending record when known; ``row`` is
    1-based and counts the header as row 1.
    """

    def __init__(self, message, path=None, row=None):
        self.path = None if path is None else str(path)
        self.row = row
        where = ""
        if self.path is not None:
            where = self.path if row is None else f"{self.path}:{row}"
            where += ": "
        super().__init__(f"{where}{type(self).__name__}: {message}")


class DuplicateClass(IngestError):
    pass


class TooFewClasses(IngestError):
    pass


class RowNotNormalized(IngestError):
    pass


class LabelOutOfRange(IngestError):
    pass


class MissingSampleId(IngestError):
    pass


class DuplicateSampleId(IngestError):
    pass


class ColumnMismatch(IngestError):
    pass


class MalformedValue(IngestError):
    pass


class NegativeTime(IngestError):
    pass


class PartialTimes(IngestError):
    pass


class DuplicateId(IngestError):
    pass


class CoverageMismatch(IngestError):
    """A prediction or annotation set does not cover the truth ids exactly."""

    def __init__(self, set_id, missing=(), extra=(), path=None):
        self.set_id = set_id
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        parts = [f"set {set_id!r}"]
        if self.missing:
            parts.append(f"missing={_abbrev(self.missing)}")
        if self.extra:
            parts.append(f"extra={_abbrev(self.extra)}")
        super().__init__(" ".join(parts), path=path)


class ConfigError(IngestError):
    pass


class AnalysisError(PerceptDiffError, ValueError):
    """A computation could not be carried out on otherwise valid inputs."""


class EmptySelection(AnalysisError):
    pass


class KindMismatch(AnalysisError):
    pass


class MissingTimes(AnalysisError):
    pass


class CannotBalance(AnalysisError):
    pass


class DegenerateConditioning(AnalysisError):
    pass


class ZeroVariance(AnalysisError):
    pass


class SingularDesign(AnalysisError):
    pass


def _abbrev(ids, limit=10):
    if len(ids) <= limit:
        return "[" + ", ".join(ids) + "]"
    return "[" + ", ".join(ids[:limit]) + f", ... (+{len(ids) - limit})]"
