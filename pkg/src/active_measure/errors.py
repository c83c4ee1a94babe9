"""Shared exception types."""


class ActiveMeasureError(Exception):
    """Base class for engine errors."""


class PoolFormatError(ActiveMeasureError):
    """Malformed pool or checkpoint file; carries the offending line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ModeError(ActiveMeasureError):
    """Operation requires the other pool mode (simulation vs live), or modes are mixed."""


class DuplicateUnitError(ActiveMeasureError):
    """A unit id occurs more than once."""


class CoverageError(ActiveMeasureError):
    """A prediction table does not cover every unlabeled unit."""


class LabelError(ActiveMeasureError):
    """A submitted label is negative, non-finite, or contradicts simulation ground truth."""


class PendingConflictError(ActiveMeasureError):
    """A sample is pending (or the wrong unit was labeled)."""


class ExhaustedError(ActiveMeasureError):
    """No unlabeled units remain."""


class SequencingError(ActiveMeasureError):
    """A streaming update was applied out of order."""


class DegenerateVarianceError(ActiveMeasureError):
    """Inverse-variance weighting hit a nonpositive variance estimate."""


class ReplayMismatchError(ActiveMeasureError):
    """An event log disagrees with the run it claims to describe."""
