"""Exception types raised across the package.

Grouped by the module that raises them; all inherit from AnchorNerError so
callers can catch the package's failures with a single except clause.
"""


class AnchorNerError(Exception):
    pass


# corpus
class MalformedTagError(AnchorNerError):
    """A label is not 'O', 'B-*', or 'I-*'."""


class EmptyCorpusError(AnchorNerError):
    """A corpus stream contained no sentences."""


class DisjointnessViolationError(AnchorNerError):
    """Two tasks in a schedule share an entity type."""


class EmptyTaskError(AnchorNerError):
    """A schedule contains a task with no entity types."""


class InsufficientSupportError(AnchorNerError):
    """A requested type has fewer mentions in the pool than the shot count."""


# anchor_vocab
class DuplicateTypeError(AnchorNerError):
    """An entity type was registered twice."""


class MissingRepWordsError(AnchorNerError):
    """No representative-word list for an entity type being registered."""


class EmptyListError(AnchorNerError):
    """An aggregate over word vectors received no vectors."""


class DimensionMismatchError(AnchorNerError):
    """Vectors of different dimensions were mixed."""


class UnknownTypeError(AnchorNerError):
    """Entity type not present in the anchor registry."""


class UnknownAnchorError(AnchorNerError):
    """Anchor token not present in the anchor registry."""


# model
class IdOutOfRangeError(AnchorNerError):
    """An input id is outside the current vocabulary."""


class LayerIndexOutOfRangeError(AnchorNerError):
    """Freeze depth exceeds the number of encoder layers."""


class NonFiniteLossError(AnchorNerError):
    """A loss value is NaN or infinite."""


# objectives
class EmptyPositionSetError(AnchorNerError):
    """A loss was asked to average over zero positions."""


class SupportMismatchError(AnchorNerError):
    """Teacher/student output supports or mask lengths are inconsistent."""


class NonFiniteInputError(AnchorNerError):
    """A loss combination received a non-finite term."""


# continual
class VocabNotExtendedError(AnchorNerError):
    """Training started before the model output grew to cover the task."""


class TeacherMissingError(AnchorNerError):
    """An incremental stage was started without a teacher snapshot."""


class UnknownSwitchError(AnchorNerError):
    """Unrecognized ablation switch name."""


# evaluate / cli
class TooFewStepsError(AnchorNerError):
    """Aggregate over incremental steps needs at least two steps."""


class NoResultsFoundError(AnchorNerError):
    """A report was requested for a directory with no result files."""
