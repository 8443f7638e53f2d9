"""Exception hierarchy shared across the package.

Each class carries an exit code so the CLI can map failures to distinct,
machine-checkable process statuses.
"""


class RadioMaeError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(RadioMaeError):
    """Invalid configuration value or inconsistent hyperparameters."""

    exit_code = 2


class FormatError(RadioMaeError):
    """Malformed dataset, mask, or checkpoint file."""

    exit_code = 3


class ShapeMismatchError(RadioMaeError):
    """Tensor/mask/model shapes disagree."""

    exit_code = 4


class ProtocolError(RadioMaeError):
    """Evaluation protocol violated (e.g. zero-shot on a training dataset)."""

    exit_code = 5


class DivergenceError(RadioMaeError):
    """Training produced a non-finite loss or gradient."""

    exit_code = 6


class DegenerateDataError(RadioMaeError):
    """Data has no usable variation (e.g. constant tensors)."""

    exit_code = 7


class PartitionError(RadioMaeError):
    """Visible/masked index sets violate the partition invariants."""

    exit_code = 8


class EmptyGraphError(RadioMaeError):
    """Not enough visible nodes to build a geometric graph."""

    exit_code = 9


class ShadowingError(RadioMaeError):
    """Shadowing covariance could not be factorized."""

    exit_code = 10


class KrigingFitError(RadioMaeError):
    """Kriging system is singular; a positive nugget usually fixes it."""

    exit_code = 11


class SequenceLengthError(RadioMaeError):
    """Voxel count exceeds the decoder's hard token cap."""

    exit_code = 12
