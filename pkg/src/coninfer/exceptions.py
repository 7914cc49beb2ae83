"""Engine error hierarchy.

``exit_code`` is what the CLI returns when the error escapes: 1 for
input/validation problems, 2 for numerical failures.
"""


class EngineError(Exception):
    exit_code = 1


class FormatError(EngineError):
    """Malformed binary container (bad magic, header, or payload size)."""


class UnsupportedError(EngineError):
    """Valid container, but a feature outside the pinned contract."""


class ManifestError(EngineError):
    """Scene manifest violates the schema; message names the field."""


class ShapeError(EngineError):
    """Array dimensions inconsistent with the declared geometry."""


class SimplexError(EngineError):
    """A probability row is negative or does not sum to one."""


class DegenerateInputError(EngineError):
    """Input vector with zero norm where a direction is required."""


class LabelRangeError(EngineError):
    """Class index outside [0, num_classes)."""


class SingularCovarianceError(EngineError):
    """Covariance not positive definite even after regularization."""

    exit_code = 2
