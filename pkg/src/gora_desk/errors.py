"""Exception hierarchy for gora-desk.

Library code raises these; only the command-line front door turns them into
process exit codes (0 success, 1 config error, 2 numerical failure,
3 verification failure).
"""


class GoraError(Exception):
    """Base class for every error raised by gora-desk."""

    exit_code: int = 1


class ConfigError(GoraError, ValueError):
    """A run configuration failed validation."""

    exit_code = 1


class StageOrderError(GoraError):
    """A pipeline stage ran before the stage that produces its input."""

    exit_code = 1


class ArtifactFormatError(GoraError):
    """A binary container or manifest could not be decoded."""

    exit_code = 1


class NumericalError(GoraError):
    """Base class for failures inside the numerical core."""

    exit_code = 2


class ShapeMismatchError(NumericalError, ValueError):
    """Operand shapes are incompatible."""


class GramSingularError(NumericalError):
    """A Gram matrix had a non-positive Cholesky pivot."""


class NonFiniteError(NumericalError):
    """A loss or gradient contained NaN or Inf."""


class DimensionCapError(NumericalError):
    """A dense factorization was asked for more than it supports."""


class UninformativeProbeError(NumericalError):
    """Every layer importance was zero, so no allocation can be derived."""


class EmptyStreamError(NumericalError):
    """A batch stream or shard produced no batches."""


class HostBufferError(NumericalError):
    """The host accumulation buffer would hold a second copy of a layer."""


class VerificationError(GoraError):
    """A verification suite reported at least one failing case."""

    exit_code = 3
