"""Exception hierarchy.

Every failure the library reports derives from :class:`ArtifactError` and
carries the process exit status the CLI uses for it.
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ArtifactError(Exception):
    exit_code = 1


class ConfigError(ArtifactError, ValueError):
    """Invalid configuration or layer geometry."""

    exit_code = EXIT_CONFIG


class DataError(ArtifactError, ValueError):
    """Input data that cannot be read or does not fit."""

    exit_code = EXIT_DATA


class NumericError(ArtifactError, ArithmeticError):
    """A computation could not produce a meaningful result."""

    exit_code = EXIT_NUMERIC


# image files
class PgmError(DataError):
    pass


class MalformedHeaderError(PgmError):
    pass


class TruncatedPayloadError(PgmError):
    pass


class UnsupportedMaxvalError(PgmError):
    pass


class PixelRangeError(DataError):
    pass


# binary containers (checkpoints, fingerprints)
class ContainerError(DataError):
    pass


class VersionMismatchError(ContainerError):
    pass


class CorruptPayloadError(ContainerError):
    pass


class InvalidGeometryError(ConfigError):
    pass


class ShapeMismatchError(DataError):
    pass


class DegenerateInputError(NumericError):
    pass


class ConvergenceError(NumericError):
    pass


class OrderingError(NumericError):
    """Generated classes do not reproduce the required ordering."""
