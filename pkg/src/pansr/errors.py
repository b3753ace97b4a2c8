"""Exception hierarchy shared by every subpackage.

Each class carries the CLI exit code it maps to, so the command layer can
translate failures without a lookup table.
"""


class PanError(Exception):
    exit_code = 1


class ConfigError(PanError, ValueError):
    exit_code = 2


class DimensionError(PanError, ValueError):
    exit_code = 2


class GeometryError(PanError, ValueError):
    exit_code = 2


class DomainError(PanError, ValueError):
    exit_code = 4


class TapeError(PanError, RuntimeError):
    exit_code = 1


class RankError(PanError, ValueError):
    exit_code = 1


class NonFiniteError(PanError, FloatingPointError):
    """An op produced NaN or Inf. The message names the op."""

    exit_code = 4


class DivergenceError(PanError, FloatingPointError):
    exit_code = 4

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


class NumericalError(PanError, ArithmeticError):
    exit_code = 4


class ProvenanceError(PanError, ValueError):
    exit_code = 2


class SamplingError(PanError, ValueError):
    exit_code = 3


class FitError(PanError, ValueError):
    exit_code = 3


class DataError(PanError, IOError):
    exit_code = 3


class ChecksumError(DataError):
    pass


class VersionError(DataError):
    pass
