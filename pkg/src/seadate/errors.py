"""Exception types shared across the package."""


class SeaDateError(Exception):
    pass


class DimensionError(SeaDateError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(SeaDateError, ValueError):
    """A configuration value is out of its valid range."""


class DegenerateEmbeddingError(SeaDateError, ArithmeticError):
    """A zero vector was asked to be projected onto the unit sphere."""


class NumericalError(SeaDateError, ArithmeticError):
    """Non-finite values appeared during training or gradient checking."""


class CorruptionError(SeaDateError, IOError):
    """A file on disk does not match its recorded checksum or layout."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
