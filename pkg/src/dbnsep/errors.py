"""Exception hierarchy shared by all dbnsep modules."""


class DbnsepError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(DbnsepError, ValueError):
    pass


class DomainError(DbnsepError, ValueError):
    pass


class EmptyInputError(DbnsepError, ValueError):
    pass


class NumericError(DbnsepError, ArithmeticError):
    pass


class ConfigError(DbnsepError, ValueError):
    pass


class EnumerationLimitError(DbnsepError, ValueError):
    """Exact enumeration was requested for a model that is too large."""


class UntrainedModelError(DbnsepError, RuntimeError):
    pass


class AspectError(DbnsepError, ValueError):
    """A probe set mixes aspects where a single aspect is required."""


class PairingError(DbnsepError, ValueError):
    pass


class ModelFileError(DbnsepError, ValueError):
    """Base for model file problems."""


class ModelFormatError(ModelFileError):
    pass


class ModelVersionError(ModelFileError):
    pass


class ModelTruncatedError(ModelFileError):
    pass


class ModelChecksumError(ModelFileError):
    pass


class IdxError(DbnsepError, ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxDimensionError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class PgmFormatError(DbnsepError, ValueError):
    pass
