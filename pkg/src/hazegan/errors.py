"""Exception hierarchy shared by every hazegan module."""


class HazeganError(Exception):
    """Base class for all library errors."""


class InvalidParameterError(HazeganError, ValueError):
    pass


class ShapeError(HazeganError, ValueError):
    pass


class EmptyDatasetError(HazeganError):
    pass


class DataError(HazeganError):
    """Malformed or inconsistent input data (manifests, image files)."""


class ConfigurationError(HazeganError):
    pass


class ContractError(HazeganError):
    """A caller-supplied object violates an interface requirement."""


class IncompatibleCheckpointError(HazeganError):
    pass


class CheckpointVersionError(HazeganError):
    pass


class CheckpointIntegrityError(HazeganError):
    pass


class NumericalError(HazeganError, ArithmeticError):
    """NaN or Inf surfaced in a training objective."""
