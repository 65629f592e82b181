"""Exception types raised across the package."""


class SSLV3Error(Exception):
    """Base class for all package errors."""


class ShapeError(SSLV3Error, ValueError):
    """Operand extents are incompatible."""


class ParameterError(SSLV3Error, ValueError):
    """An argument or configuration value is outside its valid domain."""


class NumericError(SSLV3Error, ArithmeticError):
    """A forward computation produced NaN or Inf."""


class StateError(SSLV3Error, RuntimeError):
    """An operation was invoked in a state where it is undefined."""


class GraphError(StateError):
    """Backward was requested on a value with no recorded graph."""


class EvaluationError(SSLV3Error, ArithmeticError):
    """A function under gradient check returned a non-finite value."""


class ContractError(SSLV3Error, ValueError):
    """An input violates an operation's precondition (e.g. non-positive quality score)."""


class LabelError(ContractError):
    """A class label lies outside [0, k)."""


class BatchSizeError(ContractError):
    """A batch is too small for the requested operation."""


class DataError(SSLV3Error, ValueError):
    """Dataset content is malformed or inconsistent."""


class IngestionError(DataError):
    """On-disk clips could not be read."""


class CheckpointError(SSLV3Error, ValueError):
    """A checkpoint file is malformed or incompatible."""


class CouplingError(SSLV3Error, RuntimeError):
    """The classification loss delivers no gradient to the quality head."""
