"""Exception types shared across the package."""


class PathctxError(Exception):
    """Base class for package-specific errors."""


class ConfigError(PathctxError):
    """Invalid configuration value or config-file entry."""


class DataError(PathctxError):
    """Malformed or missing input data."""


class ParseError(DataError):
    """A line in a data file could not be parsed."""

    def __init__(self, path: str, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class UnknownRelationError(DataError):
    """Relation name or ID absent from the training vocabulary."""


class ContractError(PathctxError):
    """An API precondition was violated by the caller."""


class ShapeError(ContractError):
    """Tensor shapes are incompatible for the requested operation."""


class SamplingError(PathctxError):
    """Negative sampling exhausted its attempt budget."""


class UnsupportedModeError(PathctxError):
    """Operation not available under the current model ablation mode."""
