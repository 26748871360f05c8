"""Exception hierarchy shared across the toolkit."""


class NpdError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(NpdError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(NpdError, ValueError):
    """A caller violated an operation's precondition."""


class ConfigError(NpdError, ValueError):
    """A configuration value is out of its permitted range."""


class DataError(NpdError, ValueError):
    """An input file or record failed validation."""


class DivergenceError(NpdError, RuntimeError):
    """Training produced a non-finite loss; carries the offending tensor name."""

    def __init__(self, message: str, tensor_name: str = ""):
        super().__init__(message)
        self.tensor_name = tensor_name
