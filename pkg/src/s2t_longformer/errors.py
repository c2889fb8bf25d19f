"""Exception types shared across the package. The CLI maps them to exit codes."""


class ConfigError(ValueError):
    """Invalid configuration or usage (CLI exit code 1)."""


class DataError(ValueError):
    """Malformed or incompatible input data (CLI exit code 2)."""


class NumericError(ArithmeticError):
    """Non-finite values where finite math is required (CLI exit code 3)."""


class ShapeError(ValueError):
    """Tensor shape or dimension contract violation."""
