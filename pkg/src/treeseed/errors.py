class SchemaError(ValueError):
    """Declared columns do not match the data."""


class DataError(ValueError):
    """Unparseable or otherwise invalid input data."""


class ConfigError(ValueError):
    """Inconsistent run or model configuration."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""
