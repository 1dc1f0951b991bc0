"""Exception taxonomy shared across the package and mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Invalid configuration (bad ranges, unknown keys, malformed TOML)."""


class DataError(ValueError):
    """Invalid input data (bad CSV schema, negative times, non-binary events)."""


class CheckpointError(DataError):
    """Corrupt or incompatible checkpoint file."""


class NumericError(RuntimeError):
    """Non-finite values where finite ones are required (e.g. diverged loss)."""
