"""Exception types shared across the toolkit.

The split mirrors how failures are reported at the boundaries: bad
options/parameters (ConfigError), bad or unreadable data (DataError),
and numerical failures inside a solve (SolverError).
"""


class ConfigError(ValueError):
    """Invalid option, parameter, or configuration value."""


class DataError(ValueError):
    """Malformed, inconsistent, or non-finite input data."""


class SolverError(RuntimeError):
    """A numerical backend failed (singularity, divergence, non-finite result)."""
