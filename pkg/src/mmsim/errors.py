"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: ConfigError -> 2,
DataError (and subclasses) -> 3, DegenerateResultsError -> 4.
"""


class MmsimError(Exception):
    """Base class for all package errors."""


class ConfigError(MmsimError):
    """Invalid or inconsistent run configuration."""


class DataError(MmsimError):
    """Problem with input data files."""


class SchemaError(DataError):
    """A required column is missing or the schema is malformed."""


class ParseError(DataError):
    """A row failed to parse; message carries the line number."""


class IntegrityError(DataError):
    """Structural violation in the data (duplicate ids, unset fields)."""


class ValidationError(MmsimError):
    """Infeasible specification (e.g. a binary mean outside [0, 1])."""


class EstimationError(MmsimError):
    """An estimator or variance estimator cannot be formed on this input."""


class DegenerateResultsError(MmsimError):
    """Every Monte Carlo iteration was degenerate; no summary possible."""
