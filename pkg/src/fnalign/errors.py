"""Exception taxonomy shared across the package.

The CLI maps these onto its exit-code contract: ConfigError -> 3, input-side
errors (ParseError, ConsistencyError, missing files) -> 2, numeric or
training failures -> 1.
"""


class DimensionError(ValueError):
    """Shapes do not conform; message names both shapes."""


class VocabularyError(ValueError):
    """Token or relation id outside the vocabulary."""


class ParseError(ValueError):
    """Malformed corpus input; message carries the line number."""


class DegenerateInputError(ValueError):
    """Input outside an operation's domain, e.g. zero-norm cosine."""


class NumericError(ArithmeticError):
    """Non-finite value where finiteness is contractual."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class FormatError(ValueError):
    """Unreadable or version-mismatched artifact file."""


class ConsistencyError(ValueError):
    """Cross-artifact disagreement, e.g. mined ids outside the N/A set."""
