"""Exception hierarchy shared across the package.

The CLI maps each family to a distinct exit code, so raising the right
class matters more than the message text.
"""


class MrgsError(Exception):
    """Base class for all package errors."""


class ParseError(MrgsError):
    """Malformed input file or config document."""


class DataError(MrgsError):
    """Dataset-level violation: empty input, empty after filtering,
    user too short to split, id out of range."""


class GraphError(MrgsError):
    """Degenerate interaction graph or autodiff graph misuse."""


class DimensionError(MrgsError):
    """Shape mismatch between arrays that must agree."""


class NumericError(MrgsError):
    """Non-finite value where a finite one is required (NaN loss etc.)."""


class ProtocolError(MrgsError):
    """Evaluation protocol violation, e.g. ranking an excluded target."""
