"""
Exception hierarchy shared by the factorization toolkit.

Everything raised on purpose derives from QnmfError, so callers (the CLI,
the sweep runner) can catch one type and report the rest as crashes.
"""


class QnmfError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(QnmfError, ValueError):
    """Operands have incompatible shapes."""


class ComponentIndexError(QnmfError, IndexError):
    """Quaternion component index outside 0..3."""


class ConfigError(QnmfError, ValueError):
    """A configuration value violates its documented range."""


class DegenerateInputError(QnmfError):
    """A normal-equation matrix is singular or a rescue found nothing to use."""


class SpaExhaustedError(DegenerateInputError):
    """SPA residual vanished before the requested number of picks."""

    def __init__(self, selected, requested):
        self.selected = list(selected)
        self.requested = requested
        super().__init__(
            f"SPA residual is numerically zero after {len(self.selected)} of "
            f"{requested} picks; only {len(self.selected)} columns are selectable"
        )


class NonFiniteError(QnmfError, ArithmeticError):
    """The relative error became NaN or infinite."""


class UndefinedMetricError(QnmfError, ValueError):
    """A metric was requested against a zero reference norm."""


class TilingError(DimensionError):
    """Block size does not divide the image."""


class FormatError(QnmfError, ValueError):
    """A file is malformed, truncated or holds non-finite values."""


class UnsupportedFormatError(FormatError):
    """A well-formed file uses a variant this toolkit does not read."""


class InfeasibleInputError(QnmfError, ValueError):
    """The data matrix lies outside the requested constraint set."""
