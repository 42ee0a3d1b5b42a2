"""Exception hierarchy and exit-code mapping."""

from .constants import EXIT_CACHE, EXIT_CONFIG, EXIT_NUMERICAL


class SpectraFilterError(Exception):
    """Base class for every error raised by the package."""

    exit_code = EXIT_NUMERICAL

    def __init__(self, message="", **context):
        super().__init__(message)
        self.context = dict(context)

    def __str__(self):
        base = super().__str__()
        if not self.context:
            return base
        details = ", ".join(f"{key}={value}" for key, value in self.context.items())
        return f"{base} [{details}]"


def add_context(error, **context):
    """Attach run context (mode, energy, ...) to an error and return it."""
    if isinstance(error, SpectraFilterError):
        error.context.update(context)
    return error


# Configuration errors

class ConfigError(SpectraFilterError, ValueError):
    exit_code = EXIT_CONFIG


class UnknownKey(ConfigError):
    pass


class MissingRequired(ConfigError):
    pass


class RuleUnresolvable(ConfigError):
    pass


# Numerical errors

class NumericalError(SpectraFilterError, ValueError):
    exit_code = EXIT_NUMERICAL


class StructurallyInvalid(NumericalError):
    pass


class LengthMismatch(NumericalError):
    pass


class ZeroNorm(NumericalError):
    pass


class UnknownObservable(NumericalError):
    pass


class UnsupportedOrder(NumericalError):
    pass


class NonCommensurateTime(NumericalError):
    pass


class TruncationBudgetExceeded(NumericalError):
    pass


class MemoryBudgetExceeded(NumericalError):
    pass


class WidthTooLarge(NumericalError):
    pass


class NonPositiveParameter(NumericalError):
    pass


class IndexMismatch(NumericalError):
    pass


class VanishingDenominator(NumericalError):
    """The filter window holds (numerically) no spectral weight."""


class OutOfThermalRange(NumericalError):
    pass


class NegativeWeight(NumericalError):
    """A filter weight came out negative beyond tolerance."""


class SeedBelowCutoff(NumericalError):
    pass


class ChainStuck(NumericalError):
    pass


class NonConvergent(NumericalError):
    """Variance minimisation hit max_sweeps; `result` holds the best state so far."""

    def __init__(self, message="", result=None, **context):
        super().__init__(message, **context)
        self.result = result


class SizeTooLarge(NumericalError):
    pass


class EmptyWindow(NumericalError):
    pass


class MissingOverlaps(NumericalError):
    pass


# Cache errors

class CacheError(SpectraFilterError, OSError):
    exit_code = EXIT_CACHE


class CorruptCache(CacheError):
    pass


class HashMismatch(CacheError):
    pass
