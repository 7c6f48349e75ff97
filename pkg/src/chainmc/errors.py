"""Exception and warning classes shared across the package."""


class ChainMCError(Exception):
    """Base class for all package errors."""


class DataError(ChainMCError, ValueError):
    """Malformed input: bad manifest, broken chain, unrecoverable entry."""


class NumericalError(ChainMCError, ArithmeticError):
    """A decomposition or alignment is rank deficient at the requested rank."""


class DegenerateSpectrumWarning(UserWarning):
    """Retained and discarded eigenvalues are (numerically) tied."""


class NonUniqueAlignmentWarning(UserWarning):
    """The Procrustes solution is not unique for the given overlap."""


class SelfOverlapWarning(UserWarning):
    """First and last blocks of a chain share entities; variance formula is approximate."""
