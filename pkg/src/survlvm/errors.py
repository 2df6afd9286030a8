"""Exception types shared across the package.

The CLI maps :class:`InputError` to exit code 2 and
:class:`NumericalError` to exit code 3.
"""


class InputError(ValueError):
    """Malformed or inconsistent user-supplied data."""


class NumericalError(RuntimeError):
    """A numerical operation (factorization, quadrature, optimization) failed."""
