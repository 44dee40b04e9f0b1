"""Exception hierarchy.

Two broad families matter to callers (and to the CLI's exit codes):
``InputError`` for malformed or out-of-domain user data, and
``NumericsError`` for violated numerical invariants, which indicate a bug
or a blow-up rather than a data problem.
"""


class MmkitError(Exception):
    """Base class for all package errors."""


class InputError(MmkitError):
    """Invalid user input: bad shapes, domains, or file contents."""


class ShapeError(InputError):
    """Array shapes do not conform for the requested operation."""


class DomainError(InputError):
    """Values outside the mathematical domain of an operation."""


class MatrixFormatError(InputError):
    """A matrix file is malformed (ragged rows, bad magic, truncation...)."""


class NumericsError(MmkitError):
    """A numerical invariant was violated during iteration."""


class NonFiniteError(NumericsError):
    """An objective or intermediate quantity became NaN or infinite."""


class MonotonicityError(NumericsError):
    """An iteration moved the objective the wrong way beyond tolerance."""

    def __init__(self, iteration, previous, current, direction):
        self.iteration = iteration
        self.previous = previous
        self.current = current
        super().__init__(
            f"objective moved against the {direction} direction at iteration "
            f"{iteration}: {previous!r} -> {current!r}"
        )
