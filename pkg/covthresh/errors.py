"""
Exceptions raised by covthresh.

Everything derives from CovthreshError. Caller mistakes are InputError (a ValueError), numeric
breakdowns are NumericalFailure (an ArithmeticError); the command line maps the two families to
distinct exit codes.
"""


class CovthreshError(Exception):
    pass


class InputError(CovthreshError, ValueError):
    pass


class NumericalFailure(CovthreshError, ArithmeticError):
    pass


class MissingData(InputError):
    pass


class TooFewSamples(InputError):
    pass


class InsufficientOverlap(InputError):
    """
    Raised when a pair of columns shares fewer than two jointly observed rows.
    """

    def __init__(self, i: int, j: int, count: int):
        super().__init__(f"Columns {i} and {j} have only {count} jointly present rows; "
                         f"at least 2 are required.")
        self.i = i
        self.j = j
        self.count = count


class DimensionMismatch(InputError):
    pass


class DimensionTooSmall(InputError):
    pass


class InvalidQ(InputError):
    pass


class LadderDegenerate(InputError):
    pass


class MalformedInput(InputError):
    pass


class NotPositiveDefinite(NumericalFailure):
    pass


class EigenNotConverged(NumericalFailure):
    pass
