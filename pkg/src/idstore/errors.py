"""Exception hierarchy shared by all idstore modules."""


class IdstoreError(Exception):
    """Base class for every error raised by the package."""


# order books
class InvalidEvent(IdstoreError, ValueError):
    pass


class UnknownOrderId(IdstoreError, KeyError):
    pass


class CrossedBookAfterAdd(IdstoreError):
    pass


class EmptySide(IdstoreError):
    pass


class InsufficientDepth(IdstoreError):
    pass


class ZeroVolume(IdstoreError, ValueError):
    pass


# liquidity model
class NegativeCoefficient(IdstoreError, ValueError):
    pass


class TooFewPoints(IdstoreError):
    pass


class DegenerateDesign(IdstoreError):
    pass


class InsufficientWindows(IdstoreError):
    pass


# mid-price model
class EmptyJumpLaw(IdstoreError, ValueError):
    pass


class EmptySample(IdstoreError, ValueError):
    pass


class SameMaturity(IdstoreError, ValueError):
    pass


class NoJumpsObserved(IdstoreError):
    pass


class InconsistentKappa(UserWarning):
    """Warning: correlation-decay slope disagrees with the count-based kappa."""


# valuation
class InfeasibleSpec(IdstoreError, ValueError):
    pass


class GridMismatch(IdstoreError, ValueError):
    pass


class TooFewPaths(IdstoreError):
    pass


class StockViolation(IdstoreError):
    pass


# backtest / synth
class InsufficientHistory(IdstoreError):
    pass


class MissingBook(IdstoreError):
    pass


class InfeasibleLadder(IdstoreError, ValueError):
    pass
