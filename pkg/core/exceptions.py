"""
Error types for ICV Shrink.
Every failure raised by the core modules derives from IcvError.
"""

from typing import Optional


class IcvError(Exception):
    """Base class for all ICV Shrink errors."""


class InvalidConfig(IcvError):
    """A configuration value is missing, malformed or out of range."""


class ParseError(IcvError):
    """A raw tick row could not be parsed."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class NoDataForSymbol(IcvError):
    def __init__(self, symbol: str):
        self.symbol = symbol
        super().__init__(f"no ticks survive cleaning for symbol {symbol!r}")


class InsufficientHistory(IcvError):
    def __init__(self, symbol: str):
        self.symbol = symbol
        super().__init__(f"symbol {symbol!r} has no tick at or before the first grid point")


class InsufficientRefreshes(IcvError):
    """Fewer than two refresh times could be formed."""


class InvalidNoiseCov(IcvError):
    """Noise covariance is not symmetric positive semi-definite, or not diagonal under asynchronous trading."""


class NotSymmetric(IcvError):
    """Matrix is not symmetric within tolerance."""


class DegenerateReturn(IcvError):
    def __init__(self, k: int):
        self.k = k
        super().__init__(f"return column {k} has zero norm")


class PairTooSparse(IcvError):
    def __init__(self, i: int, j: int, count: int = 0):
        self.i = i
        self.j = j
        super().__init__(f"pair ({i}, {j}) has only {count} refresh times")


class InvalidParams(IcvError):
    """Parameters outside an operation's admissible domain."""


class NotOrthonormal(IcvError):
    """Basis matrix is not orthonormal."""


class DayPoolEmpty(IcvError):
    """Every dense day was dropped before QML estimation."""


class StieltjesNoConverge(IcvError):
    def __init__(self, z: complex, residual: Optional[float] = None):
        self.z = z
        self.residual = residual
        super().__init__(f"Stieltjes fixed point did not converge at z={z} (residual {residual})")


class NearEdge(IcvError):
    def __init__(self, x: float, edge: float):
        self.x = x
        self.edge = edge
        super().__init__(f"x={x:.6g} is too close to support edge {edge:.6g}")


class UnitRatioExcluded(IcvError):
    """Boundary evaluation requested at concentration ratio y = 1."""


class NotPD(IcvError):
    """Matrix is not positive definite."""


class DegenerateSignal(IcvError):
    """Momentum signal is collinear with the vector of ones."""


class InsufficientMomentumHistory(IcvError):
    def __init__(self, needed: int, available: int):
        super().__init__(f"momentum needs {needed} daily returns, only {available} available")


class EmptyEvaluationWindow(IcvError):
    """Evaluation window or sub-period contains no days."""


class EdgeQuadratureWarning(UserWarning):
    """Quadrature near a support edge did not reach the requested accuracy."""
