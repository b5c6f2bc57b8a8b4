"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array dimensions do not agree with the operation's contract."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class ContractError(ValueError):
    """A precondition on the arguments (other than shape) is violated."""


class ConvergenceError(RuntimeError):
    """An iterative procedure hit its iteration cap.

    The last iterate is kept on ``last`` so callers can inspect it.
    """

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class OvershootError(ContractError):
    """``alpha * K_ii * rho_i >= 1`` for some state-action index ``index``."""

    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class DegenerateDiagonalError(ContractError):
    pass


class ProtocolError(RuntimeError):
    """Environment used out of order (e.g. ``step`` before ``reset``)."""


class EmptyBufferError(RuntimeError):
    pass


class UpdateAbortedError(RuntimeError):
    """Non-finite TD errors or gradients; parameters were left unchanged."""
