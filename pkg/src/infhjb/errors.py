"""Exception types shared across the package."""


class ExprSyntaxError(ValueError):
    """Raised by the expression parser; ``offset`` is a byte offset into the UTF-8 source."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ExprDomainError(ArithmeticError):
    """An expression was evaluated outside its domain (division by zero, sqrt of a negative, overflow).

    ``index`` is the flat index into the broadcast evaluation array where the first
    offending entry sits, when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ProblemFileError(ValueError):
    pass


class OutOfDomainError(ValueError):
    """A scalar field or value field was queried outside its declared domain."""


class IntegrationError(RuntimeError):
    """Trajectory integration aborted; carries the last finite sample."""

    def __init__(self, message, t=None, x=None):
        super().__init__(message)
        self.t = t
        self.x = x


class CertificateRefused(RuntimeError):
    """The tail-bound hypothesis (trajectory inside the invariant ball) does not hold."""


class SolveError(RuntimeError):
    pass
