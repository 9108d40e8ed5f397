class VKError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(VKError, ValueError):
    pass


class UnsupportedOperationError(VKError):
    pass


class OutOfDomainError(VKError, ValueError):
    pass


class SingularSystemError(VKError, ArithmeticError):
    pass


class DegenerateInputError(VKError, ValueError):
    pass


class EigensolverError(VKError):
    """Raised when the eigensolver hits its iteration cap.

    ``partial`` carries whatever eigenpairs had converged at that point.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial if partial is not None else []


class ConfigError(VKError, ValueError):
    pass
