"""Exception types raised across the package."""


class DeepLdaError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(DeepLdaError, ValueError):
    pass


class NotPositiveDefinite(DeepLdaError, ValueError):
    """A matrix expected to be SPD failed factorization.

    Raised rather than aborting so that training code can report covariance
    collapse as an outcome.
    """


class NonPositiveDiagonal(DeepLdaError, ValueError):
    pass


class InvalidLabel(DeepLdaError, ValueError):
    pass


class NegativeLambda(DeepLdaError, ValueError):
    pass


class EmptyBatch(DeepLdaError, ValueError):
    pass


class EmptyDataset(DeepLdaError, ValueError):
    pass


class NonFiniteLoss(DeepLdaError, FloatingPointError):
    """Loss overflowed or became NaN.

    ``epoch`` is filled in by the training loop when known.
    """

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class ShapeMismatch(DeepLdaError, ValueError):
    pass


class StaleCache(DeepLdaError, RuntimeError):
    pass


class GridTooCoarse(DeepLdaError, ValueError):
    pass


class LengthMismatch(DeepLdaError, ValueError):
    pass


class ConfidenceOutOfRange(DeepLdaError, ValueError):
    pass
