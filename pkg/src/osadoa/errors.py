"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input lies outside the domain an operation is defined on."""


class IdentifiabilityError(DomainError):
    """The source configuration cannot be resolved by the array (e.g. Q >= K)."""


class UnidentifiableError(DomainError):
    """The Fisher information is singular or too ill-conditioned to invert."""


class FormatError(ValueError):
    """A binary file is malformed: bad magic, wrong version or truncated."""


class ChecksumError(FormatError):
    """The CRC-32 stored in a binary file does not match its payload."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss.

    The partial :class:`~osadoa.cdae_dnn.TrainReport` is kept on ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(ValueError):
    """A configuration file or command line option is invalid."""
