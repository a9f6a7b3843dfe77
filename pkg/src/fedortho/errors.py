"""Exception types shared across the package."""


class FedOrthoError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(FedOrthoError):
    """An argument violates a precondition (shape, finiteness, range)."""


class UnknownTask(FedOrthoError):
    """The model has no head for the requested task."""


class EmptyDataset(FedOrthoError):
    """An operation requires at least one sample."""


class NoData(FedOrthoError):
    """A client has no accessible data for the requested task."""


class ProtocolError(FedOrthoError):
    """Secure-aggregation round is inconsistent (missing client, peer mismatch)."""


class ParseError(FedOrthoError):
    """A data or config file could not be parsed."""


class ConfigError(FedOrthoError):
    """Experiment configuration failed validation.

    ``errors`` holds one message per offending field.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
