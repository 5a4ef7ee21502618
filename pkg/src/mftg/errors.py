"""Exception types raised across the package."""


class MFTGError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MFTGError, ValueError):
    pass


class DimensionMismatchError(MFTGError, ValueError):
    pass


class CertificationError(MFTGError):
    """A declared constant or approximation condition was falsified by sampling.

    ``witness`` holds the offending argument tuple.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class StepSizeError(MFTGError):
    pass


class SequencingError(MFTGError):
    pass


class SupersolutionDefectError(MFTGError):
    def __init__(self, message, step=None, mu=None):
        super().__init__(message)
        self.step = step
        self.mu = mu


class ContractError(MFTGError):
    pass
