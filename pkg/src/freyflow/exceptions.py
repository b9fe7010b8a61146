"""Exception types shared across the package."""


class FreyflowError(Exception):
    """Base class for all package-specific errors."""


class InvalidGeometryError(FreyflowError):
    pass


class StressCellOutsideMaskError(FreyflowError):
    pass


class CovarianceNotPositiveDefiniteError(FreyflowError):
    pass


class InsufficientSamplesError(FreyflowError):
    pass


class ZeroEigenvalueModeError(FreyflowError):
    pass


class ConvergenceError(FreyflowError):
    """Raised when an iterative solve fails; carries diagnostics."""

    def __init__(self, message, iterations=None, final_change=None, step=None):
        super().__init__(message)
        self.iterations = iterations
        self.final_change = final_change
        self.step = step


class VersionMismatchError(FreyflowError):
    pass


class CorruptContainerError(FreyflowError):
    pass


class FingerprintMismatchError(FreyflowError):
    pass


class BundleAssemblyError(FreyflowError):
    """A surrogate bundle could not be assembled; names the missing piece."""


class TrainingDivergedError(FreyflowError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class ZeroReferenceError(FreyflowError):
    pass


class ProvenanceError(FreyflowError):
    pass
