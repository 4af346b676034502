"""Exception types raised across the package."""


class NtlError(Exception):
    """Base class for all package errors."""


# raster-core
class DomainError(NtlError, ValueError):
    pass


class PropagatedNaN(NtlError, ValueError):
    pass


class EmptyRaster(NtlError, ValueError):
    pass


class DegenerateCalibration(NtlError, ValueError):
    pass


class ExtentMismatch(NtlError, ValueError):
    pass


class RasterFormatError(NtlError, ValueError):
    pass


# synthgen
class SpecError(NtlError, ValueError):
    pass


# preprocess
class RasterTooSmall(NtlError, ValueError):
    pass


class MaskMismatch(NtlError, ValueError):
    pass


class TooFewBlocks(NtlError, ValueError):
    pass


# autodiff
class ShapeError(NtlError, ValueError):
    pass


class GraphCycle(NtlError, RuntimeError):
    pass


class NonScalarLoss(NtlError, ValueError):
    pass


class DegenerateBatch(NtlError, FloatingPointError):
    pass


class NonFiniteGradient(NtlError, FloatingPointError):
    pass


# cut-model / train-loop
class TooFewLocations(NtlError, ValueError):
    pass


class DegenerateSamples(NtlError, ValueError):
    pass


class NonFiniteLoss(NtlError, FloatingPointError):
    def __init__(self, iteration, values):
        self.iteration = iteration
        self.values = values
        super().__init__(f"non-finite loss at iteration {iteration}: {values}")


# evaluate
class ZeroVariance(NtlError, ValueError):
    pass


class WindowTooLarge(NtlError, ValueError):
    pass


class SingularFit(NtlError, ValueError):
    pass


class ManifestMismatch(NtlError, ValueError):
    pass


# pipeline
class StageError(NtlError, RuntimeError):
    """A pipeline stage was handed the output of the wrong stage."""
