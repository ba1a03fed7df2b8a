"""Exception types shared across the package."""


class ShapcamError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ShapcamError, ValueError):
    """An input tensor or vector has an incompatible shape."""


class ModelLoadError(ShapcamError):
    """A model spec or weight file failed to parse or validate."""


class OracleError(ShapcamError):
    """A scoring backend failed.

    ``index`` is set when the failure occurred inside a batch and names the
    offending element.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class UndefinedResultError(ShapcamError):
    """A metric has no defined value for this input (e.g. zero saliency energy)."""


class ImageError(ShapcamError):
    """An image file is unsupported, truncated, or otherwise unreadable."""
