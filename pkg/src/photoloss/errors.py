"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called outside its documented preconditions."""


class RasterLoadError(ValueError):
    """A raster file could not be decoded.

    ``offset`` is the byte position in the file where decoding failed.
    """

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset
