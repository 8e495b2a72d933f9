"""Exception types shared across the pipeline."""


class GuidedMVSError(Exception):
    """Base class for all pipeline errors."""


class NonPositiveDepth(GuidedMVSError, ValueError):
    pass


class NonIntegerResolution(GuidedMVSError, ValueError):
    pass


class ResolutionMismatch(GuidedMVSError, ValueError):
    pass


class EmptyImage(GuidedMVSError, ValueError):
    pass


class InvalidRange(GuidedMVSError, ValueError):
    pass


class NonPositiveHint(GuidedMVSError, ValueError):
    pass


class InvalidDensity(GuidedMVSError, ValueError):
    pass


class DegenerateScene(GuidedMVSError):
    pass


class EmptyGT(GuidedMVSError, ValueError):
    pass


class EmptyCloud(GuidedMVSError, ValueError):
    pass


class ParseError(GuidedMVSError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class NonOrthonormalRotation(ParseError):
    pass


class UnsupportedPFMVariant(ParseError):
    pass


class OutOfBoundsHint(ParseError):
    pass
