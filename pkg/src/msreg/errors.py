"""Exception types shared across the package."""


class MsregError(Exception):
    """Base class for all package-specific errors."""


class ParseError(MsregError):
    """A cloud file could not be parsed.

    Carries the file path and, when known, the 1-based line number
    (text formats) or byte offset (binary formats) of the failure.
    """

    def __init__(self, path, message, line=None, offset=None):
        self.path = str(path)
        self.line = line
        self.offset = offset
        where = self.path
        if line is not None:
            where += f", line {line}"
        if offset is not None:
            where += f", byte {offset}"
        super().__init__(f"{where}: {message}")


class CheckpointError(MsregError):
    """Checkpoint file is invalid, truncated, or inconsistent."""


class NonFiniteError(MsregError):
    """A NaN or infinity was found where a finite value is required."""


class DegenerateInputError(MsregError):
    """Geometric input does not constrain the requested estimate."""


class EmptyCropError(MsregError):
    """A crop produced no points; the caller should redraw."""


class PairGenerationError(MsregError):
    """Pair generation exhausted its retry budget for a source cloud."""


class TrainingError(MsregError):
    """Training aborted, e.g. on a non-finite loss."""
