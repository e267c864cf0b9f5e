"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(PipelineError):
    """A file on disk does not conform to its expected format.

    Carries enough location context (path, byte offset or frame index)
    to point at the offending input.
    """

    def __init__(self, message, *, path=None, offset=None, frame=None):
        parts = [message]
        if path is not None:
            parts.append(f"path={path}")
        if offset is not None:
            parts.append(f"byte_offset={offset}")
        if frame is not None:
            parts.append(f"frame={frame}")
        super().__init__(" | ".join(str(p) for p in parts))
        self.path = path
        self.offset = offset
        self.frame = frame


class ValidationError(PipelineError):
    """In-memory inputs violate a documented contract."""
