"""Video salient-instance fusion toolkit.

Fuses precomputed per-frame semantic instance proposals with salient-region
masks into non-overlapping, identity-consistent, semantically labeled
instance maps over an entire video, and evaluates the result with
identity-and-label-gated region/contour metrics.
"""

from salinst.errors import FormatError, PipelineError, ValidationError

__all__ = ["FormatError", "PipelineError", "ValidationError"]
__version__ = "0.1.0"
