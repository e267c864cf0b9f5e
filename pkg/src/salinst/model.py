"""Video-level data containers and the category registry.

Conventions used throughout the package:

* masks are ``(h, w)`` bool arrays (see ``salinst.masks``)
* saliency maps are ``(h, w)`` float arrays with values in [0, 1]
* frame images are ``(h, w, 3)`` uint8 RGB arrays
* identity 0 is reserved for background in labeled instance maps
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from salinst.errors import ValidationError
from salinst.masks import as_mask

# The 29 category names the instance detector may emit, in registry order.
DEFAULT_CATEGORY_NAMES = (
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train",
    "truck", "boat", "bird", "cat", "dog", "horse", "sheep", "cow",
    "elephant", "bear", "backpack", "snowboard", "sports ball", "kite",
    "skateboard", "surfboard", "tennis racket", "chair", "tv", "remote",
    "cell phone", "clock",
)


@dataclass(frozen=True)
class CategoryRegistry:
    """Ordered mapping of category ids to names. Ids must be unique."""

    entries: tuple[tuple[int, str], ...]

    def __post_init__(self):
        ids = [i for i, _ in self.entries]
        if len(ids) != len(set(ids)):
            raise ValidationError("category ids must be unique")

    @classmethod
    def default(cls) -> "CategoryRegistry":
        return cls(tuple(enumerate(DEFAULT_CATEGORY_NAMES, start=1)))

    def __contains__(self, category_id: int) -> bool:
        return any(i == category_id for i, _ in self.entries)

    def name(self, category_id: int) -> str:
        for i, n in self.entries:
            if i == category_id:
                return n
        raise KeyError(category_id)

    def ids(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.entries)


@dataclass(frozen=True)
class InstanceProposal:
    """One candidate instance from the per-frame detection input.

    A well-formed proposal has a nonempty region and cls_score in
    [0, 1]; readers enforce this at parse time and ``validate_bundle``
    diagnoses violations on in-memory data.
    """

    region: np.ndarray  # (h, w) bool
    category: int
    cls_score: float

    def __post_init__(self):
        object.__setattr__(self, "region", as_mask(self.region))


@dataclass(frozen=True)
class FlowField:
    """Dense displacement field between two adjacent frames.

    ``u`` is the x (column) displacement and ``v`` the y (row)
    displacement, both ``(h, w)`` float arrays in pixels.
    """

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float32)
        v = np.asarray(self.v, dtype=np.float32)
        if u.ndim != 2 or u.shape != v.shape:
            raise ValidationError(
                f"flow planes must be 2-D and equal-shaped, got {u.shape} vs {v.shape}"
            )
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise ValidationError("flow contains non-finite values")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    @classmethod
    def zero(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width), np.float32),
                   np.zeros((height, width), np.float32))


@dataclass(frozen=True)
class FrameBundle:
    """Everything the pipeline consumes for one frame."""

    index: int
    image: np.ndarray  # (h, w, 3) uint8
    proposals: tuple[InstanceProposal, ...]
    saliency: np.ndarray  # (h, w) float in [0, 1]
    flow_fwd: FlowField | None = None  # this frame -> next
    flow_bwd: FlowField | None = None  # this frame -> previous


@dataclass(frozen=True)
class ConfidentInstance:
    """One instance selected by fusion: a carved region plus its scores.

    ``tag`` is a provisional, video-unique instance handle assigned at
    ingest; warped copies of an instance inherit the source tag so that
    re-fusion keeps continuity. Final identities are assigned later by
    the tracking pass.
    """

    tag: int
    region: np.ndarray
    category: int
    cls_score: float
    cs: float


@dataclass(frozen=True)
class FusedFrame:
    """Per-frame fusion result: disjoint confident instances + confidence.

    Invariants: instance regions are pairwise disjoint, each is a subset
    of ``salient`` (the binarized salient mask used at fusion time), and
    ``fc`` is the mean of the instance confidence scores (0 if none).
    """

    index: int
    instances: tuple[ConfidentInstance, ...]
    fc: float
    salient: np.ndarray

    def label_map(self) -> tuple[np.ndarray, dict[int, int]]:
        """Per-pixel tag map (0 = background) plus tag -> category."""
        labels = np.zeros(self.salient.shape, dtype=np.int32)
        categories = {}
        for inst in self.instances:
            labels[inst.region] = inst.tag
            categories[inst.tag] = inst.category
        return labels, categories


def validate_bundle(bundle: FrameBundle) -> list[str]:
    """Check one bundle for internal consistency; returns all violations."""
    problems = []
    img = np.asarray(bundle.image)
    if img.ndim != 3 or img.shape[2] != 3:
        problems.append(f"image must be (h, w, 3), got shape {img.shape}")
        return problems
    h, w = img.shape[:2]

    sal = np.asarray(bundle.saliency)
    if sal.shape != (h, w):
        problems.append(
            f"saliency dimension mismatch: {sal.shape} vs frame {(h, w)}"
        )
    elif sal.size and (sal.min() < 0.0 or sal.max() > 1.0):
        problems.append("saliency values outside [0, 1]")

    for k, p in enumerate(bundle.proposals):
        if p.region.shape != (h, w):
            problems.append(
                f"proposal {k}: dimension mismatch {p.region.shape} vs {(h, w)}"
            )
        elif not p.region.any():
            problems.append(f"proposal {k}: empty region")
        if not 0.0 <= p.cls_score <= 1.0:
            problems.append(f"proposal {k}: cls_score {p.cls_score} outside [0, 1]")

    for name, flow in (("flow_fwd", bundle.flow_fwd), ("flow_bwd", bundle.flow_bwd)):
        if flow is not None and flow.shape != (h, w):
            problems.append(
                f"{name} dimension mismatch: {flow.shape} vs frame {(h, w)}"
            )
    return problems


def filter_proposals(proposals, min_cls: float = 0.7):
    """Keep proposals whose classification score strictly exceeds ``min_cls``."""
    return [p for p in proposals if p.cls_score > min_cls]
