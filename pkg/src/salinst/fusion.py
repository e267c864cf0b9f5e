"""Per-frame fusion of instance proposals with the binarized salient mask.

The salient region is carved into disjoint instance regions greedily:
at each step the live proposal overlapping the remaining salient mask
best (by IOU) claims its overlap and that area is removed from the
mask. Selection stops once the best remaining overlap drops to the
segmentation threshold or no live proposal is left, so nothing at or
below the threshold is ever merged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from salinst.errors import ValidationError
from salinst.masks import as_mask, iou
from salinst.model import ConfidentInstance, FusedFrame

__all__ = [
    "FusionParams",
    "binarize_saliency",
    "confidence_score",
    "frame_confidence",
    "random_order_fuse",
    "sequential_fuse",
]


@dataclass(frozen=True)
class FusionParams:
    theta_seg: float = 0.1   # minimum overlap for a proposal to count as present
    beta_sq: float = 0.3     # weight of the segmentation score in the confidence
    min_cls: float = 0.7     # classification-score filter applied upstream

    def __post_init__(self):
        if not 0.0 < self.theta_seg < 1.0:
            raise ValidationError(f"theta_seg must be in (0, 1), got {self.theta_seg}")
        if self.beta_sq <= 0.0:
            raise ValidationError(f"beta_sq must be positive, got {self.beta_sq}")


def binarize_saliency(saliency) -> np.ndarray:
    """Threshold a saliency map at mean plus one standard deviation.

    A pixel is salient iff its value strictly exceeds mu + eta, where mu
    and eta are the mean and population standard deviation over the
    whole frame. A constant map therefore yields an empty mask.
    """
    s = np.asarray(saliency, dtype=np.float64)
    mu = float(s.mean())
    eta = float(s.std())
    return s > (mu + eta)


def confidence_score(s_seg: float, s_cls: float, beta_sq: float = 0.3) -> float:
    """Weighted harmonic trade-off of segmentation overlap and class score.

    ``(1 + b) * s_seg * s_cls / (b * s_seg + s_cls)``; equals ``s`` when
    both inputs are ``s``. Returns 0.0 when both inputs are zero.
    """
    if s_seg == 0.0 and s_cls == 0.0:
        return 0.0
    return (1.0 + beta_sq) * s_seg * s_cls / (beta_sq * s_seg + s_cls)


def frame_confidence(scores) -> float:
    """Mean confidence over selected instances; 0.0 for an empty frame."""
    scores = list(scores)
    if not scores:
        return 0.0
    return sum(scores) / len(scores)


def _prepare(proposals, salient, tags):
    salient = as_mask(salient)
    for k, p in enumerate(proposals):
        if p.region.shape != salient.shape:
            raise ValidationError(
                f"proposal {k} dimension mismatch: "
                f"{p.region.shape} vs {salient.shape}")
    if tags is None:
        tags = list(range(len(proposals)))
    elif len(tags) != len(proposals):
        raise ValidationError("tags must parallel proposals")
    return salient, list(tags)


def sequential_fuse(proposals, salient, params: FusionParams = FusionParams(),
                    tags=None, index: int = 0) -> FusedFrame:
    """Greedy best-overlap-first carve of the salient mask into instances.

    Each iteration scores every live proposal by IOU against the
    remaining mask, permanently drops those scoring zero, and commits
    the best one (ties: higher cls_score, then input order) if it
    strictly exceeds ``params.theta_seg``. The committed region is the
    proposal clipped to the remaining mask, which is then reduced, so
    outputs are pairwise disjoint subsets of ``salient``.

    ``tags`` optionally assigns each proposal its provisional instance
    handle (defaults to input position).
    """
    salient, tags = _prepare(proposals, salient, tags)
    remaining = salient.copy()
    live = list(range(len(proposals)))
    selected: list[ConfidentInstance] = []
    cs_values: list[float] = []

    while live:
        scores = {}
        for i in list(live):
            s = iou(proposals[i].region, remaining)
            if s == 0.0:
                live.remove(i)  # dead for all later iterations
            else:
                scores[i] = s
        if not scores:
            break
        best = max(scores, key=lambda i: (scores[i], proposals[i].cls_score, -i))
        if scores[best] <= params.theta_seg:
            break
        prop = proposals[best]
        carved = prop.region & remaining
        cs = confidence_score(scores[best], prop.cls_score, params.beta_sq)
        selected.append(ConfidentInstance(
            tag=tags[best], region=carved, category=prop.category,
            cls_score=prop.cls_score, cs=cs))
        cs_values.append(cs)
        remaining &= ~carved
        live.remove(best)

    return FusedFrame(index=index, instances=tuple(selected),
                      fc=frame_confidence(cs_values), salient=salient)


def random_order_fuse(proposals, salient, rng: np.random.Generator,
                      params: FusionParams = FusionParams(),
                      tags=None, index: int = 0) -> FusedFrame:
    """Ablation baseline: carve proposals in random order.

    Identical to ``sequential_fuse`` except that the next proposal is
    taken from a shuffle instead of by best overlap: each one is scored
    against the remaining mask at its turn and committed only if it
    strictly exceeds ``params.theta_seg``. Confidence bookkeeping
    matches ``sequential_fuse`` so downstream stages behave identically.
    """
    salient, tags = _prepare(proposals, salient, tags)
    remaining = salient.copy()
    order = rng.permutation(len(proposals))
    selected = []
    cs_values = []
    for i in order:
        prop = proposals[i]
        s = iou(prop.region, remaining)
        if s <= params.theta_seg:
            continue
        carved = prop.region & remaining
        cs = confidence_score(s, prop.cls_score, params.beta_sq)
        selected.append(ConfidentInstance(
            tag=tags[i], region=carved, category=prop.category,
            cls_score=prop.cls_score, cs=cs))
        cs_values.append(cs)
        remaining &= ~carved
    return FusedFrame(index=index, instances=tuple(selected),
                      fc=frame_confidence(cs_values), salient=salient)
