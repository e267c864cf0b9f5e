"""Binary mask primitives: geometry, region/contour metrics, RLE codec.

A mask is a 2-D boolean numpy array of shape (height, width), one entry
per pixel, row-major. All functions treat masks as immutable values and
never write into their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from salinst.errors import FormatError, ValidationError

__all__ = [
    "RleMask",
    "as_mask",
    "boundary",
    "contour_accuracy",
    "default_contour_radius",
    "iou",
    "region_similarity",
    "rle_decode",
    "rle_encode",
]


def as_mask(a) -> np.ndarray:
    """Validate and normalize an array-like into a 2-D boolean mask."""
    m = np.asarray(a)
    if m.ndim != 2:
        raise ValidationError(f"mask must be 2-D, got shape {m.shape}")
    if m.shape[0] <= 0 or m.shape[1] <= 0:
        raise ValidationError(f"mask must be nonempty, got shape {m.shape}")
    return m.astype(bool, copy=False)


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValidationError(
            f"mask dimensions do not match: {a.shape} vs {b.shape}"
        )


def iou(a, b) -> float:
    """Intersection over union of two equally sized masks.

    Returns 0.0 when both masks are empty: no overlap evidence. This is
    the matching/fusion convention; for the evaluation convention see
    ``region_similarity``.
    """
    a = as_mask(a)
    b = as_mask(b)
    _check_same_shape(a, b)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 0.0
    inter = int(np.count_nonzero(a & b))
    return inter / union


def region_similarity(pred, gt) -> float:
    """Region similarity of a predicted mask against ground truth.

    Identical to ``iou`` except that two empty masks score 1.0:
    correctly predicting absence gets full credit.
    """
    pred = as_mask(pred)
    gt = as_mask(gt)
    _check_same_shape(pred, gt)
    union = int(np.count_nonzero(pred | gt))
    if union == 0:
        return 1.0
    inter = int(np.count_nonzero(pred & gt))
    return inter / union


def boundary(m) -> np.ndarray:
    """Pixels of ``m`` with at least one unset (or out-of-frame) 4-neighbor."""
    m = as_mask(m)
    interior = np.zeros_like(m)
    interior[1:-1, 1:-1] = (
        m[1:-1, 1:-1]
        & m[:-2, 1:-1]
        & m[2:, 1:-1]
        & m[1:-1, :-2]
        & m[1:-1, 2:]
    )
    return m & ~interior


def default_contour_radius(height: int, width: int) -> int:
    """Matching tolerance: ceil of 0.8% of the frame diagonal."""
    return int(math.ceil(0.008 * math.hypot(height, width)))


def _disk_footprint(radius: float) -> np.ndarray:
    r = int(math.floor(radius))
    if r <= 0:
        return np.ones((1, 1), dtype=bool)
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    return (dy * dy + dx * dx) <= radius * radius


def contour_accuracy(pred, gt, radius: float | None = None) -> float:
    """F-measure between the boundaries of two masks.

    Precision is the fraction of predicted-boundary pixels within
    Euclidean distance ``radius`` of some ground-truth-boundary pixel;
    recall is symmetric. Returns 2PR/(P+R), 0 when P+R == 0. Two empty
    masks score 1.0, exactly one empty scores 0.0.

    ``radius`` defaults to ``default_contour_radius`` of the frame. The
    distance test is exact: integer squared pixel distance against
    radius**2, realized as dilation by an exact Euclidean disk.
    """
    pred = as_mask(pred)
    gt = as_mask(gt)
    _check_same_shape(pred, gt)
    if radius is None:
        radius = default_contour_radius(*pred.shape)
    if radius < 0:
        raise ValidationError(f"radius must be >= 0, got {radius}")

    pred_any = bool(pred.any())
    gt_any = bool(gt.any())
    if not pred_any and not gt_any:
        return 1.0
    if pred_any != gt_any:
        return 0.0

    pb = boundary(pred)
    gb = boundary(gt)
    footprint = _disk_footprint(radius)
    pb_near = ndimage.binary_dilation(pb, structure=footprint)
    gb_near = ndimage.binary_dilation(gb, structure=footprint)

    n_pred = int(np.count_nonzero(pb))
    n_gt = int(np.count_nonzero(gb))
    precision = int(np.count_nonzero(pb & gb_near)) / n_pred
    recall = int(np.count_nonzero(gb & pb_near)) / n_gt
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class RleMask:
    """Run-length encoded mask: alternating 0-run/1-run lengths, row-major.

    The first run counts zeros (possibly zero-length); runs must sum to
    width * height.
    """

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(
                f"RLE dimensions must be positive, got {self.width}x{self.height}"
            )
        if any(r < 0 for r in self.runs):
            raise ValidationError("RLE runs must be non-negative")


def rle_encode(m) -> RleMask:
    """Encode a mask as alternating 0/1 run lengths."""
    m = as_mask(m)
    h, w = m.shape
    flat = m.ravel()
    # run boundaries where the value changes
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change, [flat.size]))
    lengths = np.diff(starts).tolist()
    if flat[0]:
        lengths = [0] + lengths
    return RleMask(width=w, height=h, runs=tuple(int(x) for x in lengths))


def rle_decode(r: RleMask) -> np.ndarray:
    """Expand an RLE back into a mask; rejects corrupt run sums."""
    total = sum(r.runs)
    if total != r.width * r.height:
        raise FormatError(
            f"RLE runs sum to {total}, expected {r.width * r.height}"
        )
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in r.runs:
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    return flat.reshape(r.height, r.width)
