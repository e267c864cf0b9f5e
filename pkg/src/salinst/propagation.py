"""Flow-based mask warping and recurrent confidence-driven propagation.

Instances from frames fused with high confidence are warped into
adjacent lower-confidence frames and offered as extra fusion
candidates there; the neighbor is re-fused and the new result is kept
only if its frame confidence strictly increases. Passes repeat until
the video's mean frame confidence converges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from salinst.errors import ValidationError
from salinst.fusion import FusionParams, sequential_fuse
from salinst.masks import as_mask, iou
from salinst.model import FlowField, FusedFrame, InstanceProposal

__all__ = [
    "PropagationParams",
    "PropagationResult",
    "build_candidate_pools",
    "propagate_pass",
    "proposal_tags",
    "recurrent_propagate",
    "warp_mask",
]


@dataclass(frozen=True)
class PropagationParams:
    max_iters: int = 5
    eps: float = 1e-4  # convergence tolerance on mean frame confidence

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValidationError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.eps <= 0.0:
            raise ValidationError(f"eps must be positive, got {self.eps}")


# A warped candidate overlapping an existing instance this strongly is the
# same object already segmented there and is not offered again; warping can
# only supply instances the neighbor is missing, never rivals for ones it
# has. Same correspondence threshold as identity handoff.
ALREADY_FUSED_IOU = 0.7


def warp_mask(m, flow_to_source: FlowField) -> np.ndarray:
    """Inverse warp with nearest-neighbor sampling.

    Target pixel p is set iff the source pixel at round(p + flow(p))
    falls inside the frame and is set in ``m``. To carry a mask from
    frame t to t+1, ``flow_to_source`` is frame t+1's backward flow;
    from t to t-1, it is frame t-1's forward flow.
    """
    m = as_mask(m)
    if m.shape != flow_to_source.shape:
        raise ValidationError(
            f"mask/flow dimension mismatch: {m.shape} vs {flow_to_source.shape}")
    h, w = m.shape
    ys, xs = np.indices((h, w))
    sx = np.rint(xs + flow_to_source.u).astype(np.int64)
    sy = np.rint(ys + flow_to_source.v).astype(np.int64)
    inside = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    out = np.zeros_like(m)
    out[inside] = m[sy[inside], sx[inside]]
    return out


def proposal_tags(bundles) -> list[list[int]]:
    """Video-unique provisional tags for every frame's proposals."""
    tags = []
    counter = 0
    for b in bundles:
        tags.append(list(range(counter, counter + len(b.proposals))))
        counter += len(b.proposals)
    return tags


def build_candidate_pools(bundles) -> list[list[tuple[int, InstanceProposal]]]:
    """Initial per-frame fusion candidate pools: each frame's own proposals."""
    tags = proposal_tags(bundles)
    return [list(zip(t, b.proposals)) for t, b in zip(tags, bundles)]


def _refuse(pool, frame: FusedFrame, params: FusionParams) -> FusedFrame:
    proposals = [p for _, p in pool]
    tags = [t for t, _ in pool]
    return sequential_fuse(proposals, frame.salient, params,
                           tags=tags, index=frame.index)


def propagate_pass(frames, bundles, params: FusionParams = FusionParams(),
                   pools=None) -> tuple[list[FusedFrame], bool]:
    """One propagation sweep in descending frame-confidence order.

    Whenever a visited frame's current confidence strictly exceeds an
    adjacent frame's, its instances are warped into that neighbor and
    appended to the neighbor's candidate pool (skipping tags the pool
    already holds), the neighbor is re-fused from its full pool, and
    the result is committed only on a strict confidence increase.
    Commits earlier in the pass are visible to later steps; the visit
    order itself is fixed when the pass starts.

    ``pools`` (from ``build_candidate_pools``) is mutated in place so
    candidates accumulate across passes; omitting it builds fresh
    pools, which makes sense for a single standalone pass only.
    """
    frames = list(frames)
    if len(frames) != len(bundles):
        raise ValidationError("fused frames and bundles must parallel")
    if pools is None:
        pools = build_candidate_pools(bundles)
    order = sorted(range(len(frames)), key=lambda i: (-frames[i].fc, i))
    changed = False

    for t in order:
        for nb in (t + 1, t - 1):
            if not 0 <= nb < len(frames):
                continue
            if frames[t].fc <= frames[nb].fc:
                continue
            if nb == t + 1:
                flow = bundles[nb].flow_bwd
            else:
                flow = bundles[nb].flow_fwd
            if flow is None:
                continue
            pool_tags = {tag for tag, _ in pools[nb]}
            added = False
            for inst in frames[t].instances:
                if inst.tag in pool_tags:
                    continue
                warped = warp_mask(inst.region, flow)
                if not warped.any():
                    continue
                if any(iou(warped, ex.region) >= ALREADY_FUSED_IOU
                       for ex in frames[nb].instances):
                    continue
                pools[nb].append((inst.tag, InstanceProposal(
                    region=warped, category=inst.category,
                    cls_score=inst.cls_score)))
                added = True
            if not added:
                continue
            refused = _refuse(pools[nb], frames[nb], params)
            if refused.fc > frames[nb].fc:
                frames[nb] = refused
                changed = True
    return frames, changed


def mean_confidence(frames) -> float:
    if not frames:
        return 0.0
    return sum(f.fc for f in frames) / len(frames)


@dataclass(frozen=True)
class PropagationResult:
    frames: list[FusedFrame]
    mean_fc_history: list[float]  # mean confidence before and after each pass

    @property
    def iterations(self) -> int:
        return len(self.mean_fc_history) - 1


def recurrent_propagate(frames, bundles,
                        fusion_params: FusionParams = FusionParams(),
                        params: PropagationParams = PropagationParams()) -> PropagationResult:
    """Repeat propagation passes until mean confidence converges.

    Stops when the change in mean frame confidence drops below
    ``params.eps`` or after ``params.max_iters`` passes. Mean
    confidence never decreases because every commit requires a strict
    per-frame increase.
    """
    frames = list(frames)
    pools = build_candidate_pools(bundles)
    history = [mean_confidence(frames)]
    for _ in range(params.max_iters):
        frames, changed = propagate_pass(frames, bundles, fusion_params, pools)
        history.append(mean_confidence(frames))
        if not changed or abs(history[-1] - history[-2]) < params.eps:
            break
    return PropagationResult(frames=frames, mean_fc_history=history)
