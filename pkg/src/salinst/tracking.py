"""Identity tracking over the whole video.

Short-term consistency comes from flow-warped IOU matching between
consecutive frames; long-term consistency from re-identification of lost
identities via appearance descriptors extracted at each identity's
key-frame. A final unification pass fixes one semantic category per
identity by summing classification scores over the video.

The ledger is single-writer state owned by the tracking pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from salinst.errors import ValidationError
from salinst.masks import as_mask, iou
from salinst.model import FlowField, FusedFrame
from salinst.propagation import warp_mask

__all__ = [
    "AppearanceDescriptor",
    "TrackLedger",
    "TrackingParams",
    "bounding_box",
    "cosine_similarity",
    "describe",
    "init_identities",
    "propagate_identities",
    "reidentify",
    "select_keyframe",
    "track_video",
    "unify_semantics",
]

ACTIVE = "active"
LOST = "lost"
CLOSED = "closed"

# Descriptors are unit-L2 joint RGB histograms; an alias for readability.
AppearanceDescriptor = np.ndarray


@dataclass(frozen=True)
class TrackingParams:
    theta_id: float = 0.7        # IOU gate for identity handoff and re-ID adoption
    reid_min_sim: float = 0.5    # appearance-similarity floor for re-ID
    descriptor_bins: int = 8     # histogram bins per color channel
    use_hungarian: bool = False  # optimal assignment instead of greedy

    def __post_init__(self):
        if not 0.0 < self.theta_id <= 1.0:
            raise ValidationError(f"theta_id must be in (0, 1], got {self.theta_id}")


@dataclass
class TrackEntry:
    region: np.ndarray
    category: int
    cls_score: float


@dataclass
class TrackRecord:
    ident: int
    born: int                     # frame of first appearance
    status: str = ACTIVE
    frames: dict[int, TrackEntry] = field(default_factory=dict)
    keyframe: int | None = None
    query_desc: np.ndarray | None = None
    unified_category: int | None = None


class TrackLedger:
    """Per-video identity bookkeeping: one region per identity per frame.

    Identities are opaque increasing integers starting at 1 (0 is the
    background label); they are never merged and their numbers are never
    reused.
    """

    def __init__(self):
        self.records: dict[int, TrackRecord] = {}
        self.next_id = 1
        # frame index -> (instance position in FusedFrame.instances -> identity)
        self.assignments: dict[int, dict[int, int]] = {}
        self.events: list[dict] = []

    def new_identity(self, frame: int, pos: int, entry: TrackEntry) -> int:
        ident = self.next_id
        self.next_id += 1
        self.records[ident] = TrackRecord(ident=ident, born=frame,
                                          frames={frame: entry})
        self.assignments.setdefault(frame, {})[pos] = ident
        self.events.append({"frame": frame, "event": "birth", "identity": ident})
        return ident

    def record_match(self, ident: int, frame: int, pos: int, entry: TrackEntry) -> None:
        rec = self.records[ident]
        if frame in rec.frames:
            raise ValidationError(
                f"identity {ident} already has a region at frame {frame}")
        rec.frames[frame] = entry
        rec.status = ACTIVE
        self.assignments.setdefault(frame, {})[pos] = ident

    def mark_lost(self, ident: int, frame: int) -> None:
        self.records[ident].status = LOST
        self.events.append({"frame": frame, "event": "lost", "identity": ident})

    def revive(self, ident: int, frame: int, pos: int, entry: TrackEntry) -> None:
        self.record_match(ident, frame, pos, entry)
        self.events.append({"frame": frame, "event": "reid", "identity": ident})

    def identities_at(self, frame: int) -> dict[int, int]:
        return dict(self.assignments.get(frame, {}))

    def active_identities(self) -> list[int]:
        return sorted(i for i, r in self.records.items() if r.status == ACTIVE)

    def lost_identities(self) -> list[int]:
        return sorted(i for i, r in self.records.items() if r.status == LOST)

    def untracked_positions(self, frame: FusedFrame) -> list[int]:
        """Instance positions holding no identity, or one born this frame."""
        assigned = self.assignments.get(frame.index, {})
        out = []
        for pos in range(len(frame.instances)):
            ident = assigned.get(pos)
            if ident is None or self.records[ident].born == frame.index:
                out.append(pos)
        return out

    def finalize(self) -> None:
        for rec in self.records.values():
            rec.status = CLOSED

    def label_maps(self, n_frames: int, shape) -> list[np.ndarray]:
        maps = []
        for f in range(n_frames):
            labels = np.zeros(shape, dtype=np.uint16)
            for ident in sorted(self.records):
                entry = self.records[ident].frames.get(f)
                if entry is not None:
                    labels[entry.region] = ident
            maps.append(labels)
        return maps

    def unified_categories(self) -> dict[int, int]:
        out = {}
        for ident, rec in sorted(self.records.items()):
            if rec.unified_category is not None:
                out[ident] = rec.unified_category
            elif rec.frames:
                f = min(rec.frames)
                out[ident] = rec.frames[f].category
        return out


def _entry(inst) -> TrackEntry:
    return TrackEntry(region=inst.region, category=inst.category,
                      cls_score=inst.cls_score)


def init_identities(first: FusedFrame) -> TrackLedger:
    """Give every confident instance of the first frame a fresh identity."""
    ledger = TrackLedger()
    for pos, inst in enumerate(first.instances):
        ledger.new_identity(first.index, pos, _entry(inst))
    return ledger


def propagate_identities(prev: FusedFrame, cur: FusedFrame,
                         flow_to_prev: FlowField,
                         params: TrackingParams,
                         ledger: TrackLedger,
                         mint_fresh: bool = True) -> dict[int, int]:
    """Carry identities from ``prev`` to ``cur`` by flow-warped IOU matching.

    Each identity present at ``prev`` has its region warped into ``cur``
    and is matched one-to-one against the confident instances there;
    only pairs with IOU >= theta_id are accepted (greedy in descending
    IOU, or optimal when ``params.use_hungarian``). Identities left
    unmatched go lost; instances left unmatched receive fresh
    identities unless ``mint_fresh`` is off (the orchestrator defers
    minting until after re-identification).

    Returns instance position -> identity for the accepted matches.
    """
    prev_ids = sorted(ledger.identities_at(prev.index).values())
    warped = {}
    for ident in prev_ids:
        region = ledger.records[ident].frames[prev.index].region
        warped[ident] = warp_mask(region, flow_to_prev)

    matches: dict[int, int] = {}
    if prev_ids and cur.instances:
        matrix = np.zeros((len(prev_ids), len(cur.instances)))
        for a, ident in enumerate(prev_ids):
            for pos, inst in enumerate(cur.instances):
                matrix[a, pos] = iou(warped[ident], inst.region)
        if params.use_hungarian:
            rows, cols = linear_sum_assignment(-matrix)
            accepted = [(r, c) for r, c in zip(rows, cols)
                        if matrix[r, c] >= params.theta_id]
        else:
            pairs = sorted(
                ((matrix[a, pos], a, pos)
                 for a in range(len(prev_ids))
                 for pos in range(len(cur.instances))),
                key=lambda t: (-t[0], t[1], t[2]))
            taken_a, taken_pos = set(), set()
            accepted = []
            for score, a, pos in pairs:
                if score < params.theta_id:
                    break
                if a in taken_a or pos in taken_pos:
                    continue
                accepted.append((a, pos))
                taken_a.add(a)
                taken_pos.add(pos)
        for a, pos in accepted:
            matches[pos] = prev_ids[a]

    for pos, ident in sorted(matches.items()):
        ledger.record_match(ident, cur.index, pos, _entry(cur.instances[pos]))
    for ident in prev_ids:
        if ident not in matches.values():
            ledger.mark_lost(ident, cur.index)
    if mint_fresh:
        for pos, inst in enumerate(cur.instances):
            if pos not in matches:
                ledger.new_identity(cur.index, pos, _entry(inst))
    return matches


def select_keyframe(ledger: TrackLedger, ident: int, upto_frame: int) -> int:
    """Frame maximizing the identity's mean connected-component area.

    The score for a frame is the region's pixel area divided by its
    number of connected components (8-connectivity); ties resolve to
    the earliest frame.
    """
    rec = ledger.records.get(ident)
    if rec is None:
        raise ValidationError(f"unknown identity {ident}")
    best_frame, best_score = None, -1.0
    for f in sorted(rec.frames):
        if f > upto_frame:
            continue
        region = rec.frames[f].region
        area = int(np.count_nonzero(region))
        _, n = ndimage.label(region, structure=np.ones((3, 3), dtype=int))
        score = area / n if n else 0.0
        if score > best_score:
            best_frame, best_score = f, score
    if best_frame is None:
        raise ValidationError(
            f"identity {ident} has no recorded frame at or before {upto_frame}")
    return best_frame


def bounding_box(mask) -> tuple[int, int, int, int]:
    """Tight (x, y, w, h) box around a nonempty mask."""
    mask = as_mask(mask)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValidationError("cannot bound an empty mask")
    return (int(xs.min()), int(ys.min()),
            int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))


def box_mask(box, shape) -> np.ndarray:
    x, y, w, h = box
    m = np.zeros(shape, dtype=bool)
    m[max(y, 0):max(y + h, 0), max(x, 0):max(x + w, 0)] = True
    return m


def describe(image, box, bins: int = 8) -> AppearanceDescriptor:
    """Unit-L2 joint RGB histogram (bins**3 cells) over a box crop."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError(f"image must be (h, w, 3), got {image.shape}")
    x, y, w, h = box
    if w <= 0 or h <= 0:
        raise ValidationError(f"degenerate box {box}")
    fh, fw = image.shape[:2]
    x0, x1 = max(x, 0), min(x + w, fw)
    y0, y1 = max(y, 0), min(y + h, fh)
    if x0 >= x1 or y0 >= y1:
        raise ValidationError(f"box {box} does not intersect the frame")
    crop = image[y0:y1, x0:x1].reshape(-1, 3).astype(np.int64)
    cells = (crop * bins) // 256
    flat = cells[:, 0] * bins * bins + cells[:, 1] * bins + cells[:, 2]
    hist = np.bincount(flat, minlength=bins ** 3).astype(np.float64)
    norm = np.linalg.norm(hist)
    return hist / norm if norm > 0 else hist


def cosine_similarity(a, b) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def reidentify(ident: int, target: FusedFrame, image,
               ledger: TrackLedger, params: TrackingParams,
               external_boxes=()) -> int | None:
    """Try to re-attach a lost identity to an untracked target instance.

    The identity's stored key-frame descriptor is compared (cosine) to
    descriptors of the bounding boxes of untracked instances plus any
    externally supplied boxes; the most similar candidate must clear
    ``reid_min_sim``. The chosen box, rasterized, must then overlap
    some untracked instance's region with IOU strictly above
    ``theta_id`` for that instance to adopt the identity.

    Returns the adopting instance position, or None.
    """
    rec = ledger.records.get(ident)
    if rec is None or rec.status != LOST:
        raise ValidationError(f"identity {ident} is not lost")
    if rec.query_desc is None:
        raise ValidationError(f"identity {ident} has no stored query descriptor")

    untracked = ledger.untracked_positions(target)
    boxes = [bounding_box(target.instances[pos].region) for pos in untracked]
    boxes += [tuple(int(v) for v in b) for b in external_boxes]
    if not boxes:
        return None

    sims = [cosine_similarity(rec.query_desc,
                              describe(image, b, params.descriptor_bins))
            for b in boxes]
    best = int(np.argmax(sims))
    if sims[best] < params.reid_min_sim:
        return None

    chosen = box_mask(boxes[best], target.salient.shape)
    best_pos, best_iou = None, 0.0
    for pos in untracked:
        s = iou(chosen, target.instances[pos].region)
        if s > best_iou:
            best_pos, best_iou = pos, s
    if best_pos is None or best_iou <= params.theta_id:
        return None

    prior = ledger.identities_at(target.index).get(best_pos)
    if prior is not None:
        # ephemeral identity minted this frame; unwind it
        del ledger.records[prior]
        del ledger.assignments[target.index][best_pos]
    ledger.revive(ident, target.index, best_pos, _entry(target.instances[best_pos]))
    return best_pos


def unify_semantics(ledger: TrackLedger) -> dict[int, int]:
    """One category per identity: argmax of video-summed class scores.

    Ties resolve to the smaller category id. The unified label replaces
    the per-frame labels everywhere the identity appears.
    """
    unified = {}
    for ident, rec in sorted(ledger.records.items()):
        totals: dict[int, float] = {}
        for entry in rec.frames.values():
            totals[entry.category] = totals.get(entry.category, 0.0) + entry.cls_score
        if not totals:
            continue
        best = max(sorted(totals), key=lambda c: (totals[c], -c))
        rec.unified_category = best
        for entry in rec.frames.values():
            entry.category = best
        unified[ident] = best
    return unified


def _store_lost_descriptor(ledger: TrackLedger, ident: int, bundles,
                           params: TrackingParams) -> None:
    rec = ledger.records[ident]
    if rec.query_desc is not None:
        return
    last_seen = max(rec.frames)
    kf = select_keyframe(ledger, ident, upto_frame=last_seen)
    box = bounding_box(rec.frames[kf].region)
    rec.keyframe = kf
    rec.query_desc = describe(bundles[kf].image, box, params.descriptor_bins)


def track_video(frames, bundles, params: TrackingParams = TrackingParams(),
                enable_propagation: bool = True, enable_reid: bool = True,
                external_boxes: dict[int, list] | None = None) -> TrackLedger:
    """Run the whole tracking pass over fused frames.

    Sequential by contract: frame by frame, propagate identities, let
    lost identities attempt re-identification against the instances
    still untracked, then mint fresh identities for the rest. With
    ``enable_propagation`` off every frame after the first starts from
    scratch; with ``enable_reid`` off lost identities stay lost.
    """
    if not frames:
        return TrackLedger()
    external_boxes = external_boxes or {}
    ledger = init_identities(frames[0])
    for t in range(1, len(frames)):
        cur = frames[t]
        if enable_propagation:
            propagate_identities(frames[t - 1], cur, bundles[t].flow_bwd,
                                 params, ledger, mint_fresh=False)
        else:
            for ident in ledger.active_identities():
                ledger.mark_lost(ident, cur.index)
        if enable_reid:
            for ident in ledger.lost_identities():
                _store_lost_descriptor(ledger, ident, bundles, params)
                reidentify(ident, cur, bundles[t].image, ledger, params,
                           external_boxes.get(t, ()))
        assigned = ledger.assignments.get(cur.index, {})
        for pos, inst in enumerate(cur.instances):
            if pos not in assigned:
                ledger.new_identity(cur.index, pos, _entry(inst))
    unify_semantics(ledger)
    ledger.finalize()
    return ledger
