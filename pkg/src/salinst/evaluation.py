"""Semantic instance segmentation metrics over videos.

Predictions and ground truth are sequences of identity label maps plus an
identity -> category mapping. Predicted identities are bound to ground-truth
identities once, on the first frame, by maximizing total IOU; after that a
prediction scores on a frame only if both its identity binding and its
semantic label agree with the ground truth, in which case the region
similarity / contour accuracy of the masks is taken.

Per-instance scores average over that instance's evaluable frames (frames
where prediction and ground truth are both empty are excluded); video and
dataset scores average per-instance scores, instances first.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from salinst.errors import ValidationError
from salinst.masks import (as_mask, contour_accuracy, default_contour_radius,
                           iou, region_similarity)

__all__ = [
    "EvalReport",
    "InstanceEval",
    "LabeledMask",
    "MatchRow",
    "VideoEval",
    "aggregate",
    "evaluate_video",
    "fs",
    "js",
    "match_first_frame",
    "write_report_csv",
    "write_report_json",
]


@dataclass(frozen=True)
class LabeledMask:
    """A mask carrying the identity and semantic label it claims."""
    mask: np.ndarray
    identity: int
    label: int

    def __post_init__(self):
        object.__setattr__(self, "mask", as_mask(self.mask))


def _deltas(m: LabeledMask, g: LabeledMask) -> float:
    if m.mask.shape != g.mask.shape:
        raise ValidationError(
            f"mask shapes differ: {m.mask.shape} vs {g.mask.shape}")
    return 1.0 if (m.identity == g.identity and m.label == g.label) else 0.0


def js(m: LabeledMask, g: LabeledMask) -> float:
    """Identity- and label-gated region similarity."""
    return _deltas(m, g) * region_similarity(m.mask, g.mask)


def fs(m: LabeledMask, g: LabeledMask, radius: int | None = None) -> float:
    """Identity- and label-gated contour accuracy."""
    return _deltas(m, g) * contour_accuracy(m.mask, g.mask, radius)


def match_first_frame(pred_instances: dict[int, np.ndarray],
                      gt_instances: dict[int, np.ndarray]
                      ) -> list[tuple[int, int, float]]:
    """Bind predicted to ground-truth identities on the first frame.

    Optimal one-to-one assignment maximizing total IOU; pairs with zero
    IOU are discarded. Returns (pred_identity, gt_identity, iou) rows
    sorted by ground-truth identity.
    """
    pred_ids = sorted(pred_instances)
    gt_ids = sorted(gt_instances)
    if not pred_ids or not gt_ids:
        return []
    matrix = np.zeros((len(pred_ids), len(gt_ids)))
    for r, p in enumerate(pred_ids):
        for c, g in enumerate(gt_ids):
            matrix[r, c] = iou(pred_instances[p], gt_instances[g])
    rows, cols = linear_sum_assignment(-matrix)
    out = [(pred_ids[r], gt_ids[c], float(matrix[r, c]))
           for r, c in zip(rows, cols) if matrix[r, c] > 0.0]
    return sorted(out, key=lambda t: t[1])


@dataclass
class MatchRow:
    pred: int
    gt: int
    iou: float


@dataclass
class InstanceEval:
    gt_identity: int
    pred_identity: int | None
    js: float
    fs: float
    frames_evaluated: int
    frames_skipped: int
    flagged: bool = False


@dataclass
class VideoEval:
    name: str
    matches: list[MatchRow]
    unmatched_pred: list[int]
    unmatched_gt: list[int]
    instances: list[InstanceEval]
    js_mean: float | None
    fs_mean: float | None
    skipped_frames: int


@dataclass
class EvalReport:
    videos: list[VideoEval] = field(default_factory=list)
    js_dataset: float | None = None
    fs_dataset: float | None = None
    n_instances: int = 0
    skipped_frames: int = 0


def _mean(values) -> float | None:
    values = list(values)
    return sum(values) / len(values) if values else None


def evaluate_video(pred_maps, pred_categories: dict[int, int],
                   gt_maps, gt_categories: dict[int, int],
                   contour_radius: int | None = None,
                   name: str = "") -> VideoEval:
    """Score one video's predictions against its ground truth.

    ``pred_maps`` and ``gt_maps`` are equal-length sequences of integer
    identity label maps (0 = background); the category dicts give each
    identity's semantic label. Every annotated ground-truth identity
    becomes one evaluated instance.
    """
    if len(pred_maps) != len(gt_maps):
        raise ValidationError(
            f"frame counts differ: {len(pred_maps)} predicted vs "
            f"{len(gt_maps)} ground truth")
    if not gt_maps:
        return VideoEval(name=name, matches=[], unmatched_pred=[],
                         unmatched_gt=[], instances=[], js_mean=None,
                         fs_mean=None, skipped_frames=0)
    gt_maps = [np.asarray(m) for m in gt_maps]
    pred_maps = [np.asarray(m) for m in pred_maps]
    for f, (pm, gm) in enumerate(zip(pred_maps, gt_maps)):
        if pm.shape != gm.shape:
            raise ValidationError(
                f"frame {f}: label map shapes differ: {pm.shape} vs {gm.shape}")
    if contour_radius is None:
        contour_radius = default_contour_radius(*gt_maps[0].shape)

    pred_frame0 = {int(p): pred_maps[0] == p
                   for p in np.unique(pred_maps[0]) if p != 0}
    gt_frame0 = {int(g): gt_maps[0] == g
                 for g in np.unique(gt_maps[0]) if g != 0}
    matches = match_first_frame(pred_frame0, gt_frame0)
    gt_to_pred = {g: p for p, g, _ in matches}
    matched_pred = set(gt_to_pred.values())

    all_pred_ids = set(pred_categories)
    for pm in pred_maps:
        all_pred_ids.update(int(v) for v in np.unique(pm) if v != 0)
    all_gt_ids = set(gt_categories)
    for gm in gt_maps:
        all_gt_ids.update(int(v) for v in np.unique(gm) if v != 0)

    instances = []
    for g in sorted(all_gt_ids):
        p = gt_to_pred.get(g)
        label_ok = (p is not None
                    and p in pred_categories and g in gt_categories
                    and pred_categories[p] == gt_categories[g])
        js_scores, fs_scores = [], []
        skipped = 0
        predicted_somewhere = p is not None
        present_somewhere = False
        for f in range(len(gt_maps)):
            gm = gt_maps[f] == g
            pm = (pred_maps[f] == p) if p is not None else np.zeros_like(gm)
            g_empty = not gm.any()
            p_empty = not pm.any()
            present_somewhere = present_somewhere or not g_empty
            if g_empty and p_empty:
                skipped += 1
                continue
            if g_empty or p_empty:
                js_scores.append(0.0)
                fs_scores.append(0.0)
            elif not label_ok:
                js_scores.append(0.0)
                fs_scores.append(0.0)
            else:
                js_scores.append(region_similarity(pm, gm))
                fs_scores.append(contour_accuracy(pm, gm, contour_radius))
        if js_scores:
            inst = InstanceEval(g, p, _mean(js_scores), _mean(fs_scores),
                                len(js_scores), skipped)
        elif not predicted_somewhere and not present_somewhere:
            # absence correctly predicted on every frame
            inst = InstanceEval(g, p, 1.0, 1.0, 0, skipped)
        else:
            inst = InstanceEval(g, p, 0.0, 0.0, 0, skipped, flagged=True)
        instances.append(inst)

    return VideoEval(
        name=name,
        matches=[MatchRow(p, g, s) for p, g, s in matches],
        unmatched_pred=sorted(all_pred_ids - matched_pred),
        unmatched_gt=sorted(all_gt_ids - set(gt_to_pred)),
        instances=instances,
        js_mean=_mean(i.js for i in instances),
        fs_mean=_mean(i.fs for i in instances),
        skipped_frames=sum(i.frames_skipped for i in instances),
    )


def aggregate(videos: list[VideoEval]) -> EvalReport:
    """Dataset-level report: mean over every instance of every video."""
    instances = [i for v in videos for i in v.instances]
    return EvalReport(
        videos=list(videos),
        js_dataset=_mean(i.js for i in instances),
        fs_dataset=_mean(i.fs for i in instances),
        n_instances=len(instances),
        skipped_frames=sum(v.skipped_frames for v in videos),
    )


def write_report_json(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(asdict(report), fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_report_csv(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video", "gt_identity", "pred_identity", "js", "fs",
                         "frames_evaluated", "frames_skipped", "flagged"])
        for video in report.videos:
            for inst in video.instances:
                writer.writerow([
                    video.name, inst.gt_identity,
                    "" if inst.pred_identity is None else inst.pred_identity,
                    inst.js, inst.fs, inst.frames_evaluated,
                    inst.frames_skipped, inst.flagged,
                ])
