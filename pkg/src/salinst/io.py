"""Readers and writers for every on-disk format, plus dataset layout.

A video directory holds:

* ``images/00000.png ...`` 8-bit RGB frames
* ``saliency/00000.png ...`` 8-bit grayscale saliency maps
* ``flow_fwd/00000.flo ...`` flow from frame t to t+1 (frames 0..n-2)
* ``flow_bwd/00001.flo ...`` flow from frame t to t-1 (frames 1..n-1)
* ``detections.json`` per-frame instance proposals (RLE masks)
* ``gt/00000.png ... + gt/semantic.json`` optional ground truth:
  16-bit identity label maps (0 = background) and identity -> category

Results directories use the ground-truth format (label PNGs + sidecar)
so that outputs can be re-read and self-evaluated, plus a run report.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from salinst.errors import FormatError
from salinst.masks import RleMask, rle_decode, rle_encode
from salinst.model import CategoryRegistry, FlowField, FrameBundle, InstanceProposal

FLO_MAGIC = 202021.25  # spells "PIEH" when read as ASCII bytes
SEMANTIC_SIDECAR = "semantic.json"
REPORT_NAME = "report.json"

__all__ = [
    "VideoLayout",
    "discover_video",
    "frame_name",
    "load_video",
    "read_detections",
    "read_flo",
    "read_ground_truth",
    "read_image",
    "read_labels",
    "read_proposal_boxes",
    "read_saliency",
    "write_detections",
    "write_flo",
    "write_ground_truth",
    "write_image",
    "write_labels",
    "write_results",
    "write_saliency",
]


def frame_name(index: int, ext: str) -> str:
    return f"{index:05d}.{ext}"


# ---------------------------------------------------------------------------
# optical flow (.flo)

def read_flo(path) -> FlowField:
    """Read a little-endian .flo flow file (magic, w, h, interleaved u/v)."""
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FormatError("flow file truncated in header",
                          path=path, offset=len(data))
    magic, w, h = struct.unpack("<fii", data[:12])
    if magic != FLO_MAGIC:
        raise FormatError(f"bad flow magic {magic!r}", path=path, offset=0)
    if w <= 0 or h <= 0:
        raise FormatError(f"bad flow dimensions {w}x{h}", path=path, offset=4)
    expected = 12 + 8 * w * h
    if len(data) < expected:
        raise FormatError(
            f"flow file truncated: expected {expected} bytes, got {len(data)}",
            path=path, offset=len(data))
    values = np.frombuffer(data, dtype="<f4", count=2 * w * h, offset=12)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError("non-finite flow value",
                          path=path, offset=12 + 4 * int(bad[0]))
    uv = values.reshape(h, w, 2)
    return FlowField(uv[:, :, 0].copy(), uv[:, :, 1].copy())


def write_flo(path, flow: FlowField) -> None:
    h, w = flow.shape
    uv = np.empty((h, w, 2), dtype="<f4")
    uv[:, :, 0] = flow.u
    uv[:, :, 1] = flow.v
    with open(path, "wb") as f:
        f.write(struct.pack("<fii", FLO_MAGIC, w, h))
        f.write(uv.tobytes())


# ---------------------------------------------------------------------------
# PNG maps

def read_saliency(path) -> np.ndarray:
    """Read an 8-bit single-channel PNG as a [0, 1] saliency map."""
    with Image.open(path) as img:
        if img.mode != "L":
            raise FormatError(
                f"saliency must be 8-bit single-channel, got mode {img.mode!r}",
                path=path)
        return np.asarray(img, dtype=np.float64) / 255.0


def write_saliency(path, values) -> None:
    values = np.asarray(values, dtype=np.float64)
    raw = np.rint(values * 255.0).astype(np.uint8)
    Image.fromarray(raw, mode="L").save(path, format="PNG")


def read_image(path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode != "RGB":
            img = img.convert("RGB")
        return np.asarray(img, dtype=np.uint8)


def write_image(path, rgb) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(
        path, format="PNG")


def read_labels(path) -> np.ndarray:
    """Read a 16-bit single-channel PNG of per-pixel instance identities."""
    with Image.open(path) as img:
        if img.mode not in ("I;16", "I;16B", "I"):
            raise FormatError(
                f"label map must be 16-bit single-channel, got mode {img.mode!r}",
                path=path)
        arr = np.asarray(img)
    if arr.size and (arr.min() < 0 or arr.max() > 0xFFFF):
        raise FormatError("label values outside uint16 range", path=path)
    return arr.astype(np.uint16)


def write_labels(path, labels) -> None:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
        raise FormatError("identity exceeds 16-bit label range", path=path)
    Image.fromarray(labels.astype(np.uint16)).save(path, format="PNG")


# ---------------------------------------------------------------------------
# detections JSON

def read_detections(path, registry: CategoryRegistry | None = None) -> dict[int, list[InstanceProposal]]:
    """Parse a detections file into per-frame proposal lists.

    Frames absent from the file simply have no proposals. Raises
    ``FormatError`` naming the frame index on unknown categories,
    out-of-range scores, or corrupt RLE.
    """
    registry = registry or CategoryRegistry.default()
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid JSON: {e}", path=path) from e
    if not isinstance(doc, dict) or not isinstance(doc.get("frames"), list):
        raise FormatError('detections document must be {"frames": [...]}',
                          path=path)
    out: dict[int, list[InstanceProposal]] = {}
    for entry in doc["frames"]:
        idx = entry.get("index")
        if not isinstance(idx, int) or idx < 0:
            raise FormatError(f"bad frame index {idx!r}", path=path)
        proposals = []
        for inst in entry.get("instances", []):
            category = inst.get("category")
            score = inst.get("score")
            if category not in registry:
                raise FormatError(f"unknown category id {category!r}",
                                  path=path, frame=idx)
            if not isinstance(score, (int, float)) or not 0.0 <= score <= 1.0:
                raise FormatError(f"score {score!r} outside [0, 1]",
                                  path=path, frame=idx)
            rle = inst.get("rle", {})
            try:
                mask = rle_decode(RleMask(width=int(rle["w"]),
                                          height=int(rle["h"]),
                                          runs=tuple(int(r) for r in rle["runs"])))
            except (KeyError, TypeError, ValueError, FormatError) as e:
                raise FormatError(f"corrupt RLE: {e}", path=path, frame=idx) from e
            proposals.append(InstanceProposal(region=mask, category=int(category),
                                              cls_score=float(score)))
        out[idx] = proposals
    return out


def write_detections(path, frames: dict[int, list[InstanceProposal]]) -> None:
    doc = {"frames": []}
    for idx in sorted(frames):
        instances = []
        for p in frames[idx]:
            r = rle_encode(p.region)
            instances.append({
                "category": p.category,
                "score": p.cls_score,
                "rle": {"w": r.width, "h": r.height, "runs": list(r.runs)},
            })
        doc["frames"].append({"index": idx, "instances": instances})
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# ground truth / results (identity label maps + semantic sidecar)

def read_ground_truth(directory) -> tuple[list[np.ndarray], dict[int, int]]:
    """Read per-frame identity label maps plus the identity -> category table.

    Every nonzero identity appearing in a label map must be listed in
    the sidecar.
    """
    directory = Path(directory)
    sidecar = directory / SEMANTIC_SIDECAR
    if not sidecar.exists():
        raise FormatError("missing semantic sidecar", path=sidecar)
    try:
        table = json.loads(sidecar.read_text())
        categories = {int(k): int(v) for k, v in table.items()}
    except (json.JSONDecodeError, ValueError, AttributeError) as e:
        raise FormatError(f"invalid semantic sidecar: {e}", path=sidecar) from e

    frames = []
    for idx, png in enumerate(_frame_files(directory, "png")):
        labels = read_labels(png)
        present = set(int(v) for v in np.unique(labels)) - {0}
        missing = present - set(categories)
        if missing:
            raise FormatError(
                f"identities {sorted(missing)} missing from semantic sidecar",
                path=png, frame=idx)
        frames.append(labels)
    return frames, categories


def write_ground_truth(directory, label_frames, categories: dict[int, int]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for idx, labels in enumerate(label_frames):
        write_labels(directory / frame_name(idx, "png"), labels)
    sidecar = {str(k): int(v) for k, v in sorted(categories.items())}
    (directory / SEMANTIC_SIDECAR).write_text(
        json.dumps(sidecar, indent=1, sort_keys=True) + "\n")


def write_results(directory, label_frames, categories: dict[int, int],
                  report: dict | None = None) -> None:
    """Write fused results in the ground-truth format plus a run report."""
    write_ground_truth(directory, label_frames, categories)
    if report is not None:
        (Path(directory) / REPORT_NAME).write_text(
            json.dumps(report, indent=1, sort_keys=True) + "\n")


def _frame_files(directory: Path, ext: str) -> list[Path]:
    """Frame-indexed files NNNNN.ext, validated contiguous from 0."""
    files = sorted(p for p in directory.glob(f"*.{ext}")
                   if p.stem.isdigit())
    for idx, p in enumerate(files):
        if int(p.stem) != idx:
            raise FormatError(
                f"frame files not contiguous from 0: expected index {idx}",
                path=p)
    return files


def read_proposal_boxes(path) -> dict[int, list[tuple[int, int, int, int]]]:
    """Externally supplied per-frame candidate boxes for re-identification.

    Format: {"frames": [{"index": int, "boxes": [[x, y, w, h], ...]}]}.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid JSON: {e}", path=path) from e
    if not isinstance(doc, dict) or not isinstance(doc.get("frames"), list):
        raise FormatError('proposal boxes document must be {"frames": [...]}',
                          path=path)
    out: dict[int, list[tuple[int, int, int, int]]] = {}
    for entry in doc["frames"]:
        idx = entry.get("index")
        if not isinstance(idx, int) or idx < 0:
            raise FormatError(f"bad frame index {idx!r}", path=path)
        boxes = []
        for box in entry.get("boxes", []):
            try:
                x, y, w, h = (int(v) for v in box)
            except (TypeError, ValueError) as e:
                raise FormatError(f"bad box {box!r}: {e}",
                                  path=path, frame=idx) from e
            boxes.append((x, y, w, h))
        out[idx] = boxes
    return out


# ---------------------------------------------------------------------------
# dataset layout

@dataclass(frozen=True)
class VideoLayout:
    """Resolved paths for one video directory."""

    root: Path
    n_frames: int
    has_gt: bool

    def image(self, i: int) -> Path:
        return self.root / "images" / frame_name(i, "png")

    def saliency(self, i: int) -> Path:
        return self.root / "saliency" / frame_name(i, "png")

    def flow_fwd(self, i: int) -> Path:
        return self.root / "flow_fwd" / frame_name(i, "flo")

    def flow_bwd(self, i: int) -> Path:
        return self.root / "flow_bwd" / frame_name(i, "flo")

    @property
    def detections(self) -> Path:
        return self.root / "detections.json"

    @property
    def gt_dir(self) -> Path:
        return self.root / "gt"


def discover_video(directory) -> tuple[VideoLayout, list[str]]:
    """Resolve a video directory and report every missing input file."""
    root = Path(directory)
    problems = []
    images_dir = root / "images"
    if not images_dir.is_dir():
        return (VideoLayout(root, 0, False),
                [f"missing images directory: {images_dir}"])
    try:
        images = _frame_files(images_dir, "png")
    except FormatError as e:
        return VideoLayout(root, 0, False), [str(e)]
    n = len(images)
    if n == 0:
        problems.append(f"no frames found in {images_dir}")

    layout = VideoLayout(root, n, (root / "gt" / SEMANTIC_SIDECAR).exists())
    for i in range(n):
        if not layout.saliency(i).exists():
            problems.append(f"missing saliency file: {layout.saliency(i)}")
        if i < n - 1 and not layout.flow_fwd(i).exists():
            problems.append(f"missing forward flow: {layout.flow_fwd(i)}")
        if i > 0 and not layout.flow_bwd(i).exists():
            problems.append(f"missing backward flow: {layout.flow_bwd(i)}")
    if not layout.detections.exists():
        problems.append(f"missing detections file: {layout.detections}")
    return layout, problems


def load_video(directory, registry: CategoryRegistry | None = None) -> list[FrameBundle]:
    """Load a whole video's inputs into frame bundles."""
    layout, problems = discover_video(directory)
    if problems:
        raise FormatError("; ".join(problems), path=directory)
    detections = read_detections(layout.detections, registry)
    bundles = []
    for i in range(layout.n_frames):
        bundles.append(FrameBundle(
            index=i,
            image=read_image(layout.image(i)),
            proposals=tuple(detections.get(i, [])),
            saliency=read_saliency(layout.saliency(i)),
            flow_fwd=read_flo(layout.flow_fwd(i)) if i < layout.n_frames - 1 else None,
            flow_bwd=read_flo(layout.flow_bwd(i)) if i > 0 else None,
        ))
    return bundles
