"""Synthetic videos with exact ground truth, saliency, flows, and detections.

Flat-colored rectangles and disks translate with constant integral
velocities over a gray background. Because motion is integral, the ideal
flow fields are exact and nearest-neighbor warping is lossless, which makes
generated videos usable as oracles for the whole pipeline: with zero noise
the correct output is the ground truth itself.

Flow convention: the forward field at frame t maps t's pixels to t+1, the
backward field at frame t maps t's pixels to t-1. Pixels covered by an
object carry that object's velocity (topmost wins); pixels an object just
vacated or is about to cover carry that object's velocity too, so that
inverse warping reproduces masks exactly; everything else is zero.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from salinst.errors import ValidationError
from salinst.io import write_detections, write_flo, write_ground_truth, \
    write_image, write_saliency
from salinst.masks import _disk_footprint
from salinst.model import (CategoryRegistry, FlowField, FrameBundle,
                           InstanceProposal)

__all__ = [
    "SynthConfig",
    "SynthObject",
    "SynthVideo",
    "generate",
    "random_config",
    "render_video",
]

BACKGROUND = (128, 128, 128)


def _int_pair(value, what: str) -> tuple[int, int]:
    try:
        a, b = value
    except (TypeError, ValueError):
        raise ValidationError(f"{what} must be a pair, got {value!r}") from None
    for v in (a, b):
        if float(v) != int(v):
            raise ValidationError(f"{what} must be integral, got {value!r}")
    return int(a), int(b)


@dataclass(frozen=True)
class SynthObject:
    shape: str                      # "rect" | "disk"
    size: tuple[int, int] | int     # (w, h) for rect, radius for disk
    color: tuple[int, int, int]
    category: int
    position: tuple[int, int]       # top-left for rect, center for disk
    velocity: tuple[int, int]       # px/frame, integral
    z: int = 0                      # higher draws on top
    visible: tuple[tuple[int, int], ...] = ()   # [start, end) frame spans
    score: float = 0.95

    def __post_init__(self):
        if self.shape not in ("rect", "disk"):
            raise ValidationError(f"unknown shape {self.shape!r}")
        object.__setattr__(self, "position", _int_pair(self.position, "position"))
        object.__setattr__(self, "velocity", _int_pair(self.velocity, "velocity"))
        if not 0.0 < self.score <= 1.0:
            raise ValidationError(f"score must be in (0, 1], got {self.score}")

    def visible_at(self, t: int) -> bool:
        if not self.visible:
            return True
        return any(s <= t < e for s, e in self.visible)

    def raster(self, t: int, shape_hw) -> np.ndarray:
        h, w = shape_hw
        mask = np.zeros((h, w), dtype=bool)
        if not self.visible_at(t):
            return mask
        x = self.position[0] + t * self.velocity[0]
        y = self.position[1] + t * self.velocity[1]
        if self.shape == "rect":
            ow, oh = self.size
            mask[max(y, 0):max(y + oh, 0), max(x, 0):max(x + ow, 0)] = True
        else:
            r = int(self.size)
            yy, xx = np.ogrid[:h, :w]
            mask = (yy - y) ** 2 + (xx - x) ** 2 <= r * r
        return mask


@dataclass(frozen=True)
class SynthConfig:
    width: int
    height: int
    frames: int
    objects: tuple[SynthObject, ...]
    seed: int = 0
    morph_radius: int = 0     # erode or dilate detection masks by this radius
    score_sigma: float = 0.0  # gaussian jitter on detection scores
    drop_prob: float = 0.0    # probability a detection is omitted
    dup_prob: float = 0.0     # probability of an extra shifted near-duplicate
    background: tuple[int, int, int] = BACKGROUND

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.frames < 1:
            raise ValidationError("frame size and count must be positive")
        registry = CategoryRegistry.default()
        for i, obj in enumerate(self.objects):
            if obj.shape == "rect":
                ow, oh = obj.size
                too_big = ow > self.width or oh > self.height
            else:
                too_big = 2 * int(obj.size) + 1 > min(self.width, self.height)
            if too_big:
                raise ValidationError(
                    f"object {i} does not fit in a "
                    f"{self.width}x{self.height} frame")
            if obj.category not in registry:
                raise ValidationError(
                    f"object {i} has unknown category {obj.category}")

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        noise = raw.get("noise", {})
        objects = tuple(
            SynthObject(
                shape=o["shape"],
                size=tuple(o["size"]) if o["shape"] == "rect" else int(o["size"]),
                color=tuple(o["color"]),
                category=int(o["category"]),
                position=tuple(o["position"]),
                velocity=tuple(o.get("velocity", (0, 0))),
                z=int(o.get("z", 0)),
                visible=tuple(tuple(span) for span in o.get("visible", ())),
                score=float(o.get("score", 0.95)),
            )
            for o in raw["objects"])
        return cls(
            width=int(raw["width"]), height=int(raw["height"]),
            frames=int(raw["frames"]), objects=objects,
            seed=int(raw.get("seed", 0)),
            morph_radius=int(noise.get("morph_radius", 0)),
            score_sigma=float(noise.get("score_sigma", 0.0)),
            drop_prob=float(noise.get("drop_prob", 0.0)),
            dup_prob=float(noise.get("dup_prob", 0.0)),
            background=tuple(raw.get("background", BACKGROUND)),
        )

    def to_json(self, path) -> None:
        data = {
            "width": self.width, "height": self.height, "frames": self.frames,
            "seed": self.seed, "background": list(self.background),
            "noise": {"morph_radius": self.morph_radius,
                      "score_sigma": self.score_sigma,
                      "drop_prob": self.drop_prob,
                      "dup_prob": self.dup_prob},
            "objects": [
                {"shape": o.shape,
                 "size": list(o.size) if o.shape == "rect" else o.size,
                 "color": list(o.color), "category": o.category,
                 "position": list(o.position), "velocity": list(o.velocity),
                 "z": o.z, "visible": [list(s) for s in o.visible],
                 "score": o.score}
                for o in self.objects],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=1, sort_keys=True)
            fh.write("\n")


@dataclass
class SynthVideo:
    config: SynthConfig
    images: list[np.ndarray]
    gt_maps: list[np.ndarray]
    categories: dict[int, int]
    saliency: list[np.ndarray]
    flow_fwd: list[FlowField]        # index t maps frame t -> t+1
    flow_bwd: list[FlowField]        # index t-1 maps frame t -> t-1
    detections: dict[int, list[InstanceProposal]] = field(default_factory=dict)

    def bundles(self) -> list[FrameBundle]:
        n = len(self.images)
        out = []
        for t in range(n):
            out.append(FrameBundle(
                index=t,
                image=self.images[t],
                proposals=tuple(self.detections.get(t, ())),
                saliency=self.saliency[t],
                flow_fwd=self.flow_fwd[t] if t < n - 1 else None,
                flow_bwd=self.flow_bwd[t - 1] if t > 0 else None,
            ))
        return out


def _cover_map(config: SynthConfig, t: int) -> np.ndarray:
    """Identity (object index + 1) of the topmost object at each pixel."""
    cover = np.zeros((config.height, config.width), dtype=np.int32)
    order = sorted(range(len(config.objects)),
                   key=lambda i: (config.objects[i].z, i))
    for i in order:
        cover[config.objects[i].raster(t, cover.shape)] = i + 1
    return cover


def _shift_mask(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    ys = slice(max(dy, 0), min(h + dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    sy = slice(max(-dy, 0), min(h - dy, h))
    sx = slice(max(-dx, 0), min(w - dx, w))
    out[ys, xs] = mask[sy, sx]
    return out


def _flow_from_covers(config, cover_here, cover_there, sign) -> FlowField:
    u = np.zeros(cover_here.shape, dtype=np.float32)
    v = np.zeros(cover_here.shape, dtype=np.float32)
    source = np.where(cover_here > 0, cover_here, cover_there)
    for i, obj in enumerate(config.objects):
        sel = source == i + 1
        u[sel] = sign * obj.velocity[0]
        v[sel] = sign * obj.velocity[1]
    return FlowField(u=u, v=v)


def render_video(config: SynthConfig) -> SynthVideo:
    """Render every frame of a config in memory."""
    n = config.frames
    covers = [_cover_map(config, t) for t in range(n)]

    images, gt_maps, saliency = [], [], []
    for t in range(n):
        cover = covers[t]
        img = np.empty((config.height, config.width, 3), dtype=np.uint8)
        img[:] = np.asarray(config.background, dtype=np.uint8)
        for i, obj in enumerate(config.objects):
            img[cover == i + 1] = np.asarray(obj.color, dtype=np.uint8)
        images.append(img)
        gt_maps.append(cover.astype(np.uint16))
        sal = (cover > 0).astype(np.float64)
        if sal.mean() >= 0.5:
            warnings.warn(
                f"frame {t}: salient fraction {sal.mean():.2f} >= 0.5; "
                "adaptive binarization will not recover the objects",
                stacklevel=2)
        saliency.append(sal)

    flow_fwd = [_flow_from_covers(config, covers[t], covers[t + 1], +1.0)
                for t in range(n - 1)]
    flow_bwd = [_flow_from_covers(config, covers[t], covers[t - 1], -1.0)
                for t in range(1, n)]

    detections: dict[int, list[InstanceProposal]] = {}
    for t in range(n):
        props = []
        for i, obj in enumerate(config.objects):
            exact = covers[t] == i + 1
            if not exact.any():
                continue
            rng = np.random.default_rng([config.seed, t, i])
            dropped = rng.random() < config.drop_prob
            morph = rng.random()
            jitter = rng.normal()
            region = exact
            if not dropped:
                if config.morph_radius > 0:
                    footprint = _disk_footprint(config.morph_radius)
                    if morph < 0.5:
                        eroded = ndimage.binary_erosion(region,
                                                        structure=footprint)
                        region = eroded if eroded.any() else region
                    else:
                        region = ndimage.binary_dilation(region,
                                                         structure=footprint)
                score = obj.score
                if config.score_sigma > 0:
                    score = float(np.clip(score + config.score_sigma * jitter,
                                          0.01, 1.0))
                props.append(InstanceProposal(region=region,
                                              category=obj.category,
                                              cls_score=score))
            if config.dup_prob > 0 and rng.random() < config.dup_prob:
                dy, dx = (int(v) for v in rng.integers(-2, 3, 2))
                dup = _shift_mask(exact, dy, dx)
                if dup.any():
                    props.append(InstanceProposal(
                        region=dup, category=obj.category,
                        cls_score=max(0.71, obj.score - 0.05)))
        detections[t] = props

    categories = {i + 1: obj.category for i, obj in enumerate(config.objects)}
    return SynthVideo(config=config, images=images, gt_maps=gt_maps,
                      categories=categories, saliency=saliency,
                      flow_fwd=flow_fwd, flow_bwd=flow_bwd,
                      detections=detections)


def generate(config: SynthConfig, out_dir) -> SynthVideo:
    """Render a config and write it out in the standard video layout."""
    video = render_video(config)
    root = Path(out_dir)
    for sub in ("images", "saliency", "flow_fwd", "flow_bwd", "gt"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    n = config.frames
    for t in range(n):
        write_image(root / "images" / f"{t:05d}.png", video.images[t])
        write_saliency(root / "saliency" / f"{t:05d}.png", video.saliency[t])
    for t in range(n - 1):
        write_flo(root / "flow_fwd" / f"{t:05d}.flo", video.flow_fwd[t])
    for t in range(1, n):
        write_flo(root / "flow_bwd" / f"{t:05d}.flo", video.flow_bwd[t - 1])
    write_detections(root / "detections.json", video.detections)
    write_ground_truth(root / "gt", video.gt_maps, video.categories)
    return video


def random_config(seed: int, max_objects: int = 4, frames: int = 8,
                  size: int = 32, noisy: bool = False) -> SynthConfig:
    """A small scene with randomly placed moving shapes, for harness use."""
    rng = np.random.default_rng(seed)
    n_objects = int(rng.integers(1, max_objects + 1))
    objects = []
    for i in range(n_objects):
        shape = "rect" if rng.random() < 0.5 else "disk"
        if shape == "rect":
            dims = (int(rng.integers(3, max(4, size // 3))),
                    int(rng.integers(3, max(4, size // 3))))
            pos = (int(rng.integers(0, size - dims[0] + 1)),
                   int(rng.integers(0, size - dims[1] + 1)))
        else:
            dims = int(rng.integers(2, max(3, size // 6)))
            pos = (int(rng.integers(dims, size - dims)),
                   int(rng.integers(dims, size - dims)))
        objects.append(SynthObject(
            shape=shape, size=dims,
            color=tuple(int(c) for c in rng.integers(0, 256, 3)),
            category=int(rng.integers(1, 30)),
            position=pos,
            velocity=(int(rng.integers(-2, 3)), int(rng.integers(-2, 3))),
            z=i,
            score=0.95,
        ))
    return SynthConfig(
        width=size, height=size, frames=frames, objects=tuple(objects),
        seed=seed,
        morph_radius=1 if noisy else 0,
        score_sigma=0.05 if noisy else 0.0,
        drop_prob=0.1 if noisy else 0.0,
        dup_prob=0.5 if noisy else 0.0,
    )
