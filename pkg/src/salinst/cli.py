"""Command-line entry point.

Subcommands: fuse (run the pipeline on a video directory), eval (score
results against ground truth), synth (generate a synthetic video), render
(paint label maps over images), stats (dataset histograms). Diagnostics go
to stderr; machine-readable outputs go to disk; exit code 0 means no
errors. Log level comes from the SALINST_LOG environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from salinst import io as sio
from salinst.errors import PipelineError, ValidationError
from salinst.evaluation import (aggregate, evaluate_video, write_report_csv,
                                write_report_json)
from salinst.model import CategoryRegistry
from salinst.pipeline import RunConfig, run_video, validate_video
from salinst.synth import SynthConfig, generate

log = logging.getLogger("salinst")


def _add_fuse_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="run seed (random-order ablation)")
    p.add_argument("--jobs", type=int, help="worker threads (0 = all CPUs)")
    p.add_argument("--theta-seg", type=float, dest="theta_seg",
                   help="fusion confidence floor on segmentation IOU")
    p.add_argument("--theta-id", type=float, dest="theta_id",
                   help="IOU gate for identity handoff")
    p.add_argument("--beta-sq", type=float, dest="beta_sq",
                   help="confidence-score weighting")
    p.add_argument("--max-iters", type=int, dest="max_iters",
                   help="propagation pass limit")
    p.add_argument("--no-sequential-fusion", action="store_true",
                   help="merge proposals in random order instead")
    p.add_argument("--no-recurrent-propagation", action="store_true",
                   help="skip confidence-driven propagation")
    p.add_argument("--no-identity-propagation", action="store_true",
                   help="do not carry identities between frames")
    p.add_argument("--no-reid", action="store_true",
                   help="do not revive lost identities")
    p.add_argument("--reid-boxes", type=Path, dest="reid_boxes",
                   help="JSON file of extra candidate boxes for re-ID")


def _build_config(args: argparse.Namespace) -> RunConfig:
    data = {}
    if args.config is not None:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValidationError(f"{args.config}: config must be a JSON object")
    for key in ("seed", "jobs", "theta_seg", "theta_id", "beta_sq",
                "max_iters"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    if args.no_sequential_fusion:
        data["enable_sequential_fusion"] = False
    if args.no_recurrent_propagation:
        data["enable_recurrent_propagation"] = False
    if args.no_identity_propagation:
        data["enable_identity_propagation"] = False
    if args.no_reid:
        data["enable_reid"] = False
    return RunConfig.from_dict(data)


def cmd_fuse(args: argparse.Namespace) -> int:
    config = _build_config(args)
    layout, problems = sio.discover_video(args.video)
    if problems:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return 1
    bundles = sio.load_video(args.video)
    problems = validate_video(bundles)
    if problems:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return 1
    boxes = None
    if args.reid_boxes is not None:
        boxes = sio.read_proposal_boxes(args.reid_boxes)
    result = run_video(bundles, config, external_boxes=boxes)
    sio.write_results(args.out, result.label_frames, result.categories,
                      report=result.report)
    mean_fc = result.report["mean_confidence_history"][-1]
    print(f"fused {len(bundles)} frames, {len(result.categories)} identities, "
          f"mean confidence {mean_fc:.4f} -> {args.out}")
    return 0


def _resolve_gt_dir(path: Path) -> Path:
    if (path / sio.SEMANTIC_SIDECAR).exists():
        return path
    if (path / "gt" / sio.SEMANTIC_SIDECAR).exists():
        return path / "gt"
    raise ValidationError(f"no label maps with sidecar found under {path}")


def cmd_eval(args: argparse.Namespace) -> int:
    pred_dir = _resolve_gt_dir(Path(args.pred))
    gt_dir = _resolve_gt_dir(Path(args.gt))
    pred_maps, pred_cats = sio.read_ground_truth(pred_dir)
    gt_maps, gt_cats = sio.read_ground_truth(gt_dir)
    video = evaluate_video(pred_maps, pred_cats, gt_maps, gt_cats,
                           name=Path(args.gt).name)
    report = aggregate([video])
    out = Path(args.out) if args.out else Path(args.pred)
    out.mkdir(parents=True, exist_ok=True)
    write_report_json(report, out / "eval.json")
    write_report_csv(report, out / "eval.csv")
    js = "n/a" if report.js_dataset is None else f"{report.js_dataset:.4f}"
    fs = "n/a" if report.fs_dataset is None else f"{report.fs_dataset:.4f}"
    print(f"region similarity {js}  contour accuracy {fs}  "
          f"({report.n_instances} instances, "
          f"{report.skipped_frames} frames skipped)")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    config = SynthConfig.from_json(args.config)
    generate(config, args.out)
    print(f"wrote {config.frames} frames, {len(config.objects)} objects "
          f"-> {args.out}")
    return 0


def _identity_color(ident: int) -> np.ndarray:
    rng = np.random.default_rng(ident)
    return rng.integers(64, 256, 3).astype(np.uint8)


def cmd_render(args: argparse.Namespace) -> int:
    results_dir = _resolve_gt_dir(Path(args.results))
    label_frames, categories = sio.read_ground_truth(results_dir)
    registry = CategoryRegistry.default()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for idx, labels in enumerate(label_frames):
        image = sio.read_image(Path(args.images) / sio.frame_name(idx, "png"))
        overlay = image.astype(np.float64)
        for ident in (int(v) for v in np.unique(labels) if v != 0):
            region = labels == ident
            color = _identity_color(ident).astype(np.float64)
            overlay[region] = 0.5 * overlay[region] + 0.5 * color
        canvas = Image.fromarray(overlay.astype(np.uint8))
        draw = ImageDraw.Draw(canvas)
        for ident in (int(v) for v in np.unique(labels) if v != 0):
            ys, xs = np.nonzero(labels == ident)
            category = categories.get(ident)
            name = registry.name(category) if category in registry else "?"
            draw.text((int(xs.min()), int(ys.min())), f"{ident}:{name}",
                      fill=tuple(int(c) for c in _identity_color(ident)))
        canvas.save(out / sio.frame_name(idx, "png"))
    print(f"rendered {len(label_frames)} overlays -> {out}")
    return 0


def _stat_videos(root: Path) -> list[tuple[str, dict[int, int]]]:
    """(name, identity -> category) per video found under root."""
    try:
        gt = _resolve_gt_dir(root)
    except ValidationError:
        gt = None
    if gt is not None:
        return [(root.name, sio.read_ground_truth(gt)[1])]
    videos = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        try:
            videos.append((sub.name, sio.read_ground_truth(_resolve_gt_dir(sub))[1]))
        except (ValidationError, PipelineError):
            continue
    if not videos:
        raise ValidationError(f"no ground truth found under {root}")
    return videos


def cmd_stats(args: argparse.Namespace) -> int:
    videos = _stat_videos(Path(args.gt))
    inst_hist: dict[int, int] = {}
    cat_hist: dict[int, int] = {}
    for _, categories in videos:
        n_inst = len(categories)
        n_cat = len(set(categories.values()))
        inst_hist[n_inst] = inst_hist.get(n_inst, 0) + 1
        cat_hist[n_cat] = cat_hist.get(n_cat, 0) + 1
    print(f"{len(videos)} video(s)")
    print("instances per video:")
    for k in sorted(inst_hist):
        print(f"  {k:3d}: {'#' * inst_hist[k]} {inst_hist[k]}")
    print("categories per video:")
    for k in sorted(cat_hist):
        print(f"  {k:3d}: {'#' * cat_hist[k]} {cat_hist[k]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="salinst",
        description="Fuse instance proposals with saliency into labeled, "
                    "identity-consistent video segmentations.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuse", help="run the pipeline on one video")
    p.add_argument("video", type=Path, help="video directory")
    p.add_argument("--out", type=Path, required=True, help="results directory")
    _add_fuse_flags(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="score results against ground truth")
    p.add_argument("pred", type=Path, help="results directory")
    p.add_argument("gt", type=Path, help="ground-truth directory")
    p.add_argument("--out", type=Path, help="report directory (default: pred)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic video")
    p.add_argument("config", type=Path, help="scene configuration JSON")
    p.add_argument("--out", type=Path, required=True, help="video directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("render", help="paint label maps over images")
    p.add_argument("results", type=Path, help="results directory")
    p.add_argument("images", type=Path, help="images directory")
    p.add_argument("--out", type=Path, required=True, help="overlay directory")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("stats", help="dataset ground-truth histograms")
    p.add_argument("gt", type=Path, help="video or dataset directory")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=os.environ.get("SALINST_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
