"""``detkit`` command line: augment, mask, tta-merge, fuse, select, eval.

Exit codes: 0 success, 1 usage error, 2 data error. Logs go to stderr;
stdout carries only machine-readable output.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .augment import AugmentParams, AugSample, random_augment
from .data_io import (
    AnnotatedImage,
    DataError,
    PipelineConfig,
    ResultSet,
    annotations_to_json,
    image_dims,
    load_annotations,
    load_config,
    load_image,
    load_results,
    save_image,
    save_results,
    write_json,
    _read_json,
)
from .evaluation import EvalReport, evaluate, format_table
from .fusion import FusionParams, rank_and_select, wbf
from .geometry import Box
from .mim_mask import mask_image, restrict_to_region
from .tta import invert_detections, parse_views

log = logging.getLogger("detkit")

EXIT_USAGE = 1
EXIT_DATA = 2
SEED_ENV = "DETKIT_SEED"


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            cfg = cfg.replace(seed=int(env_seed))
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env_seed!r}")
    flags = {
        "mask_ratio": getattr(args, "ratio", None),
        "patch_size": getattr(args, "patch", None),
        "mosaic_prob": getattr(args, "mosaic_prob", None),
        "mixup_prob": getattr(args, "mixup_prob", None),
        "mixup_beta": getattr(args, "mixup_beta", None),
        "wbf_iou_thr": getattr(args, "iou", None),
        "wbf_skip_thr": getattr(args, "skip", None),
        "top_k": getattr(args, "k", None),
        "seed": getattr(args, "seed", None),
    }
    try:
        return cfg.replace(**flags)
    except ValueError as exc:
        raise UsageError(str(exc))


def _threads(args) -> int:
    return args.threads if args.threads else (os.cpu_count() or 1)


def _load_all_results(paths: Sequence[str], dims) -> list[ResultSet]:
    return [load_results(p, i, dims) for i, p in enumerate(paths)]


# --- subcommands -----------------------------------------------------------


def cmd_augment(args, cfg: PipelineConfig) -> int:
    images = load_annotations(args.annotations)
    if not images:
        raise DataError(f"{args.annotations}: no images")
    root = Path(args.images)
    pool = []
    for im in images:
        pixels = load_image(root / im.file_name)
        if pixels.shape[:2] != (im.height, im.width):
            raise DataError(f"{root / im.file_name}: size {pixels.shape[1]}x{pixels.shape[0]} != annotated {im.width}x{im.height}")
        pool.append(AugSample(pixels, list(im.truths)))
    params = AugmentParams(
        out_size=args.size, mosaic_prob=cfg.mosaic_prob, mixup_prob=cfg.mixup_prob, mixup_beta=cfg.mixup_beta
    )

    def one(k: int) -> AnnotatedImage:
        idx = k % len(images)
        rng = np.random.default_rng((cfg.seed ^ images[idx].id, k))
        s = random_augment(pool, idx, params, rng)
        name = f"aug_{k:05d}.png"
        save_image(s.image, Path(args.out) / name)
        return AnnotatedImage(k, s.width, s.height, s.boxes, file_name=name)

    with ThreadPoolExecutor(max_workers=_threads(args)) as ex:
        out = list(ex.map(one, range(args.n)))
    cats = {lab for im in images for _, lab in im.truths}
    write_json(annotations_to_json(out, cats), Path(args.out) / "annotations.json")
    log.info("wrote %d augmented samples to %s", len(out), args.out)
    return 0


def _parse_region(text: Optional[str]) -> Box:
    if text is None:
        return Box(0.0, 0.0, 1.0, 1.0)
    vals = _floats(text)
    if len(vals) != 4:
        raise UsageError(f"--region needs 4 numbers x1,y1,x2,y2, got {text!r}")
    box = Box(*vals)
    if not box.is_valid():
        raise UsageError(f"--region {text!r} is not a normalized x1<=x2, y1<=y2 box")
    return box


def cmd_mask(args, cfg: PipelineConfig) -> int:
    region = _parse_region(args.region)
    pixels = load_image(args.image)
    h, w = pixels.shape[:2]
    try:
        plan = restrict_to_region(
            w, h, cfg.patch_size, cfg.mask_ratio, region, args.mode, np.random.default_rng(cfg.seed), args.scales
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    doc = {"image": {"width": w, "height": h}, "seed": cfg.seed, **plan.to_json()}
    write_json(doc, args.out, indent=1)
    if args.viz:
        save_image(mask_image(pixels, plan), args.viz)
    return 0


def _fuse_per_image(per_model: Sequence[ResultSet], image_ids, params: FusionParams, model_id: int, threads: int):
    grouped = [rs.by_image() for rs in per_model]

    def one(image_id):
        return [(image_id, d) for d in wbf([g.get(image_id, []) for g in grouped], params, model_id)]

    with ThreadPoolExecutor(max_workers=threads) as ex:
        parts = list(ex.map(one, image_ids))
    return ResultSet(model_id, [e for part in parts for e in part])


def cmd_tta_merge(args, cfg: PipelineConfig) -> int:
    images = load_annotations(args.annotations)
    dims = image_dims(images)
    raw_views = _read_json(args.views) if args.views else cfg.tta_views
    try:
        views = parse_views(raw_views)
    except (ValueError, TypeError, AttributeError) as exc:
        raise DataError(f"{args.views or 'config tta_views'}: {exc}")
    if len(views) != len(args.results):
        raise UsageError(f"{len(args.results)} result files for {len(views)} views")

    records = {im.id: [v.record(im.width, im.height) for v in views] for im in images}
    per_view = []
    for vi, path in enumerate(args.results):
        view_dims = {i: recs[vi].out_dims for i, recs in records.items()}
        per_view.append(load_results(path, args.model_id, view_dims).by_image())

    def one(im: AnnotatedImage):
        recs = records[im.id]
        lists = [invert_detections([pv.get(im.id, [])], [rec]) for pv, rec in zip(per_view, recs)]
        if args.concat:
            return [(im.id, d) for dets in lists for d in dets]
        return [(im.id, d) for d in wbf(lists, params, args.model_id)]

    params = FusionParams(cfg.wbf_iou_thr, cfg.wbf_skip_thr, None, args.conf)
    with ThreadPoolExecutor(max_workers=_threads(args)) as ex:
        parts = list(ex.map(one, images))
    merged = ResultSet(args.model_id, [e for part in parts for e in part])
    save_results(merged, args.out, dims)
    log.info("merged %d views into %d detections", len(views), len(merged))
    return 0


def cmd_fuse(args, cfg: PipelineConfig) -> int:
    images = load_annotations(args.annotations)
    dims = image_dims(images)
    weights = args.weights
    if weights is not None and len(weights) != len(args.results):
        raise UsageError(f"{len(weights)} weights for {len(args.results)} result files")
    try:
        params = FusionParams(cfg.wbf_iou_thr, cfg.wbf_skip_thr, weights, args.conf)
    except ValueError as exc:
        raise UsageError(str(exc))
    sets = _load_all_results(args.results, dims)
    fused = _fuse_per_image(sets, [im.id for im in images], params, args.model_id, _threads(args))
    save_results(fused, args.out, dims)
    log.info("fused %d models into %d detections", len(sets), len(fused))
    return 0


def _load_reports(directory) -> list[tuple[int, EvalReport]]:
    paths = sorted(Path(directory).glob("*.json"))
    if not paths:
        raise DataError(f"{directory}: no report JSON files")
    reports = []
    for p in paths:
        try:
            reports.append(EvalReport.from_json(_read_json(p)))
        except DataError as exc:
            raise DataError(f"{p}: {exc}")
    out = [(r.model_id, r) for r in reports]
    ids = [m for m, _ in out]
    if len(set(ids)) != len(ids):
        raise DataError(f"{directory}: duplicate model ids in reports")
    return out


def cmd_select(args, cfg: PipelineConfig) -> int:
    reports = _load_reports(args.reports)
    chosen = rank_and_select(reports, cfg.top_k)
    text = "".join(f"{m}\n" for m in chosen)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    if args.figure:
        from .plots import plot_model_ranking

        by_id = dict(reports)
        ranked_all = rank_and_select(reports, len(reports))
        plot_model_ranking([(m, by_id[m]) for m in ranked_all], cfg.top_k, args.figure)
    return 0


def cmd_eval(args, cfg: PipelineConfig) -> int:
    images = load_annotations(args.annotations)
    results = load_results(args.results, args.model_id, image_dims(images))
    report = evaluate(results, images, max_dets=args.max_dets, threads=_threads(args))
    write_json(report.to_json(), args.out, indent=1)
    sys.stdout.write(format_table(report) + "\n")
    if args.figures:
        from .plots import plot_ap_by_threshold, plot_pr_curves

        plot_pr_curves(report, Path(args.figures) / "pr_curves.png")
        plot_ap_by_threshold(report, Path(args.figures) / "ap_by_threshold.png")
    return 0


# --- parser ----------------------------------------------------------------


def build_parser() -> Parser:
    d = PipelineConfig()
    parser = Parser(prog="detkit", description="Detection post-processing and augmentation toolkit.")
    parser.add_argument("--version", action="version", version=f"detkit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def common(p, seed=False):
        p.add_argument("--config", help="JSON pipeline config; explicit flags override it")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        if seed:
            p.add_argument("--seed", type=int, default=None, help=f"RNG seed; env {SEED_ENV} overrides config (default: {d.seed})")

    p = sub.add_parser("augment", help="write augmented training samples")
    common(p, seed=True)
    p.add_argument("--annotations", required=True, help="COCO annotation JSON")
    p.add_argument("--images", required=True, help="directory holding the images named in the annotations")
    p.add_argument("--out", required=True, help="output directory for PNGs and annotations.json")
    p.add_argument("--n", type=int, default=8, help="number of samples (default: 8)")
    p.add_argument("--size", type=int, default=640, help="output canvas size in px (default: 640)")
    p.add_argument("--mosaic-prob", type=float, default=None, help=f"(default: {d.mosaic_prob})")
    p.add_argument("--mixup-prob", type=float, default=None, help=f"(default: {d.mixup_prob})")
    p.add_argument("--mixup-beta", type=float, default=None, help=f"Beta(a, a) for the mixup weight (default: {d.mixup_beta})")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("mask", help="sample a patch mask for one image")
    common(p, seed=True)
    p.add_argument("--image", required=True, help="PNG or JPEG")
    p.add_argument("--ratio", type=float, default=None, help=f"masked fraction (default: {d.mask_ratio})")
    p.add_argument("--patch", type=int, default=None, help=f"patch size in px (default: {d.patch_size})")
    p.add_argument("--mode", choices=("whole", "cut"), default="whole", help="mask the whole image or a cropped region (default: whole)")
    p.add_argument("--region", default=None, help="normalized crop x1,y1,x2,y2 for --mode cut (default: whole image)")
    p.add_argument("--scales", type=int, default=4, help="visibility pyramid depth (default: 4)")
    p.add_argument("--out", required=True, help="plan JSON path")
    p.add_argument("--viz", default=None, help="PNG with masked patches painted gray")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("tta-merge", help="map per-view results back and merge them")
    common(p)
    p.add_argument("--results", nargs="+", required=True, help="one COCO results file per view, in view order")
    p.add_argument("--views", default=None, help="views JSON list (default: config tta_views)")
    p.add_argument("--annotations", required=True, help="COCO annotations giving native image sizes")
    p.add_argument("--out", required=True)
    p.add_argument("--model-id", type=int, default=0, help="model id for the merged set (default: 0)")
    p.add_argument("--iou", type=float, default=None, help=f"WBF IoU threshold (default: {d.wbf_iou_thr})")
    p.add_argument("--skip", type=float, default=None, help=f"WBF skip-score threshold (default: {d.wbf_skip_thr})")
    p.add_argument("--conf", choices=("avg", "max"), default="avg", help="fused score (default: avg)")
    p.add_argument("--concat", action="store_true", help="concatenate views without WBF")
    p.set_defaults(func=cmd_tta_merge)

    p = sub.add_parser("fuse", help="weighted boxes fusion across models")
    common(p)
    p.add_argument("--results", nargs="+", required=True, help="COCO results files, one per model")
    p.add_argument("--annotations", required=True, help="COCO annotations giving image sizes")
    p.add_argument("--weights", type=_floats, default=None, help="comma-separated model weights (default: all 1)")
    p.add_argument("--iou", type=float, default=None, help=f"(default: {d.wbf_iou_thr})")
    p.add_argument("--skip", type=float, default=None, help=f"(default: {d.wbf_skip_thr})")
    p.add_argument("--conf", choices=("avg", "max"), default="avg", help="(default: avg)")
    p.add_argument("--model-id", type=int, default=0, help="(default: 0)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("select", help="rank models by AP and keep the top k")
    common(p)
    p.add_argument("--reports", required=True, help="directory of eval report JSON files")
    p.add_argument("--k", type=int, default=None, help=f"models to keep (default: {d.top_k})")
    p.add_argument("--out", required=True, help="text file, one model id per line")
    p.add_argument("--figure", default=None, help="PNG bar chart of the ranking")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("eval", help="COCO-style AP report")
    common(p)
    p.add_argument("--results", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", default="report.json", help="(default: report.json)")
    p.add_argument("--model-id", type=int, default=0, help="(default: 0)")
    p.add_argument("--max-dets", type=int, default=None, help="strict COCO per-image cap, e.g. 100 (default: none)")
    p.add_argument("--figures", default=None, help="directory for PR-curve and AP-vs-IoU PNGs")
    p.set_defaults(func=cmd_eval)
    return parser


def _configure_logging(verbose: bool) -> None:
    root = logging.getLogger("detkit")
    for h in [h for h in root.handlers if getattr(h, "_detkit", False)]:
        root.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)  # bound per run so redirected stderr is honored
    handler._detkit = True
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        cfg = _resolve_config(args)
        return args.func(args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"detkit {args.command}: error: {exc}\n")
        return EXIT_USAGE
    except DataError as exc:
        sys.stderr.write(f"detkit {args.command}: {exc}\n")
        return EXIT_DATA
    except OSError as exc:
        sys.stderr.write(f"detkit {args.command}: {exc.filename or ''}: {exc.strerror or exc}\n")
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
