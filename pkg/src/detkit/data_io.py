"""COCO-style annotation/result files, images, and the pipeline config."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

import numpy as np
from PIL import Image

from .geometry import Box, Detection, clip

log = logging.getLogger(__name__)

Dims = Mapping[int, tuple[int, int]]

DEFAULT_TTA_VIEWS = (
    {"kind": "identity"},
    {"kind": "hflip"},
    {"kind": "letterbox", "scale": 1.25},
    {"kind": "letterbox", "scale": 0.75},
)


class DataError(Exception):
    """Malformed or inconsistent input data."""


@dataclass
class AnnotatedImage:
    id: int
    width: int
    height: int
    truths: list[tuple[Box, int]] = field(default_factory=list)
    file_name: str = ""
    pixels: Optional[np.ndarray] = None  # (height, width, 3) uint8

    def __post_init__(self):
        if self.pixels is not None:
            if self.pixels.dtype != np.uint8 or self.pixels.shape != (self.height, self.width, 3):
                raise ValueError(
                    f"image {self.id}: pixel buffer {self.pixels.shape}/{self.pixels.dtype} "
                    f"does not match {self.height}x{self.width}x3 uint8"
                )

    @property
    def dims(self) -> tuple[int, int]:
        return self.width, self.height


@dataclass
class ResultSet:
    model_id: int
    entries: list[tuple[int, Detection]] = field(default_factory=list)

    def __post_init__(self):
        for _, det in self.entries:
            if det.model_id != self.model_id:
                raise ValueError(f"entry model_id {det.model_id} != set model_id {self.model_id}")

    def by_image(self) -> dict[int, list[Detection]]:
        out: dict[int, list[Detection]] = {}
        for image_id, det in self.entries:
            out.setdefault(image_id, []).append(det)
        return out

    def __len__(self):
        return len(self.entries)


@dataclass
class PipelineConfig:
    mask_ratio: float = 0.60
    patch_size: int = 32
    mosaic_prob: float = 1.0
    mixup_prob: float = 0.15
    mixup_beta: float = 32.0
    tta_views: list = field(default_factory=lambda: [dict(v) for v in DEFAULT_TTA_VIEWS])
    wbf_iou_thr: float = 0.55
    wbf_skip_thr: float = 0.0
    top_k: int = 30
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError(f"mask_ratio must be in (0, 1), got {self.mask_ratio}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {self.patch_size}")
        for name in ("mosaic_prob", "mixup_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.mixup_beta <= 0:
            raise ValueError("mixup_beta must be positive")
        if not 0.0 < self.wbf_iou_thr <= 1.0:
            raise ValueError("wbf_iou_thr must be in (0, 1]")

    def replace(self, **changes) -> "PipelineConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)


def _read_json(path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def _field(obj: Any, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise DataError(f"{where}: missing field '{key}'")
    return obj[key]


def _bbox(obj: Any, where: str) -> list[float]:
    bbox = _field(obj, "bbox", where)
    if not isinstance(bbox, list) or len(bbox) != 4 or not all(isinstance(v, (int, float)) for v in bbox):
        raise DataError(f"{where}: field 'bbox' must be 4 numbers, got {bbox!r}")
    if bbox[2] < 0 or bbox[3] < 0:
        raise DataError(f"{where}: negative bbox size {bbox!r}")
    return [float(v) for v in bbox]


def load_config(path) -> PipelineConfig:
    raw = _read_json(path)
    if not isinstance(raw, dict):
        raise DataError(f"{path}: config must be a JSON object")
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise DataError(f"{path}: unknown config fields {unknown}")
    try:
        return PipelineConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def load_annotations(path, counters: Optional[Counter] = None) -> list[AnnotatedImage]:
    """Read a COCO annotation file into images with normalized truth boxes.

    Pixels are not loaded. Boxes reaching outside their image are clipped and
    counted under ``counters["clipped"]``.
    """
    raw = _read_json(path)
    if not isinstance(raw, dict):
        raise DataError(f"{path}: top level must be an object")
    images_raw = _field(raw, "images", str(path))
    anns_raw = raw.get("annotations", [])
    if not isinstance(images_raw, list) or not isinstance(anns_raw, list):
        raise DataError(f"{path}: 'images' and 'annotations' must be arrays")
    counters = counters if counters is not None else Counter()

    images: dict[int, AnnotatedImage] = {}
    for i, im in enumerate(images_raw):
        where = f"{path}: images[{i}]"
        image_id = int(_field(im, "id", where))
        w, h = int(_field(im, "width", where)), int(_field(im, "height", where))
        if w <= 0 or h <= 0:
            raise DataError(f"{where}: non-positive size {w}x{h}")
        if image_id in images:
            raise DataError(f"{where}: duplicate image id {image_id}")
        images[image_id] = AnnotatedImage(image_id, w, h, file_name=str(im.get("file_name", "")))

    for i, ann in enumerate(anns_raw):
        where = f"{path}: annotations[{i}]"
        image_id = int(_field(ann, "image_id", where))
        if image_id not in images:
            raise DataError(f"{where}: unknown image_id {image_id}")
        label = int(_field(ann, "category_id", where))
        img = images[image_id]
        raw_box = Box.from_xywh_px(*_bbox(ann, where), img.width, img.height)
        box = clip(raw_box)
        if box != raw_box:
            counters["clipped"] += 1
        img.truths.append((box, label))

    if counters["clipped"]:
        log.warning("%s: clipped %d annotation boxes to the image", path, counters["clipped"])
    return list(images.values())


def image_dims(images: Iterable[AnnotatedImage]) -> dict[int, tuple[int, int]]:
    return {im.id: (im.width, im.height) for im in images}


def parse_results(raw: Any, model_id: int, dims: Dims, where: str = "results") -> ResultSet:
    if not isinstance(raw, list):
        raise DataError(f"{where}: results must be a JSON array")
    unknown = sorted({int(_field(r, "image_id", f"{where}[{i}]")) for i, r in enumerate(raw)} - set(dims))
    if unknown:
        raise DataError(f"{where}: unknown image ids {unknown}")
    entries = []
    for i, r in enumerate(raw):
        loc = f"{where}[{i}]"
        image_id = int(r["image_id"])
        score = float(_field(r, "score", loc))
        if not 0.0 <= score <= 1.0:
            raise DataError(f"{loc}: score {score} outside [0, 1]")
        w, h = dims[image_id]
        box = clip(Box.from_xywh_px(*_bbox(r, loc), w, h))
        entries.append((image_id, Detection(box, int(_field(r, "category_id", loc)), score, model_id)))
    return ResultSet(model_id, entries)


def load_results(path, model_id: int, dims: Dims) -> ResultSet:
    """Read a COCO results array; ``dims`` maps image id to (width, height)."""
    return parse_results(_read_json(path), model_id, dims, where=str(path))


def results_to_json(rs: ResultSet, dims: Dims) -> list[dict]:
    out = []
    for image_id, det in rs.entries:
        w, h = dims[image_id]
        out.append(
            {
                "image_id": image_id,
                "category_id": det.label,
                "bbox": det.box.to_xywh_px(w, h),
                "score": det.score,
            }
        )
    return out


def save_results(rs: ResultSet, path, dims: Dims) -> None:
    # json writes floats with repr(), which round-trips exactly
    write_json(results_to_json(rs, dims), path)


def write_json(obj: Any, path, indent: Optional[int] = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, indent=indent))


def load_image(path) -> np.ndarray:
    """Decode a PNG/JPEG into an (h, w, 3) uint8 RGB array."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext not in (".png", ".jpg", ".jpeg"):
        raise DataError(f"{path}: unsupported image type '{ext}' (PNG or JPEG only)")
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc


def save_image(pixels: np.ndarray, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def annotations_to_json(images: Iterable[AnnotatedImage], categories: Optional[Iterable[int]] = None) -> dict:
    images = list(images)
    labels = sorted(set(categories or ()) | {lab for im in images for _, lab in im.truths})
    out_images, out_anns = [], []
    ann_id = 1
    for im in images:
        out_images.append({"id": im.id, "width": im.width, "height": im.height, "file_name": im.file_name})
        for box, label in im.truths:
            bbox = box.to_xywh_px(im.width, im.height)
            out_anns.append(
                {
                    "id": ann_id,
                    "image_id": im.id,
                    "category_id": label,
                    "bbox": bbox,
                    "area": bbox[2] * bbox[3],
                    "iscrowd": 0,
                }
            )
            ann_id += 1
    return {
        "images": out_images,
        "annotations": out_anns,
        "categories": [{"id": lab, "name": str(lab)} for lab in labels],
    }
