"""COCO-style box AP: greedy matching, 101-point interpolation, size strata.

Unlike pycocotools there is no default cap on detections per image and no
crowd handling. Matching runs once per IoU threshold against all truths; the
size-stratified numbers then keep truths of that size, detections matched to
them, and unmatched detections whose own box falls in that size.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .data_io import AnnotatedImage, DataError, ResultSet
from .geometry import Box, Detection, SizeClass, iou, size_class

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_STEPS = 100  # recall grid 0, 0.01, ..., 1.00
SIZES = (SizeClass.SMALL, SizeClass.MEDIUM, SizeClass.LARGE)


def match_indices(dets: Sequence[Detection], truths: Sequence[Box], iou_thr: float) -> list[Optional[int]]:
    """Index of the truth each detection claims (None for a false positive).

    ``dets`` must already be in descending score order. Each detection takes
    the still-unclaimed truth with the highest IoU >= ``iou_thr``; ties go to
    the lower truth index.
    """
    used = [False] * len(truths)
    out: list[Optional[int]] = []
    for d in dets:
        best, best_iou = None, iou_thr
        for j, t in enumerate(truths):
            if used[j]:
                continue
            v = iou(d.box, t)
            if v >= best_iou and (best is None or v > best_iou):
                best, best_iou = j, v
        if best is not None:
            used[best] = True
        out.append(best)
    return out


def match(dets: Sequence[Detection], truths: Sequence[Box], iou_thr: float) -> tuple[list[tuple[Detection, bool]], int]:
    """TP/FP flag per detection plus the number of truths left unmatched."""
    idx = match_indices(dets, truths, iou_thr)
    flags = [(d, j is not None) for d, j in zip(dets, idx)]
    return flags, len(truths) - sum(j is not None for j in idx)


def interpolated_precision(tp_flags: Sequence[bool], n_truths: int) -> np.ndarray:
    """Max precision at recall >= r for r on the 101-point grid."""
    flags = np.asarray(tp_flags, dtype=bool)
    out = np.zeros(RECALL_STEPS + 1)
    if flags.size == 0 or n_truths <= 0:
        return out
    tp = np.cumsum(flags)
    precision = tp / np.arange(1, flags.size + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # recall >= j/100  <=>  100*tp >= j*G, compared in integers
    first = np.searchsorted(RECALL_STEPS * tp, np.arange(RECALL_STEPS + 1) * n_truths, side="left")
    ok = first < flags.size
    out[ok] = envelope[first[ok]]
    return out


def average_precision(tp_flags: Sequence[bool], n_truths: int) -> Optional[float]:
    """101-point interpolated AP; None when there are no truths."""
    if n_truths <= 0:
        return None
    return float(interpolated_precision(tp_flags, n_truths).sum() / (RECALL_STEPS + 1))


def _mean(values: Iterable[Optional[float]]) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


@dataclass
class EvalReport:
    per_class: dict[int, list[float]]  # AP at each IoU threshold
    ap: Optional[float]
    ap50: Optional[float]
    ap75: Optional[float]
    ap_small: Optional[float]
    ap_medium: Optional[float]
    ap_large: Optional[float]
    size_per_class: dict[str, dict[int, float]] = field(default_factory=dict)
    precision: dict[int, list[list[float]]] = field(default_factory=dict, repr=False)
    thresholds: tuple[float, ...] = IOU_THRESHOLDS
    model_id: int = 0
    num_images: int = 0
    num_detections: int = 0

    def class_ap(self, label: int) -> float:
        return sum(self.per_class[label]) / len(self.per_class[label])

    @property
    def metrics(self) -> dict[str, Optional[float]]:
        return {
            "AP@0.50:0.95": self.ap,
            "AP@0.50": self.ap50,
            "AP@0.75": self.ap75,
            "AP@(small)": self.ap_small,
            "AP@(medium)": self.ap_medium,
            "AP@(large)": self.ap_large,
        }

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "num_images": self.num_images,
            "num_detections": self.num_detections,
            "iou_thresholds": list(self.thresholds),
            "ap": self.ap,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "ap_small": self.ap_small,
            "ap_medium": self.ap_medium,
            "ap_large": self.ap_large,
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "size_per_class": {s: {str(k): v for k, v in d.items()} for s, d in self.size_per_class.items()},
            "precision": {str(k): v for k, v in self.precision.items()},
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "EvalReport":
        try:
            return cls(
                per_class={int(k): list(v) for k, v in obj["per_class"].items()},
                ap=obj["ap"],
                ap50=obj["ap50"],
                ap75=obj["ap75"],
                ap_small=obj["ap_small"],
                ap_medium=obj["ap_medium"],
                ap_large=obj["ap_large"],
                size_per_class={s: {int(k): v for k, v in d.items()} for s, d in obj.get("size_per_class", {}).items()},
                precision={int(k): v for k, v in obj.get("precision", {}).items()},
                thresholds=tuple(obj.get("iou_thresholds", IOU_THRESHOLDS)),
                model_id=int(obj.get("model_id", 0)),
                num_images=int(obj.get("num_images", 0)),
                num_detections=int(obj.get("num_detections", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed eval report: {exc!r}") from exc


def format_percent(v: Optional[float]) -> str:
    return "-" if v is None else f"{100.0 * v:.1f}"


def format_table(report: EvalReport) -> str:
    names = list(report.metrics)
    width = max(len(n) for n in names)
    head = "  ".join(n.rjust(width) for n in names)
    row = "  ".join(format_percent(v).rjust(width) for v in report.metrics.values())
    return f"{head}\n{row}"


def _sort_key(image_id: int, d: Detection):
    return (-d.score, image_id, d.box.x1, d.box.y1, d.box.x2, d.box.y2)


def _class_records(label, images, dets_by_image, thr):
    """(key, is_tp, size) per detection of one class, and truth count per size."""
    records = []
    n_truths = {s: 0 for s in SIZES}
    for im in images:
        truths = [b for b, lab in im.truths if lab == label]
        sizes = [size_class(b, im.width, im.height) for b in truths]
        for s in sizes:
            n_truths[s] += 1
        dets = sorted((d for d in dets_by_image.get(im.id, ()) if d.label == label), key=lambda d: _sort_key(im.id, d))
        for d, j in zip(dets, match_indices(dets, truths, thr)):
            size = sizes[j] if j is not None else size_class(d.box, im.width, im.height)
            records.append((_sort_key(im.id, d), j is not None, size))
    records.sort(key=lambda r: r[0])
    return records, n_truths


def _evaluate_class(label, images, dets_by_image):
    per_thr, curves = [], []
    per_size: dict[SizeClass, list[Optional[float]]] = {s: [] for s in SIZES}
    for thr in IOU_THRESHOLDS:
        records, n_truths = _class_records(label, images, dets_by_image, thr)
        flags = [tp for _, tp, _ in records]
        g = sum(n_truths.values())
        curves.append(interpolated_precision(flags, g).tolist())
        per_thr.append(average_precision(flags, g))
        for s in SIZES:
            per_size[s].append(average_precision([tp for _, tp, sz in records if sz == s], n_truths[s]))
    size_ap = {s: (None if v[0] is None else sum(v) / len(v)) for s, v in per_size.items()}
    return per_thr, curves, size_ap


def evaluate(
    results: Union[ResultSet, Sequence[tuple[int, Detection]]],
    images: Sequence[AnnotatedImage],
    max_dets: Optional[int] = None,
    threads: int = 1,
) -> EvalReport:
    """Full AP report of ``results`` against the truths carried by ``images``."""
    entries = results.entries if isinstance(results, ResultSet) else list(results)
    model_id = results.model_id if isinstance(results, ResultSet) else 0
    known = {im.id for im in images}
    unknown = sorted({i for i, _ in entries} - known)
    if unknown:
        raise DataError(f"results reference unknown image ids {unknown}")

    dets_by_image: dict[int, list[Detection]] = {}
    for image_id, d in entries:
        dets_by_image.setdefault(image_id, []).append(d)
    if max_dets is not None:
        for image_id, dets in dets_by_image.items():
            dets_by_image[image_id] = sorted(dets, key=lambda d: _sort_key(image_id, d))[:max_dets]

    labels = sorted({lab for im in images for _, lab in im.truths})
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        outcomes = list(pool.map(lambda lab: _evaluate_class(lab, images, dets_by_image), labels))

    per_class = {lab: o[0] for lab, o in zip(labels, outcomes)}
    precision = {lab: o[1] for lab, o in zip(labels, outcomes)}
    size_per_class = {
        s.value: {lab: o[2][s] for lab, o in zip(labels, outcomes) if o[2][s] is not None} for s in SIZES
    }

    def over_classes(fn):
        return _mean(fn(lab) for lab in labels)

    return EvalReport(
        per_class=per_class,
        ap=over_classes(lambda lab: sum(per_class[lab]) / len(per_class[lab])),
        ap50=over_classes(lambda lab: per_class[lab][0]),
        ap75=over_classes(lambda lab: per_class[lab][IOU_THRESHOLDS.index(0.75)]),
        ap_small=_mean(size_per_class["small"].values()),
        ap_medium=_mean(size_per_class["medium"].values()),
        ap_large=_mean(size_per_class["large"].values()),
        size_per_class=size_per_class,
        precision=precision,
        model_id=model_id,
        num_images=len(images),
        num_detections=sum(len(v) for v in dets_by_image.values()),
    )
