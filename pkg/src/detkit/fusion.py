"""Combining detections: greedy NMS, weighted boxes fusion, and model top-k selection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

from .geometry import Box, Detection, iou

if TYPE_CHECKING:
    from .evaluation import EvalReport


def det_order_key(score: float, d: Detection):
    """Descending score, then (label, x1, y1, x2, y2, model_id) for a total order."""
    return (-score, d.label, *d.box, d.model_id)


def nms(dets: Sequence[Detection], iou_thr: float) -> list[Detection]:
    """Greedy per-label suppression; keeps a box iff IoU < ``iou_thr`` with every kept box."""
    if not 0.0 < iou_thr <= 1.0:
        raise ValueError(f"iou_thr must be in (0, 1], got {iou_thr}")
    kept: list[Detection] = []
    for d in sorted(dets, key=lambda d: det_order_key(d.score, d)):
        if all(k.label != d.label or iou(k.box, d.box) < iou_thr for k in kept):
            kept.append(d)
    return kept


@dataclass
class FusionParams:
    iou_thr: float = 0.55
    skip_thr: float = 0.0
    weights: Optional[Sequence[float]] = None
    conf_type: str = "avg"

    def __post_init__(self):
        if not 0.0 < self.iou_thr <= 1.0:
            raise ValueError(f"iou_thr must be in (0, 1], got {self.iou_thr}")
        if self.conf_type not in ("avg", "max"):
            raise ValueError(f"conf_type must be 'avg' or 'max', got {self.conf_type!r}")
        if self.weights is not None and any(w <= 0 for w in self.weights):
            raise ValueError(f"model weights must be positive, got {list(self.weights)}")


@dataclass
class Cluster:
    label: int
    scores: list[float] = field(default_factory=list)
    boxes: list[Box] = field(default_factory=list)
    box: Optional[Box] = None

    def add(self, score: float, box: Box) -> None:
        self.scores.append(score)
        self.boxes.append(box)
        self.box = fuse_coords(self.scores, self.boxes)

    def score(self, conf_type: str, n_models: int) -> float:
        t = len(self.scores)
        s = max(self.scores) if conf_type == "max" else sum(self.scores) / t
        return s * min(t, n_models) / n_models


def fuse_coords(scores: Sequence[float], boxes: Sequence[Box]) -> Box:
    """Score-weighted mean of member boxes (plain mean if every score is 0)."""
    total = sum(scores)
    if total <= 0:
        scores, total = [1.0] * len(boxes), float(len(boxes))
    coords = [sum(s * b[i] for s, b in zip(scores, boxes)) / total for i in range(4)]
    # keep the mean inside the members' hull despite rounding
    return Box(*(min(max(c, min(b[i] for b in boxes)), max(b[i] for b in boxes)) for i, c in enumerate(coords)))


def wbf(per_model: Sequence[Sequence[Detection]], p: Optional[FusionParams] = None, model_id: int = 0) -> list[Detection]:
    """Weighted boxes fusion over ``N`` models' detections for a single image.

    Detections are processed in descending weighted-score order. Each joins the
    same-label cluster whose current fused box overlaps it most (IoU at least
    ``iou_thr``) or opens a new cluster. Fused scores are rescaled by
    ``min(T, N) / N`` where ``T`` is the cluster size. Model weights are
    relative: they are divided by the largest weight so scores stay in [0, 1].
    """
    p = p or FusionParams()
    n = len(per_model)
    if n == 0:
        raise ValueError("wbf needs at least one detection list")
    weights = list(p.weights) if p.weights is not None else [1.0] * n
    if len(weights) != n:
        raise ValueError(f"{len(weights)} weights for {n} models")
    if any(w <= 0 for w in weights):
        raise ValueError(f"model weights must be positive, got {weights}")
    wmax = max(weights)

    pool = []
    for w, dets in zip(weights, per_model):
        for d in dets:
            if d.score < p.skip_thr:
                continue
            pool.append((d.score * (w / wmax), d))
    pool.sort(key=lambda sd: det_order_key(*sd))

    clusters: dict[int, list[Cluster]] = {}
    for score, d in pool:
        best, best_iou = None, -1.0
        for c in clusters.setdefault(d.label, []):
            v = iou(c.box, d.box)
            if v >= p.iou_thr and v > best_iou:
                best, best_iou = c, v
        if best is None:
            best = Cluster(d.label)
            clusters[d.label].append(best)
        best.add(score, d.box)

    fused = [
        Detection(c.box, c.label, min(1.0, c.score(p.conf_type, n)), model_id)
        for label in sorted(clusters)
        for c in clusters[label]
    ]
    fused.sort(key=lambda d: det_order_key(d.score, d))
    return fused


def rank_and_select(reports: Sequence[tuple[int, "EvalReport"]], k: int) -> list[int]:
    """Model ids by AP@0.50:0.95 descending (ties: AP@0.50 desc, id asc), first ``k``."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not reports:
        raise ValueError("no reports to rank")
    ranked = sorted(reports, key=lambda r: (-r[1].ap, -r[1].ap50, r[0]))
    return [model_id for model_id, _ in ranked[:k]]
