"""Test-time augmentation: invertible view transforms and inverse box mapping."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .augment import AugSample, Placement, letterbox, letterbox_placement, round_half_up
from .geometry import Box, Detection, clip, hflip_box

KINDS = ("identity", "hflip", "letterbox")


@dataclass(frozen=True)
class ViewTransform:
    """One TTA view.

    A letterbox view targets either a fixed canvas (``target_w``/``target_h``)
    or ``scale`` times the native image size.
    """

    kind: str = "identity"
    target_w: Optional[int] = None
    target_h: Optional[int] = None
    scale: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown view kind {self.kind!r}")
        if self.kind == "letterbox":
            fixed = self.target_w is not None and self.target_h is not None
            if fixed == (self.scale is not None):
                raise ValueError("letterbox view needs either target_w/target_h or scale")
            if self.scale is not None and self.scale <= 0:
                raise ValueError("letterbox scale must be positive")

    @classmethod
    def from_json(cls, obj) -> "ViewTransform":
        if isinstance(obj, str):
            return cls(obj)
        return cls(
            obj.get("kind", "identity"),
            obj.get("target_w"),
            obj.get("target_h"),
            obj.get("scale"),
        )

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        for key in ("target_w", "target_h", "scale"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out

    def record(self, width: int, height: int) -> "ViewRecord":
        """Resolve this view against an image of the given native size."""
        placement = None
        if self.kind == "letterbox":
            if self.scale is not None:
                tw = max(1, round_half_up(width * self.scale))
                th = max(1, round_half_up(height * self.scale))
            else:
                tw, th = self.target_w, self.target_h
            placement = letterbox_placement(width, height, tw, th)
        return ViewRecord(self, width, height, placement)


DEFAULT_VIEWS = (
    ViewTransform("identity"),
    ViewTransform("hflip"),
    ViewTransform("letterbox", scale=1.25),
    ViewTransform("letterbox", scale=0.75),
)


@dataclass(frozen=True)
class ViewRecord:
    view: ViewTransform
    src_w: int
    src_h: int
    placement: Optional[Placement] = None

    @property
    def out_dims(self) -> tuple[int, int]:
        if self.placement is not None:
            return self.placement.target_w, self.placement.target_h
        return self.src_w, self.src_h

    def forward(self, b: Box) -> Box:
        if self.view.kind == "hflip":
            return hflip_box(b)
        if self.view.kind == "letterbox":
            return self.placement.forward(b)
        return b

    def inverse(self, b: Box) -> Box:
        if self.view.kind == "hflip":
            return hflip_box(b)
        if self.view.kind == "letterbox":
            return self.placement.inverse(b)
        return b


def parse_views(raw) -> list[ViewTransform]:
    views = [ViewTransform.from_json(v) for v in raw]
    if not views:
        raise ValueError("at least one view is required")
    return views


def apply_views(image: np.ndarray, views: Sequence[ViewTransform]) -> list[tuple[np.ndarray, ViewRecord]]:
    if not views:
        raise ValueError("at least one view is required")
    if views[0].kind != "identity":
        raise ValueError("the first view must be the identity")
    h, w = image.shape[:2]
    out = []
    for view in views:
        rec = view.record(w, h)
        if view.kind == "hflip":
            img = image[:, ::-1].copy()
        elif view.kind == "letterbox":
            p = rec.placement
            img = letterbox(AugSample(image), p.target_w, p.target_h)[0].image
        else:
            img = image.copy()
        out.append((img, rec))
    return out


def invert_detections(
    dets_per_view: Sequence[Sequence[Detection]], records: Sequence[ViewRecord]
) -> list[Detection]:
    """Map every view's detections back to native coordinates and concatenate."""
    if len(dets_per_view) != len(records):
        raise ValueError(f"{len(dets_per_view)} detection lists for {len(records)} view records")
    merged = []
    for dets, rec in zip(dets_per_view, records):
        for d in dets:
            merged.append(Detection(clip(rec.inverse(d.box)), d.label, d.score, d.model_id))
    return merged
