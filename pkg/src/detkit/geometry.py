"""Box and detection value types plus the IoU/clip/size helpers everything else uses.

All coordinates are normalized xyxy in [0, 1]. Conversion to pixels happens
only at file I/O and in :func:`size_class`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

# COCO area thresholds in pixels
SMALL_AREA = 32 ** 2
MEDIUM_AREA = 96 ** 2

DEFAULT_MIN_AREA = 1e-6


class Box(NamedTuple):
    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return max(0.0, self.x2 - self.x1) * max(0.0, self.y2 - self.y1)

    def is_valid(self) -> bool:
        return 0.0 <= self.x1 <= self.x2 <= 1.0 and 0.0 <= self.y1 <= self.y2 <= 1.0

    @classmethod
    def from_xywh_px(cls, x: float, y: float, w: float, h: float, img_w: int, img_h: int) -> "Box":
        """Build a normalized box from a COCO pixel ``[x, y, w, h]`` bbox (not clipped)."""
        return cls(x / img_w, y / img_h, (x + w) / img_w, (y + h) / img_h)

    def to_xywh_px(self, img_w: int, img_h: int) -> list[float]:
        return [
            self.x1 * img_w,
            self.y1 * img_h,
            (self.x2 - self.x1) * img_w,
            (self.y2 - self.y1) * img_h,
        ]


class SizeClass(enum.Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


@dataclass(frozen=True)
class Detection:
    box: Box
    label: int
    score: float
    model_id: int = 0

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0) or math.isnan(self.score):
            raise ValueError(f"score {self.score!r} outside [0, 1]")
        if self.label < 0:
            raise ValueError(f"label must be >= 0, got {self.label}")


def area(b: Box) -> float:
    return b.area


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 when the union is empty."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def clip(b: Box) -> Box:
    """Clamp every coordinate to [0, 1] and restore x1<=x2, y1<=y2."""
    x1, y1, x2, y2 = (min(1.0, max(0.0, float(v))) for v in b)
    if x2 < x1:
        x1, x2 = x2, x1
    if y2 < y1:
        y1, y2 = y2, y1
    return Box(x1, y1, x2, y2)


def hflip_box(b: Box) -> Box:
    return Box(1.0 - b.x2, b.y1, 1.0 - b.x1, b.y2)


def size_class(b: Box, img_w: int, img_h: int) -> SizeClass:
    if img_w <= 0 or img_h <= 0:
        raise ValueError("image dimensions must be positive")
    a = b.area * img_w * img_h
    if a < SMALL_AREA:
        return SizeClass.SMALL
    if a < MEDIUM_AREA:
        return SizeClass.MEDIUM
    return SizeClass.LARGE


def keep_box(b: Box, min_area: float = DEFAULT_MIN_AREA) -> bool:
    """True if a clipped box is non-degenerate and at least ``min_area``."""
    return b.x2 > b.x1 and b.y2 > b.y1 and b.area >= min_area
