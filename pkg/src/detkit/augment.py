"""Box-aware training augmentations: color jitter, flip, letterbox, mosaic, mixup.

Every function is pure; randomness only enters through an explicitly passed
``numpy.random.Generator``. Resampling is nearest-neighbor throughout so that
box and pixel geometry agree exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from .geometry import DEFAULT_MIN_AREA, Box, clip, hflip_box, keep_box

PAD_VALUE = 114


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class AugSample:
    image: np.ndarray  # (h, w, 3) uint8
    boxes: list[tuple[Box, int]] = field(default_factory=list)

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]


@dataclass(frozen=True)
class Placement:
    """Where a letterboxed image sits inside its canvas."""

    ratio: float
    pad_x: int
    pad_y: int
    src_w: int
    src_h: int
    target_w: int
    target_h: int

    def forward(self, b: Box) -> Box:
        sx = self.src_w * self.ratio
        sy = self.src_h * self.ratio
        return Box(
            (self.pad_x + b.x1 * sx) / self.target_w,
            (self.pad_y + b.y1 * sy) / self.target_h,
            (self.pad_x + b.x2 * sx) / self.target_w,
            (self.pad_y + b.y2 * sy) / self.target_h,
        )

    def inverse(self, b: Box) -> Box:
        sx = self.src_w * self.ratio
        sy = self.src_h * self.ratio
        return Box(
            (b.x1 * self.target_w - self.pad_x) / sx,
            (b.y1 * self.target_h - self.pad_y) / sy,
            (b.x2 * self.target_w - self.pad_x) / sx,
            (b.y2 * self.target_h - self.pad_y) / sy,
        )


def filter_boxes(boxes, min_area: float = DEFAULT_MIN_AREA) -> list[tuple[Box, int]]:
    out = []
    for box, label in boxes:
        box = clip(box)
        if keep_box(box, min_area):
            out.append((box, label))
    return out


def resize_nearest(image: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    h, w = image.shape[:2]
    rows = (np.arange(new_h) * h) // new_h
    cols = (np.arange(new_w) * w) // new_w
    return image[rows[:, None], cols[None, :]]


def color_jitter(s: AugSample, gain_h: float, gain_s: float, gain_v: float) -> AugSample:
    """Scale the H, S and V channels by ``1 + gain`` and clamp to [0, 1]."""
    for g in (gain_h, gain_s, gain_v):
        if not -1.0 <= g <= 1.0:
            raise ValueError(f"jitter gain {g} outside [-1, 1]")
    hsv = rgb_to_hsv(s.image.astype(np.float64) / 255.0)
    hsv *= np.array([1.0 + gain_h, 1.0 + gain_s, 1.0 + gain_v])
    np.clip(hsv, 0.0, 1.0, out=hsv)
    rgb = np.floor(hsv_to_rgb(hsv) * 255.0 + 0.5)
    return AugSample(np.clip(rgb, 0, 255).astype(np.uint8), list(s.boxes))


def hflip(s: AugSample) -> AugSample:
    return AugSample(s.image[:, ::-1].copy(), [(hflip_box(b), lab) for b, lab in s.boxes])


def letterbox_placement(src_w: int, src_h: int, target_w: int, target_h: int) -> Placement:
    if target_w <= 0 or target_h <= 0:
        raise ValueError("letterbox targets must be positive")
    r = min(target_w / src_w, target_h / src_h)
    new_w = min(target_w, max(1, round_half_up(src_w * r)))
    new_h = min(target_h, max(1, round_half_up(src_h * r)))
    return Placement(r, (target_w - new_w) // 2, (target_h - new_h) // 2, src_w, src_h, target_w, target_h)


def letterbox(
    s: AugSample, target_w: int, target_h: int, pad_value: int = PAD_VALUE
) -> tuple[AugSample, Placement]:
    """Aspect-preserving resize into a ``target_w x target_h`` canvas, centered."""
    p = letterbox_placement(s.width, s.height, target_w, target_h)
    new_w = min(target_w, max(1, round_half_up(s.width * p.ratio)))
    new_h = min(target_h, max(1, round_half_up(s.height * p.ratio)))
    canvas = np.full((target_h, target_w, 3), pad_value, dtype=np.uint8)
    canvas[p.pad_y : p.pad_y + new_h, p.pad_x : p.pad_x + new_w] = resize_nearest(s.image, new_w, new_h)
    boxes = [(p.forward(b), lab) for b, lab in s.boxes]
    return AugSample(canvas, boxes), p


def mosaic_quadrants(cx: float, cy: float, out_size: int) -> tuple[int, int, list[tuple[int, int, int, int]]]:
    """Pixel center and the (x0, y0, x1, y1) rectangle of each quadrant TL, TR, BL, BR."""
    xc, yc = round_half_up(cx * out_size), round_half_up(cy * out_size)
    s = out_size
    return xc, yc, [(0, 0, xc, yc), (xc, 0, s, yc), (0, yc, xc, s), (xc, yc, s, s)]


def mosaic(
    sources: Sequence[AugSample],
    center: tuple[float, float],
    out_size: int,
    center_range: tuple[float, float] = (0.25, 0.75),
    min_area: float = DEFAULT_MIN_AREA,
) -> AugSample:
    """Tile four sources around ``center``.

    Each source is scaled to ``out_size`` square and cropped so that its corner
    facing the center abuts it: the top-left source contributes its
    bottom-right region, the top-right its bottom-left, and so on.
    """
    if len(sources) != 4:
        raise ValueError(f"mosaic needs exactly 4 sources, got {len(sources)}")
    lo, hi = center_range
    cx, cy = center
    if not (lo <= cx <= hi and lo <= cy <= hi):
        raise ValueError(f"mosaic center {center} outside [{lo}, {hi}]^2")
    S = out_size
    xc, yc, quads = mosaic_quadrants(cx, cy, S)
    # translation from scaled-source pixels to canvas pixels, per quadrant
    offsets = [(xc - S, yc - S), (xc, yc - S), (xc - S, yc), (xc, yc)]

    canvas = np.empty((S, S, 3), dtype=np.uint8)
    boxes: list[tuple[Box, int]] = []
    for src, (qx0, qy0, qx1, qy1), (dx, dy) in zip(sources, quads, offsets):
        if qx1 <= qx0 or qy1 <= qy0:
            continue
        scaled = resize_nearest(src.image, S, S)
        canvas[qy0:qy1, qx0:qx1] = scaled[qy0 - dy : qy1 - dy, qx0 - dx : qx1 - dx]
        for b, label in src.boxes:
            x1 = min(max(b.x1 * S + dx, qx0), qx1)
            y1 = min(max(b.y1 * S + dy, qy0), qy1)
            x2 = min(max(b.x2 * S + dx, qx0), qx1)
            y2 = min(max(b.y2 * S + dy, qy0), qy1)
            box = clip(Box(x1 / S, y1 / S, x2 / S, y2 / S))
            if keep_box(box, min_area):
                boxes.append((box, label))
    return AugSample(canvas, boxes)


def mixup(a: AugSample, b: AugSample, lam: float) -> AugSample:
    if a.image.shape != b.image.shape:
        raise ValueError(f"mixup size mismatch: {a.image.shape} vs {b.image.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixup lambda {lam} outside [0, 1]")
    blend = lam * a.image.astype(np.float64) + (1.0 - lam) * b.image.astype(np.float64)
    pixels = np.clip(np.floor(blend + 0.5), 0, 255).astype(np.uint8)
    return AugSample(pixels, list(a.boxes) + list(b.boxes))


@dataclass(frozen=True)
class AugmentParams:
    out_size: int = 640
    mosaic_prob: float = 1.0
    mixup_prob: float = 0.15
    mixup_beta: float = 32.0
    hsv_gains: tuple[float, float, float] = (0.015, 0.7, 0.4)
    flip_prob: float = 0.5
    center_range: tuple[float, float] = (0.25, 0.75)
    min_area: float = DEFAULT_MIN_AREA


def _base_view(pool: Sequence[AugSample], idx: int, p: AugmentParams, rng: np.random.Generator) -> AugSample:
    if rng.random() < p.mosaic_prob:
        others = rng.integers(0, len(pool), size=3)
        srcs = [pool[idx]] + [pool[int(j)] for j in others]
        order = rng.permutation(4)
        center = tuple(rng.uniform(*p.center_range, size=2))
        return mosaic([srcs[int(k)] for k in order], center, p.out_size, p.center_range, p.min_area)
    out, _ = letterbox(pool[idx], p.out_size, p.out_size)
    return out


def random_augment(
    pool: Sequence[AugSample], idx: int, p: AugmentParams, rng: np.random.Generator
) -> AugSample:
    """One training sample built around ``pool[idx]``: mosaic or letterbox, optional mixup, jitter, flip."""
    s = _base_view(pool, idx, p, rng)
    if rng.random() < p.mixup_prob:
        other = _base_view(pool, int(rng.integers(0, len(pool))), p, rng)
        s = mixup(s, other, float(rng.beta(p.mixup_beta, p.mixup_beta)))
    gains = rng.uniform(-1.0, 1.0, size=3) * np.asarray(p.hsv_gains)
    s = color_jitter(s, *(float(g) for g in gains))
    if rng.random() < p.flip_prob:
        s = hflip(s)
    return AugSample(s.image, filter_boxes(s.boxes, p.min_area))
