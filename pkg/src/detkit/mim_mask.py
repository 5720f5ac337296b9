"""Data-side machinery for sparse masked image modeling.

Covers patch-mask sampling with a multi-scale visibility pyramid, sparse
gather/scatter of feature maps, per-patch normalized reconstruction targets,
the masked L2 loss, and a reference sparse 2-D convolution that only reads
visible inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .geometry import Box

VAR_EPS = 1e-12
MASK_GRAY = 128

RngLike = Union[int, np.random.Generator, None]


def _rng(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def mask_count(ratio: float, cells: int) -> int:
    """Number of masked patches: ``ratio * cells`` rounded half up."""
    return int(math.floor(ratio * cells + 0.5))


@dataclass
class MaskPlan:
    grid_w: int
    grid_h: int
    patch_size: int
    ratio: float
    masked: tuple[int, ...]  # sorted row-major patch indices
    scale_masks: list[np.ndarray] = field(repr=False, default_factory=list)
    origin: tuple[int, int] = (0, 0)  # pixel offset of the grid inside the image
    mode: str = "whole"

    @property
    def cells(self) -> int:
        return self.grid_w * self.grid_h

    @property
    def visible(self) -> np.ndarray:
        """Scale-0 visibility, shape (grid_h, grid_w), True = visible."""
        return self.scale_masks[0]

    def to_json(self) -> dict:
        return {
            "grid_w": self.grid_w,
            "grid_h": self.grid_h,
            "patch_size": self.patch_size,
            "ratio": self.ratio,
            "mode": self.mode,
            "origin": list(self.origin),
            "num_scales": len(self.scale_masks),
            "masked": list(self.masked),
        }


def visibility_pyramid(visible: np.ndarray, num_scales: int) -> list[np.ndarray]:
    """Scale ``s`` replicates every scale-0 cell into a 2^s x 2^s block."""
    return [np.kron(visible, np.ones((2 ** s, 2 ** s), dtype=bool)).astype(bool) for s in range(num_scales)]


def sample_mask(
    grid_w: int, grid_h: int, ratio: float, rng: RngLike = None, patch_size: int = 32, num_scales: int = 4
) -> MaskPlan:
    """Mask ``round(ratio * cells)`` distinct patches, uniformly without replacement."""
    cells = grid_w * grid_h
    if grid_w <= 0 or grid_h <= 0:
        raise ValueError(f"empty patch grid {grid_w}x{grid_h}")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"mask ratio must be in (0, 1), got {ratio}")
    n = mask_count(ratio, cells)
    idx = _rng(rng).permutation(cells)[:n]
    masked = tuple(sorted(int(i) for i in idx))
    visible = np.ones(cells, dtype=bool)
    visible[list(masked)] = False
    pyramid = visibility_pyramid(visible.reshape(grid_h, grid_w), num_scales)
    return MaskPlan(grid_w, grid_h, patch_size, ratio, masked, pyramid)


def restrict_to_region(
    image_w: int,
    image_h: int,
    patch_size: int,
    ratio: float,
    region: Box,
    mode: str = "whole",
    rng: RngLike = None,
    num_scales: int = 4,
) -> MaskPlan:
    """Sample a mask over the whole image or over the crop given by ``region``.

    ``mode="cut"`` crops the image to ``region`` first and lays the patch grid
    over the crop; ``mode="whole"`` ignores the region.
    """
    if not region.is_valid():
        raise ValueError(f"invalid region {region}")
    if mode == "whole":
        return sample_mask(image_w // patch_size, image_h // patch_size, ratio, rng, patch_size, num_scales)
    if mode != "cut":
        raise ValueError(f"unknown mode {mode!r} (expected 'whole' or 'cut')")
    x0 = int(math.floor(region.x1 * image_w + 0.5))
    y0 = int(math.floor(region.y1 * image_h + 0.5))
    x1 = int(math.floor(region.x2 * image_w + 0.5))
    y1 = int(math.floor(region.y2 * image_h + 0.5))
    gw, gh = (x1 - x0) // patch_size, (y1 - y0) // patch_size
    if gw < 1 or gh < 1:
        raise ValueError(f"region {region} is smaller than one {patch_size}px patch")
    plan = sample_mask(gw, gh, ratio, rng, patch_size, num_scales)
    plan.origin = (x0, y0)
    plan.mode = "cut"
    return plan


def pad_to_multiple(image: np.ndarray, patch_size: int, value=0) -> np.ndarray:
    h, w = image.shape[:2]
    ph, pw = -h % patch_size, -w % patch_size
    if not ph and not pw:
        return image
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (image.ndim - 2)
    return np.pad(image, pad, constant_values=value)


@dataclass
class PatchTarget:
    values: np.ndarray  # (grid_h, grid_w, patch_size**2 * channels)
    patch_size: int

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.values.shape[0], self.values.shape[1]


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """(H, W, C) -> (H/p, W/p, p*p*C), each patch flattened row-major."""
    if image.ndim == 2:
        image = image[:, :, None]
    h, w, c = image.shape
    if h % patch_size or w % patch_size:
        raise ValueError(f"image {w}x{h} not divisible by patch size {patch_size}; pad first")
    gh, gw = h // patch_size, w // patch_size
    x = image.reshape(gh, patch_size, gw, patch_size, c).transpose(0, 2, 1, 3, 4)
    return x.reshape(gh, gw, patch_size * patch_size * c)


def unpatchify(patches: np.ndarray, patch_size: int, channels: int = 3) -> np.ndarray:
    gh, gw, _ = patches.shape
    x = patches.reshape(gh, gw, patch_size, patch_size, channels).transpose(0, 2, 1, 3, 4)
    return x.reshape(gh * patch_size, gw * patch_size, channels)


def per_patch_normalize(image: np.ndarray, patch_size: int) -> PatchTarget:
    """Zero-mean, unit-variance (population) pixels per patch; flat patches become zeros."""
    x = patchify(np.asarray(image, dtype=np.float64), patch_size)
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    flat = var < VAR_EPS
    out = np.where(flat, 0.0, centered / np.sqrt(np.where(flat, 1.0, var)))
    return PatchTarget(out, patch_size)


def masked_l2_loss(pred, target, plan: MaskPlan) -> float:
    """Mean over masked patches of the per-patch mean squared error."""
    p = pred.values if isinstance(pred, PatchTarget) else np.asarray(pred, dtype=np.float64)
    t = target.values if isinstance(target, PatchTarget) else np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} != target shape {t.shape}")
    if p.shape[:2] != (plan.grid_h, plan.grid_w):
        raise ValueError(f"patch grid {p.shape[:2]} does not match plan {(plan.grid_h, plan.grid_w)}")
    if not plan.masked:
        raise ValueError("mask plan has no masked patches")
    masked = ~plan.visible
    per_patch = ((p - t) ** 2).mean(axis=-1)
    return float(per_patch[masked].mean())


@dataclass
class FeatureMap:
    values: np.ndarray  # (C, H, W)
    visibility: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.visibility = np.asarray(self.visibility, dtype=bool)
        if self.values.ndim != 3 or self.values.shape[1:] != self.visibility.shape:
            raise ValueError(f"values {self.values.shape} incompatible with visibility {self.visibility.shape}")

    @classmethod
    def sparse(cls, values: np.ndarray, visibility: np.ndarray) -> "FeatureMap":
        """Build a map with masked positions zeroed."""
        visibility = np.asarray(visibility, dtype=bool)
        return cls(np.where(visibility[None], values, 0.0), visibility)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


def sparse_gather(fm: FeatureMap) -> list[tuple[tuple[int, int], np.ndarray]]:
    """Visible positions and their channel vectors, row-major."""
    ys, xs = np.nonzero(fm.visibility)
    return [((int(y), int(x)), fm.values[:, y, x].copy()) for y, x in zip(ys, xs)]


def scatter_with_embedding(
    entries: Sequence[tuple[tuple[int, int], np.ndarray]], visibility: np.ndarray, embed
) -> FeatureMap:
    """Densify gathered entries; every masked position gets ``embed``."""
    visibility = np.asarray(visibility, dtype=bool)
    embed = np.asarray(embed, dtype=np.float64).reshape(-1)
    h, w = visibility.shape
    values = np.zeros((embed.size, h, w))
    values[:, ~visibility] = embed[:, None]
    for (y, x), vec in entries:
        if not visibility[y, x]:
            raise ValueError(f"entry at masked position {(y, x)}")
        values[:, y, x] = vec
    return FeatureMap(values, visibility)


def _conv_out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _check_conv(fm_shape, kernel: np.ndarray, stride: int) -> None:
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ValueError(f"kernel must be (out, in, k, k), got {kernel.shape}")
    if kernel.shape[2] % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {kernel.shape[2]}")
    if kernel.shape[1] != fm_shape[0]:
        raise ValueError(f"kernel expects {kernel.shape[1]} input channels, map has {fm_shape[0]}")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")


def _correlate(x: np.ndarray, kernel: np.ndarray, stride: int, padding: int) -> np.ndarray:
    c, h, w = x.shape
    k = kernel.shape[2]
    ho, wo = _conv_out_size(h, k, stride, padding), _conv_out_size(w, k, stride, padding)
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((kernel.shape[0], ho, wo))
    for u in range(k):
        for v in range(k):
            tap = xp[:, u : u + stride * (ho - 1) + 1 : stride, v : v + stride * (wo - 1) + 1 : stride]
            out += np.einsum("oc,chw->ohw", kernel[:, :, u, v], tap)
    return out


def dense_conv2d(x: np.ndarray, kernel, stride: int = 1, padding: Optional[int] = None) -> np.ndarray:
    """Plain zero-padded cross-correlation of a (C, H, W) array."""
    kernel = np.asarray(kernel, dtype=np.float64)
    _check_conv(x.shape, kernel, stride)
    if padding is None:
        padding = kernel.shape[2] // 2
    return _correlate(np.asarray(x, dtype=np.float64), kernel, stride, padding)


def sparse_conv2d(fm: FeatureMap, kernel, stride: int = 1, padding: Optional[int] = None) -> FeatureMap:
    """Convolution that reads only visible inputs and writes only visible outputs.

    An output position is visible iff the input position under the kernel
    center is visible; with the default ``padding = k // 2`` and stride 2 that
    is the top-left input of each 2x2 block.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    _check_conv(fm.values.shape, kernel, stride)
    k = kernel.shape[2]
    if padding is None:
        padding = k // 2
    x = np.where(fm.visibility[None], fm.values, 0.0)
    out = _correlate(x, kernel, stride, padding)

    _, ho, wo = out.shape
    h, w = fm.visibility.shape
    cy = np.arange(ho) * stride - padding + k // 2
    cx = np.arange(wo) * stride - padding + k // 2
    vis = np.zeros((ho, wo), dtype=bool)
    iy, ix = (cy >= 0) & (cy < h), (cx >= 0) & (cx < w)
    vis[np.ix_(iy, ix)] = fm.visibility[np.ix_(cy[iy], cx[ix])]
    return FeatureMap(np.where(vis[None], out, 0.0), vis)


def mask_image(image: np.ndarray, plan: MaskPlan, fill=MASK_GRAY) -> np.ndarray:
    """Copy of ``image`` with every masked patch painted ``fill``."""
    out = np.array(image, copy=True)
    p = plan.patch_size
    ox, oy = plan.origin
    for idx in plan.masked:
        gy, gx = divmod(idx, plan.grid_w)
        out[oy + gy * p : oy + (gy + 1) * p, ox + gx * p : ox + (gx + 1) * p] = fill
    return out
