"""Masked image variants: annotated-region masking and random control masking."""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import BoundingBox
from .imaging import as_raster, image_hash

GAP_FRACTION = 0.05
MAX_REJECTIONS = 10_000
_BATCH = 256


class Condition(str, enum.Enum):
    BASELINE = "baseline"
    SPECIFIC = "specific"
    RANDOM = "random"


class MaskingError(Exception):
    pass


class ZeroAreaBoxError(MaskingError):
    def __init__(self, box: BoundingBox, dims: tuple[int, int]):
        super().__init__(f"box {box.to_dict()} has zero area inside {dims[0]}x{dims[1]} image")
        self.box = box


class EmptyGtError(MaskingError):
    pass


class InfeasiblePlacementError(MaskingError):
    def __init__(self, box: BoundingBox, dims: tuple[int, int], tries: int, item_id: str | None = None):
        where = f" for item {item_id!r}" if item_id else ""
        super().__init__(
            f"no {box.w}x{box.h} placement{where} at least {GAP_FRACTION:.0%} of the diagonal "
            f"away from the annotated regions in a {dims[0]}x{dims[1]} image after {tries} proposals"
        )
        self.box = box
        self.item_id = item_id


@dataclass(frozen=True)
class MaskSpec:
    boxes: tuple[BoundingBox, ...]
    condition: Condition
    fill: tuple[int, int, int] = (0, 0, 0)
    seed: int | None = None

    def filename(self) -> str:
        if self.condition is Condition.RANDOM:
            return f"masked_{self.condition.value}_seed{self.seed}.png"
        return f"masked_{self.condition.value}.png"

    def to_dict(self) -> dict:
        return {
            "boxes": [b.to_dict() for b in self.boxes],
            "condition": self.condition.value,
            "fill": list(self.fill),
            "seed": self.seed,
        }


@dataclass(frozen=True)
class MaskedImage:
    pixels: np.ndarray
    source_hash: str
    spec: MaskSpec


def clamp_boxes(boxes: Sequence[BoundingBox], width: int, height: int) -> list[BoundingBox]:
    out = []
    for box in boxes:
        clamped = box.clamp(width, height)
        if clamped is None:
            raise ZeroAreaBoxError(box, (width, height))
        out.append(clamped)
    return out


def _paint(image: np.ndarray, boxes: Sequence[BoundingBox]) -> np.ndarray:
    out = image.copy()
    for b in boxes:
        out[b.y:b.y2, b.x:b.x2, :3] = 0
        if out.shape[2] == 4:
            out[b.y:b.y2, b.x:b.x2, 3] = 255
    return out


def mask_specific(image, boxes: Sequence[BoundingBox], *, condition: Condition = Condition.SPECIFIC,
                  seed: int | None = None) -> MaskedImage:
    """Black out every box (after clamping to the frame); all other pixels are untouched."""
    arr = as_raster(image)
    height, width = arr.shape[:2]
    clamped = clamp_boxes(boxes, width, height)
    spec = MaskSpec(tuple(clamped), condition, seed=seed)
    return MaskedImage(_paint(arr, clamped), image_hash(arr), spec)


def min_gap(image_dims: tuple[int, int]) -> float:
    width, height = image_dims
    return GAP_FRACTION * math.hypot(width, height)


def _valid_mask(xs: np.ndarray, ys: np.ndarray, w: int, h: int,
                gt: Sequence[BoundingBox], gap: float) -> np.ndarray:
    ok = np.ones(xs.shape, dtype=bool)
    for g in gt:
        dx = np.maximum.reduce([np.zeros_like(xs), g.x - (xs + w), xs - g.x2])
        dy = np.maximum.reduce([np.zeros_like(ys), g.y - (ys + h), ys - g.y2])
        # gap > 0 already excludes intersection; the explicit test keeps gap == 0 honest
        overlap = (xs < g.x2) & (g.x < xs + w) & (ys < g.y2) & (g.y < ys + h)
        ok &= ~overlap & (np.hypot(dx, dy) >= gap)
    return ok


def sample_random_boxes(image_dims: tuple[int, int], gt_boxes: Sequence[BoundingBox], count: int,
                        seed: int, *, max_rejections: int = MAX_REJECTIONS,
                        item_id: str | None = None) -> list[BoundingBox]:
    """Place ``count`` control boxes away from the annotated ones.

    Box k copies the size of ``gt_boxes[k % len(gt_boxes)]``. Top-left
    corners are drawn uniformly over legal integer positions from a
    generator seeded with ``seed``; a proposal is accepted when it is at
    least 5% of the image diagonal (boundary to boundary) from every gt box.
    """
    width, height = image_dims
    if not gt_boxes:
        raise EmptyGtError("no annotated regions to sample controls for")
    if count < 1:
        raise ValueError("count must be >= 1")
    gap = min_gap(image_dims)
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        ref = gt_boxes[k % len(gt_boxes)]
        w, h = min(ref.w, width), min(ref.h, height)
        if w <= 0 or h <= 0:
            raise ZeroAreaBoxError(ref, image_dims)
        tried = 0
        found = None
        while tried < max_rejections:
            n = min(_BATCH, max_rejections - tried)
            xs = rng.integers(0, width - w + 1, size=n)
            ys = rng.integers(0, height - h + 1, size=n)
            hits = np.flatnonzero(_valid_mask(xs, ys, w, h, gt_boxes, gap))
            if hits.size:
                i = int(hits[0])
                found = BoundingBox(int(xs[i]), int(ys[i]), w, h)
                break
            tried += n
        if found is None:
            raise InfeasiblePlacementError(BoundingBox(0, 0, w, h), image_dims, max_rejections, item_id)
        out.append(found)
    return out


def mask_random(image, gt_boxes: Sequence[BoundingBox], seed: int, *, item_id: str | None = None) -> MaskedImage:
    arr = as_raster(image)
    height, width = arr.shape[:2]
    if not gt_boxes:
        raise EmptyGtError("no annotated regions to sample controls for")
    gt = clamp_boxes(gt_boxes, width, height)
    boxes = sample_random_boxes((width, height), gt, len(gt), seed, item_id=item_id)
    return mask_specific(arr, boxes, condition=Condition.RANDOM, seed=seed)


def item_seed(mask_seed: int, item_id: str) -> int:
    """Per-item sampler seed derived from the run seed, stable across platforms."""
    digest = hashlib.sha256(f"{mask_seed}:{item_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
