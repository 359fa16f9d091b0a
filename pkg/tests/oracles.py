"""Independent reference implementations the library is checked against."""

from __future__ import annotations

import itertools
import math

import numpy as np


def _corners(b):
    return [(b.x, b.y), (b.x2, b.y), (b.x2, b.y2), (b.x, b.y2)]


def _point_segment(p, a, b) -> float:
    (px, py), (ax, ay), (bx, by) = p, a, b
    vx, vy = bx - ax, by - ay
    t = 0.0 if vx == vy == 0 else max(0.0, min(1.0, ((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy)))
    return math.hypot(px - (ax + t * vx), py - (ay + t * vy))


def rect_gap(a, b) -> float:
    """Boundary-to-boundary distance of two disjoint rectangles, from corner/edge distances."""
    best = math.inf
    for r, s in ((a, b), (b, a)):
        cs = _corners(s)
        edges = list(zip(cs, cs[1:] + cs[:1]))
        for p in _corners(r):
            for e in edges:
                best = min(best, _point_segment(p, *e))
    return best


def rects_intersect(a, b) -> bool:
    """Do the pixel sets of a and b share any pixel."""
    return not (a.x2 <= b.x or b.x2 <= a.x or a.y2 <= b.y or b.y2 <= a.y)


def mask_oracle(image: np.ndarray, boxes) -> np.ndarray:
    """Pixel-by-pixel masking: black (and opaque) iff the pixel centre lies inside some box."""
    out = image.copy()
    h, w = image.shape[:2]
    for r in range(h):
        for c in range(w):
            if any(b.x <= c < b.x2 and b.y <= r < b.y2 for b in boxes):
                out[r, c, :3] = 0
                if out.shape[2] == 4:
                    out[r, c, 3] = 255
    return out


def brute_force_matching(weights: np.ndarray, floor: float) -> float:
    """Maximum total weight over every one-to-one partial matching using entries >= floor."""
    n, m = weights.shape
    best = 0.0
    if n > m:
        weights = weights.T
        n, m = m, n
    for perm in itertools.permutations(range(m), n):
        total = sum(weights[i, j] for i, j in enumerate(perm) if weights[i, j] >= floor)
        best = max(best, total)
    return best
