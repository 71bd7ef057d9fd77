"""Oriented 3D boxes, rotated IoU, assignment, canonicalization, bucketing.

Boxes are yaw-only (no pitch/roll). IoU is computed as BEV rotated-rectangle
polygon intersection (convex clipping) times vertical interval overlap, the
standard definition for driving datasets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class Box3D:
    """Oriented box: center (x, y, z), size (length, width, height), yaw."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float

    def __post_init__(self):
        if any(s <= 0 for s in self.size):
            raise ValueError(f"box size components must be positive, got {self.size}")
        yaw = self.yaw
        if not (-math.pi < yaw <= math.pi):
            yaw = math.atan2(math.sin(yaw), math.cos(yaw))
            if yaw <= -math.pi:
                yaw = math.pi
            object.__setattr__(self, "yaw", yaw)

    @property
    def volume(self) -> float:
        l, w, h = self.size
        return l * w * h

    def bev_corners(self) -> np.ndarray:
        """Corners of the yaw-rotated footprint rectangle, shape (4, 2), CCW."""
        l, w, _ = self.size
        local = np.array([[l, w], [-l, w], [-l, -w], [l, -w]]) * 0.5
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.asarray(self.center[:2])


@dataclass
class Assignment:
    """One-to-one row/column pairing with its total cost."""

    pairs: list[tuple[int, int]]
    total_cost: float


def _clip_polygon(subject: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Clip a polygon by the half-plane left of the directed edge a->b."""
    if len(subject) == 0:
        return subject
    edge = b - a
    rel = subject - a
    d = edge[0] * rel[:, 1] - edge[1] * rel[:, 0]
    out = []
    n = len(subject)
    for i in range(n):
        j = (i + 1) % n
        if d[i] >= 0:
            out.append(subject[i])
            if d[j] < 0:
                t = d[i] / (d[i] - d[j])
                out.append(subject[i] + t * (subject[j] - subject[i]))
        elif d[j] >= 0:
            t = d[i] / (d[i] - d[j])
            out.append(subject[i] + t * (subject[j] - subject[i]))
    return np.asarray(out) if out else np.empty((0, 2))


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Oriented 3D IoU in [0, 1]; shared-face contact counts as 0."""
    poly = a.bev_corners()
    clip = b.bev_corners()
    for i in range(4):
        poly = _clip_polygon(poly, clip[i], clip[(i + 1) % 4])
        if len(poly) == 0:
            return 0.0
    bev_inter = _polygon_area(poly)
    za0, za1 = a.center[2] - a.size[2] / 2, a.center[2] + a.size[2] / 2
    zb0, zb1 = b.center[2] - b.size[2] / 2, b.center[2] + b.size[2] / 2
    dz = min(za1, zb1) - max(za0, zb0)
    if dz <= 0 or bev_inter <= 0:
        return 0.0
    inter = bev_inter * dz
    union = a.volume + b.volume - inter
    return float(inter / union)


def hungarian(cost) -> Assignment:
    """Minimum-cost one-to-one assignment of min(m, n) pairs."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return Assignment([], 0.0)
    if not np.all(np.isfinite(cost)):
        raise ValueError("hungarian requires finite costs")
    rows, cols = linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    return Assignment(pairs, float(cost[rows, cols].sum()))


def _rotation_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def canonicalize(points, box: Box3D) -> np.ndarray:
    """Map points into the box frame: p -> R_z(-yaw) (p - center)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return (pts - np.asarray(box.center)) @ _rotation_z(-box.yaw).T


def uncanonicalize(points, box: Box3D) -> np.ndarray:
    """Inverse of :func:`canonicalize`."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return pts @ _rotation_z(box.yaw).T + np.asarray(box.center)


def crop(points, box: Box3D) -> np.ndarray:
    """Points whose canonical coordinates lie inside the box (boundary inclusive)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return pts
    local = canonicalize(pts, box)
    half = np.asarray(box.size) / 2.0
    keep = np.all(np.abs(local) <= half, axis=1)
    return pts[keep]


def bucket_index(n_points: int) -> int:
    """Power-two density bucket: k such that n_points is in [2^k, 2^(k+1))."""
    if n_points < 1:
        raise ValueError("bucket_index requires at least one point")
    return int(n_points).bit_length() - 1
