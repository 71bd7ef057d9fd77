"""Observation extraction from detection and ground-truth logs.

Per frame: score-gate detections, IoU-match them one-to-one to GT boxes,
keep matched detections as true positives, discard duplicates overlapping an
already-claimed GT, keep the rest as false positives, then crop and
canonicalize scene points using the *detected* box so detector noise is
preserved in the observation.
"""

from __future__ import annotations

import numpy as np

from ..geometry import Box3D, canonicalize, crop, hungarian, iou_3d
from .records import DetectionRecord, GtTrackRecord, Observation, ReidDataset

_FORBIDDEN_COST = 1e6


class InputError(ValueError):
    """A referenced frame or record is missing or inconsistent."""


def _crop_canonical(points: np.ndarray, box: Box3D) -> np.ndarray:
    kept = crop(points, box)
    if len(kept) == 0:
        return kept.astype(np.float32)
    return canonicalize(kept, box).astype(np.float32)


def extract_observations(
    detections: list[DetectionRecord],
    gt: list[GtTrackRecord],
    frame_points: dict[int, np.ndarray],
    tau_c: float = 0.1,
    tau_iou: float = 0.01,
) -> ReidDataset:
    by_frame_det: dict[int, list[tuple[int, DetectionRecord]]] = {}
    for i, det in enumerate(detections):
        by_frame_det.setdefault(det.frame, []).append((i, det))
    by_frame_gt: dict[int, list[GtTrackRecord]] = {}
    for g in gt:
        by_frame_gt.setdefault(g.frame, []).append(g)

    ds = ReidDataset()
    for frame in sorted(by_frame_det):
        if frame not in frame_points:
            raise InputError(f"detections reference frame {frame} absent from frame points")
        dets = [(i, d) for i, d in by_frame_det[frame] if d.score > tau_c]
        if not dets:
            continue
        gts = by_frame_gt.get(frame, [])
        points = np.asarray(frame_points[frame], dtype=np.float64).reshape(-1, 3)

        # boxes whose centers are farther apart than the sum of their
        # circumscribed radii cannot overlap; skip the exact IoU for those
        det_centers = np.array([d.box.center for _, d in dets])
        gt_centers = np.array([g.box.center for g in gts]).reshape(-1, 3)
        det_radii = np.array([np.linalg.norm(d.box.size) / 2 for _, d in dets])
        gt_radii = np.array([np.linalg.norm(g.box.size) / 2 for g in gts])
        iou = np.zeros((len(dets), len(gts)))
        if gts:
            dist = np.linalg.norm(det_centers[:, None] - gt_centers[None], axis=-1)
            near = dist <= det_radii[:, None] + gt_radii[None]
            for r, c in zip(*np.nonzero(near)):
                iou[r, c] = iou_3d(dets[r][1].box, gts[c].box)

        assigned: dict[int, int] = {}
        if gts:
            cost = np.where(iou >= tau_iou, 1.0 - iou, _FORBIDDEN_COST)
            for r, c in hungarian(cost).pairs:
                if iou[r, c] >= tau_iou:
                    assigned[r] = c
        claimed = set(assigned.values())

        for r, (det_idx, det) in enumerate(dets):
            if r in assigned:
                object_id = gts[assigned[r]].object_id
            else:
                # unmatched but overlapping a claimed GT: a duplicate true
                # positive, discarded rather than demoted to FP
                if any(iou[r, c] >= tau_iou for c in claimed):
                    continue
                object_id = None
            canon = _crop_canonical(points, det.box)
            if len(canon) == 0:
                continue
            ds.add(Observation(
                observation_id=f"f{frame:06d}-d{det_idx:05d}",
                object_id=object_id,
                predicted_class=det.predicted_class,
                frame=frame,
                points=canon,
                detector_score=det.score,
            ))
    return ds
