"""Observation extraction, on-disk round trips, and the synthetic generator."""

import itertools
import math

import numpy as np
import pytest

from preid.data import (
    ConfigError,
    DetectionRecord,
    FormatError,
    GtTrackRecord,
    InputError,
    Observation,
    ReidDataset,
    SynthConfig,
    extract_observations,
    generate_synthetic,
    read_dataset,
    read_detections,
    read_gt,
    write_dataset,
    write_detections,
    write_gt,
)
from preid.geometry import Box3D, iou_3d


def _det(frame, center, cls="car", score=0.9, size=(4.0, 2.0, 1.5), yaw=0.0):
    return DetectionRecord(frame, Box3D(center, size, yaw), score, cls)


def _gt(frame, center, oid, cls="car", size=(4.0, 2.0, 1.5), yaw=0.0):
    return GtTrackRecord(frame, Box3D(center, size, yaw), oid, cls)


def _points_at(*centers, per=20, seed=0):
    rng = np.random.default_rng(seed)
    return np.concatenate([
        rng.uniform(-0.5, 0.5, size=(per, 3)) + c for c in centers
    ]).astype(np.float32)


class TestExtraction:
    def test_score_gate(self):
        dets = [_det(0, (0, 0, 0), score=0.05), _det(0, (20, 0, 0), score=0.2)]
        gts = [_gt(0, (0, 0, 0), "a"), _gt(0, (20, 0, 0), "b")]
        pts = {0: _points_at((0, 0, 0), (20, 0, 0))}
        ds = extract_observations(dets, gts, pts, tau_c=0.1)
        assert len(ds) == 1
        assert ds.observations[0].object_id == "b"

    def test_low_iou_becomes_fp(self):
        # detection far from the only GT: overlap below the gate -> FP
        dets = [_det(0, (30, 0, 0))]
        gts = [_gt(0, (0, 0, 0), "a")]
        ds = extract_observations(dets, gts, {0: _points_at((30, 0, 0), (0, 0, 0))})
        assert len(ds) == 1
        obs = ds.observations[0]
        assert obs.is_fp and obs.object_id is None
        assert "car" in ds.fp_index

    def test_duplicate_discarded_not_fp(self):
        # two detections on one GT: best IoU wins, the other is dropped entirely
        dets = [_det(0, (0, 0, 0), score=0.9), _det(0, (0.3, 0, 0), score=0.8)]
        gts = [_gt(0, (0, 0, 0), "a")]
        ds = extract_observations(dets, gts, {0: _points_at((0, 0, 0))})
        assert len(ds) == 1
        assert ds.observations[0].object_id == "a"
        assert ds.observations[0].detector_score == pytest.approx(0.9)
        assert not ds.fp_index

    def test_missing_frame_points(self):
        with pytest.raises(InputError):
            extract_observations([_det(0, (0, 0, 0))], [], {})

    def test_canonical_frame_uses_detected_box(self):
        # points centered at the GT box; detection offset by dx -> canonical
        # coordinates are shifted by -dx relative to the object frame
        dx = 0.4
        dets = [_det(0, (dx, 0, 0))]
        gts = [_gt(0, (0, 0, 0), "a")]
        pts = {0: np.array([[0.0, 0.0, 0.0]], dtype=np.float32)}
        ds = extract_observations(dets, gts, pts)
        np.testing.assert_allclose(ds.observations[0].points, [[-dx, 0.0, 0.0]], atol=1e-6)

    def test_zero_point_observations_dropped(self):
        dets = [_det(0, (0, 0, 0)), _det(0, (40, 0, 0), score=0.95)]
        gts = [_gt(0, (0, 0, 0), "a"), _gt(0, (40, 0, 0), "b")]
        pts = {0: _points_at((0, 0, 0))}  # nothing near the second box
        ds = extract_observations(dets, gts, pts)
        assert [o.object_id for o in ds.observations] == ["a"]

    def test_micro_scenes_match_brute_force(self):
        # randomized small scenes: one-to-one matching must equal exhaustive
        # enumeration of assignments maximizing total IoU over the gate
        rng = np.random.default_rng(42)
        for scene in range(20):
            n_det, n_gt = int(rng.integers(1, 6)), int(rng.integers(0, 5))
            dets, gts = [], []
            for i in range(n_det):
                c = (float(rng.uniform(0, 12)), float(rng.uniform(0, 6)), 0.75)
                dets.append(_det(0, c, yaw=float(rng.uniform(-1, 1))))
            for j in range(n_gt):
                c = (float(rng.uniform(0, 12)), float(rng.uniform(0, 6)), 0.75)
                gts.append(_gt(0, c, f"o{j}", yaw=float(rng.uniform(-1, 1))))
            pts = {0: _points_at(*[d.box.center for d in dets], per=30,
                                 seed=scene)}
            ds = extract_observations(dets, gts, pts, tau_iou=0.01)

            got = {}
            for obs in ds.observations:
                det_idx = int(obs.observation_id.split("-d")[1])
                got[det_idx] = obs.object_id

            expected = _brute_force_partition(dets, gts, 0.01)
            for det_idx, oid in expected.items():
                if det_idx in got:
                    assert got[det_idx] == oid, f"scene {scene} det {det_idx}"
                else:
                    # only droppable for emptiness, never for identity
                    assert _crop_empty(dets[det_idx], pts[0]), f"scene {scene}"
            assert set(got) <= set(expected)


def _crop_empty(det, points):
    from preid.geometry import crop
    return len(crop(points, det.box)) == 0


def _brute_force_partition(dets, gts, tau_iou):
    """Expected det -> object_id (or None for FP) mapping; duplicates absent."""
    iou = np.array([[iou_3d(d.box, g.box) for g in gts] for d in dets])
    # objective mirrors one-to-one matching: maximize the number of valid
    # pairs first, then the total IoU among them
    best_pairs, best_total = [], -1.0
    indices = range(len(gts))
    for k in range(min(len(dets), len(gts)), -1, -1):
        for det_subset in itertools.combinations(range(len(dets)), k):
            for gt_perm in itertools.permutations(indices, k):
                if any(iou[d, g] < tau_iou for d, g in zip(det_subset, gt_perm)):
                    continue
                total = sum(iou[d, g] for d, g in zip(det_subset, gt_perm))
                if total > best_total:
                    best_total = total
                    best_pairs = list(zip(det_subset, gt_perm))
        if best_pairs:
            break
    assigned = dict(best_pairs)
    claimed = set(assigned.values())
    out = {}
    for d in range(len(dets)):
        if d in assigned:
            out[d] = gts[assigned[d]].object_id
        elif any(iou[d, g] >= tau_iou for g in claimed):
            continue  # duplicate: discarded
        else:
            out[d] = None
    return out


class TestDatasetInvariants:
    def test_duplicate_observation_id(self):
        ds = ReidDataset()
        obs = Observation("x", "a", "car", 0, np.zeros((1, 3)), 0.9)
        ds.add(obs)
        with pytest.raises(FormatError):
            ds.add(Observation("x", "b", "car", 1, np.zeros((1, 3)), 0.9))

    def test_conflicting_class(self):
        ds = ReidDataset()
        ds.add(Observation("x", "a", "car", 0, np.zeros((1, 3)), 0.9))
        with pytest.raises(FormatError):
            ds.add(Observation("y", "a", "bus", 1, np.zeros((1, 3)), 0.9))

    def test_bucket_property(self):
        obs = Observation("x", "a", "car", 0, np.zeros((5, 3)), 0.9)
        assert obs.bucket == 2


class TestRoundTrips:
    def _make_ds(self):
        rng = np.random.default_rng(5)
        ds = ReidDataset()
        for i in range(7):
            ds.add(Observation(
                f"obs{i}", f"obj{i % 3}" if i < 5 else None, "car", i,
                rng.normal(0, 1, size=(int(rng.integers(1, 40)), 3)).astype(np.float32),
                float(rng.uniform(0.5, 1)),
            ))
        return ds

    def test_dataset_round_trip(self, tmp_path):
        ds = self._make_ds()
        write_dataset(ds, tmp_path / "ds")
        back = read_dataset(tmp_path / "ds")
        assert ds.structurally_equal(back)

    def test_dataset_bitwise_stable(self, tmp_path):
        ds = self._make_ds()
        write_dataset(ds, tmp_path / "a")
        write_dataset(ds, tmp_path / "b")
        for name in ("manifest.jsonl", "points.bin"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_truncated_blob_names_observation(self, tmp_path):
        ds = self._make_ds()
        write_dataset(ds, tmp_path / "ds")
        blob = tmp_path / "ds" / "points.bin"
        blob.write_bytes(blob.read_bytes()[:-8])
        with pytest.raises(FormatError, match="obs6"):
            read_dataset(tmp_path / "ds")

    def test_bad_manifest_json_reports_line(self, tmp_path):
        ds = self._make_ds()
        write_dataset(ds, tmp_path / "ds")
        manifest = tmp_path / "ds" / "manifest.jsonl"
        lines = manifest.read_text().splitlines()
        lines[2] = "{not json"
        manifest.write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError, match=":3"):
            read_dataset(tmp_path / "ds")

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FormatError):
            read_dataset(tmp_path / "nope")

    def test_empty_dataset_round_trip(self, tmp_path):
        write_dataset(ReidDataset(), tmp_path / "ds")
        assert len(read_dataset(tmp_path / "ds")) == 0

    def test_log_round_trips(self, tmp_path):
        dets = [_det(0, (1, 2, 0.75), yaw=0.3), _det(1, (4, 5, 0.75), score=0.6)]
        gts = [_gt(0, (1, 2, 0.75), "a"), _gt(1, (4, 5, 0.75), "b", cls="bus")]
        write_detections(dets, tmp_path / "d.jsonl")
        write_gt(gts, tmp_path / "g.jsonl")
        assert read_detections(tmp_path / "d.jsonl") == dets
        assert read_gt(tmp_path / "g.jsonl") == gts

    def test_duplicate_gt_rejected(self, tmp_path):
        gts = [_gt(0, (1, 2, 0.75), "a"), _gt(0, (4, 5, 0.75), "a")]
        write_gt(gts, tmp_path / "g.jsonl")
        with pytest.raises(FormatError, match="duplicate"):
            read_gt(tmp_path / "g.jsonl")


class TestSynthetic:
    def test_determinism(self):
        cfg = SynthConfig(n_objects={"car": 4, "bicycle": 2}, frames=3)
        a = generate_synthetic(cfg, seed=12)
        b = generate_synthetic(cfg, seed=12)
        assert a[0] == b[0]
        assert a[1] == b[1]
        for f in a[2]:
            np.testing.assert_array_equal(a[2][f], b[2][f])

    def test_seed_changes_output(self):
        cfg = SynthConfig(n_objects={"car": 4}, frames=2)
        a = generate_synthetic(cfg, seed=1)
        b = generate_synthetic(cfg, seed=2)
        assert a[0] != b[0]

    def test_class_counts(self):
        cfg = SynthConfig(n_objects={"car": 3, "pedestrian": 2}, frames=4, fp_rate=0.0)
        dets, gts, _ = generate_synthetic(cfg, seed=0)
        assert len(gts) == 5 * 4
        assert len(dets) == 5 * 4
        assert sum(1 for g in gts if g.cls == "car") == 3 * 4

    def test_lambda_list_spreads_density(self):
        cfg = SynthConfig(n_objects={"car": 40}, frames=4, fp_rate=0.0,
                          lam=[4.0, 128.0])
        dets, gts, pts = generate_synthetic(cfg, seed=3)
        ds = extract_observations(dets, gts, pts)
        means = {o: np.mean([ds.get(i).n_points for i in ids])
                 for o, ids in ds.index.items()}
        low = sum(1 for m in means.values() if m < 32)
        high = sum(1 for m in means.values() if m >= 32)
        assert low >= 10 and high >= 10

    def test_extraction_recovers_identities(self):
        cfg = SynthConfig(n_objects={"car": 6}, frames=5, fp_rate=0.0, lam=64.0)
        dets, gts, pts = generate_synthetic(cfg, seed=8)
        ds = extract_observations(dets, gts, pts)
        # low detector noise: every object should be seen most frames
        assert ds.n_objects() == 6
        assert all(len(ids) >= 3 for ids in ds.index.values())

    def test_fp_rate_produces_fps(self):
        cfg = SynthConfig(n_objects={"car": 3}, frames=20, fp_rate=2.0)
        dets, gts, pts = generate_synthetic(cfg, seed=5)
        ds = extract_observations(dets, gts, pts)
        assert sum(len(v) for v in ds.fp_index.values()) > 5

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            SynthConfig(lam=0.0)
        with pytest.raises(ConfigError):
            SynthConfig(n_objects={"dragon": 1})
        with pytest.raises(ConfigError):
            SynthConfig(frames=0)
