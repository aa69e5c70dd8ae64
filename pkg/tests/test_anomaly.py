import numpy as np
import pytest

from owseg.anomaly import (
    anomaly_mask,
    image_rejection,
    objects_from_json,
    objects_to_json,
    quality_map,
    single_segment_filter,
    suspicious_objects,
)
from owseg.errors import SchemaError
from owseg.segments import PixelObject, connected_components


def _segs(mask):
    return connected_components(np.asarray(mask, dtype=np.int32))


def test_mask_flags_below_tau():
    segs = _segs([[1, 1], [1, 1]])
    out = anomaly_mask(segs, np.array([0.4]), tau=0.5)
    assert np.all(out == 1)


def test_mask_strict_inequality_at_tau():
    segs = _segs([[1, 1], [1, 1]])
    out = anomaly_mask(segs, np.array([0.5]), tau=0.5)
    assert np.all(out == 0)


def test_mask_all_confident():
    segs = _segs([[1, 2], [2, 1]])
    out = anomaly_mask(segs, np.ones(len(segs.segments)), tau=0.5)
    assert np.all(out == 0)


def test_mask_score_count_mismatch():
    segs = _segs([[1, 2], [2, 1]])
    with pytest.raises(SchemaError):
        anomaly_mask(segs, np.ones(5), tau=0.5)


def test_mask_matches_pixel_definition():
    rng = np.random.RandomState(4)
    for _ in range(20):
        h, w = rng.randint(1, 10), rng.randint(1, 10)
        mask = rng.randint(1, 4, size=(h, w)).astype(np.int32)
        segs = _segs(mask)
        scores = rng.uniform(size=len(segs.segments))
        tau = rng.uniform()
        got = anomaly_mask(segs, scores, tau)
        for r in range(h):
            for c in range(w):
                want = 1 if scores[segs.pixel_to_segment[r, c]] < tau else 0
                assert got[r, c] == want


def test_quality_map_constant_per_segment():
    segs = _segs([[1, 1], [2, 2]])
    q = quality_map(segs, np.array([0.2, 0.9]))
    assert q[0, 0] == q[0, 1] == 0.2
    assert q[1, 0] == q[1, 1] == 0.9


def test_objects_merge_diagonal_segments():
    # two low-quality segments of different classes touching at a corner
    mask = np.array([[1, 2], [2, 1]], dtype=np.int32)
    segs = _segs(mask)
    scores = np.zeros(len(segs.segments))
    flagged = anomaly_mask(segs, scores, tau=0.5)
    objs = suspicious_objects(flagged, segs, min_pixels=1)
    assert len(objs) == 1
    assert len(objs[0].member_segments) == len(segs.segments)


def test_objects_min_pixels():
    mask = np.ones((5, 5), dtype=np.int32)
    mask[0, :3] = 2
    segs = _segs(mask)
    scores = np.array([1.0 if s.class_id == 1 else 0.0 for s in segs.segments])
    flagged = anomaly_mask(segs, scores, tau=0.5)
    assert suspicious_objects(flagged, segs, min_pixels=10) == []
    assert len(suspicious_objects(flagged, segs, min_pixels=3)) == 1


def test_objects_empty_mask():
    segs = _segs([[1]])
    assert suspicious_objects(np.zeros((1, 1), dtype=np.uint8), segs, min_pixels=1) == []


def _obj(sizes):
    return PixelObject(
        id=0,
        pixels=np.zeros((sum(sizes), 2), dtype=np.int32),
        bbox=(0, 0, 1, 1),
        member_segments=list(range(len(sizes))),
        member_segment_sizes=list(sizes),
    )


def test_single_segment_filter_rules():
    assert single_segment_filter([_obj([600])]) == []
    assert single_segment_filter([_obj([600, 300])]) == []  # 300 px ignored
    assert len(single_segment_filter([_obj([600, 600])])) == 1
    assert len(single_segment_filter([_obj([300, 200])])) == 1  # zero big segments


def test_image_rejection_rules():
    keep = np.full((10, 10), 0.95)
    assert not image_rejection(keep)

    low_mean = np.full((10, 10), 0.65)
    assert image_rejection(low_mean)

    q = np.ones(100)
    q[:40] = 0.85  # mean 0.94, but 40% below 0.9
    assert image_rejection(q.reshape(10, 10))


def test_image_rejection_monotone():
    rng = np.random.RandomState(8)
    for _ in range(30):
        q = rng.uniform(0.5, 1.0, size=(6, 6))
        if image_rejection(q):
            worse = np.clip(q - rng.uniform(0, 0.2, size=q.shape), 0, 1)
            assert image_rejection(worse)


def test_objects_partition_flagged_pixels():
    rng = np.random.RandomState(12)
    mask = rng.randint(1, 3, size=(12, 12)).astype(np.int32)
    segs = _segs(mask)
    scores = rng.uniform(size=len(segs.segments))
    flagged = anomaly_mask(segs, scores, tau=0.6)
    objs = suspicious_objects(flagged, segs, min_pixels=1)
    covered = np.zeros_like(flagged)
    for o in objs:
        covered[o.pixels[:, 0], o.pixels[:, 1]] += 1
    assert np.array_equal(covered, flagged)


def test_objects_json_round_trip(tmp_path):
    mask = np.array([[1, 2], [2, 1]], dtype=np.int32)
    segs = _segs(mask)
    flagged = anomaly_mask(segs, np.zeros(len(segs.segments)), tau=0.5)
    objs = suspicious_objects(flagged, segs, min_pixels=1, source_image="img0")
    p = tmp_path / "objects.json"
    objects_to_json(objs, p)
    back = objects_from_json(p)
    assert len(back) == len(objs)
    assert back[0].source_image == "img0"
    assert np.array_equal(back[0].pixels, objs[0].pixels)
    assert back[0].member_segment_sizes == objs[0].member_segment_sizes
