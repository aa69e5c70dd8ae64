import numpy as np
import pytest

from owseg.errors import NotIncluded
from owseg.pseudolabel import (
    RetrainManifest,
    pseudo_label,
    related_class_histogram,
    select_rehearsal,
    top_related_classes,
)
from owseg.segments import PixelObject


def _obj(pixels, oid=0):
    pix = np.array(pixels, dtype=np.int32)
    return PixelObject(id=oid, pixels=pix, bbox=(0, 0, 1, 1))


def test_single_cluster_relabels_members_only():
    mask = np.array([[1, 1, 2], [2, 3, 3]], dtype=np.int32)
    obj = _obj([(0, 0), (0, 1)])
    ps = pseudo_label(mask, [[obj]], n_known=3, image_id="a")
    want = mask.copy()
    want[0, 0] = want[0, 1] = 4
    assert np.array_equal(ps.labels, want)
    assert ps.novel_pixel_count == {4: 2}
    # untouched pixels keep the initial prediction exactly
    touched = np.zeros(mask.shape, dtype=bool)
    touched[0, 0] = touched[0, 1] = True
    assert np.array_equal(ps.labels[~touched], mask[~touched])


def test_ignore_known_mode():
    mask = np.array([[1, 2], [3, 1]], dtype=np.int32)
    ps = pseudo_label(mask, [[_obj([(1, 1)])]], n_known=3, ignore_known=True)
    assert set(np.unique(ps.labels)) == {-1, 4}


def test_no_cluster_raises_not_included():
    mask = np.ones((2, 2), dtype=np.int32)
    with pytest.raises(NotIncluded):
        pseudo_label(mask, [[], []], n_known=3)


def test_multiple_clusters_get_sequential_ids():
    mask = np.ones((2, 3), dtype=np.int32)
    ps = pseudo_label(
        mask,
        [[_obj([(0, 0), (0, 1)])], [_obj([(1, 2)], oid=1)]],
        n_known=5,
    )
    assert ps.labels[0, 0] == 6 and ps.labels[0, 1] == 6
    assert ps.labels[1, 2] == 7
    assert ps.novel_pixel_count == {6: 2, 7: 1}


def test_histogram_counts():
    mask = np.array([[7, 7, 2]], dtype=np.int32)
    ps = pseudo_label(mask, [[_obj([(0, 0), (0, 1)])]], n_known=7, image_id="x")
    hist = related_class_histogram([ps], {"x": mask}, novel_id=8)
    assert hist == {7: 2}


def test_histogram_empty():
    assert related_class_histogram([], {}, novel_id=4) == {}


def test_histogram_mixed_classes():
    mask = np.zeros((10, 10), dtype=np.int32)
    mask[:6, :] = 1  # 60 px class 1
    mask[6:, :] = 2  # 40 px class 2
    pixels = [(r, c) for r in range(10) for c in range(10)]
    ps = pseudo_label(mask, [[_obj(pixels)]], n_known=2, image_id="y")
    hist = related_class_histogram([ps], {"y": mask}, novel_id=3)
    assert hist == {1: 60, 2: 40}
    assert sum(hist.values()) == sum(ps.novel_pixel_count.values())


def test_top_related():
    hist = {1: 5, 2: 50, 3: 20, 4: 20, 5: 0}
    assert top_related_classes(hist, top_m=3) == [2, 3, 4]


def _index(spec):
    # spec: {image_id: classes}
    return {k: set(v) for k, v in spec.items()}


def test_rehearsal_quota_met():
    idx = _index({f"t{i}": [9] for i in range(6)} | {f"u{i}": [1] for i in range(10)})
    out = select_rehearsal(idx, histogram={}, n=10, quotas={9: 0.5}, seed=3)
    assert len(out) == 10
    assert sum(1 for s in out if 9 in idx[s]) >= 5


def test_rehearsal_uniform_when_no_quota():
    idx = _index({f"i{i}": [1] for i in range(20)})
    out = select_rehearsal(idx, histogram={}, n=7, quotas={}, seed=0)
    assert len(out) == 7 and len(set(out)) == 7


def test_rehearsal_whole_corpus_when_n_large():
    idx = _index({f"i{i}": [1] for i in range(4)})
    out = select_rehearsal(idx, histogram={}, n=10, quotas={}, seed=0)
    assert sorted(out) == sorted(idx)


def test_rehearsal_deterministic():
    idx = _index({f"i{i}": [1 + i % 3] for i in range(30)})
    a = select_rehearsal(idx, {1: 10}, n=12, seed=5)
    b = select_rehearsal(idx, {1: 10}, n=12, seed=5)
    assert a == b
    c = select_rehearsal(idx, {1: 10}, n=12, seed=6)
    assert set(a) != set(c) or a != c


def test_rehearsal_derived_quotas_from_histogram():
    idx = _index(
        {f"r{i}": [2] for i in range(8)}
        | {f"s{i}": [3] for i in range(8)}
        | {f"t{i}": [4] for i in range(8)}
    )
    # classes 2 and 3 dominate the histogram; class 4 never predicted -> rare
    out = select_rehearsal(
        idx, histogram={2: 100, 3: 1}, n=8, rare_share=0.25, related_share=0.375, seed=1
    )
    assert sum(1 for s in out if 2 in idx[s]) >= 3
    assert sum(1 for s in out if 3 in idx[s]) >= 3
    assert sum(1 for s in out if 4 in idx[s]) >= 2


def test_rehearsal_infeasible_best_effort(caplog):
    idx = _index({"a": [1], "b": [1], "c": [2]})
    out = select_rehearsal(idx, histogram={}, n=2, quotas={3: 0.5}, seed=0)
    assert len(out) == 2  # quota impossible, fill anyway


def test_manifest_round_trip(tmp_path):
    m = RetrainManifest(
        novel_ids=[4],
        pseudo_images=["x", "y"],
        rehearsal_images=["a"],
        quotas={2: 0.5},
        seed=7,
        histograms={4: {1: 10, 2: 3}},
    )
    p = tmp_path / "manifest.json"
    m.save(p)
    back = RetrainManifest.load(p)
    assert back == m
