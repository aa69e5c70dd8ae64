import math

import numpy as np
import pytest

from owseg.dispersion import (
    feature_names,
    pixel_dispersions,
    segment_iou_targets,
    segment_metrics,
    stack_tables,
)
from oracles import metric_row_reference
from owseg.errors import ConfigError, PreconditionError
from owseg.segments import connected_components


def _sm(*rows):
    """Build an (1, n, C) softmax from per-pixel tuples."""
    return np.array([list(rows)], dtype=np.float64)


def test_entropy_closed_form():
    maps = pixel_dispersions(_sm((0.75, 0.25)))
    want = -(0.75 * math.log(0.75) + 0.25 * math.log(0.25)) / math.log(2)
    assert abs(maps.entropy[0, 0] - want) < 1e-12
    assert abs(maps.entropy[0, 0] - 0.8112781244591328) < 1e-12


def test_margin_closed_form():
    maps = pixel_dispersions(_sm((0.5, 0.3, 0.2)))
    assert abs(maps.margin[0, 0] - 0.8) < 1e-12


def test_uniform_four_classes():
    maps = pixel_dispersions(_sm((0.25, 0.25, 0.25, 0.25)))
    assert abs(maps.varratio[0, 0] - 0.75) < 1e-12
    assert abs(maps.entropy[0, 0] - 1.0) < 1e-12
    assert abs(maps.margin[0, 0] - 1.0) < 1e-12


def test_near_one_hot_limit():
    eps = 1e-12
    maps = pixel_dispersions(_sm((1.0 - eps, eps)))
    assert maps.entropy[0, 0] < 1e-9
    assert maps.margin[0, 0] < 1e-9
    assert maps.varratio[0, 0] < 1e-9


def test_requires_two_classes():
    with pytest.raises(ConfigError):
        pixel_dispersions(np.ones((2, 2, 1)))


def test_ranges_random():
    rng = np.random.RandomState(2)
    sm = rng.dirichlet(np.ones(6), size=(8, 8)).reshape(8, 8, 6)
    maps = pixel_dispersions(sm)
    for m in (maps.entropy, maps.margin, maps.varratio):
        assert m.min() >= 0.0 and m.max() <= 1.0


def test_metric_table_matches_reference():
    rng = np.random.RandomState(31)
    for _ in range(12):
        h, w = rng.randint(2, 13), rng.randint(2, 13)
        n_classes = rng.randint(2, 5)
        sm = rng.dirichlet(np.ones(n_classes), size=(h, w)).reshape(h, w, n_classes)
        maps = pixel_dispersions(sm)
        from owseg.segments import argmax_mask

        mask = argmax_mask(sm)
        segs = connected_components(mask)
        table = segment_metrics(segs, maps, sm)
        assert table.n_features == 32 + 2 * n_classes
        for i, seg in enumerate(segs.segments):
            want = metric_row_reference(
                mask, list(map(tuple, seg.pixels.tolist())), seg.class_id, maps, sm, n_classes
            )
            np.testing.assert_allclose(table.rows[i], want, rtol=0, atol=1e-12)


def test_whole_image_segment_sizes():
    sm = np.full((2, 2, 2), 0.5)
    sm[..., 0] = 0.6
    sm[..., 1] = 0.4
    segs = connected_components(np.ones((2, 2), dtype=np.int32))
    table = segment_metrics(segs, pixel_dispersions(sm), sm)
    row = dict(zip(table.feature_names, table.rows[0]))
    assert row["size"] == 4 and row["size_boundary"] == 4 and row["size_interior"] == 0
    assert row["size_rel"] == 1.0


def test_constant_dispersion_aggregates():
    sm = np.zeros((4, 4, 2))
    sm[..., 0] = 0.7
    sm[..., 1] = 0.3
    maps = pixel_dispersions(sm)
    segs = connected_components(np.ones((4, 4), dtype=np.int32))
    table = segment_metrics(segs, maps, sm)
    row = dict(zip(table.feature_names, table.rows[0]))
    v = maps.margin[0, 0]
    for key in ("M_mean", "M_mean_interior", "M_mean_boundary"):
        assert abs(row[key] - v) < 1e-12
    for key in ("M_var", "M_var_interior", "M_var_boundary"):
        assert abs(row[key]) < 1e-15


def test_single_segment_neighborhood_zero():
    sm = np.full((3, 3, 3), 1 / 3)
    segs = connected_components(np.full((3, 3), 2, dtype=np.int32))
    table = segment_metrics(segs, pixel_dispersions(sm), sm)
    row = dict(zip(table.feature_names, table.rows[0]))
    assert all(row[f"neighbor_ratio_c{c}"] == 0.0 for c in (1, 2, 3))


def test_feature_name_count():
    for c in (2, 17, 18, 19):
        assert len(feature_names(c)) == 32 + 2 * c


def test_iou_identity():
    mask = np.array([[1, 1], [2, 2]], dtype=np.int32)
    segs = connected_components(mask)
    targets = segment_iou_targets(segs, mask)
    np.testing.assert_allclose(targets, [1.0, 1.0])


def test_iou_partial_overlap():
    # segment: 10 px of class 1; gt component of class 1 has 12 px, 8 shared
    mask = np.full((3, 10), 2, dtype=np.int32)
    mask[0, :10] = 1
    gt = np.full((3, 10), 2, dtype=np.int32)
    gt[0, 2:10] = 1  # 8 shared
    gt[1, 2:6] = 1  # 4 more, same gt component (touching row 0)
    segs = connected_components(mask)
    seg_idx = [i for i, s in enumerate(segs.segments) if s.class_id == 1][0]
    t = segment_iou_targets(segs, gt)
    assert abs(t[seg_idx] - 8 / 14) < 1e-12


def test_iou_no_overlap():
    mask = np.array([[1, 2]], dtype=np.int32)
    gt = np.array([[2, 2]], dtype=np.int32)
    segs = connected_components(mask)
    t = segment_iou_targets(segs, gt)
    by_class = {s.class_id: t[i] for i, s in enumerate(segs.segments)}
    assert by_class[1] == 0.0
    assert by_class[2] == 0.5  # one of two gt pixels


def test_iou_ignores_minus_one():
    mask = np.array([[1, 1, 1]], dtype=np.int32)
    gt = np.array([[1, 1, -1]], dtype=np.int32)
    segs = connected_components(mask)
    t = segment_iou_targets(segs, gt)
    assert abs(t[0] - 1.0) < 1e-12  # ignored pixel not in the union


def test_iou_requires_gt():
    segs = connected_components(np.ones((2, 2), dtype=np.int32))
    with pytest.raises(PreconditionError):
        segment_iou_targets(segs, None)


def test_stack_tables_roundtrip(tmp_path):
    sm = np.full((2, 3, 2), 0.5)
    sm[..., 0] = 0.8
    sm[..., 1] = 0.2
    segs = connected_components(np.ones((2, 3), dtype=np.int32))
    t1 = segment_metrics(segs, pixel_dispersions(sm), sm)
    t2 = segment_metrics(segs, pixel_dispersions(sm), sm)
    both = stack_tables([t1, t2])
    assert both.rows.shape[0] == 2
    both.to_csv(tmp_path / "m.csv")
    both.save_owt(tmp_path / "m.owt")
    assert (tmp_path / "m.csv").exists() and (tmp_path / "m.owt").exists()
