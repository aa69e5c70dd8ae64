import numpy as np
import pytest

from owseg.errors import ValidationError
from owseg.evaluation import (
    class_scores,
    confusion,
    summarize,
    write_summary_csv,
    write_summary_json,
)


def test_perfect_prediction_diagonal():
    gt = np.array([[1, 2], [3, 1]])
    cm = confusion([gt], [gt], 3)
    assert np.all(cm == np.diag([2, 1, 1]))


def test_all_ignore_zero_matrix():
    gt = np.full((3, 3), -1)
    pred = np.ones((3, 3), dtype=np.int32)
    cm = confusion([pred], [gt], 2)
    assert cm.sum() == 0


def test_hand_counted_2x2():
    gt = np.array([[1, 1], [2, 2]])
    pred = np.array([[1, 2], [2, 2]])
    cm = confusion([pred], [gt], 2)
    assert cm[0, 0] == 1 and cm[0, 1] == 1
    assert cm[1, 0] == 0 and cm[1, 1] == 2


def test_label_out_of_range():
    with pytest.raises(ValidationError):
        confusion([np.array([[5]])], [np.array([[1]])], 2)


def test_class_scores_absent_class_zero():
    cm = np.zeros((3, 3), dtype=np.uint64)
    cm[0, 0] = 10  # only class 1 appears
    s = class_scores(cm)
    assert s.iou[3] == s.precision[3] == s.recall[3] == 0.0
    assert s.iou[1] == 1.0


def test_class_scores_arithmetic():
    # class 1: TP=8, FP=6, FN=6
    cm = np.array([[8, 6], [6, 80]], dtype=np.uint64)
    s = class_scores(cm)
    assert abs(s.iou[1] - 0.4) < 1e-12
    assert abs(s.precision[1] - 8 / 14) < 1e-12
    assert abs(s.recall[1] - 8 / 14) < 1e-12


def test_scores_match_direct_set_computation():
    rng = np.random.RandomState(0)
    gt = rng.randint(1, 4, size=(20, 20))
    gt[rng.rand(20, 20) < 0.1] = -1
    pred = rng.randint(1, 4, size=(20, 20))
    s = class_scores(confusion([pred], [gt], 3))
    for c in (1, 2, 3):
        valid = gt != -1
        tp = np.sum((pred == c) & (gt == c) & valid)
        fp = np.sum((pred == c) & (gt != c) & valid)
        fn = np.sum((pred != c) & (gt == c) & valid)
        want = tp / (tp + fp + fn) if tp + fp + fn else 0.0
        assert abs(s.iou[c] - want) < 1e-12


def test_scores_invariant_under_permutation():
    rng = np.random.RandomState(1)
    gt = rng.randint(1, 4, size=(12, 12))
    pred = rng.randint(1, 4, size=(12, 12))
    s = class_scores(confusion([pred], [gt], 3))
    perm = {1: 2, 2: 3, 3: 1}
    gt_p = np.vectorize(perm.get)(gt)
    pred_p = np.vectorize(perm.get)(pred)
    s_p = class_scores(confusion([pred_p], [gt_p], 3))
    for c in (1, 2, 3):
        assert abs(s.iou[c] - s_p.iou[perm[c]]) < 1e-12


def _summary(iy):
    cm = np.zeros((len(iy), len(iy)), dtype=np.uint64)
    s = class_scores(cm)
    s.iou = {c + 1: v for c, v in enumerate(iy)}
    s.precision = {c + 1: 0.0 for c in range(len(iy))}
    s.recall = {c + 1: 0.0 for c in range(len(iy))}
    return s


def test_summarize_means():
    s = _summary([0.6, 0.4])
    out = summarize(s, known_ids=[1], novel_ids=[2])
    assert abs(out.miou_known - 0.6) < 1e-12
    assert abs(out.miou_all - 0.5) < 1e-12


def test_summarize_empty_novel():
    s = _summary([0.6, 0.8])
    out = summarize(s, known_ids=[1, 2], novel_ids=[])
    assert out.miou_all == out.miou_known


def test_summarize_equal_ious():
    s = _summary([0.7, 0.7, 0.7])
    out = summarize(s, known_ids=[1, 2], novel_ids=[3])
    assert abs(out.miou_known - 0.7) < 1e-12
    assert abs(out.miou_all - 0.7) < 1e-12


def test_summarize_rejects_overlap():
    s = _summary([0.5, 0.5])
    with pytest.raises(ValidationError):
        summarize(s, known_ids=[1], novel_ids=[1])


def test_report_files(tmp_path):
    s_init = _summary([0.9, 0.0])
    s_ext = _summary([0.85, 0.55])
    init = summarize(s_init, known_ids=[1], novel_ids=[2])
    ext = summarize(s_ext, known_ids=[1], novel_ids=[2])
    csv_path = tmp_path / "report.csv"
    json_path = tmp_path / "report.json"
    write_summary_csv(csv_path, init, ext, class_names={1: "bg", 2: "novel"})
    write_summary_json(json_path, init, ext, meta={"seed": 1})
    text = csv_path.read_text()
    assert "mean_over_C_plus" in text and "novel" in text
    assert '"miou_all"' in json_path.read_text()
