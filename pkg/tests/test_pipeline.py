import dataclasses
import hashlib
import json
import os

import numpy as np
import pytest

from owseg import cli
from owseg.pipeline import Pipeline, PipelineConfig, run_pipeline, synthetic_preset
from owseg.report import emit_report
from owseg.synthetic import ScenarioSpec, gen_synthetic

# denser degradation than the default so even 10 training images hold
# enough broken exemplars for the quality regressor
MINI_SPEC = ScenarioSpec(
    n_train=10, n_test=10, size=48, seed=2,
    objects_per_image=(2, 3), novel_per_image=(2, 2),
    novel_extent=(13, 17), degrade_prob=0.35,
)


def mini_cfg(data, seed=0):
    cfg = synthetic_preset(data, seed=seed)
    return dataclasses.replace(
        cfg,
        initial_epochs=6,
        min_core_points=4,
        trainer=dataclasses.replace(cfg.trainer, epochs=6, crop=(48, 48), seed=seed),
    )


@pytest.fixture(scope="module")
def mini_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("mini_ds")
    gen_synthetic(MINI_SPEC, root)
    return str(root)


def _tree_digest(root):
    h = hashlib.sha256()
    for dirpath, dirnames, filenames in sorted(os.walk(root)):
        dirnames.sort()
        for f in sorted(filenames):
            p = os.path.join(dirpath, f)
            h.update(os.path.relpath(p, root).encode())
            with open(p, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def test_end_to_end_mini(mini_data, tmp_path):
    run = tmp_path / "run"
    result = run_pipeline(mini_cfg(mini_data, seed=5), str(run))
    assert result.status == "ok"
    assert result.novel_ids == [4]
    for rel in (
        "masks", "metrics/train.owt", "metrics/train.csv", "regressor/model.txt",
        "regressor/scores.json", "anomaly/objects.json", "patches/manifest.json",
        "embedding/embedding.csv", "clusters/clusters.csv", "clusters/embedding.svg",
        "pseudo_gt", "retrain_manifest.json", "models/initial", "models/extended",
        "models/loss_trace.csv", "eval/report.csv", "eval/report.json", "status.json",
    ):
        assert (run / rel).exists(), rel

    report_dir = emit_report(str(run))
    for rel in ("report.csv", "report.json", "figures/embedding.svg",
                "figures/loss_trace.png", "figures/iou_per_class.png",
                "figures/quality_hist.png"):
        assert os.path.exists(os.path.join(report_dir, rel)), rel


def test_rerun_bit_identical(mini_data, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = mini_cfg(mini_data, seed=6)
    run_pipeline(cfg, str(a))
    emit_report(str(a))
    run_pipeline(cfg, str(b))
    emit_report(str(b))
    assert _tree_digest(a) == _tree_digest(b)


def test_resume_equals_cold(mini_data, tmp_path):
    cold, warm = tmp_path / "cold", tmp_path / "warm"
    cfg = mini_cfg(mini_data, seed=7)
    run_pipeline(cfg, str(cold))

    # interrupt after the anomaly stage, then resume to completion
    pipe = Pipeline(cfg, str(warm))
    pipe._write_json("config.json", {"config": cfg.to_dict(), "hash": cfg.config_hash()})
    for stage in ("segments", "metrics", "regressor", "anomaly"):
        pipe.run_stage(stage)
    run_pipeline(cfg, str(warm), resume=True)
    assert _tree_digest(cold) == _tree_digest(warm)


def test_tau_zero_no_novelty(mini_data, tmp_path):
    cfg = dataclasses.replace(mini_cfg(mini_data), tau=0.0)
    result = run_pipeline(cfg, str(tmp_path / "run"))
    assert result.status == "no-novelty"
    rep = json.load(open(tmp_path / "run" / "eval" / "report.json"))
    assert rep["meta"]["status"] == "no-novelty"
    # report still renders
    emit_report(str(tmp_path / "run"))


def test_tau_one_degenerate_still_runs(mini_data, tmp_path):
    cfg = dataclasses.replace(mini_cfg(mini_data), tau=1.0)
    result = run_pipeline(cfg, str(tmp_path / "run"))
    assert result.status in ("ok", "no-novelty")


def test_negative_control_tiny_novelties(tmp_path):
    # novel objects below the patch threshold: pipeline reports no novelty
    data = tmp_path / "ds"
    spec = dataclasses.replace(MINI_SPEC, novel_extent=(6, 8), fragments=(1, 2))
    gen_synthetic(spec, data)
    cfg = dataclasses.replace(mini_cfg(str(data)), min_patch=14, min_object_pixels=60)
    result = run_pipeline(cfg, str(tmp_path / "run"))
    assert result.status == "no-novelty"


def test_mode_flags_smoke(mini_data, tmp_path):
    cfg = dataclasses.replace(
        mini_cfg(mini_data, seed=8),
        known_rejection=True,
        image_rejection=True,
        ignore_known=True,
        multi_cluster=True,
        rehearsal=False,
    )
    result = run_pipeline(cfg, str(tmp_path / "run"))
    assert result.status in ("ok", "no-novelty")
    if result.status == "ok":
        man = json.load(open(tmp_path / "run" / "retrain_manifest.json"))
        assert man["rehearsal_images"] == []
        sid = man["pseudo_images"][0]
        from owseg.tensorio import read_tensor
        labels = read_tensor(tmp_path / "run" / "pseudo_gt" / f"{sid}.owt")
        assert set(np.unique(labels)) <= {-1} | set(range(4, 10))


def test_config_round_trip(mini_data):
    cfg = mini_cfg(mini_data, seed=9)
    doc = json.loads(json.dumps(cfg.to_dict()))
    back = PipelineConfig.from_dict(doc)
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()


def test_cli_full_cycle(tmp_path, capsys):
    data = tmp_path / "ds"
    spec_file = tmp_path / "spec.json"
    spec_file.write_text(json.dumps({
        "n_train": 10, "n_test": 6, "size": 48,
        "objects_per_image": [1, 3], "novel_extent": [13, 17],
    }))
    assert cli.main(["gen", "--out", str(data), "--seed", "2", "--spec", str(spec_file)]) == 0

    cfg = mini_cfg(str(data), seed=5)
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps(cfg.to_dict()))
    run = tmp_path / "run"
    code = cli.main(["run", "--config", str(cfg_file), "--out", str(run)])
    assert code in (0, 2)
    assert (run / "status.json").exists()

    assert cli.main(["report", "--run-dir", str(run)]) == 0
    assert cli.main(["stage", "evaluation", "--run-dir", str(run)]) == 0
    assert cli.main(["eval", "--run-dir", str(run)]) == 0
    out = capsys.readouterr().out
    assert "miou_known" in out


def test_cli_error_exit(tmp_path):
    assert cli.main(["run", "--out", str(tmp_path / "x")]) == 3
