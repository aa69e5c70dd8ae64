"""Command-line entry point: gen / run / stage / report / eval.

Exit codes: 0 = ok, 2 = pipeline finished without finding a novelty,
3 = expected pipeline error, 4 = unexpected failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .errors import OwsegError
from .pipeline import STAGES, Pipeline, PipelineConfig, run_pipeline, synthetic_preset
from .report import aggregate_reports, emit_report
from .synthetic import ScenarioSpec, gen_synthetic

EXIT_OK = 0
EXIT_NO_NOVELTY = 2
EXIT_ERROR = 3
EXIT_UNEXPECTED = 4


def _load_config(args) -> PipelineConfig:
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
        doc = doc.get("config", doc)  # accept both bare and run-dir style
        if args.dataset:
            doc["dataset_root"] = args.dataset
        cfg = PipelineConfig.from_dict(doc)
    elif args.dataset:
        cfg = synthetic_preset(args.dataset)
    else:
        raise OwsegError("need --config or --dataset")
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_gen(args) -> int:
    overrides = {}
    if args.spec:
        with open(args.spec) as fh:
            overrides = json.load(fh)
    for key in ("novel_kinds", "objects_per_image", "novel_per_image", "object_extent",
                "novel_extent", "degrade_confidence", "novel_confidence", "fragments"):
        if key in overrides:
            overrides[key] = tuple(overrides[key])
    spec = ScenarioSpec(seed=args.seed, **overrides)
    manifest = gen_synthetic(spec, args.out)
    print(f"dataset written to {args.out}: "
          f"{len(manifest['train_ids'])} train / {len(manifest['test_ids'])} test images, "
          f"novel ids {manifest['novel_ids']}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    if seeds:
        statuses = []
        run_dirs = []
        for s in seeds:
            sub = os.path.join(args.out, f"seed_{s}")
            result = run_pipeline(cfg.with_seed(s), sub, resume=args.resume)
            emit_report(result.run_dir)
            statuses.append(result.status)
            run_dirs.append(result.run_dir)
            print(f"seed {s}: {result.status} (novel ids {result.novel_ids})")
        agg = aggregate_reports(run_dirs, os.path.join(args.out, "aggregate.json"))
        a = agg["aggregate"]
        print(f"novel IoU {a['novel_iou']['mean']:.3f} +- {a['novel_iou']['std']:.3f} | "
              f"mIoU_C {a['miou_known_extended']['mean']:.3f} +- {a['miou_known_extended']['std']:.3f}")
        return EXIT_OK if all(s == "ok" for s in statuses) else EXIT_NO_NOVELTY
    result = run_pipeline(cfg, args.out, resume=args.resume)
    emit_report(result.run_dir)
    print(f"status: {result.status} (novel ids {result.novel_ids})")
    return EXIT_OK if result.status == "ok" else EXIT_NO_NOVELTY


def cmd_stage(args) -> int:
    with open(os.path.join(args.run_dir, "config.json")) as fh:
        doc = json.load(fh)
    cfg = PipelineConfig.from_dict(doc["config"])
    Pipeline(cfg, args.run_dir).run_stage(args.name)
    print(f"stage {args.name}: done")
    return EXIT_OK


def cmd_report(args) -> int:
    out = emit_report(args.run_dir)
    print(f"report written to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    with open(os.path.join(args.run_dir, "config.json")) as fh:
        doc = json.load(fh)
    cfg = PipelineConfig.from_dict(doc["config"])
    pipe = Pipeline(cfg, args.run_dir)
    pipe.run_stage("evaluation")
    with open(os.path.join(args.run_dir, "eval", "report.json")) as fh:
        rep = json.load(fh)
    print(json.dumps(rep["extended"], sort_keys=True, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="owseg", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic open-world dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--spec", help="JSON file with ScenarioSpec field overrides")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run the full pipeline")
    r.add_argument("--config", help="pipeline config JSON")
    r.add_argument("--dataset", help="dataset root (synthetic preset when no --config)")
    r.add_argument("--out", required=True, help="run directory")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--seeds", help="comma-separated seed list; aggregates reports")
    r.add_argument("--resume", action="store_true")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("stage", help="run a single stage inside an existing run dir")
    s.add_argument("name", choices=STAGES)
    s.add_argument("--run-dir", required=True)
    s.set_defaults(func=cmd_stage)

    rep = sub.add_parser("report", help="emit report files and figures for a run")
    rep.add_argument("--run-dir", required=True)
    rep.set_defaults(func=cmd_report)

    e = sub.add_parser("eval", help="re-run evaluation and print the summary")
    e.add_argument("--run-dir", required=True)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except OwsegError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as e:  # pragma: no cover - defensive
        print(f"unexpected error: {e}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
