"""End-to-end orchestration: dataset -> discovery -> retraining -> report.

Stages run strictly in order, each leaving its artifacts (and a completion
marker) in the run directory; with ``resume=True`` completed stages whose
config hash matches are skipped.  Every stage is deterministic given the
config and seed, so a resumed run is bit-identical to a cold one.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import anomaly as anomaly_mod
from . import report as report_mod
from .clustering import dbscan, reject_known, select_novel_clusters
from .dispersion import MetricTable, pixel_dispersions, segment_iou_targets, segment_metrics, stack_tables
from .embedding import extract_patches, fallback_features, pca, tsne
from .errors import (
    ConfigError,
    NotIncluded,
    PreconditionError,
    StageMissingError,
)
from .gbt import GbtParams, fit_gbt, predict_quality, save_model
from .pseudolabel import (
    RetrainManifest,
    pseudo_label,
    related_class_histogram,
    select_rehearsal,
)
from .segments import PixelObject, argmax_mask, connected_components
from .tensorio import load_sample, read_tensor, write_ppm, write_tensor
from .trainer import (
    ToySegmenter,
    TrainConfig,
    extend_model,
    load_checkpoint,
    make_samples,
    save_checkpoint,
    train,
    train_initial,
)
from .evaluation import class_scores, confusion, summarize, write_summary_csv, write_summary_json
from .synthetic import load_manifest

log = logging.getLogger(__name__)

STAGES = (
    "segments",
    "metrics",
    "regressor",
    "anomaly",
    "embedding",
    "clusters",
    "pseudo",
    "training",
    "evaluation",
)


@dataclass
class PipelineConfig:
    dataset_root: str = ""
    tau: float = 0.5
    connectivity: int = 8
    seed: int = 0

    # suspicious objects and per-experiment filters
    min_object_pixels: int = 50
    single_segment_filter: bool = False
    min_segment_pixels: int = 500
    image_rejection: bool = False
    rejection_mean_floor: float = 0.7
    rejection_frac_ceiling: float = 1.0 / 3.0
    rejection_pixel_floor: float = 0.9
    known_rejection: bool = False
    known_radius: float = 2.75
    known_min_neighbors: int = 10
    known_majority: float = 0.8
    known_refs_per_class: int = 8

    # embedding chain
    min_patch: int = 64
    pca_k: int = 50
    perplexity: float = 30.0
    tsne_iters: int = 1000
    tsne_lr: float = 200.0
    # t-SNE coordinates carry no absolute scale; normalizing the median
    # nearest-neighbor distance to 1 lets epsilon/radius be set in stable
    # units across corpus sizes
    normalize_embedding: bool = False

    # clustering
    epsilon: float = 3.0
    n_min: int = 5
    min_core_points: int = 10
    multi_cluster: bool = False

    # pseudo labels and rehearsal
    ignore_known: bool = False
    rehearsal: bool = True
    rare_share: float = 0.0
    related_share: float = 0.3
    top_related: int = 3
    rehearsal_quotas: dict = field(default_factory=dict)

    # models; the initial network is one fixed artifact shared by every
    # run seed, exactly like the pretrained network in the multi-seed
    # evaluation protocol
    model_seed: int = 0
    initial_epochs: int = 40
    initial_lr: float = 0.05
    trainer: TrainConfig = field(default_factory=TrainConfig)
    gbt: GbtParams = field(default_factory=GbtParams)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["rehearsal_quotas"] = {str(k): v for k, v in self.rehearsal_quotas.items()}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        doc = dict(doc)
        if "trainer" in doc and isinstance(doc["trainer"], dict):
            t = dict(doc["trainer"])
            if "crop" in t:
                t["crop"] = tuple(t["crop"])
            doc["trainer"] = TrainConfig(**t)
        if "gbt" in doc and isinstance(doc["gbt"], dict):
            doc["gbt"] = GbtParams(**doc["gbt"])
        if "rehearsal_quotas" in doc:
            doc["rehearsal_quotas"] = {int(k): v for k, v in doc["rehearsal_quotas"].items()}
        return cls(**doc)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "PipelineConfig":
        return dataclasses.replace(
            self, seed=seed, trainer=dataclasses.replace(self.trainer, seed=seed)
        )


def synthetic_preset(dataset_root: str, seed: int = 0) -> PipelineConfig:
    """Desk-scale settings for the built-in synthetic scenario.

    The trainer keeps the full-scale schedule (70 epochs, poly decay,
    lam 0.5, weight decay 1e-4) but runs a larger step size: the toy
    affine head needs logit movements of order one, which the full-scale
    rate cannot reach within 70 epochs.
    """
    cfg = PipelineConfig(
        dataset_root=dataset_root,
        min_object_pixels=40,
        single_segment_filter=True,
        min_segment_pixels=130,
        min_patch=12,
        pca_k=50,
        perplexity=12.0,
        tsne_lr=50.0,
        normalize_embedding=True,
        epsilon=2.5,
        n_min=4,
        min_core_points=8,
        related_share=0.3,
        trainer=TrainConfig(lr=0.01, crop=(64, 64), batch_size=6),
    )
    return cfg.with_seed(seed)


@dataclass
class RunResult:
    status: str  # "ok" | "no-novelty"
    run_dir: str
    novel_ids: list[int] = field(default_factory=list)


class Pipeline:
    def __init__(self, cfg: PipelineConfig, run_dir: str):
        if not cfg.dataset_root:
            raise ConfigError("dataset_root is required")
        self.cfg = cfg
        self.run_dir = run_dir
        self.manifest = load_manifest(cfg.dataset_root)
        self.n_known = int(self.manifest["n_known"])
        os.makedirs(run_dir, exist_ok=True)

    # -- helpers ------------------------------------------------------------

    def path(self, *parts) -> str:
        return os.path.join(self.run_dir, *parts)

    def _marker(self, stage: str) -> str:
        return self.path(".markers", f"{stage}.json")

    def _stage_done(self, stage: str) -> bool:
        p = self._marker(stage)
        if not os.path.exists(p):
            return False
        with open(p) as fh:
            return json.load(fh).get("config_hash") == self.cfg.config_hash()

    def _mark(self, stage: str) -> None:
        os.makedirs(self.path(".markers"), exist_ok=True)
        with open(self._marker(stage), "w") as fh:
            json.dump({"config_hash": self.cfg.config_hash()}, fh, sort_keys=True)

    def _ids(self, split: str) -> list[str]:
        return list(self.manifest[f"{split}_ids"])

    def _sample(self, sample_id: str):
        return load_sample(self.cfg.dataset_root, sample_id)

    def _mask(self, sample_id: str) -> np.ndarray:
        return read_tensor(self.path("masks", f"{sample_id}.owt"))

    def _segs(self, sample_id: str):
        return connected_components(self._mask(sample_id), self.cfg.connectivity)

    def _write_json(self, rel, doc) -> None:
        p = self.path(rel)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        with open(p, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)

    def _read_json(self, rel, stage: str):
        p = self.path(rel)
        if not os.path.exists(p):
            raise StageMissingError(stage)
        with open(p) as fh:
            return json.load(fh)

    # -- stages ---------------------------------------------------------------

    def stage_segments(self) -> None:
        os.makedirs(self.path("masks"), exist_ok=True)
        for sid in self._ids("train") + self._ids("test"):
            sample = self._sample(sid)
            write_tensor(argmax_mask(sample.softmax), self.path("masks", f"{sid}.owt"))

    def _metric_split(self, split: str):
        tables, provenance = [], []
        for sid in self._ids(split):
            sample = self._sample(sid)
            segs = self._segs(sid)
            maps = pixel_dispersions(sample.softmax)
            table = segment_metrics(segs, maps, sample.softmax, self.cfg.connectivity)
            if sample.gt is not None:
                table.iou_targets = segment_iou_targets(segs, sample.gt, self.cfg.connectivity)
            tables.append(table)
            provenance.append({"image": sid, "n_segments": len(segs.segments)})
        return tables, provenance

    def stage_metrics(self) -> None:
        os.makedirs(self.path("metrics"), exist_ok=True)
        for split in ("train", "test"):
            tables, provenance = self._metric_split(split)
            stacked = stack_tables(tables)
            stacked.save_owt(self.path("metrics", f"{split}.owt"))
            stacked.to_csv(self.path("metrics", f"{split}.csv"))
            if stacked.iou_targets is not None:
                write_tensor(stacked.iou_targets, self.path("metrics", f"{split}_iou.owt"))
            self._write_json(
                os.path.join("metrics", f"{split}_index.json"),
                {"provenance": provenance, "feature_names": stacked.feature_names},
            )

    def _load_metric_split(self, split: str) -> tuple[MetricTable, list[dict]]:
        index = self._read_json(os.path.join("metrics", f"{split}_index.json"), "metrics")
        rows = read_tensor(self.path("metrics", f"{split}.owt"))
        iou_path = self.path("metrics", f"{split}_iou.owt")
        table = MetricTable(
            segment_ids=list(range(rows.shape[0])),
            feature_names=list(index["feature_names"]),
            rows=rows,
            iou_targets=read_tensor(iou_path) if os.path.exists(iou_path) else None,
        )
        return table, index["provenance"]

    def stage_regressor(self) -> None:
        os.makedirs(self.path("regressor"), exist_ok=True)
        stacked, _ = self._load_metric_split("train")
        if stacked.iou_targets is None:
            raise PreconditionError("train split needs ground truth to fit the regressor")
        model = fit_gbt(stacked, self.cfg.gbt)
        save_model(model, self.path("regressor", "model.txt"))

        test_table, provenance = self._load_metric_split("test")
        scores = predict_quality(model, test_table)
        doc, pos = {}, 0
        for entry in provenance:
            n = entry["n_segments"]
            doc[entry["image"]] = [float(s) for s in scores[pos : pos + n]]
            pos += n
        self._write_json(os.path.join("regressor", "scores.json"), doc)

    def stage_anomaly(self) -> None:
        os.makedirs(self.path("anomaly"), exist_ok=True)
        scores_doc = self._read_json(os.path.join("regressor", "scores.json"), "regressor")
        objects: list[PixelObject] = []
        rejected = []
        next_id = 0
        for sid in self._ids("test"):
            segs = self._segs(sid)
            scores = np.array(scores_doc[sid], dtype=np.float64)
            if self.cfg.image_rejection:
                qmap = anomaly_mod.quality_map(segs, scores)
                if anomaly_mod.image_rejection(
                    qmap,
                    self.cfg.rejection_mean_floor,
                    self.cfg.rejection_frac_ceiling,
                    self.cfg.rejection_pixel_floor,
                ):
                    rejected.append(sid)
                    continue
            mask = anomaly_mod.anomaly_mask(segs, scores, self.cfg.tau)
            objs = anomaly_mod.suspicious_objects(
                mask, segs, self.cfg.min_object_pixels, sid, self.cfg.connectivity
            )
            if self.cfg.single_segment_filter:
                objs = anomaly_mod.single_segment_filter(objs, self.cfg.min_segment_pixels)
            for o in objs:
                o.id = next_id
                next_id += 1
            objects.extend(objs)
        anomaly_mod.objects_to_json(objects, self.path("anomaly", "objects.json"))
        self._write_json(os.path.join("anomaly", "rejected.json"), {"images": rejected})

    def _known_reference_patches(self):
        """Seeded sample of known-class segment crops from the train split."""
        per_class: dict[int, list] = {c: [] for c in range(1, self.n_known + 1)}
        for sid in self._ids("train"):
            sample = self._sample(sid)
            segs = self._segs(sid)
            for seg in segs.segments:
                r0, c0, r1, c1 = seg.bbox
                if (
                    seg.size >= self.cfg.min_object_pixels
                    and r1 - r0 >= self.cfg.min_patch
                    and c1 - c0 >= self.cfg.min_patch
                ):
                    per_class[seg.class_id].append(sample.image[r0:r1, c0:c1].copy())
        rng = np.random.RandomState(self.cfg.seed + 101)
        refs = []
        for c in sorted(per_class):
            pool = per_class[c]
            if not pool:
                continue
            take = min(self.cfg.known_refs_per_class, len(pool))
            for i in rng.choice(len(pool), size=take, replace=False):
                refs.append((c, pool[int(i)]))
        return refs

    def stage_embedding(self) -> str:
        os.makedirs(self.path("embedding"), exist_ok=True)
        os.makedirs(self.path("patches"), exist_ok=True)
        objects = anomaly_mod.objects_from_json(self.path("anomaly", "objects.json"))
        by_image: dict[str, list[PixelObject]] = {}
        for o in objects:
            by_image.setdefault(o.source_image, []).append(o)

        patches = []
        for sid in self._ids("test"):
            if sid not in by_image:
                continue
            image = self._sample(sid).image
            patches.extend(extract_patches(image, by_image[sid], self.cfg.min_patch))

        patch_manifest = []
        for p in patches:
            ppm = self.path("patches", f"{p.object_id}.ppm")
            write_ppm(p.rgb, ppm)
            patch_manifest.append(
                {"object_id": p.object_id, "image_id": p.image_id, "bbox": list(p.bbox)}
            )
        self._write_json(os.path.join("patches", "manifest.json"), {"patches": patch_manifest})

        feats, dims = [], set()
        for p in patches:
            ext = os.path.join(self.cfg.dataset_root, "features", f"{p.object_id}.owt")
            if os.path.exists(ext):
                vec = read_tensor(ext).astype(np.float64).reshape(-1)
            else:
                vec = fallback_features(p.rgb)
            feats.append(vec)
            dims.add(vec.size)
        if len(dims) > 1:
            raise PreconditionError(f"mixed feature dimensions {sorted(dims)}")

        refs = self._known_reference_patches() if self.cfg.known_rejection else []
        ref_feats = [fallback_features(rgb) for _, rgb in refs]

        n_total = len(feats) + len(ref_feats)
        if n_total < 5:
            # not enough material to embed; clustering will report no novelty
            self._write_json(
                os.path.join("embedding", "embedding.json"),
                {"object_ids": [], "points": [], "known_refs": []},
            )
            report_mod.write_embedding_csv(self.path("embedding", "embedding.csv"), [], [])
            return "too-few-patches"

        X = np.vstack(feats + ref_feats)
        k = min(self.cfg.pca_k, X.shape[0] - 1, X.shape[1])
        if k < self.cfg.pca_k:
            log.warning("PCA k clamped from %d to %d (n=%d)", self.cfg.pca_k, k, X.shape[0])
        reduced = pca(X, k=k)
        # keep the affinities informative on small corpora: at perplexity
        # near n the joint P degenerates to uniform and the embedding
        # inflates into a simplex
        perplexity = min(self.cfg.perplexity, max((X.shape[0] - 1) / 3.0, 2.0))
        points = tsne(
            reduced,
            perplexity=perplexity,
            iters=self.cfg.tsne_iters,
            seed=self.cfg.seed,
            learning_rate=self.cfg.tsne_lr,
        )
        if self.cfg.normalize_embedding and points.shape[0] > 1:
            d = np.linalg.norm(points[:, None] - points[None, :], axis=2)
            np.fill_diagonal(d, np.inf)
            scale = float(np.median(d.min(axis=1)))
            if scale > 0:
                points = points / scale
        object_ids = [p.object_id for p in patches]
        known_rows = [
            {"class_id": int(c), "x": float(points[len(patches) + i, 0]), "y": float(points[len(patches) + i, 1])}
            for i, (c, _) in enumerate(refs)
        ]
        self._write_json(
            os.path.join("embedding", "embedding.json"),
            {
                "object_ids": object_ids,
                "points": [[float(a), float(b)] for a, b in points[: len(patches)]],
                "known_refs": known_rows,
            },
        )
        report_mod.write_embedding_csv(
            self.path("embedding", "embedding.csv"),
            object_ids,
            points[: len(patches)],
        )
        return "ok"

    def stage_clusters(self) -> str:
        os.makedirs(self.path("clusters"), exist_ok=True)
        doc = self._read_json(os.path.join("embedding", "embedding.json"), "embedding")
        object_ids = list(doc["object_ids"])
        points = np.array(doc["points"], dtype=np.float64).reshape(-1, 2)

        keep = np.ones(len(object_ids), dtype=bool)
        if self.cfg.known_rejection and doc["known_refs"] and len(object_ids):
            known_xy = np.array([[r["x"], r["y"]] for r in doc["known_refs"]])
            known_cls = np.array([r["class_id"] for r in doc["known_refs"]])
            keep = reject_known(
                points,
                known_xy,
                known_cls,
                self.cfg.known_radius,
                self.cfg.known_min_neighbors,
                self.cfg.known_majority,
            )

        kept_idx = np.nonzero(keep)[0]
        rows = []
        selected: list[int] = []
        members: dict[str, list[int]] = {}
        if kept_idx.size:
            result = dbscan(points[kept_idx], self.cfg.epsilon, self.cfg.n_min)
            chosen = select_novel_clusters(result, self.cfg.min_core_points)
            if not self.cfg.multi_cluster:
                chosen = chosen[:1]
            selected = [int(c) for c in chosen]
            for rank, cid in enumerate(selected):
                core_members = [
                    int(object_ids[kept_idx[j]])
                    for j in range(kept_idx.size)
                    if result.labels[j] == cid and result.role[j] == "core"
                ]
                members[str(rank)] = core_members
            label_of = {int(kept_idx[j]): (int(result.labels[j]), str(result.role[j])) for j in range(kept_idx.size)}
        else:
            label_of = {}

        for i, oid in enumerate(object_ids):
            if i in label_of:
                cluster, role = label_of[i]
            else:
                cluster, role = -1, "rejected"
            rows.append((oid, points[i, 0], points[i, 1], cluster, role))
        report_mod.write_clusters_csv(self.path("clusters", "clusters.csv"), rows)
        core_counts = {}
        if kept_idx.size:
            for cid in sorted(set(result.labels[result.labels >= 0].tolist())):
                core_counts[str(int(cid))] = result.core_count(int(cid))
        self._write_json(
            os.path.join("clusters", "clusters.json"),
            {"selected": selected, "core_counts": core_counts, "novel_members": members},
        )
        report_mod.emit_scatter_svg(
            self.path("clusters", "embedding.svg"), rows,
            [(r["class_id"], r["x"], r["y"]) for r in doc["known_refs"]],
        )
        return "ok" if selected else "no-novelty"

    def stage_pseudo(self) -> str:
        os.makedirs(self.path("pseudo_gt"), exist_ok=True)
        clusters = self._read_json(os.path.join("clusters", "clusters.json"), "clusters")
        members = clusters["novel_members"]
        n_clusters = len(clusters["selected"])
        if n_clusters == 0:
            RetrainManifest([], [], [], {}, self.cfg.seed).save(self.path("retrain_manifest.json"))
            return "no-novelty"
        objects = anomaly_mod.objects_from_json(self.path("anomaly", "objects.json"))
        obj_by_id = {o.id: o for o in objects}

        pseudo_images = []
        pseudo_samples = []
        pred_masks = {}
        for sid in self._ids("test"):
            per_cluster = []
            for rank in range(n_clusters):
                ids = members[str(rank)]
                per_cluster.append(
                    [obj_by_id[i] for i in ids if obj_by_id[i].source_image == sid]
                )
            mask = self._mask(sid)
            try:
                ps = pseudo_label(
                    mask, per_cluster, self.n_known, self.cfg.ignore_known, image_id=sid
                )
            except NotIncluded:
                continue
            write_tensor(ps.labels, self.path("pseudo_gt", f"{sid}.owt"))
            pseudo_images.append(sid)
            pseudo_samples.append(ps)
            pred_masks[sid] = mask

        novel_ids = [self.n_known + 1 + r for r in range(n_clusters)]
        histograms = {
            nid: related_class_histogram(pseudo_samples, pred_masks, nid)
            for nid in novel_ids
        }
        merged: dict[int, int] = {}
        for h in histograms.values():
            for c, n in h.items():
                merged[c] = merged.get(c, 0) + n

        rehearsal_images: list[str] = []
        quotas = {int(k): v for k, v in self.cfg.rehearsal_quotas.items()}
        if self.cfg.rehearsal and pseudo_images:
            train_index = {}
            for sid in self._ids("train"):
                gt = self._sample(sid).gt
                if gt is None:
                    raise PreconditionError("rehearsal selection needs train ground truth")
                train_index[sid] = {int(c) for c in np.unique(gt) if c > 0}
            rehearsal_images = select_rehearsal(
                train_index,
                merged,
                n=len(pseudo_images),
                rare_share=self.cfg.rare_share,
                related_share=self.cfg.related_share,
                seed=self.cfg.seed,
                quotas=quotas or None,
                top_m=self.cfg.top_related,
            )
        manifest = RetrainManifest(
            novel_ids=novel_ids,
            pseudo_images=pseudo_images,
            rehearsal_images=rehearsal_images,
            quotas=quotas,
            seed=self.cfg.seed,
            histograms=histograms,
        )
        manifest.save(self.path("retrain_manifest.json"))
        return "ok" if pseudo_images else "no-novelty"

    def _initial_model(self) -> ToySegmenter:
        return ToySegmenter(
            self.n_known,
            encoder_seed=self.cfg.model_seed,
            init_seed=self.cfg.model_seed + 1,
        )

    def stage_training(self, novelty: bool) -> None:
        os.makedirs(self.path("models"), exist_ok=True)
        f = self._initial_model()
        items = []
        for sid in self._ids("train"):
            sample = self._sample(sid)
            if sample.gt is None:
                raise PreconditionError("initial fit needs train ground truth")
            items.append((sid, sample.image, sample.gt))
        init_cfg = dataclasses.replace(
            self.cfg.trainer,
            epochs=self.cfg.initial_epochs,
            lr=self.cfg.initial_lr,
            lam=1.0,
            seed=self.cfg.model_seed + 2,
        )
        f_fit, _ = train_initial(f, make_samples(f, items), init_cfg)
        save_checkpoint(f_fit, self.path("models", "initial"))
        if not novelty:
            return

        manifest = RetrainManifest.load(self.path("retrain_manifest.json"))
        g = extend_model(f_fit, len(manifest.novel_ids), seed=self.cfg.seed + 2)
        retrain_items = []
        for sid in manifest.pseudo_images:
            image = self._sample(sid).image
            labels = read_tensor(self.path("pseudo_gt", f"{sid}.owt"))
            retrain_items.append((sid, image, labels))
        for sid in manifest.rehearsal_images:
            sample = self._sample(sid)
            retrain_items.append((sid, sample.image, sample.gt))
        g_fit, trace = train(g, f_fit, make_samples(g, retrain_items), self.cfg.trainer)
        save_checkpoint(g_fit, self.path("models", "extended"))
        with open(self.path("models", "loss_trace.csv"), "w") as fh:
            fh.write("epoch,loss\n")
            for i, v in enumerate(trace):
                fh.write(f"{i},{v!r}\n")

    def stage_evaluation(self, novelty: bool) -> None:
        os.makedirs(self.path("eval"), exist_ok=True)
        f = load_checkpoint(self.path("models", "initial"))
        g = load_checkpoint(self.path("models", "extended")) if novelty else f
        gt_novel = [int(i) for i in self.manifest.get("novel_ids", [])]
        n_classes = max([g.n_classes, self.n_known] + gt_novel)

        preds_f, preds_g, gts = [], [], []
        for sid in self._ids("test"):
            sample = self._sample(sid)
            if sample.gt is None:
                continue
            preds_f.append(f.predict_mask(sample.image))
            preds_g.append(g.predict_mask(sample.image))
            gts.append(np.where(sample.gt > n_classes, -1, sample.gt))
        if not gts:
            raise PreconditionError("evaluation needs test ground truth")

        known_ids = list(range(1, self.n_known + 1))
        novel_eval_ids = list(range(self.n_known + 1, n_classes + 1))
        init = summarize(class_scores(confusion(preds_f, gts, n_classes)), known_ids, novel_eval_ids)
        ext = summarize(class_scores(confusion(preds_g, gts, n_classes)), known_ids, novel_eval_ids)

        class_names = {int(k): v for k, v in self.manifest.get("class_names", {}).items()}
        write_summary_csv(self.path("eval", "report.csv"), init, ext, class_names)
        write_summary_json(
            self.path("eval", "report.json"),
            init,
            ext,
            meta={
                "config_hash": self.cfg.config_hash(),
                "seed": self.cfg.seed,
                "status": "ok" if novelty else "no-novelty",
                "novel_ids": novel_eval_ids,
            },
        )

    # -- driver ---------------------------------------------------------------

    def run(self, resume: bool = False) -> RunResult:
        self._write_json("config.json", {"config": self.to_config_doc(), "hash": self.cfg.config_hash()})
        status = "ok"

        def need(stage: str) -> bool:
            return not (resume and self._stage_done(stage))

        if need("segments"):
            self.stage_segments()
            self._mark("segments")
        if need("metrics"):
            self.stage_metrics()
            self._mark("metrics")
        if need("regressor"):
            self.stage_regressor()
            self._mark("regressor")
        if need("anomaly"):
            self.stage_anomaly()
            self._mark("anomaly")
        if need("embedding"):
            self.stage_embedding()
            self._mark("embedding")
        if need("clusters"):
            cluster_status = self.stage_clusters()
            self._mark("clusters")
        else:
            clusters = self._read_json(os.path.join("clusters", "clusters.json"), "clusters")
            cluster_status = "ok" if clusters["selected"] else "no-novelty"
        if cluster_status == "no-novelty":
            status = "no-novelty"
        pseudo_status = "no-novelty"
        if status == "ok":
            if need("pseudo"):
                pseudo_status = self.stage_pseudo()
                self._mark("pseudo")
            else:
                manifest = RetrainManifest.load(self.path("retrain_manifest.json"))
                pseudo_status = "ok" if manifest.pseudo_images else "no-novelty"
            if pseudo_status == "no-novelty":
                status = "no-novelty"
        novelty = status == "ok"
        if need("training"):
            self.stage_training(novelty)
            self._mark("training")
        if need("evaluation"):
            self.stage_evaluation(novelty)
            self._mark("evaluation")

        novel_ids = []
        if novelty:
            novel_ids = RetrainManifest.load(self.path("retrain_manifest.json")).novel_ids
        self._write_json("status.json", {"status": status, "novel_ids": novel_ids})
        return RunResult(status=status, run_dir=self.run_dir, novel_ids=novel_ids)

    def to_config_doc(self) -> dict:
        return self.cfg.to_dict()

    def run_stage(self, name: str) -> None:
        """Run one stage in isolation (predecessors must have run)."""
        if name not in STAGES:
            raise ConfigError(f"unknown stage '{name}'; choose from {STAGES}")
        if name == "segments":
            self.stage_segments()
        elif name == "metrics":
            self.stage_metrics()
        elif name == "regressor":
            self.stage_regressor()
        elif name == "anomaly":
            self.stage_anomaly()
        elif name == "embedding":
            self.stage_embedding()
        elif name == "clusters":
            self.stage_clusters()
        elif name == "pseudo":
            self.stage_pseudo()
        elif name == "training":
            mpath = self.path("retrain_manifest.json")
            novelty = os.path.exists(mpath) and bool(RetrainManifest.load(mpath).pseudo_images)
            self.stage_training(novelty)
        elif name == "evaluation":
            novelty = os.path.exists(self.path("models", "extended"))
            self.stage_evaluation(novelty)
        self._mark(name)


def run_pipeline(cfg: PipelineConfig, run_dir: str, resume: bool = False) -> RunResult:
    return Pipeline(cfg, run_dir).run(resume=resume)
