"""Leave-object-out cross-validation and ablation sweeps.

Every fold trains a fresh model from the same initialization seed on the
out-of-fold objects and scores the held-out ones, so no mesh is ever scored
by a model that saw its object during training. Reports reuse the
correlation module's per-object layout.
"""

from __future__ import annotations

import csv
import io
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .bridge import FinetuneMode
from .config import model_config_to_dict, train_config_to_dict
from .dataset import Dataset, TrainingSample, dataset_content_hash, load_training_samples
from .heads import decode_generation, decode_realism
from .metrics import CorrelationReport, build_report
from .model import ModelConfig, RealismModel, build_model
from .training import PreparedSample, TrainConfig, _group_hidden, prepare_sample, train

_BUILD_LOCK = threading.Lock()  # build_model seeds the global torch RNG


class HarnessError(ValueError):
    """Unrunnable evaluation setup."""


@dataclass(frozen=True)
class FoldPlan:
    k: int
    folds: tuple[tuple[str, ...], ...]  # object ids per fold
    mode: str = "leave-one-object-out"

    def validate(self) -> "FoldPlan":
        seen: set[str] = set()
        for fold in self.folds:
            if not fold:
                raise HarnessError("empty fold")
            overlap = seen & set(fold)
            if overlap:
                raise HarnessError(f"objects {sorted(overlap)} appear in more than one fold")
            seen.update(fold)
        if len(self.folds) != self.k:
            raise HarnessError(f"plan has {len(self.folds)} folds but k={self.k}")
        return self


def split_leave_object_out(ds: Dataset, k: int | None = None, seed: int = 0) -> FoldPlan:
    """Assign objects to k folds round-robin after a seeded shuffle.

    k defaults to the object count, one object per fold.
    """
    objects = sorted(ds.object_ids())
    if k is None:
        k = len(objects)
    if k < 2:
        raise HarnessError(f"k must be >= 2, got {k}")
    if k > len(objects):
        raise HarnessError(f"k={k} exceeds the {len(objects)} objects in the dataset")
    rng = np.random.default_rng([seed, 1013])
    shuffled = [objects[i] for i in rng.permutation(len(objects))]
    folds: list[list[str]] = [[] for _ in range(k)]
    for i, oid in enumerate(shuffled):
        folds[i % k].append(oid)
    mode = "leave-one-object-out" if k == len(objects) else "k-group"
    return FoldPlan(k=k, folds=tuple(tuple(f) for f in folds), mode=mode).validate()


@dataclass
class FoldLog:
    fold: int
    train_objects: tuple[str, ...]
    test_objects: tuple[str, ...]
    steps: int
    final_loss: float


@dataclass
class KFoldRun:
    report: CorrelationReport
    plan: FoldPlan
    fold_logs: list[FoldLog]
    manifest: dict


def predict_scores(model: RealismModel, samples: list[TrainingSample],
                   cfg: TrainConfig) -> list[float]:
    """Score samples with the decode route matching the loss mode."""
    preds = []
    with torch.no_grad():
        for s in samples:
            prep = prepare_sample(model, s.points, s.label, s.object_id,
                                  use_object_names=cfg.prompt_object_names)
            seq_tokens = _single_hidden(model, prep)
            if cfg.loss_mode == "generation":
                preds.append(float(decode_generation(model.bridge, seq_tokens)))
            else:
                preds.append(float(decode_realism(model.decoder, seq_tokens)))
    return preds


def _single_hidden(model: RealismModel, prep: PreparedSample) -> torch.Tensor:
    return _group_hidden(model, [prep])[0]


def _fold_worker(fold_idx: int, plan: FoldPlan, samples: list[TrainingSample],
                 model_cfg: ModelConfig, train_cfg: TrainConfig, seed: int):
    test_objects = set(plan.folds[fold_idx])
    train_samples = [s for s in samples if s.object_id not in test_objects]
    test_samples = [s for s in samples if s.object_id in test_objects]
    if not train_samples:
        raise HarnessError(
            f"fold {fold_idx}: nothing to train on (all objects held out)"
        )
    with _BUILD_LOCK:
        model = build_model(model_cfg, seed)
    prepared = [prepare_sample(model, s.points, s.label, s.object_id,
                               use_object_names=train_cfg.prompt_object_names)
                for s in train_samples]
    result = train(model, prepared, train_cfg)
    preds = predict_scores(model, test_samples, train_cfg)
    per_object: dict[str, tuple[list[float], list[float]]] = {}
    for s, p in zip(test_samples, preds):
        per_object.setdefault(s.object_id, ([], []))
        per_object[s.object_id][0].append(p)
        per_object[s.object_id][1].append(s.label)
    log = FoldLog(fold=fold_idx, train_objects=tuple(sorted({s.object_id for s in train_samples})),
                  test_objects=tuple(sorted(test_objects)), steps=result.steps,
                  final_loss=result.final_loss)
    return per_object, log


def run_kfold(ds: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig, *,
              k: int | None = None, seed: int = 0, scorer_kind: str = "sram",
              jobs: int = 1) -> KFoldRun:
    """Train and evaluate across folds; returns the per-object report."""
    if scorer_kind not in ("sram", "baseline"):
        raise HarnessError(f"scorer_kind must be 'sram' or 'baseline', got {scorer_kind!r}")
    if len(ds.object_ids()) < 2:
        raise HarnessError("dataset has fewer than 2 objects; held-out folds would have "
                           "no training data")
    model_cfg = replace(model_cfg, encoder_kind="pointnet" if scorer_kind == "baseline" else "patch")
    model_cfg.validate()
    train_cfg.validate()
    plan = split_leave_object_out(ds, k, seed)
    samples = load_training_samples(ds)

    results: list = [None] * plan.k
    if jobs <= 1:
        for i in range(plan.k):
            results[i] = _fold_worker(i, plan, samples, model_cfg, train_cfg, seed)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_fold_worker, i, plan, samples, model_cfg, train_cfg, seed): i
                       for i in range(plan.k)}
            for fut, i in futures.items():
                results[i] = fut.result()

    per_group: dict[str, tuple[list[float], list[float]]] = {}
    logs = []
    for per_object, log in results:
        for oid, pair in per_object.items():
            if oid in per_group:
                raise HarnessError(f"object {oid!r} scored by two folds")
            per_group[oid] = pair
        logs.append(log)
    ordered = {oid: per_group[oid] for oid in sorted(per_group)}
    report = build_report(ordered)
    manifest = {
        "seed": seed,
        "k": plan.k,
        "mode": plan.mode,
        "scorer_kind": scorer_kind,
        "jobs": jobs,
        "model_config": model_config_to_dict(model_cfg),
        "train_config": train_config_to_dict(train_cfg),
        "dataset_hash": dataset_content_hash(ds),
        "objects": sorted(ds.object_ids()),
        "mesh_count": ds.mesh_count(),
        "created_at": time.time(),
    }
    return KFoldRun(report=report, plan=plan, fold_logs=logs, manifest=manifest)


# ablations -----------------------------------------------------------------

ABLATION_DIMENSIONS = ("finetune", "loss", "prompt")
DEFAULT_LORA_RANKS = (2, 4, 8, 16)
DEFAULT_PREFIX_LENGTH = 8


@dataclass
class AblationRow:
    name: str
    report: CorrelationReport | None
    error: str | None = None


@dataclass
class AblationTable:
    dimension: str
    rows: list[AblationRow]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["variant", "plcc", "srocc", "krocc", "error"])
        for row in self.rows:
            if row.report is None:
                writer.writerow([row.name, "", "", "", row.error or "failed"])
                continue
            o = row.report.overall
            fmt = lambda v: "" if v is None else f"{v:.6f}"
            writer.writerow([row.name, fmt(o.plcc), fmt(o.srocc), fmt(o.krocc), ""])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "rows": [
                {"variant": r.name,
                 "report": r.report.to_dict() if r.report else None,
                 "error": r.error}
                for r in self.rows
            ],
        }


def ablation_variants(dimension: str, model_cfg: ModelConfig, train_cfg: TrainConfig,
                      lora_ranks=DEFAULT_LORA_RANKS, prefix_length=DEFAULT_PREFIX_LENGTH):
    """Named (model_cfg, train_cfg) pairs differing only along one dimension."""
    def with_mode(mode: FinetuneMode) -> ModelConfig:
        return replace(model_cfg, bridge=replace(model_cfg.bridge, finetune_mode=mode))

    if dimension == "finetune":
        variants = [("full", with_mode(FinetuneMode.full()), train_cfg)]
        for r in lora_ranks:
            variants.append((f"lora:{r}", with_mode(FinetuneMode.lora(r)), train_cfg))
        variants.append(("prefix", with_mode(FinetuneMode.prefix(prefix_length)), train_cfg))
        return variants
    if dimension == "loss":
        return [
            ("regression", model_cfg, replace(train_cfg, loss_mode="regression")),
            ("generation", model_cfg, replace(train_cfg, loss_mode="generation")),
        ]
    if dimension == "prompt":
        return [
            ("with_name", model_cfg, replace(train_cfg, prompt_object_names=True)),
            ("without_name", model_cfg, replace(train_cfg, prompt_object_names=False)),
        ]
    raise HarnessError(f"unknown ablation dimension {dimension!r}; "
                       f"expected one of {ABLATION_DIMENSIONS}")


def run_ablation(ds: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
                 dimension: str, *, k: int | None = None, seed: int = 0,
                 scorer_kind: str = "sram", jobs: int = 1,
                 lora_ranks=DEFAULT_LORA_RANKS,
                 prefix_length=DEFAULT_PREFIX_LENGTH) -> AblationTable:
    """Run the k-fold evaluation once per variant; failures stay per-row."""
    variants = ablation_variants(dimension, model_cfg, train_cfg, lora_ranks, prefix_length)
    if not variants:
        raise HarnessError("empty variant list")
    rows = []
    for name, mc, tc in variants:
        try:
            run = run_kfold(ds, mc, tc, k=k, seed=seed, scorer_kind=scorer_kind, jobs=jobs)
            rows.append(AblationRow(name=name, report=run.report))
        except Exception as exc:  # keep sweeping; the row records its failure
            rows.append(AblationRow(name=name, report=None, error=f"{type(exc).__name__}: {exc}"))
    return AblationTable(dimension=dimension, rows=rows)


def save_run(run: KFoldRun, out_dir) -> dict[str, str]:
    """Write report.json/report.csv/manifest.json; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report_json": str(out / "report.json"),
        "report_csv": str(out / "report.csv"),
        "manifest": str(out / "manifest.json"),
    }
    (out / "report.json").write_text(run.report.to_json() + "\n", encoding="utf-8")
    (out / "report.csv").write_text(run.report.to_csv(), encoding="utf-8")
    (out / "manifest.json").write_text(json.dumps(run.manifest, indent=2) + "\n", encoding="utf-8")
    return paths
