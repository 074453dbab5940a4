"""Command-line entry point.

Subcommands: score, train, kfold, annotate (serve / aggregate), synth.
Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command is
deterministic under --seed. Precedence: config file < flags < environment
(environment only for paths and the port).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import annotation as ann
from .bridge import FinetuneMode
from .checkpoint import CheckpointError, restore_model, save_checkpoint
from .config import (
    ConfigError,
    RunConfig,
    apply_env_overrides,
    load_run_config,
)
from .dataset import (
    Dataset,
    DatasetError,
    DatasetObject,
    MeshEntry,
    export_dataset,
    load_dataset,
    load_training_samples,
    save_dataset,
)
from .geometry import MeshParseError, MeshValidationError, parse_mesh_file
from .harness import HarnessError, run_ablation, run_kfold, save_run
from .model import build_model
from .synthetic import build_ladder_dataset, write_ladder_files
from .training import prepare_sample, train


class UsageError(Exception):
    """Bad invocation: missing files, contradictory flags."""


def _existing_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} {path} does not exist")
    return p


def _emit(args, payload: dict):
    print(json.dumps(payload) if args.json else json.dumps(payload, indent=2))


# score ---------------------------------------------------------------------


def cmd_score(args) -> int:
    ckpt = _existing_file(args.checkpoint, "checkpoint")
    model, _, train_cfg = restore_model(ckpt)
    model.eval()
    loss_mode = args.loss or (train_cfg.loss_mode if train_cfg else "regression")

    target = Path(args.mesh)
    if target.is_dir():
        paths = sorted(p for p in target.iterdir() if p.suffix.lower() in (".obj", ".ply"))
        if not paths:
            raise UsageError(f"no .obj or .ply files in {target}")
    else:
        paths = [_existing_file(args.mesh, "mesh")]

    results = []
    for p in paths:
        mesh = parse_mesh_file(p)
        score = model.score_mesh(mesh, loss_mode=loss_mode)
        results.append({"mesh": str(p), "realism": score})
    if args.json:
        print(json.dumps({"results": results, "checkpoint": str(ckpt)}))
    else:
        for r in results:
            print(json.dumps(r))
    return 0


# train ---------------------------------------------------------------------


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_run_config(_existing_file(args.config, "config file"), apply_env=False)
    else:
        cfg = RunConfig()
    # flags override file values
    tc = cfg.train
    if getattr(args, "mode", None):
        cfg = replace(cfg, model=replace(
            cfg.model, bridge=replace(cfg.model.bridge,
                                      finetune_mode=FinetuneMode.parse(args.mode))))
    if getattr(args, "loss", None):
        tc = replace(tc, loss_mode=args.loss)
    if getattr(args, "lr", None) is not None:
        tc = replace(tc, lr=args.lr)
    if getattr(args, "epochs", None) is not None:
        tc = replace(tc, epochs=args.epochs)
    if getattr(args, "batch_size", None) is not None:
        tc = replace(tc, batch_size=args.batch_size)
    if getattr(args, "max_steps", None) is not None:
        tc = replace(tc, max_steps=args.max_steps)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
        tc = replace(tc, seed=args.seed)
    cfg = replace(cfg, train=tc)
    # environment wins over flags, but only for paths and the port
    return apply_env_overrides(cfg).validate()


def cmd_train(args) -> int:
    cfg = _load_config(args)
    ds = load_dataset(_existing_file(args.dataset, "dataset"))
    samples = load_training_samples(ds)
    model = build_model(cfg.model, cfg.seed)
    prepared = [prepare_sample(model, s.points, s.label, s.object_id,
                               use_object_names=cfg.train.prompt_object_names)
                for s in samples]
    result = train(model, prepared, cfg.train)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "model.ckpt"
    save_checkpoint(ckpt_path, model, train_config=cfg.train,
                    metadata={"samples": len(samples), "steps": result.steps})
    curve_path = out / "loss_curve.csv"
    with open(curve_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss"])
        writer.writerows(result.history)
    _emit(args, {
        "checkpoint": str(ckpt_path),
        "loss_curve": str(curve_path),
        "steps": result.steps,
        "final_loss": result.final_loss,
    })
    return 0


# kfold ---------------------------------------------------------------------


def cmd_kfold(args) -> int:
    cfg = _load_config(args)
    ds = load_dataset(_existing_file(args.dataset, "dataset"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.ablate:
        table = run_ablation(ds, cfg.model, cfg.train, args.ablate, k=args.k,
                             seed=cfg.seed, scorer_kind=args.scorer, jobs=args.jobs)
        (out / "ablation.csv").write_text(table.to_csv(), encoding="utf-8")
        (out / "ablation.json").write_text(json.dumps(table.to_dict(), indent=2) + "\n",
                                           encoding="utf-8")
        if args.json:
            print(json.dumps(table.to_dict()))
        else:
            print(table.to_csv(), end="")
        return 0
    run = run_kfold(ds, cfg.model, cfg.train, k=args.k, seed=cfg.seed,
                    scorer_kind=args.scorer, jobs=args.jobs)
    paths = save_run(run, out)
    if args.json:
        print(json.dumps({"report": run.report.to_dict(), "files": paths}))
    else:
        print(run.report.to_csv(), end="")
    return 0


# annotate ------------------------------------------------------------------


def cmd_annotate_serve(args) -> int:
    import uvicorn

    from .service import create_app

    if getattr(args, "config", None):
        cfg = load_run_config(_existing_file(args.config, "config file"), apply_env=False)
    else:
        cfg = RunConfig()
    svc = cfg.service
    if args.port is not None:
        svc = replace(svc, port=args.port)
    if args.data is not None:
        root = Path(args.data)
        svc = replace(svc, session_dir=str(root / "sessions"),
                      mesh_dir=str(root / "meshes"),
                      dataset_dir=str(root / "datasets"))
    if args.checkpoint:
        svc = replace(svc, checkpoints={**svc.checkpoints,
                                        "default": str(_existing_file(args.checkpoint, "checkpoint"))})
    if args.ui:
        svc = replace(svc, ui_dir=str(_existing_file(args.ui, "ui directory")))
    cfg = apply_env_overrides(replace(cfg, service=svc)).validate()
    app = create_app(cfg.service)
    uvicorn.run(app, host=cfg.service.host, port=cfg.service.port, log_level="info")
    return 0


def cmd_annotate_aggregate(args) -> int:
    log_dir = Path(args.dir)
    if not log_dir.is_dir():
        raise UsageError(f"session directory {log_dir} does not exist")
    sessions = []
    skipped = []
    for log in sorted(log_dir.glob("*.jsonl")):
        session = ann.replay_log(log)
        if session.is_complete():
            sessions.append(session)
        else:
            skipped.append(session.session_id)
    if not sessions:
        raise UsageError(f"no completed sessions in {log_dir}")
    mesh_files = None
    if args.meshes:
        mesh_dir = Path(args.meshes)
        mesh_files = {}
        for s in sessions:
            for mid in s.mesh_ids:
                for ext in (".obj", ".ply"):
                    if (mesh_dir / f"{mid}{ext}").exists():
                        mesh_files[mid] = str(mesh_dir / f"{mid}{ext}")
    ds = export_dataset(sessions, None, args.out, mesh_files=mesh_files)
    payload = {
        "out": str(args.out),
        "sessions": len(sessions),
        "skipped_incomplete": skipped,
        "objects": ds.object_ids(),
        "meshes": ds.mesh_count(),
        "warnings": list(ds.warnings),
    }
    _emit(args, payload)
    return 0


# synth ---------------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.meshes_dir:
        files = write_ladder_files(args.meshes_dir, seed=args.seed,
                                   num_objects=args.objects, num_levels=args.levels)
        ds = build_ladder_dataset(seed=args.seed, num_objects=args.objects,
                                  num_levels=args.levels)
        # swap inline points for the written files
        mesh_root = Path(args.meshes_dir).resolve()
        objects = []
        for obj in ds.objects:
            meshes = tuple(
                MeshEntry(mesh_id=m.mesh_id, label=m.label,
                          file=str(mesh_root / files[m.mesh_id]))
                for m in obj.meshes
            )
            objects.append(DatasetObject(object_id=obj.object_id, meshes=meshes))
        ds = Dataset(objects=tuple(objects))
    else:
        ds = build_ladder_dataset(seed=args.seed, num_objects=args.objects,
                                  num_levels=args.levels)
    save_dataset(ds, args.out)
    _emit(args, {"out": str(args.out), "objects": ds.object_ids(),
                 "meshes": ds.mesh_count(),
                 "inline_points": args.meshes_dir is None})
    return 0


# parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shaperealism",
        description="No-reference realism scoring for 3D shapes: train, score, "
                    "evaluate, and run pairwise annotation sessions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--json", action="store_true",
                       help="emit one machine-readable JSON document (default: human-oriented)")
        p.add_argument("--seed", type=int, default=None,
                       help="seed for every random choice (default: config value, 0)")

    p = sub.add_parser("score", help="score one mesh file or a directory of meshes")
    p.add_argument("mesh", help="path to a .obj/.ply file, or a directory of them")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint file")
    p.add_argument("--loss", choices=["regression", "generation"], default=None,
                   help="decode route (default: the checkpoint's training mode)")
    add_common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", help="finetune on a labeled dataset")
    p.add_argument("--dataset", required=True, help="realism dataset JSON")
    p.add_argument("--config", default=None, help="YAML run config (defaults otherwise)")
    p.add_argument("--out", default="runs/train", help="output directory (default: runs/train)")
    p.add_argument("--mode", default=None,
                   help="finetune mode: full, lora:<rank>, or prefix:<length> (default: config)")
    p.add_argument("--loss", choices=["regression", "generation"], default=None,
                   help="training loss mode (default: config, regression)")
    p.add_argument("--lr", type=float, default=None, help="learning rate (default: 2e-4)")
    p.add_argument("--epochs", type=int, default=None, help="epochs (default: 3)")
    p.add_argument("--batch-size", type=int, default=None, help="batch size (default: 12)")
    p.add_argument("--max-steps", type=int, default=None,
                   help="cap on optimizer steps (default: unlimited)")
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("kfold", help="leave-object-out cross-validation and ablations")
    p.add_argument("--dataset", required=True, help="realism dataset JSON")
    p.add_argument("--config", default=None, help="YAML run config")
    p.add_argument("--k", type=int, default=None,
                   help="fold count (default: one fold per object)")
    p.add_argument("--scorer", choices=["sram", "baseline"], default="sram",
                   help="model to evaluate (default: sram)")
    p.add_argument("--ablate", choices=["finetune", "loss", "prompt"], default=None,
                   help="sweep one dimension instead of a single run")
    p.add_argument("--out", default="runs/kfold", help="report directory (default: runs/kfold)")
    p.add_argument("--jobs", type=int, default=1, help="parallel folds (default: 1)")
    add_common(p)
    p.set_defaults(func=cmd_kfold)

    p = sub.add_parser("annotate", help="annotation session tooling")
    asub = p.add_subparsers(dest="annotate_command", required=True)

    ps = asub.add_parser("serve", help="run the annotation + scoring HTTP service")
    ps.add_argument("--port", type=int, default=None, help="listen port (default: 8470)")
    ps.add_argument("--data", default=None,
                    help="data root; sessions/, meshes/, datasets/ live beneath it")
    ps.add_argument("--config", default=None, help="YAML run config")
    ps.add_argument("--checkpoint", default=None, help="checkpoint served as 'default'")
    ps.add_argument("--ui", default=None, help="static UI bundle directory, mounted at /ui")
    add_common(ps)
    ps.set_defaults(func=cmd_annotate_serve)

    pa = asub.add_parser("aggregate", help="replay session logs and export a dataset")
    pa.add_argument("dir", help="directory of per-session .jsonl event logs")
    pa.add_argument("-o", "--out", required=True, help="output dataset JSON path")
    pa.add_argument("--meshes", default=None, help="mesh directory for file references")
    add_common(pa)
    pa.set_defaults(func=cmd_annotate_aggregate)

    p = sub.add_parser("synth", help="generate the graded-distortion benchmark dataset")
    p.add_argument("--out", required=True, help="output dataset JSON path")
    p.add_argument("--meshes-dir", default=None,
                   help="also write OBJ files and reference them (default: inline points)")
    p.add_argument("--objects", type=int, default=6, help="primitive count (default: 6)")
    p.add_argument("--levels", type=int, default=8, help="distortion levels (default: 8)")
    add_common(p)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", None) is None:
        args.seed = 0 if args.command == "synth" else None
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, ConfigError, DatasetError, HarnessError, MeshParseError,
            MeshValidationError, ann.AnnotationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
