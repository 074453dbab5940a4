"""Versioned realism dataset files.

One JSON document holds objects, their meshes (as file references or inline
point lists), per-subject annotation records, and the aggregate label each
mesh trains against. The same schema is what annotation sessions export and
what training and evaluation consume.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotation import AggregateScore, AnnotationSession, RealismRecord, aggregate
from .geometry import Mesh, PointCloud, mesh_to_point_cloud, parse_mesh_file

DATASET_FORMAT = "realism-dataset"
DATASET_VERSION = 1


class DatasetError(ValueError):
    """Malformed dataset document or unusable entry."""


@dataclass(frozen=True)
class MeshEntry:
    """One labeled mesh: geometry by file reference or inline points."""

    mesh_id: str
    label: float
    file: str | None = None
    points: np.ndarray | None = None     # (N, 3) float64, alternative to file
    ci95: float | None = None
    records: tuple[RealismRecord, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.label <= 1.0:
            raise DatasetError(f"mesh {self.mesh_id!r}: label {self.label} outside [0, 1]")
        if self.points is not None:
            pts = np.asarray(self.points, dtype=np.float64)
            if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
                raise DatasetError(f"mesh {self.mesh_id!r}: points must be a non-empty (N, 3) array")
            object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class DatasetObject:
    object_id: str
    meshes: tuple[MeshEntry, ...]


@dataclass(frozen=True)
class Dataset:
    objects: tuple[DatasetObject, ...]
    warnings: tuple[str, ...] = ()
    base_dir: Path | None = None  # resolves relative file references

    def object_ids(self) -> list[str]:
        return [o.object_id for o in self.objects]

    def iter_meshes(self):
        for obj in self.objects:
            for m in obj.meshes:
                yield obj.object_id, m

    def mesh_count(self) -> int:
        return sum(len(o.meshes) for o in self.objects)


@dataclass(frozen=True)
class TrainingSample:
    """Geometry resolved into memory, ready for preprocessing."""

    points: PointCloud
    label: float
    object_id: str
    mesh_id: str


# load / save ---------------------------------------------------------------


def _require(cond: bool, msg: str):
    if not cond:
        raise DatasetError(msg)


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON: {exc}") from exc
    _require(isinstance(doc, dict), f"{path}: top level must be an object")
    _require(doc.get("format") == DATASET_FORMAT,
             f"{path}: format {doc.get('format')!r} is not {DATASET_FORMAT!r}")
    _require(doc.get("version") == DATASET_VERSION,
             f"{path}: version {doc.get('version')!r} unsupported (expected {DATASET_VERSION})")
    _require(isinstance(doc.get("objects"), list), f"{path}: missing objects list")

    objects = []
    seen_objects: set[str] = set()
    seen_meshes: set[str] = set()
    for od in doc["objects"]:
        oid = od.get("object_id")
        _require(isinstance(oid, str) and oid, f"{path}: object without object_id")
        _require(oid not in seen_objects, f"{path}: duplicate object_id {oid!r}")
        seen_objects.add(oid)
        meshes = []
        for md in od.get("meshes", []):
            mid = md.get("mesh_id")
            _require(isinstance(mid, str) and mid, f"{path}: mesh without mesh_id in object {oid!r}")
            _require(mid not in seen_meshes, f"{path}: duplicate mesh_id {mid!r}")
            seen_meshes.add(mid)
            _require("label" in md and isinstance(md["label"], (int, float)),
                     f"{path}: mesh {mid!r} missing numeric label")
            records = tuple(
                RealismRecord(mesh_id=mid, subject_id=r["subject_id"], wins=r["wins"],
                              rounds_played=r["rounds_played"], score=r["score"])
                for r in md.get("records", [])
            )
            points = md.get("points")
            meshes.append(MeshEntry(
                mesh_id=mid, label=float(md["label"]), file=md.get("file"),
                points=np.asarray(points, dtype=np.float64) if points is not None else None,
                ci95=md.get("ci95"), records=records,
            ))
        objects.append(DatasetObject(object_id=oid, meshes=tuple(meshes)))
    warnings = tuple(doc.get("warnings", []))
    return Dataset(objects=tuple(objects), warnings=warnings, base_dir=path.parent)


def dataset_to_dict(ds: Dataset) -> dict:
    return {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "objects": [
            {
                "object_id": obj.object_id,
                "meshes": [
                    {
                        "mesh_id": m.mesh_id,
                        "label": m.label,
                        **({"file": m.file} if m.file else {}),
                        **({"points": m.points.tolist()} if m.points is not None else {}),
                        **({"ci95": m.ci95} if m.ci95 is not None else {}),
                        "records": [
                            {"subject_id": r.subject_id, "wins": r.wins,
                             "rounds_played": r.rounds_played, "score": r.score}
                            for r in m.records
                        ],
                    }
                    for m in obj.meshes
                ],
            }
            for obj in ds.objects
        ],
        "warnings": list(ds.warnings),
    }


def save_dataset(ds: Dataset, path: str | Path) -> None:
    Path(path).write_text(json.dumps(dataset_to_dict(ds), indent=2) + "\n", encoding="utf-8")


# annotation export ---------------------------------------------------------


def export_dataset(sessions: list[AnnotationSession], aggregates: list[AggregateScore] | None,
                   path: str | Path, *, mesh_files: dict[str, str] | None = None) -> Dataset:
    """Write completed sessions as a dataset file.

    Aggregates are recomputed when not supplied. Meshes without a known file
    reference are still exported but flagged in the warnings list.
    """
    if not sessions:
        raise DatasetError("no sessions to export")
    incomplete = [s.session_id for s in sessions if not s.is_complete()]
    if incomplete:
        raise DatasetError(f"sessions not complete: {incomplete}")

    records_by_mesh: dict[str, list[RealismRecord]] = {}
    object_of: dict[str, str] = {}
    object_order: list[str] = []
    mesh_order: dict[str, list[str]] = {}
    for s in sessions:
        if s.object_id not in object_order:
            object_order.append(s.object_id)
            mesh_order[s.object_id] = []
        for rec in s.session_scores():
            prior = object_of.setdefault(rec.mesh_id, s.object_id)
            if prior != s.object_id:
                raise DatasetError(
                    f"mesh {rec.mesh_id!r} appears under objects {prior!r} and {s.object_id!r}"
                )
            if rec.mesh_id not in mesh_order[s.object_id]:
                mesh_order[s.object_id].append(rec.mesh_id)
            records_by_mesh.setdefault(rec.mesh_id, []).append(rec)

    all_records = [r for recs in records_by_mesh.values() for r in recs]
    if aggregates is None:
        aggregates = aggregate(all_records)
    agg_by_mesh = {a.mesh_id: a for a in aggregates}

    mesh_files = mesh_files or {}
    warnings = []
    objects = []
    for oid in object_order:
        meshes = []
        for mid in mesh_order[oid]:
            agg = agg_by_mesh.get(mid)
            if agg is None:
                raise DatasetError(f"no aggregate for mesh {mid!r}")
            file_ref = mesh_files.get(mid)
            if file_ref is None:
                warnings.append(f"mesh {mid!r} has no file reference")
            meshes.append(MeshEntry(
                mesh_id=mid, label=agg.mean, file=file_ref, ci95=agg.ci95,
                records=tuple(records_by_mesh[mid]),
            ))
        objects.append(DatasetObject(object_id=oid, meshes=tuple(meshes)))

    out = Dataset(objects=tuple(objects), warnings=tuple(warnings), base_dir=Path(path).parent)
    save_dataset(out, path)
    return out


# geometry resolution -------------------------------------------------------


def resolve_geometry(entry: MeshEntry, base_dir: Path | None) -> PointCloud:
    """Mesh entry -> point cloud, from inline points or the referenced file."""
    if entry.points is not None:
        return PointCloud(points=entry.points, normalized=False)
    if entry.file is None:
        raise DatasetError(f"mesh {entry.mesh_id!r} has neither a file reference nor inline points")
    p = Path(entry.file)
    if not p.is_absolute() and base_dir is not None:
        p = base_dir / p
    if not p.exists():
        raise DatasetError(f"mesh {entry.mesh_id!r}: file {p} does not exist")
    mesh = parse_mesh_file(p)
    return mesh_to_point_cloud(mesh)


def load_training_samples(ds: Dataset) -> list[TrainingSample]:
    """Resolve every mesh's geometry; fails listing all unusable meshes."""
    samples = []
    problems = []
    for oid, entry in ds.iter_meshes():
        try:
            pc = resolve_geometry(entry, ds.base_dir)
        except (DatasetError, OSError, ValueError) as exc:
            problems.append(str(exc))
            continue
        samples.append(TrainingSample(points=pc, label=entry.label,
                                      object_id=oid, mesh_id=entry.mesh_id))
    if problems:
        raise DatasetError("unusable meshes: " + "; ".join(problems))
    if not samples:
        raise DatasetError("dataset contains no meshes")
    return samples


def dataset_content_hash(ds: Dataset) -> str:
    """Stable digest over labels and resolved geometry, for run manifests."""
    h = hashlib.blake2b(digest_size=16)
    for oid, entry in sorted(ds.iter_meshes(), key=lambda t: (t[0], t[1].mesh_id)):
        h.update(oid.encode())
        h.update(entry.mesh_id.encode())
        h.update(repr(entry.label).encode())
        if entry.points is not None:
            h.update(np.ascontiguousarray(entry.points, dtype="<f8").tobytes())
        elif entry.file is not None:
            p = Path(entry.file)
            if not p.is_absolute() and ds.base_dir is not None:
                p = ds.base_dir / p
            h.update(p.read_bytes() if p.exists() else b"missing")
        else:
            h.update(b"no-geometry")
    return h.hexdigest()


def mesh_entry_from_mesh(mesh_id: str, mesh: Mesh, label: float, **kw) -> MeshEntry:
    """Inline a mesh's vertices as the entry geometry."""
    return MeshEntry(mesh_id=mesh_id, label=label, points=mesh.vertices.copy(), **kw)
