"""No-reference realism scoring for 3D shapes.

A mesh becomes a normalized point cloud, patch tokens bridge into a small
causal transformer alongside text prompts, and a decoder head reads a
scalar realism score off the final position. The package also ships the
Swiss-system pairwise annotation machinery that produces training labels,
correlation metrics against human scores, a leave-object-out evaluation
harness, an HTTP service, and a CLI.
"""

from .annotation import (
    AggregateScore,
    AnnotationSession,
    RealismRecord,
    aggregate,
    create_session,
    next_pairings,
    record_choice,
    replay_events,
    replay_log,
    session_scores,
)
from .bridge import Bridge, BridgeConfig, FinetuneMode, PromptSet
from .checkpoint import load_checkpoint, restore_model, save_checkpoint
from .config import RunConfig, load_run_config
from .dataset import (
    Dataset,
    TrainingSample,
    export_dataset,
    load_dataset,
    load_training_samples,
    save_dataset,
)
from .encoder import EncoderConfig, PatchEncoder, PointNetEncoder, group_patches
from .geometry import (
    Mesh,
    PointCloud,
    farthest_point_sample,
    mesh_to_point_cloud,
    normalize_point_cloud,
    parse_mesh_bytes,
    parse_mesh_file,
    parse_obj,
    parse_ply,
    serialize_obj,
    serialize_ply,
)
from .harness import FoldPlan, run_ablation, run_kfold, split_leave_object_out
from .heads import RealismDecoder, dequantize_level, quantize_score
from .metrics import CorrelationReport, build_report, krocc, plcc, srocc
from .model import ModelConfig, RealismModel, build_model
from .synthetic import build_ladder_dataset, distort_mesh
from .training import OptimizerState, TrainConfig, adamw_step, train

__version__ = "0.1.0"

__all__ = [
    "AggregateScore", "AnnotationSession", "Bridge", "BridgeConfig",
    "CorrelationReport", "Dataset", "EncoderConfig", "FinetuneMode", "FoldPlan",
    "Mesh", "ModelConfig", "OptimizerState", "PatchEncoder", "PointCloud",
    "PointNetEncoder", "PromptSet", "RealismDecoder", "RealismModel",
    "RealismRecord", "RunConfig", "TrainConfig", "TrainingSample",
    "adamw_step", "aggregate", "build_ladder_dataset", "build_model",
    "build_report", "create_session", "dequantize_level", "distort_mesh",
    "export_dataset", "farthest_point_sample", "group_patches",
    "krocc", "load_checkpoint", "load_dataset", "load_run_config",
    "load_training_samples", "mesh_to_point_cloud", "next_pairings",
    "normalize_point_cloud", "parse_mesh_bytes", "parse_mesh_file",
    "parse_obj", "parse_ply", "plcc", "quantize_score", "record_choice",
    "replay_events", "replay_log", "restore_model", "run_ablation",
    "run_kfold", "save_checkpoint", "save_dataset", "serialize_obj",
    "serialize_ply", "session_scores", "split_leave_object_out", "srocc",
    "train",
]
