"""End-to-end realism model: mesh in, scalar score out.

Wires the patch encoder, the transformer bridge, and the realism decoder
into one nn.Module, with the deterministic mesh preprocessing (normalize,
canonical ordering, resample, patch grouping) that feeds it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .bridge import (
    Bridge,
    BridgeConfig,
    EmbeddedSequence,
    PromptSet,
    assemble_sequence,
    bridge_parameter_names,
)
from .encoder import (
    EncoderConfig,
    PatchEncoder,
    PatchSet,
    PointNetEncoder,
    group_patches,
)
from .geometry import (
    Mesh,
    PointCloud,
    canonical_order,
    mesh_to_point_cloud,
    normalize_point_cloud,
    resample_point_cloud,
)
from .heads import RealismDecoder, decode_generation, decode_realism

ENCODER_KINDS = ("patch", "pointnet")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    bridge: BridgeConfig = field(default_factory=BridgeConfig)
    prompts: PromptSet = field(default_factory=PromptSet)
    num_points: int = 8192        # resample target ahead of grouping
    encoder_kind: str = "patch"   # "patch" | "pointnet" (single-token baseline)
    decoder_hidden: int | None = None  # realism MLP width; None -> d_model

    def validate(self) -> "ModelConfig":
        self.encoder.validate()
        self.bridge.validate()
        self.prompts.validate()
        if self.encoder_kind not in ENCODER_KINDS:
            raise ValueError(f"encoder_kind must be one of {ENCODER_KINDS}, got {self.encoder_kind!r}")
        if self.decoder_hidden is not None and self.decoder_hidden < 1:
            raise ValueError(f"decoder_hidden must be >= 1, got {self.decoder_hidden}")
        if self.encoder.d_model != self.bridge.d_model:
            raise ValueError(
                f"encoder d_model {self.encoder.d_model} != bridge d_model {self.bridge.d_model}"
            )
        if self.num_points < 1 or self.num_points > self.encoder.max_points:
            raise ValueError(f"num_points must be in [1, {self.encoder.max_points}], got {self.num_points}")
        if self.encoder_kind == "patch" and self.num_points < self.encoder.num_groups:
            raise ValueError(
                f"num_points {self.num_points} < num_groups {self.encoder.num_groups}; "
                "farthest point sampling needs at least one point per group"
            )
        return self


class RealismModel(nn.Module):
    """Shape encoder + transformer bridge + realism decoder."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        if config.encoder_kind == "pointnet":
            self.encoder = PointNetEncoder(d_feat=config.encoder.d_model)
        else:
            self.encoder = PatchEncoder(config.encoder)
        self.bridge = Bridge(config.bridge)
        self.decoder = RealismDecoder(config.bridge.d_model, config.decoder_hidden)

    # preprocessing ---------------------------------------------------------

    def prepare_point_cloud(self, pc: PointCloud) -> PointCloud:
        """Normalize, canonically order, and resample to num_points."""
        pc = normalize_point_cloud(pc)
        pc = canonical_order(pc)
        pc = resample_point_cloud(pc, self.config.num_points)
        return pc

    def prepare_patches(self, pc: PointCloud) -> PatchSet:
        pc = self.prepare_point_cloud(pc)
        return group_patches(pc, self.config.encoder.num_groups, self.config.encoder.group_size)

    # embedding -------------------------------------------------------------

    def shape_tokens(self, pc: PointCloud) -> torch.Tensor:
        """Point cloud -> (G, d_model) shape tokens (G=1 for the baseline)."""
        dtype = next(self.parameters()).dtype
        if self.config.encoder_kind == "pointnet":
            pts = torch.as_tensor(self.prepare_point_cloud(pc).points, dtype=dtype)
            return self.encoder(pts.unsqueeze(0)).reshape(1, -1)
        ps = self.prepare_patches(pc)
        patches = torch.as_tensor(ps.patches, dtype=dtype).unsqueeze(0)
        centers = torch.as_tensor(ps.centers, dtype=dtype).unsqueeze(0)
        return self.encoder(patches, centers).squeeze(0)

    def embed_sequence(self, pc: PointCloud, prompts: PromptSet | None = None) -> EmbeddedSequence:
        prompts = self.config.prompts if prompts is None else prompts
        return assemble_sequence(prompts, self.shape_tokens(pc), self.bridge)

    # forward / scoring -----------------------------------------------------

    def forward(self, embedded: torch.Tensor, attn_sink: list | None = None) -> torch.Tensor:
        """Embedded batch (B, L, d_model) -> final hidden states."""
        return self.bridge(embedded, attn_sink=attn_sink)

    def score_point_cloud(self, pc: PointCloud, prompts: PromptSet | None = None,
                          loss_mode: str = "regression") -> float:
        with torch.no_grad():
            seq = self.embed_sequence(pc, prompts)
            hidden = self.bridge(seq.embeddings.unsqueeze(0))
            if loss_mode == "generation":
                return float(decode_generation(self.bridge, hidden)[0])
            return float(decode_realism(self.decoder, hidden)[0])

    def score_mesh(self, mesh: Mesh, prompts: PromptSet | None = None,
                   loss_mode: str = "regression") -> float:
        """Scalar realism score in (0, 1) for a mesh's vertex cloud."""
        return self.score_point_cloud(mesh_to_point_cloud(mesh), prompts, loss_mode)


def build_model(config: ModelConfig, seed: int) -> RealismModel:
    """Construct a model with seeded initialization.

    Same (config, seed) gives bit-identical parameters: construction order
    is fixed and all draws come from torch's global generator.
    """
    torch.manual_seed(seed)
    with torch.no_grad():
        return RealismModel(config)


def trainable_parameter_names(model: RealismModel, encoder_frozen: bool = True) -> list[str]:
    """Which tensors train: decoder always, bridge per its finetune mode,
    encoder only when unfrozen."""
    names = [f"decoder.{n}" for n, _ in model.decoder.named_parameters()]
    names += [f"bridge.{n}" for n in bridge_parameter_names(model.bridge)]
    if not encoder_frozen:
        names += [f"encoder.{n}" for n, _ in model.encoder.named_parameters()]
    return names


def trainable_parameters(model: RealismModel, encoder_frozen: bool = True) -> dict[str, nn.Parameter]:
    wanted = set(trainable_parameter_names(model, encoder_frozen))
    params = {n: p for n, p in model.named_parameters() if n in wanted}
    missing = wanted - set(params)
    if missing:
        raise RuntimeError(f"selected parameters missing from model: {sorted(missing)}")
    return params


def apply_trainability(model: RealismModel, encoder_frozen: bool = True) -> None:
    """Set requires_grad so only the selected tensors accumulate gradients."""
    wanted = set(trainable_parameter_names(model, encoder_frozen))
    for name, p in model.named_parameters():
        p.requires_grad_(name in wanted)


def parameter_count(model: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)
