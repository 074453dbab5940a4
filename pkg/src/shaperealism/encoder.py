"""Point-cloud encoders.

The patch encoder follows the FPS-centers + kNN-groups front end of
point-cloud transformers: each local patch is lifted by a shared MLP,
max-pooled, projected into the bridge embedding space, and offset by a
learned positional encoding of its center. A plain PointNet global-feature
extractor backs the ad-hoc baseline scorer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .geometry import PointCloud, farthest_point_sample_indices


@dataclass(frozen=True)
class EncoderConfig:
    num_groups: int = 32       # G: patches per cloud
    group_size: int = 32       # S: points per patch
    d_model: int = 64          # bridge embedding width the tokens project into
    hidden: int = 64           # per-point MLP width
    max_points: int = 8192     # cloud size after resampling/padding

    def validate(self) -> "EncoderConfig":
        if min(self.num_groups, self.group_size, self.d_model, self.hidden, self.max_points) < 1:
            raise ValueError(f"all encoder dimensions must be >= 1: {self}")
        if self.num_groups > self.max_points:
            raise ValueError("num_groups cannot exceed max_points")
        if self.group_size > self.max_points:
            raise ValueError("group_size cannot exceed max_points")
        return self


@dataclass(frozen=True)
class PatchSet:
    """FPS centers (G, 3) and per-center kNN patches (G, S, 3) relative to centers."""

    centers: np.ndarray
    patches: np.ndarray
    neighbor_indices: np.ndarray  # (G, S) indices into the source cloud


def group_patches(pc: PointCloud, num_groups: int, group_size: int) -> PatchSet:
    """Split a cloud into patches: FPS centers, then S nearest neighbors each.

    Neighbor ties break toward the lowest point index; each patch stores its
    points relative to the patch center (the center itself contributes the
    zero vector).
    """
    points = np.asarray(pc.points, dtype=np.float64)
    n = len(points)
    if num_groups > n:
        raise ValueError(f"num_groups {num_groups} exceeds cloud size {n}")
    if group_size > n:
        raise ValueError(f"group_size {group_size} exceeds cloud size {n}")
    center_idx = farthest_point_sample_indices(points, num_groups, start_index=0)
    centers = points[center_idx]
    d2 = np.sum((centers[:, None, :] - points[None, :, :]) ** 2, axis=2)
    order = np.argsort(d2, axis=1, kind="stable")  # stable -> lowest index on ties
    neighbors = order[:, :group_size]
    patches = points[neighbors] - centers[:, None, :]
    return PatchSet(centers=centers, patches=patches, neighbor_indices=neighbors)


class PatchEncoder(nn.Module):
    """Patches -> shape tokens in the bridge embedding space.

    token_g = proj(max over points of mlp(relative point)) + pos(center_g).
    Max-pooling makes each token invariant to point order within its patch.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        h, d = cfg.hidden, cfg.d_model
        self.point_mlp = nn.Sequential(nn.Linear(3, h), nn.GELU(), nn.Linear(h, h))
        self.proj = nn.Linear(h, d)
        self.pos_mlp = nn.Sequential(nn.Linear(3, h), nn.GELU(), nn.Linear(h, d))

    def forward(self, patches: torch.Tensor, centers: torch.Tensor) -> torch.Tensor:
        # patches (B, G, S, 3), centers (B, G, 3) -> tokens (B, G, d_model)
        feat = self.point_mlp(patches)
        pooled = feat.max(dim=-2).values
        tokens = self.proj(pooled) + self.pos_mlp(centers)
        if not torch.isfinite(tokens).all():
            raise FloatingPointError("non-finite shape token")
        return tokens


def embed_patches(ps: PatchSet, encoder: PatchEncoder) -> torch.Tensor:
    """Single-cloud convenience wrapper; returns (G, d_model)."""
    dtype = next(encoder.parameters()).dtype
    patches = torch.as_tensor(ps.patches, dtype=dtype).unsqueeze(0)
    centers = torch.as_tensor(ps.centers, dtype=dtype).unsqueeze(0)
    return encoder(patches, centers).squeeze(0)


class PointNetEncoder(nn.Module):
    """Shared per-point MLP + global max-pool, for the baseline scorer."""

    def __init__(self, d_feat: int = 64):
        super().__init__()
        self.d_feat = d_feat
        self.mlp = nn.Sequential(
            nn.Linear(3, 64), nn.GELU(),
            nn.Linear(64, 128), nn.GELU(),
            nn.Linear(128, d_feat),
        )

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        # points (B, N, 3) -> (B, d_feat)
        feat = self.mlp(points).max(dim=-2).values
        if not torch.isfinite(feat).all():
            raise FloatingPointError("non-finite global feature")
        return feat


def pointnet_global_feature(pc: PointCloud, encoder: PointNetEncoder) -> torch.Tensor:
    """Single-cloud convenience wrapper; returns (d_feat,)."""
    dtype = next(encoder.parameters()).dtype
    points = torch.as_tensor(pc.points, dtype=dtype).unsqueeze(0)
    return encoder(points).squeeze(0)
