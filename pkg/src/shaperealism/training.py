"""Finetuning loop and its pieces: losses, a functional AdamW, gradients.

The optimizer is deliberately explicit (per-tensor state dataclass, pure
step function) so checkpoints can carry it and tests can poke at it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .bridge import NumericDivergenceError, PromptSet, prompt_token_ids
from .heads import decode_realism, digit_logits, quantized_target_id
from .model import RealismModel, apply_trainability, trainable_parameters

LOSS_MODES = ("regression", "generation")
LOSS_FORMS = ("squared", "absolute")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    epochs: int = 3
    batch_size: int = 12
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss_mode: str = "regression"   # "regression" | "generation"
    loss_form: str = "squared"      # regression only: "squared" | "absolute"
    encoder_frozen: bool = True
    prompt_object_names: bool = False
    max_steps: int | None = None    # cap on optimizer steps, None = epochs decide
    seed: int = 0                   # drives the per-epoch shuffle

    def validate(self) -> "TrainConfig":
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if self.loss_form not in LOSS_FORMS:
            raise ValueError(f"loss_form must be one of {LOSS_FORMS}, got {self.loss_form!r}")
        if self.lr <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("lr must be positive, epochs >= 0, batch_size >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("betas must lie in [0, 1) and eps must be positive")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        return self


def regression_loss(pred: torch.Tensor, target: torch.Tensor, form: str = "squared") -> torch.Tensor:
    """Mean squared or mean absolute error over squashed scores."""
    if form == "squared":
        return torch.mean((pred - target) ** 2)
    if form == "absolute":
        return torch.mean(torch.abs(pred - target))
    raise ValueError(f"loss_form must be one of {LOSS_FORMS}, got {form!r}")


def generation_loss(logits: torch.Tensor, target_ids: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of SCORE-position logits against the target digit."""
    return F.cross_entropy(logits, target_ids)


# batching ------------------------------------------------------------------


@dataclass
class PreparedSample:
    """Preprocessing output cached once per sample for the whole run."""

    label: float
    prompts: PromptSet
    patches: torch.Tensor | None = None   # (G, S, 3), patch encoder route
    centers: torch.Tensor | None = None   # (G, 3)
    points: torch.Tensor | None = None    # (N, 3), pointnet route


def prepare_sample(model: RealismModel, points, label: float,
                   object_name: str | None = None,
                   use_object_names: bool = False) -> PreparedSample:
    """Run the deterministic preprocessing and freeze the result as tensors."""
    dtype = next(model.parameters()).dtype
    prompts = model.config.prompts
    if use_object_names and object_name:
        prompts = prompts.with_object(object_name)
    if model.config.encoder_kind == "pointnet":
        pc = model.prepare_point_cloud(points)
        return PreparedSample(label=label, prompts=prompts,
                              points=torch.as_tensor(pc.points, dtype=dtype))
    ps = model.prepare_patches(points)
    return PreparedSample(label=label, prompts=prompts,
                          patches=torch.as_tensor(ps.patches, dtype=dtype),
                          centers=torch.as_tensor(ps.centers, dtype=dtype))


def _group_shape_tokens(model: RealismModel, group: list[PreparedSample]) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    if model.config.encoder_kind == "pointnet":
        pts = torch.stack([s.points for s in group]).to(dtype)
        return model.encoder(pts).unsqueeze(1)  # (B, 1, d)
    patches = torch.stack([s.patches for s in group]).to(dtype)
    centers = torch.stack([s.centers for s in group]).to(dtype)
    return model.encoder(patches, centers)


def _group_hidden(model: RealismModel, group: list[PreparedSample]) -> torch.Tensor:
    """Forward one prompt-homogeneous group, returning final hidden states."""
    tokens = _group_shape_tokens(model, group)
    pre_ids, post_ids = prompt_token_ids(group[0].prompts)
    device, dtype = tokens.device, tokens.dtype
    pre = model.bridge.embed_tokens(torch.as_tensor(pre_ids, dtype=torch.long, device=device))
    post = model.bridge.embed_tokens(torch.as_tensor(post_ids, dtype=torch.long, device=device))
    b = tokens.shape[0]
    emb = torch.cat(
        [pre.to(dtype).expand(b, -1, -1), tokens, post.to(dtype).expand(b, -1, -1)], dim=1
    )
    return model.bridge(emb)


def batch_loss(model: RealismModel, batch: list[PreparedSample], cfg: TrainConfig) -> torch.Tensor:
    """Differentiable loss for a batch; samples may carry different prompts."""
    if not batch:
        raise ValueError("empty batch")
    groups: dict[str, list[PreparedSample]] = {}
    for s in batch:
        groups.setdefault(s.prompts.realism_text_final(), []).append(s)
    total = None
    for group in groups.values():
        hidden = _group_hidden(model, group)
        dtype = hidden.dtype
        if cfg.loss_mode == "generation":
            logits = digit_logits(model.bridge, hidden)
            targets = torch.as_tensor([quantized_target_id(s.label) for s in group], dtype=torch.long)
            part = generation_loss(logits, targets) * len(group)
        else:
            pred = decode_realism(model.decoder, hidden)
            target = torch.as_tensor([s.label for s in group], dtype=dtype)
            part = regression_loss(pred, target, cfg.loss_form) * len(group)
        total = part if total is None else total + part
    return total / len(batch)


def compute_gradients(model: RealismModel, batch: list[PreparedSample],
                      cfg: TrainConfig) -> tuple[float, dict[str, torch.Tensor]]:
    """Loss value plus gradients for every trainable tensor, by name."""
    cfg.validate()
    apply_trainability(model, cfg.encoder_frozen)
    params = trainable_parameters(model, cfg.encoder_frozen)
    for p in params.values():
        p.grad = None
    loss = batch_loss(model, batch, cfg)
    loss.backward()
    grads = {}
    for name, p in params.items():
        grads[name] = torch.zeros_like(p) if p.grad is None else p.grad.detach().clone()
    return float(loss.detach()), grads


# optimizer -----------------------------------------------------------------


@dataclass
class OptimizerState:
    """Explicit AdamW state: step count plus first/second moments per tensor."""

    step: int = 0
    exp_avg: dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: dict[str, torch.Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, params: dict[str, torch.Tensor]) -> "OptimizerState":
        return cls(
            step=0,
            exp_avg={n: torch.zeros_like(p) for n, p in params.items()},
            exp_avg_sq={n: torch.zeros_like(p) for n, p in params.items()},
        )


def adamw_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor],
               state: OptimizerState, cfg: TrainConfig) -> OptimizerState:
    """One decoupled-weight-decay Adam update, in place on the params.

    Decay only touches matrices and higher (ndim >= 2); biases and norm
    gains go undecayed. Moments use standard bias correction.
    """
    if set(params) != set(grads):
        raise ValueError("params and grads must cover the same tensor names")
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            m = state.exp_avg[name]
            v = state.exp_avg_sq[name]
            m.mul_(cfg.beta1).add_(g, alpha=1.0 - cfg.beta1)
            v.mul_(cfg.beta2).addcmul_(g, g, value=1.0 - cfg.beta2)
            if cfg.weight_decay and p.ndim >= 2:
                p.mul_(1.0 - cfg.lr * cfg.weight_decay)
            denom = (v / bc2).sqrt_().add_(cfg.eps)
            p.addcdiv_(m, denom, value=-cfg.lr / bc1)
    return state


# loop ----------------------------------------------------------------------


@dataclass
class TrainResult:
    history: list[tuple[int, float]]  # (step, batch loss)
    final_loss: float
    steps: int


def train(model: RealismModel, samples: list[PreparedSample], cfg: TrainConfig,
          state: OptimizerState | None = None) -> TrainResult:
    """Seeded epoch loop over prepared samples.

    A non-finite loss aborts immediately rather than poisoning the weights.
    """
    cfg.validate()
    if not samples:
        raise ValueError("no training samples")
    apply_trainability(model, cfg.encoder_frozen)
    params = trainable_parameters(model, cfg.encoder_frozen)
    if state is None:
        state = OptimizerState.init(params)
    rng = np.random.default_rng(cfg.seed)
    history: list[tuple[int, float]] = []
    step = 0
    done = False
    for _ in range(cfg.epochs):
        if done:
            break
        order = rng.permutation(len(samples))
        for lo in range(0, len(samples), cfg.batch_size):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
            batch = [samples[i] for i in order[lo:lo + cfg.batch_size]]
            loss, grads = compute_gradients(model, batch, cfg)
            if not math.isfinite(loss):
                raise NumericDivergenceError(f"non-finite loss {loss} at step {step}")
            adamw_step(params, grads, state, cfg)
            step += 1
            history.append((step, loss))
    final = history[-1][1] if history else float("nan")
    return TrainResult(history=history, final_loss=final, steps=step)


def evaluate_loss(model: RealismModel, samples: list[PreparedSample], cfg: TrainConfig) -> float:
    """Batch loss over all samples with no gradient tracking."""
    with torch.no_grad():
        return float(batch_loss(model, samples, cfg))


# finite differences --------------------------------------------------------


def finite_difference_gradients(loss_fn, params: dict[str, torch.Tensor], eps: float = 1e-5,
                                samples_per_tensor: int = 3, seed: int = 0,
                                ) -> dict[str, list[tuple[tuple[int, ...], float]]]:
    """Central-difference gradient estimates at sampled coordinates.

    loss_fn re-evaluates the full objective from current parameter values.
    Each tensor contributes samples_per_tensor coordinates drawn without
    replacement (all of them when the tensor is small).
    """
    rng = np.random.default_rng(seed)
    out: dict[str, list[tuple[tuple[int, ...], float]]] = {}
    for name, p in params.items():
        n = p.numel()
        k = min(samples_per_tensor, n)
        flat_idx = rng.choice(n, size=k, replace=False)
        entries = []
        flat = p.data.view(-1)
        for fi in flat_idx:
            fi = int(fi)
            orig = flat[fi].item()
            flat[fi] = orig + eps
            up = loss_fn()
            flat[fi] = orig - eps
            down = loss_fn()
            flat[fi] = orig
            idx = np.unravel_index(fi, tuple(p.shape)) if p.ndim else ()
            entries.append((tuple(int(i) for i in idx), (up - down) / (2.0 * eps)))
        out[name] = entries
    return out
