"""Decoder-only transformer bridging shape tokens to realism.

The input sequence is [BOS, system-prompt bytes, shape tokens, realism-
prompt bytes, SCORE]. Text uses a byte-level tokenizer (one token per UTF-8
byte, specials above 255). The bridge is a pre-norm causal transformer with
three finetune modes: full, LoRA adapters on the Q/V projections, and
per-layer prefix key/value banks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import torch
import torch.nn as nn
import torch.nn.functional as F

BOS_ID = 256
EOS_ID = 257
SCORE_ID = 258
VOCAB_SIZE = 259
# byte values of '0'..'6', the quantized-score alphabet for generation mode
DIGIT_IDS = tuple(range(ord("0"), ord("6") + 1))

DEFAULT_LORA_RANK = 4
DEFAULT_PREFIX_LENGTH = 8


class SequenceTooLongError(ValueError):
    """Assembled sequence exceeds the configured max_seq."""


class NumericDivergenceError(FloatingPointError):
    """Non-finite activation, tagged with the layer that produced it."""


def tokenize_text(s: str) -> list[int]:
    """One token per UTF-8 byte; ids equal byte values."""
    return list(s.encode("utf-8"))


def detokenize_text(ids) -> str:
    """Inverse of tokenize_text; rejects special (non-byte) ids."""
    ids = list(ids)
    bad = [i for i in ids if not 0 <= i <= 255]
    if bad:
        raise ValueError(f"non-byte token ids {bad} cannot be detokenized")
    return bytes(ids).decode("utf-8")


@dataclass(frozen=True)
class FinetuneMode:
    """Which bridge parameters train: all, LoRA adapters, or prefix banks."""

    kind: str                      # "full" | "lora" | "prefix"
    rank: int | None = None        # lora only
    prefix_length: int | None = None  # prefix only

    @classmethod
    def full(cls) -> "FinetuneMode":
        return cls(kind="full")

    @classmethod
    def lora(cls, rank: int) -> "FinetuneMode":
        return cls(kind="lora", rank=rank)

    @classmethod
    def prefix(cls, length: int) -> "FinetuneMode":
        return cls(kind="prefix", prefix_length=length)

    @classmethod
    def parse(cls, spec: str) -> "FinetuneMode":
        """Parse "full", "lora[:<rank>]", or "prefix[:<length>]"."""
        head, _, arg = spec.partition(":")
        if head == "full" and not arg:
            return cls.full()
        if head == "lora" and (not arg or (arg.isdigit() and int(arg) > 0)):
            return cls.lora(int(arg) if arg else DEFAULT_LORA_RANK)
        if head == "prefix" and (not arg or (arg.isdigit() and int(arg) > 0)):
            return cls.prefix(int(arg) if arg else DEFAULT_PREFIX_LENGTH)
        raise ValueError(f"bad finetune mode {spec!r}; expected full, lora:<rank>, or prefix:<length>")

    def __str__(self) -> str:
        if self.kind == "lora":
            return f"lora:{self.rank}"
        if self.kind == "prefix":
            return f"prefix:{self.prefix_length}"
        return "full"

    def validate(self, d_model: int) -> "FinetuneMode":
        if self.kind not in ("full", "lora", "prefix"):
            raise ValueError(f"unknown finetune mode kind {self.kind!r}")
        if self.kind == "lora" and not (self.rank and 1 <= self.rank <= d_model):
            raise ValueError(f"lora rank must be in [1, {d_model}], got {self.rank}")
        if self.kind == "prefix" and not (self.prefix_length and self.prefix_length >= 1):
            raise ValueError(f"prefix length must be >= 1, got {self.prefix_length}")
        return self


DEFAULT_SYSTEM_PROMPT = (
    "A chat between a curious user and an artificial intelligence assistant. "
    "The assistant gives helpful, detailed, and polite answers to the user's questions."
)
DEFAULT_REALISM_PROMPT = (
    "Evaluate the quality of this point cloud object and provide your rating of its realism."
)


@dataclass(frozen=True)
class PromptSet:
    """System and realism prompt texts plus the object-name substitution flag."""

    system_text: str = DEFAULT_SYSTEM_PROMPT
    realism_text: str = DEFAULT_REALISM_PROMPT
    include_object_name: bool = False
    object_name: str | None = None

    def validate(self) -> "PromptSet":
        if not self.realism_text:
            raise ValueError("realism_text must be non-empty")
        if self.include_object_name != (self.object_name is not None):
            raise ValueError("object_name must be present exactly when include_object_name is set")
        return self

    def with_object(self, object_name: str | None) -> "PromptSet":
        if object_name is None:
            return replace(self, include_object_name=False, object_name=None)
        return replace(self, include_object_name=True, object_name=object_name)

    def realism_text_final(self) -> str:
        """Realism prompt with "object" swapped for the object name when enabled."""
        self.validate()
        if self.include_object_name:
            return self.realism_text.replace("object", self.object_name, 1)
        return self.realism_text


@dataclass(frozen=True)
class BridgeConfig:
    vocab_size: int = VOCAB_SIZE
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    max_seq: int = 256
    finetune_mode: FinetuneMode = FinetuneMode.full()

    def validate(self) -> "BridgeConfig":
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.vocab_size < VOCAB_SIZE:
            raise ValueError(f"vocab_size must cover bytes and specials (>= {VOCAB_SIZE})")
        self.finetune_mode.validate(self.d_model)
        return self


class LoRALinear(nn.Module):
    """Linear layer with a low-rank delta: W x + (alpha/r) * B (A x).

    B starts at zero, so a fresh adapter is an exact no-op and the base
    weights can stay frozen while only A/B train.
    """

    def __init__(self, in_features: int, out_features: int, rank: int):
        super().__init__()
        self.base = nn.Linear(in_features, out_features)
        self.rank = rank
        self.alpha = float(rank)
        self.lora_a = nn.Parameter(torch.empty(rank, in_features))
        self.lora_b = nn.Parameter(torch.zeros(out_features, rank))
        nn.init.normal_(self.lora_a, mean=0.0, std=0.02)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        delta = F.linear(F.linear(x, self.lora_a), self.lora_b)
        return self.base(x) + (self.alpha / self.rank) * delta


class CausalSelfAttention(nn.Module):
    """Multi-head causal attention with optional prefix key/value banks."""

    def __init__(self, cfg: BridgeConfig):
        super().__init__()
        d, mode = cfg.d_model, cfg.finetune_mode
        make_qv = (lambda: LoRALinear(d, d, mode.rank)) if mode.kind == "lora" else (lambda: nn.Linear(d, d))
        self.q_proj = make_qv()
        self.k_proj = nn.Linear(d, d)
        self.v_proj = make_qv()
        self.o_proj = nn.Linear(d, d)
        self.n_heads = cfg.n_heads
        self.head_dim = d // cfg.n_heads
        if mode.kind == "prefix":
            # learned (K, V) banks every position may attend to, per layer
            self.prefix_kv = nn.Parameter(
                torch.empty(2, mode.prefix_length, cfg.n_heads, self.head_dim).normal_(0.0, 0.02)
            )
        else:
            self.prefix_kv = None

    def forward(self, x: torch.Tensor, attn_sink: list | None = None) -> torch.Tensor:
        b, t, d = x.shape
        q = self.q_proj(x).view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(x).view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(x).view(b, t, self.n_heads, self.head_dim).transpose(1, 2)

        p = 0
        if self.prefix_kv is not None:
            p = self.prefix_kv.shape[1]
            pk = self.prefix_kv[0].permute(1, 0, 2).unsqueeze(0).expand(b, -1, -1, -1)
            pv = self.prefix_kv[1].permute(1, 0, 2).unsqueeze(0).expand(b, -1, -1, -1)
            k = torch.cat([pk.to(k.dtype), k], dim=2)
            v = torch.cat([pv.to(v.dtype), v], dim=2)

        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        # queries see the whole prefix plus their causal past
        causal = torch.ones(t, p + t, dtype=torch.bool, device=x.device)
        causal[:, p:] = torch.tril(torch.ones(t, t, dtype=torch.bool, device=x.device))
        att = att.masked_fill(~causal, float("-inf"))
        att = F.softmax(att, dim=-1)
        if attn_sink is not None:
            attn_sink.append(att.detach())
        y = (att @ v).transpose(1, 2).reshape(b, t, d)
        return self.o_proj(y)


class Block(nn.Module):
    def __init__(self, cfg: BridgeConfig):
        super().__init__()
        d = cfg.d_model
        self.ln1 = nn.LayerNorm(d)
        self.attn = CausalSelfAttention(cfg)
        self.ln2 = nn.LayerNorm(d)
        self.mlp = nn.Sequential(nn.Linear(d, 4 * d), nn.GELU(), nn.Linear(4 * d, d))

    def forward(self, x: torch.Tensor, attn_sink: list | None = None) -> torch.Tensor:
        x = x + self.attn(self.ln1(x), attn_sink=attn_sink)
        return x + self.mlp(self.ln2(x))


class Bridge(nn.Module):
    """Pre-norm decoder-only transformer over embedded sequences.

    Position is implicit in the causal mask (no positional table); shape
    tokens carry their own learned center encoding from the patch encoder.
    """

    def __init__(self, cfg: BridgeConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(module: nn.Module):
        if isinstance(module, nn.Linear):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.Embedding):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)
        elif isinstance(module, LoRALinear):
            nn.init.normal_(module.lora_a, mean=0.0, std=0.02)
            nn.init.zeros_(module.lora_b)

    def embed_tokens(self, ids: torch.Tensor) -> torch.Tensor:
        return self.tok_emb(ids)

    def forward(self, x: torch.Tensor, attn_sink: list | None = None) -> torch.Tensor:
        # x: (B, L, d_model) embedded sequence -> hidden states of same shape
        t = x.shape[-2]
        limit = self.cfg.max_seq
        if t > limit:
            raise SequenceTooLongError(f"sequence length {t} exceeds max_seq {limit}")
        if not torch.isfinite(x).all():
            raise NumericDivergenceError("non-finite input embedding")
        for i, block in enumerate(self.blocks):
            x = block(x, attn_sink=attn_sink)
            if not torch.isfinite(x).all():
                raise NumericDivergenceError(f"non-finite activation after block {i}")
        return self.ln_f(x)

    def lm_logits(self, hidden: torch.Tensor) -> torch.Tensor:
        """Next-token logits via the tied embedding table."""
        return hidden @ self.tok_emb.weight.t()


@dataclass(frozen=True)
class EmbeddedSequence:
    """Embedded input (L, d_model) with per-position segment labels."""

    embeddings: torch.Tensor
    segments: tuple[str, ...]  # each "system" | "shape" | "realism"

    def __len__(self) -> int:
        return len(self.segments)


def prompt_token_ids(prompts: PromptSet) -> tuple[list[int], list[int]]:
    """Token ids before and after the shape tokens: [BOS, system...] and
    [realism..., SCORE]."""
    pre = [BOS_ID] + tokenize_text(prompts.system_text)
    post = tokenize_text(prompts.realism_text_final()) + [SCORE_ID]
    return pre, post


def assemble_sequence(prompts: PromptSet, shape_tokens: torch.Tensor, bridge: Bridge) -> EmbeddedSequence:
    """Concatenate [BOS + system, shape tokens, realism + SCORE] embeddings."""
    if shape_tokens.ndim != 2 or shape_tokens.shape[1] != bridge.cfg.d_model:
        raise ValueError(f"shape tokens must be (G, {bridge.cfg.d_model}), got {tuple(shape_tokens.shape)}")
    pre_ids, post_ids = prompt_token_ids(prompts)
    total = len(pre_ids) + len(shape_tokens) + len(post_ids)
    if total > bridge.cfg.max_seq:
        raise SequenceTooLongError(f"assembled length {total} exceeds max_seq {bridge.cfg.max_seq}")
    device = shape_tokens.device
    pre = bridge.embed_tokens(torch.as_tensor(pre_ids, dtype=torch.long, device=device))
    post = bridge.embed_tokens(torch.as_tensor(post_ids, dtype=torch.long, device=device))
    emb = torch.cat([pre.to(shape_tokens.dtype), shape_tokens, post.to(shape_tokens.dtype)], dim=0)
    segments = ("system",) * len(pre_ids) + ("shape",) * len(shape_tokens) + ("realism",) * len(post_ids)
    return EmbeddedSequence(embeddings=emb, segments=segments)


def bridge_parameter_names(bridge: Bridge) -> list[str]:
    """Names of the bridge tensors selected by its finetune mode."""
    mode = bridge.cfg.finetune_mode
    names = []
    for name, _ in bridge.named_parameters():
        if mode.kind == "full":
            names.append(name)
        elif mode.kind == "lora" and ("lora_a" in name or "lora_b" in name):
            names.append(name)
        elif mode.kind == "prefix" and "prefix_kv" in name:
            names.append(name)
    return names
