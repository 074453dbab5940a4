"""Realism readout from the bridge's final hidden states.

Two routes share the SCORE position: a small MLP squashed through a sigmoid
(regression), and next-token logits restricted to the digit alphabet '0'..'6'
(generation). Quantization maps continuous labels onto that alphabet.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .bridge import Bridge, DIGIT_IDS

NUM_LEVELS = len(DIGIT_IDS) - 1  # labels quantize onto 0..6


class RealismDecoder(nn.Module):
    """d_model -> hidden -> 1 MLP; sigmoid keeps scores inside (0, 1).

    The hidden width defaults to d_model. Widening it speeds up low-lr
    optimization: with Adam's per-coordinate steps the output preactivation
    moves at a rate roughly proportional to the fan-in of the last layer.
    """

    def __init__(self, d_model: int, hidden: int | None = None):
        super().__init__()
        hidden = d_model if hidden is None else hidden
        self.fc1 = nn.Linear(d_model, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, 1)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.fc2(self.act(self.fc1(hidden))))


def score_position(segments) -> int:
    """Index of the SCORE token: the last position of the sequence."""
    if not segments or segments[-1] != "realism":
        raise ValueError("sequence does not end in a realism segment")
    return len(segments) - 1


def decode_realism(decoder: RealismDecoder, hidden: torch.Tensor) -> torch.Tensor:
    """Scalar score from the SCORE-position hidden state.

    hidden: (..., L, d_model); reads the final position.
    """
    return decoder(hidden[..., -1, :]).squeeze(-1)


def decode_generation(bridge: Bridge, hidden: torch.Tensor) -> torch.Tensor:
    """Score via argmax over digit logits at the SCORE position.

    Ties break toward the lowest digit. Returns dequantized scores in [0, 1].
    """
    logits = bridge.lm_logits(hidden[..., -1, :])
    digit_logits = logits[..., list(DIGIT_IDS)]
    level = torch.argmax(digit_logits, dim=-1)  # first max wins
    return level.to(torch.float64) / NUM_LEVELS


def digit_logits(bridge: Bridge, hidden: torch.Tensor) -> torch.Tensor:
    """Full-vocab logits at the SCORE position, for the generation loss."""
    return bridge.lm_logits(hidden[..., -1, :])


def quantize_score(y: float) -> int:
    """Continuous label in [0, 1] -> nearest level 0..6 (half rounds up)."""
    if not 0.0 <= y <= 1.0:
        raise ValueError(f"score {y} outside [0, 1]")
    return int(math.floor(y * NUM_LEVELS + 0.5))


def dequantize_level(level: int) -> float:
    """Level 0..6 -> continuous score level/6."""
    if not 0 <= level <= NUM_LEVELS:
        raise ValueError(f"level {level} outside [0, {NUM_LEVELS}]")
    return level / NUM_LEVELS


def quantized_target_id(y: float) -> int:
    """Continuous label -> token id of its digit ('0'.. '6')."""
    return DIGIT_IDS[quantize_score(y)]
