"""Score readout heads: regression MLP, digit decoding, quantization."""

import pytest
import torch

from shaperealism.bridge import Bridge, BridgeConfig, DIGIT_IDS, FinetuneMode
from shaperealism.heads import (
    NUM_LEVELS,
    RealismDecoder,
    decode_generation,
    decode_realism,
    dequantize_level,
    digit_logits,
    quantize_score,
    quantized_target_id,
    score_position,
)


class TestRealismDecoder:
    def test_output_in_open_interval(self):
        torch.manual_seed(0)
        dec = RealismDecoder(8)
        out = dec(torch.randn(100, 8) * 10.0)
        assert ((out > 0.0) & (out < 1.0)).all()

    def test_default_hidden_matches_d_model(self):
        dec = RealismDecoder(16)
        assert dec.fc1.out_features == 16
        assert dec.fc2.in_features == 16

    def test_explicit_hidden(self):
        dec = RealismDecoder(16, hidden=64)
        assert dec.fc1.out_features == 64
        assert dec.fc2.in_features == 64
        assert dec.fc2.out_features == 1

    def test_decode_reads_last_position(self):
        torch.manual_seed(1)
        dec = RealismDecoder(8)
        hidden = torch.randn(2, 5, 8)
        out = decode_realism(dec, hidden)
        assert out.shape == (2,)
        direct = dec(hidden[:, -1, :]).squeeze(-1)
        assert torch.equal(out, direct)


class TestScorePosition:
    def test_last_position(self):
        assert score_position(["system", "shape", "realism"]) == 2

    def test_rejects_wrong_tail(self):
        with pytest.raises(ValueError):
            score_position(["system", "shape"])
        with pytest.raises(ValueError):
            score_position([])


class TestGenerationDecode:
    def cfg(self):
        return BridgeConfig(d_model=16, n_layers=1, n_heads=2, max_seq=16,
                            finetune_mode=FinetuneMode.full())

    def test_scores_quantized_to_sevenths(self):
        torch.manual_seed(0)
        b = Bridge(self.cfg())
        hidden = torch.randn(4, 3, 16)
        out = decode_generation(b, hidden)
        assert out.shape == (4,)
        for v in out.tolist():
            assert abs(v * NUM_LEVELS - round(v * NUM_LEVELS)) < 1e-12
            assert 0.0 <= v <= 1.0

    def test_matches_argmax_over_digit_logits(self):
        torch.manual_seed(2)
        b = Bridge(self.cfg())
        hidden = torch.randn(3, 2, 16)
        logits = digit_logits(b, hidden)[..., list(DIGIT_IDS)]
        expect = torch.argmax(logits, dim=-1).double() / NUM_LEVELS
        assert torch.equal(decode_generation(b, hidden), expect)


class TestQuantization:
    def test_level_boundaries(self):
        assert quantize_score(0.0) == 0
        assert quantize_score(1.0) == 6
        # halfway between levels 0 and 1 is 1/12; half rounds up
        assert quantize_score(0.5 / NUM_LEVELS) == 1
        assert quantize_score(0.49 / NUM_LEVELS) == 0

    def test_roundtrip_on_grid(self):
        for level in range(NUM_LEVELS + 1):
            assert quantize_score(dequantize_level(level)) == level

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            quantize_score(-0.01)
        with pytest.raises(ValueError):
            quantize_score(1.01)
        with pytest.raises(ValueError):
            dequantize_level(7)
        with pytest.raises(ValueError):
            dequantize_level(-1)

    def test_target_id_is_ascii_digit(self):
        assert quantized_target_id(0.0) == ord("0")
        assert quantized_target_id(1.0) == ord("6")
        assert quantized_target_id(0.5) == ord("3")
