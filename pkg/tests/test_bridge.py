"""Transformer bridge: tokenization, masking, adapters, prompt assembly."""

import numpy as np
import pytest
import torch

from shaperealism.bridge import (
    BOS_ID,
    EOS_ID,
    SCORE_ID,
    VOCAB_SIZE,
    Bridge,
    BridgeConfig,
    DEFAULT_REALISM_PROMPT,
    DEFAULT_SYSTEM_PROMPT,
    FinetuneMode,
    PromptSet,
    SequenceTooLongError,
    assemble_sequence,
    bridge_parameter_names,
    detokenize_text,
    prompt_token_ids,
    tokenize_text,
)


def tiny_config(mode=None, **kw):
    return BridgeConfig(d_model=32, n_layers=2, n_heads=2, max_seq=64,
                        finetune_mode=mode or FinetuneMode.full(), **kw)


def build(config, seed=0):
    torch.manual_seed(seed)
    return Bridge(config)


class TestTokenizer:
    def test_byte_identity(self):
        assert tokenize_text("A") == [65]
        assert tokenize_text("rate") == [114, 97, 116, 101]

    def test_roundtrip(self):
        s = "Evaluate the quality."
        assert detokenize_text(tokenize_text(s)) == s

    def test_special_ids(self):
        assert (BOS_ID, EOS_ID, SCORE_ID) == (256, 257, 258)
        assert VOCAB_SIZE == 259

    def test_digit_ids_are_ascii(self):
        assert tokenize_text("0")[0] == 48
        assert tokenize_text("6")[0] == 54

    def test_non_ascii_utf8_bytes(self):
        ids = tokenize_text("é")
        assert ids == [0xC3, 0xA9]
        assert detokenize_text(ids) == "é"


class TestFinetuneMode:
    def test_parse_full(self):
        assert FinetuneMode.parse("full").kind == "full"

    def test_parse_lora_rank(self):
        m = FinetuneMode.parse("lora:8")
        assert m.kind == "lora" and m.rank == 8

    def test_parse_prefix(self):
        m = FinetuneMode.parse("prefix:4")
        assert m.kind == "prefix" and m.prefix_length == 4

    def test_parse_defaults(self):
        assert FinetuneMode.parse("lora").rank == 4
        assert FinetuneMode.parse("prefix").prefix_length == 8

    def test_str_roundtrip(self):
        for text in ("full", "lora:2", "lora:16", "prefix:8"):
            assert str(FinetuneMode.parse(text)) == text

    def test_parse_garbage(self):
        with pytest.raises(ValueError):
            FinetuneMode.parse("adapter:3")
        with pytest.raises(ValueError):
            FinetuneMode.parse("lora:0")

    def test_rank_exceeding_width(self):
        with pytest.raises(ValueError):
            tiny_config(FinetuneMode.lora(64)).validate()


class TestPrompts:
    def test_defaults_mention_point_cloud(self):
        assert "point cloud" in DEFAULT_REALISM_PROMPT
        assert DEFAULT_SYSTEM_PROMPT

    def test_with_object_inserts_name(self):
        p = PromptSet().with_object("chair")
        assert "chair" in p.realism_text_final()

    def test_without_object_unchanged(self):
        p = PromptSet()
        assert p.realism_text_final() == p.realism_text

    def test_prompt_token_ids_structure(self):
        pre, post = prompt_token_ids(PromptSet(system_text="ab", realism_text="c"))
        assert pre == [BOS_ID, 97, 98]
        assert post == [99, SCORE_ID]


class TestBridgeForward:
    def test_output_shape(self):
        cfg = tiny_config()
        b = build(cfg)
        emb = b.tok_emb(torch.tensor([[BOS_ID, 65, SCORE_ID]]))
        out = b(emb)
        assert out.shape == (1, 3, 32)

    def test_causality(self):
        # changing a later position must not affect earlier hidden states
        cfg = tiny_config()
        b = build(cfg)
        ids = torch.tensor([[BOS_ID, 65, 66, 67, SCORE_ID]])
        emb = b.tok_emb(ids)
        base = b(emb).detach()
        mutated = emb.clone()
        mutated[0, 3] += 1.0
        out = b(mutated).detach()
        assert torch.equal(out[0, :3], base[0, :3])
        assert not torch.allclose(out[0, 3], base[0, 3])

    def test_attention_rows_sum_to_one(self):
        cfg = tiny_config(FinetuneMode.prefix(4))
        b = build(cfg)
        emb = b.tok_emb(torch.tensor([[BOS_ID, 65, 66, SCORE_ID]]))
        sink = []
        b(emb, attn_sink=sink)
        assert len(sink) == cfg.n_layers
        for rows in sink:
            # (batch, heads, q, k) with prefix columns included
            assert rows.shape[-1] == 4 + 4
            assert torch.allclose(rows.sum(dim=-1), torch.ones_like(rows.sum(dim=-1)), atol=1e-6)

    def test_sequence_too_long(self):
        cfg = tiny_config()
        b = build(cfg)
        emb = torch.zeros(1, cfg.max_seq + 1, cfg.d_model)
        with pytest.raises(SequenceTooLongError):
            b(emb)

    def test_nonfinite_input_rejected(self):
        cfg = tiny_config()
        b = build(cfg)
        emb = torch.full((1, 3, 32), float("nan"))
        with pytest.raises(FloatingPointError):
            b(emb)


class TestLora:
    def test_zero_init_is_identity(self):
        # LoRA B starts at zero: forward must equal the full-mode network
        full = build(tiny_config(FinetuneMode.full()), seed=3)
        lora = build(tiny_config(FinetuneMode.lora(4)), seed=3)
        # copy base weights over (module trees differ: lora wraps q/v)
        sd = {k: v.clone() for k, v in full.state_dict().items()}
        mapped = {}
        for k, v in lora.state_dict().items():
            if k.endswith("lora_a") or k.endswith("lora_b"):
                mapped[k] = v  # keep adapter tensors (b is zero)
            else:
                mapped[k] = sd[k.replace(".base.", ".")] if ".base." in k else sd[k]
        lora.load_state_dict(mapped)
        ids = torch.tensor([[BOS_ID, 65, 66, SCORE_ID]])
        a = full(full.tok_emb(ids))
        b = lora(lora.tok_emb(ids))
        assert torch.equal(a, b)

    def test_nonzero_lora_changes_output(self):
        lora = build(tiny_config(FinetuneMode.lora(4)), seed=3)
        ids = torch.tensor([[BOS_ID, 65, SCORE_ID]])
        base_out = lora(lora.tok_emb(ids)).detach()
        with torch.no_grad():
            for name, p in lora.named_parameters():
                if name.endswith("lora_b"):
                    p.add_(0.05)
        changed = lora(lora.tok_emb(ids)).detach()
        assert not torch.allclose(base_out, changed)

    def test_lora_only_on_q_and_v(self):
        lora = build(tiny_config(FinetuneMode.lora(2)))
        names = [n for n, _ in lora.named_parameters() if "lora" in n]
        assert names
        assert all(("q_proj" in n) or ("v_proj" in n) for n in names)


class TestPrefix:
    def test_prefix_params_exist(self):
        b = build(tiny_config(FinetuneMode.prefix(4)))
        banks = [p for n, p in b.named_parameters() if "prefix_kv" in n]
        assert len(banks) == 2  # one per layer
        assert banks[0].shape == (2, 4, 2, 16)

    def test_prefix_changes_output(self):
        b = build(tiny_config(FinetuneMode.prefix(4)), seed=1)
        ids = torch.tensor([[BOS_ID, 65, SCORE_ID]])
        base = b(b.tok_emb(ids)).detach()
        with torch.no_grad():
            for n, p in b.named_parameters():
                if "prefix_kv" in n:
                    p.add_(0.5)
        assert not torch.allclose(b(b.tok_emb(ids)).detach(), base)


class TestAssembly:
    def test_segments_and_length(self):
        cfg = tiny_config()
        b = build(cfg)
        prompts = PromptSet(system_text="ab", realism_text="xy")
        shape_tokens = torch.zeros(5, cfg.d_model)
        seq = assemble_sequence(prompts, shape_tokens, b)
        # [BOS a b] [5 shape] [x y SCORE]
        assert seq.embeddings.shape == (3 + 5 + 3, cfg.d_model)
        kinds = list(seq.segments)
        assert kinds == ["system"] * 3 + ["shape"] * 5 + ["realism"] * 3

    def test_wrong_token_width_rejected(self):
        cfg = tiny_config()
        b = build(cfg)
        with pytest.raises(ValueError):
            assemble_sequence(PromptSet(), torch.zeros(4, cfg.d_model + 1), b)

    def test_too_long_rejected(self):
        cfg = tiny_config()
        b = build(cfg)
        with pytest.raises(SequenceTooLongError):
            assemble_sequence(PromptSet(system_text="s" * 60), torch.zeros(8, cfg.d_model), b)


class TestParameterNames:
    def test_full_mode_selects_everything(self):
        b = build(tiny_config(FinetuneMode.full()))
        names = bridge_parameter_names(b)
        assert set(names) == {n for n, _ in b.named_parameters()}

    def test_lora_mode_selects_adapters_only(self):
        b = build(tiny_config(FinetuneMode.lora(4)))
        names = bridge_parameter_names(b)
        assert names
        assert all("lora_" in n for n in names)

    def test_prefix_mode_selects_banks_only(self):
        b = build(tiny_config(FinetuneMode.prefix(4)))
        names = bridge_parameter_names(b)
        assert names
        assert all("prefix_kv" in n for n in names)
