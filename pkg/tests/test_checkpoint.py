"""Checkpoint container: round trips, corruption detection, optimizer state."""

import struct

import pytest
import torch

from shaperealism.bridge import BridgeConfig, PromptSet
from shaperealism.checkpoint import (
    Checkpoint,
    CheckpointError,
    ChecksumMismatchError,
    load_checkpoint,
    restore_model,
    save_checkpoint,
)
from shaperealism.encoder import EncoderConfig
from shaperealism.geometry import PointCloud
from shaperealism.model import ModelConfig, build_model
from shaperealism.synthetic import make_sphere
from shaperealism.training import OptimizerState, TrainConfig, prepare_sample, train


def tiny_config():
    return ModelConfig(
        encoder=EncoderConfig(num_groups=8, group_size=8, d_model=32, hidden=32, max_points=512),
        bridge=BridgeConfig(d_model=32, n_layers=2, n_heads=2, max_seq=64),
        prompts=PromptSet(system_text="", realism_text="rate"),
        num_points=64,
    )


@pytest.fixture
def model():
    return build_model(tiny_config(), seed=0)


class TestRoundTrip:
    def test_weights_identical(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        restored, optim, train_cfg = restore_model(path)
        assert optim is None and train_cfg is None
        for (na, pa), (nb, pb) in zip(model.state_dict().items(),
                                      restored.state_dict().items()):
            assert na == nb
            assert torch.equal(pa, pb), na

    def test_forward_identical(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        restored, _, _ = restore_model(path)
        pc = PointCloud(points=make_sphere().vertices)
        assert model.score_point_cloud(pc) == restored.score_point_cloud(pc)

    def test_train_config_round_trip(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        cfg = TrainConfig(lr=3e-4, epochs=7, loss_mode="generation", seed=9)
        save_checkpoint(path, model, train_config=cfg)
        _, _, restored_cfg = restore_model(path)
        assert restored_cfg == cfg

    def test_metadata_preserved(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, metadata={"note": "hello", "steps": 12})
        ckpt = load_checkpoint(path)
        assert ckpt.header["metadata"] == {"note": "hello", "steps": 12}

    def test_optimizer_state_round_trip(self, model, tmp_path):
        samples = [prepare_sample(model, PointCloud(points=make_sphere().vertices), 0.5)]
        from shaperealism.model import trainable_parameters
        params = trainable_parameters(model)
        state = OptimizerState.init(params)
        train(model, samples, TrainConfig(lr=1e-3, epochs=2, batch_size=1), state)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, optimizer_state=state, train_config=TrainConfig())
        _, restored, _ = restore_model(path)
        assert restored is not None
        assert restored.step == state.step
        assert set(restored.exp_avg) == set(state.exp_avg)
        for n in state.exp_avg:
            assert torch.allclose(restored.exp_avg[n].float(), state.exp_avg[n].float(), atol=1e-7)
            assert torch.allclose(restored.exp_avg_sq[n].float(), state.exp_avg_sq[n].float(), atol=1e-7)


class TestCorruption:
    def test_flipped_payload_byte(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        blob = bytearray(path.read_bytes())
        (header_len,) = struct.unpack("<Q", bytes(blob[:8]))
        target = 8 + header_len + 100  # inside the tensor payload
        blob[target] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ChecksumMismatchError):
            load_checkpoint(path)

    def test_truncated_file(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_too_short_for_header(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"abc")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_wrong_format_name(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        blob = path.read_bytes()
        (header_len,) = struct.unpack("<Q", blob[:8])
        header = blob[8:8 + header_len].replace(b"shaperealism-checkpoint", b"other-format-abcdefghij")
        path.write_bytes(blob[:8] + header + blob[8 + header_len:])
        with pytest.raises(CheckpointError, match="not a"):
            load_checkpoint(path)

    def test_unsupported_version(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        blob = path.read_bytes()
        (header_len,) = struct.unpack("<Q", blob[:8])
        header = blob[8:8 + header_len].replace(b'"version": 1', b'"version": 9')
        assert header != blob[8:8 + header_len]
        path.write_bytes(blob[:8] + header + blob[8 + header_len:])
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_garbage_header(self, tmp_path):
        path = tmp_path / "m.ckpt"
        payload = b"{not json" + b"\x00" * 50
        path.write_bytes(struct.pack("<Q", 9) + payload)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


class TestAtomicity:
    def test_no_tmp_file_left(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        assert not (tmp_path / "m.ckpt.tmp").exists()

    def test_overwrite_existing(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        first = path.read_bytes()
        other = build_model(tiny_config(), seed=1)
        save_checkpoint(path, other)
        assert path.read_bytes() != first
        restored, _, _ = restore_model(path)
        assert torch.equal(
            next(iter(restored.state_dict().values())),
            next(iter(other.state_dict().values())),
        )
