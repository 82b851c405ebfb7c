"""Tests for the binary checkpoint format."""

import struct

import numpy as np
import pytest

from trans2unet.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from trans2unet.tensor import Tensor, no_grad
from trans2unet.training import TrainState, train
from trans2unet.utils.exceptions import CheckpointError


def _read_layout(data: bytes) -> tuple[int, str, dict[str, tuple[int, ...]]]:
    """Walk the documented layout with struct alone."""
    assert data[:4] == b"T2U1"
    version, echo_len = struct.unpack_from("<II", data, 4)
    offset = 12
    echo = data[offset : offset + echo_len].decode("utf-8")
    offset += echo_len
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    shapes = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        name = data[offset + 2 : offset + 2 + name_len].decode("utf-8")
        offset += 2 + name_len
        (ndim,) = struct.unpack_from("<B", data, offset)
        shape = struct.unpack_from(f"<{ndim}I", data, offset + 1)
        offset += 1 + 4 * ndim + 4 * int(np.prod(shape))
        shapes[name] = shape
    assert offset == len(data)
    return version, echo, shapes


class TestEncoding:
    """Tests for the on-disk layout."""

    def test_layout(self, micro_model, micro_config):
        """Test the bytes follow the documented layout and list every tensor."""
        data = encode_checkpoint(micro_model, micro_config)
        version, echo, shapes = _read_layout(data)
        assert MAGIC == b"T2U1"
        assert version == FORMAT_VERSION
        assert "vit.layers = 1" in echo.splitlines()
        expected = {name: value.shape for name, value in micro_model.state_dict().items()}
        assert shapes == expected

    def test_training_state_is_echoed(self, micro_model, micro_config):
        """Test training checkpoints carry optimizer moments and state lines."""
        state = TrainState(micro_model, micro_config)
        _, echo, shapes = _read_layout(encode_checkpoint(micro_model, micro_config, state))
        assert "state.epoch = 0" in echo.splitlines()
        assert "state.scheduler_best = none" in echo.splitlines()
        assert "optim.m.head.weight" in shapes
        assert "optim.v.head.weight" in shapes


class TestRoundTrip:
    """Tests for save and load."""

    def test_rebuilt_model_is_bitwise_equal(self, micro_model, micro_config, tmp_path, rng):
        """Test a reloaded model produces the same eval logits."""
        micro_model.unet.down[0].first.bn.running_mean[:] = 0.25
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, micro_model, micro_config)
        checkpoint = load_checkpoint(path)
        assert checkpoint.config.model_dump() == micro_config.model_dump()
        assert checkpoint.state == {}

        rebuilt = checkpoint.build_model().eval()
        micro_model.eval()
        x = rng.random((2, 1, 16, 16))
        with no_grad():
            np.testing.assert_array_equal(rebuilt(Tensor(x)).data, micro_model(Tensor(x)).data)

    def test_optimizer_tensors_are_separated(self, micro_model, micro_config):
        """Test optimizer moments are split from model tensors."""
        state = TrainState(micro_model, micro_config)
        checkpoint = decode_checkpoint(encode_checkpoint(micro_model, micro_config, state))
        assert set(checkpoint.model_tensors) == set(micro_model.state_dict())
        assert len(checkpoint.optimizer_tensors) == 2 * len(list(micro_model.named_parameters()))
        assert checkpoint.state["best_epoch"] == "none"

    def test_no_temporary_file_left(self, micro_model, micro_config, tmp_path):
        """Test the atomic write leaves only the checkpoint."""
        save_checkpoint(tmp_path / "a.ckpt", micro_model, micro_config)
        assert [p.name for p in tmp_path.iterdir()] == ["a.ckpt"]


class TestCorruption:
    """Tests for rejected checkpoint bytes."""

    @pytest.fixture
    def data(self, micro_model, micro_config) -> bytes:
        return encode_checkpoint(micro_model, micro_config)

    def test_bad_magic(self, data):
        """Test a foreign file is rejected."""
        with pytest.raises(CheckpointError, match="magic"):
            decode_checkpoint(b"XXXX" + data[4:])

    def test_bad_version(self, data):
        """Test an unknown version is rejected."""
        with pytest.raises(CheckpointError, match="version 9"):
            decode_checkpoint(data[:4] + struct.pack("<I", 9) + data[8:])

    @pytest.mark.parametrize("keep", [6, 40, -3])
    def test_truncated(self, data, keep):
        """Test cutting the file anywhere is detected."""
        with pytest.raises(CheckpointError):
            decode_checkpoint(data[:keep])

    def test_trailing_bytes(self, data):
        """Test extra bytes after the last tensor are rejected."""
        with pytest.raises(CheckpointError, match="trailing"):
            decode_checkpoint(data + b"\0\0")

    @staticmethod
    def _with_echo(echo: bytes) -> bytes:
        return MAGIC + struct.pack("<II", FORMAT_VERSION, len(echo)) + echo + struct.pack("<I", 0)

    def test_undecodable_echo(self):
        """Test an echo that is not UTF-8 raises CheckpointError."""
        with pytest.raises(CheckpointError, match="echo"):
            decode_checkpoint(self._with_echo(b"\xff\xfe bad"))

    def test_state_line_without_value(self, micro_config):
        """Test a state line lacking '=' raises CheckpointError."""
        echo = (micro_config.to_text() + "state.epoch\n").encode("utf-8")
        with pytest.raises(CheckpointError, match="malformed state line"):
            decode_checkpoint(self._with_echo(echo))

    def test_invalid_config_echo(self):
        """Test an echo that is not a complete configuration raises CheckpointError."""
        with pytest.raises(CheckpointError, match="invalid config"):
            decode_checkpoint(self._with_echo(b"seed = 7\n"))

    def test_shape_mismatch_on_build(self, micro_model, micro_config):
        """Test tensors that do not fit the echoed config are rejected."""
        other = micro_config.with_overrides(["vit.embed_dim=8"])
        checkpoint = decode_checkpoint(encode_checkpoint(micro_model, other))
        with pytest.raises(CheckpointError):
            checkpoint.build_model()

    def test_missing_file(self, tmp_path):
        """Test an unreadable path raises CheckpointError."""
        with pytest.raises(CheckpointError, match="Cannot read"):
            load_checkpoint(tmp_path / "absent.ckpt")


class TestTrainingState:
    """Tests for restoring optimizer and scheduler state."""

    @pytest.fixture
    def trained(self, micro_model, micro_config, synthetic_samples) -> TrainState:
        return train(micro_model, synthetic_samples[:6], synthetic_samples[6:], micro_config)

    def test_build_state_restores_training(self, trained, micro_config):
        """Test epoch, step, schedule and Adam moments survive encode and decode."""
        data = encode_checkpoint(trained.model, micro_config, trained)
        restored = decode_checkpoint(data).build_state()

        assert restored.epoch == trained.epoch == 2
        assert restored.optimizer.t == trained.optimizer.t == 6
        assert restored.lr == trained.lr
        assert restored.scheduler.lr == trained.scheduler.lr
        assert restored.scheduler.best == trained.scheduler.best
        assert restored.scheduler.epochs_since_improvement == trained.scheduler.epochs_since_improvement
        assert restored.best_val_dsc == trained.best_val_dsc
        assert restored.best_epoch == trained.best_epoch
        assert restored.records == []
        for name in trained.optimizer.params:
            np.testing.assert_array_equal(restored.optimizer.m[name], trained.optimizer.m[name])
            np.testing.assert_array_equal(restored.optimizer.v[name], trained.optimizer.v[name])
        np.testing.assert_array_equal(
            restored.model.state_dict()["head.weight"], trained.model.state_dict()["head.weight"]
        )

    def test_restored_optimizer_steps_like_the_original(self, trained, micro_config):
        """Test one more Adam step moves the restored and the original model identically."""
        restored = decode_checkpoint(encode_checkpoint(trained.model, micro_config, trained)).build_state()
        for state in (trained, restored):
            for _, param in state.model.named_parameters():
                param.grad = np.full_like(param.data, 0.5)
            state.optimizer.step()
        for name, param in trained.model.named_parameters():
            np.testing.assert_array_equal(dict(restored.model.named_parameters())[name].data, param.data)

    def test_model_only_checkpoint(self, micro_model, micro_config):
        """Test a checkpoint without optimizer state cannot resume training."""
        checkpoint = decode_checkpoint(encode_checkpoint(micro_model, micro_config))
        with pytest.raises(CheckpointError, match="no training state"):
            checkpoint.build_state()

    @pytest.mark.parametrize(
        "key, value", [("step", "many"), ("best_epoch", "1.5"), ("lr", "-1.0"), ("epoch", "-2")]
    )
    def test_malformed_state_value(self, key, value, micro_model, micro_config):
        """Test unparsable or out-of-range state values raise CheckpointError."""
        state = TrainState(micro_model, micro_config)
        checkpoint = decode_checkpoint(encode_checkpoint(micro_model, micro_config, state))
        checkpoint.state[key] = value
        with pytest.raises(CheckpointError):
            checkpoint.build_state()

    def test_missing_state_value(self, micro_model, micro_config):
        """Test an absent state line is named in the error."""
        state = TrainState(micro_model, micro_config)
        checkpoint = decode_checkpoint(encode_checkpoint(micro_model, micro_config, state))
        del checkpoint.state["scheduler_counter"]
        with pytest.raises(CheckpointError, match="scheduler_counter"):
            checkpoint.build_state()
