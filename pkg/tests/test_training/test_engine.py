"""Tests for the training loop and evaluation."""

import numpy as np
import pandas as pd
import pytest

from trans2unet.checkpoint import load_checkpoint
from trans2unet.data import stack_batch
from trans2unet.models import ConfusionCounts, LossConfig, Trans2UnetModel
from trans2unet.training import build_report, evaluate, predict_probabilities, train
from trans2unet.training.engine import BEST_CHECKPOINT, FINAL_CHECKPOINT, METRICS_FILE
from trans2unet.utils.exceptions import DatasetError, ValidationError
from trans2unet.utils.random import stream


class TestPredict:
    """Tests for probability prediction."""

    def test_shape_and_range(self, micro_model, synthetic_samples):
        """Test probabilities are [N, 1, H, W] in (0, 1) across batches."""
        images, _ = stack_batch(synthetic_samples)
        probs = predict_probabilities(micro_model.eval(), images, batch_size=3)
        assert probs.shape == (8, 1, 16, 16)
        assert ((probs > 0.0) & (probs < 1.0)).all()

    def test_batch_size_does_not_matter_in_eval(self, micro_model, synthetic_samples):
        """Test eval-mode predictions are independent of the batching."""
        images, _ = stack_batch(synthetic_samples)
        micro_model.eval()
        np.testing.assert_allclose(
            predict_probabilities(micro_model, images, batch_size=1),
            predict_probabilities(micro_model, images, batch_size=8),
            rtol=1e-5,
            atol=1e-6,
        )


class TestBuildReport:
    """Tests for report aggregation."""

    def test_macro_and_micro(self):
        """Test macro averages images while micro pools counts."""
        counts = [ConfusionCounts(tp=1, fp=0, fn=0, tn=3), ConfusionCounts(tp=0, fp=0, fn=3, tn=1)]
        report = build_report("test", ["a", "b"], counts, [0.2, 0.4])
        assert report.mean_dsc == pytest.approx(0.5)
        assert report.micro["dsc"] == pytest.approx(2.0 / 5.0)
        assert report.mean_loss == pytest.approx(0.3)
        assert report.counts.total == 8
        assert list(report.per_image["id"]) == ["a", "b"]
        assert {"loss", "dsc", "iou", "tp", "fp", "fn", "tn"} <= set(report.per_image.columns)

    def test_aggregates_are_plain(self):
        """Test the JSON summary omits the table."""
        report = build_report("val", ["a"], [ConfusionCounts(tp=2, tn=2)], [0.1])
        summary = report.aggregates()
        assert summary["images"] == 1
        assert summary["counts"] == {"tp": 2, "fp": 0, "fn": 0, "tn": 2}
        assert "per_image" not in summary

    def test_empty(self):
        """Test an empty split cannot be reported."""
        with pytest.raises(DatasetError):
            build_report("test", [], [], [])


class TestEvaluate:
    """Tests for split evaluation."""

    def test_report(self, micro_model, synthetic_samples):
        """Test one row per image and metrics within [0, 1]."""
        report = evaluate(micro_model, synthetic_samples[:3], LossConfig(), split="val")
        assert report.split == "val"
        assert len(report.per_image) == 3
        assert 0.0 <= report.mean_dsc <= 1.0
        assert report.mean_loss > 0.0
        assert not micro_model.training

    def test_empty(self, micro_model):
        """Test evaluating no samples fails."""
        with pytest.raises(DatasetError):
            evaluate(micro_model, [], LossConfig())


class TestTrain:
    """Tests for the epoch loop."""

    def test_records_and_outputs(self, micro_model, micro_config, synthetic_samples, tmp_path):
        """Test one record per epoch and the metrics log and checkpoints on disk."""
        state = train(micro_model, synthetic_samples[:6], synthetic_samples[6:], micro_config, tmp_path)
        assert state.epoch == micro_config.train.epochs
        assert [r.epoch for r in state.records] == [1, 2]
        assert state.records[0].lr == micro_config.optim.lr
        assert all(np.isfinite(r.train_loss) for r in state.records)
        assert state.best_epoch in (1, 2)

        log = pd.read_csv(tmp_path / METRICS_FILE)
        assert list(log.columns) == ["epoch", "train_loss", "val_loss", "val_dsc", "val_iou", "lr"]
        assert list(log["epoch"]) == [1, 2]
        assert (tmp_path / BEST_CHECKPOINT).is_file()
        assert (tmp_path / FINAL_CHECKPOINT).is_file()

        final = load_checkpoint(tmp_path / FINAL_CHECKPOINT)
        assert final.state["epoch"] == "2"
        assert final.optimizer_tensors

    def test_updates_weights(self, micro_model, micro_config, synthetic_samples):
        """Test training moves the parameters."""
        before = micro_model.state_dict()
        train(micro_model, synthetic_samples[:6], synthetic_samples[6:], micro_config)
        after = micro_model.state_dict()
        assert not np.array_equal(before["head.weight"], after["head.weight"])

    def test_in_memory_run_writes_nothing(self, micro_model, micro_config, synthetic_samples, tmp_path, monkeypatch):
        """Test out_dir=None leaves the file system untouched."""
        monkeypatch.chdir(tmp_path)
        train(micro_model, synthetic_samples[:6], synthetic_samples[6:], micro_config)
        assert list(tmp_path.iterdir()) == []

    @pytest.mark.parametrize("which", ["train", "val"])
    def test_empty_split(self, which, micro_model, micro_config, synthetic_samples):
        """Test empty training or validation splits are rejected."""
        train_samples = [] if which == "train" else synthetic_samples[:6]
        val_samples = [] if which == "val" else synthetic_samples[6:]
        with pytest.raises(DatasetError):
            train(micro_model, train_samples, val_samples, micro_config)

    def test_zero_learning_rate_keeps_parameters(self, micro_config, synthetic_samples):
        """Test an epoch at lr 0 leaves every parameter bit-identical while BN statistics move."""
        config = micro_config.with_overrides(["optim.lr=0", "train.epochs=1", "dropout_p=0.2"])
        model = Trans2UnetModel(config, stream(config.seed, "init"))
        params_before = {name: p.data.copy() for name, p in model.named_parameters()}
        buffers_before = {name: b.copy() for name, b in model.named_buffers()}

        state = train(model, synthetic_samples[:6], synthetic_samples[6:], config)

        assert state.optimizer.t == 3
        for name, param in model.named_parameters():
            np.testing.assert_array_equal(param.data, params_before[name], err_msg=name)
        assert any(
            not np.array_equal(buffer, buffers_before[name]) for name, buffer in model.named_buffers()
        )

    def test_best_checkpoint_holds_the_best_epoch(self, micro_model, micro_config, synthetic_samples, tmp_path):
        """Test best.ckpt comes from the first epoch with the highest val_dsc in metrics.csv."""
        config = micro_config.with_overrides(["train.epochs=4"])
        val = synthetic_samples[6:]
        train(micro_model, synthetic_samples[:6], val, config, tmp_path)

        log = pd.read_csv(tmp_path / METRICS_FILE)
        best = load_checkpoint(tmp_path / BEST_CHECKPOINT)
        best_epoch = int(best.state["epoch"])
        best_dsc = log.loc[log["epoch"] == best_epoch, "val_dsc"].item()
        # metrics.csv rounds to 6 decimals
        assert best_dsc >= log["val_dsc"].max() - 1e-6
        assert (log.loc[log["epoch"] < best_epoch, "val_dsc"] <= best_dsc + 1e-6).all()
        assert int(best.state["best_epoch"]) == best_epoch
        assert float(best.state["best_val_dsc"]) == pytest.approx(best_dsc, abs=1e-6)

        report = evaluate(best.build_model(), val, config.loss, split="val")
        assert report.mean_dsc == pytest.approx(float(best.state["best_val_dsc"]), abs=1e-9)


class TestResume:
    """Tests for continuing a run from a training checkpoint."""

    def test_continues_from_checkpoint(self, micro_model, micro_config, synthetic_samples, tmp_path):
        """Test a resumed run picks up the epoch count, step count and metrics log."""
        train_samples, val_samples = synthetic_samples[:6], synthetic_samples[6:]
        train(micro_model, train_samples, val_samples, micro_config, tmp_path)

        state = load_checkpoint(tmp_path / FINAL_CHECKPOINT).build_state()
        longer = micro_config.with_overrides(["train.epochs=3"])
        resumed = train(state.model, train_samples, val_samples, longer, tmp_path, state=state)

        assert resumed is state
        assert resumed.epoch == 3
        assert resumed.optimizer.t == 9
        assert [r.epoch for r in resumed.records] == [3]
        assert list(pd.read_csv(tmp_path / METRICS_FILE)["epoch"]) == [1, 2, 3]
        assert load_checkpoint(tmp_path / FINAL_CHECKPOINT).state["epoch"] == "3"

    def test_finished_run_trains_no_further(self, micro_model, micro_config, synthetic_samples):
        """Test resuming at the configured epoch count runs no epoch."""
        state = train(micro_model, synthetic_samples[:6], synthetic_samples[6:], micro_config)
        step = state.optimizer.t
        again = train(micro_model, synthetic_samples[:6], synthetic_samples[6:], micro_config, state=state)
        assert again.epoch == 2
        assert again.optimizer.t == step

    def test_rejects_state_of_another_model(self, micro_model, micro_config, synthetic_samples):
        """Test the resumed state must belong to the model being trained."""
        state = train(micro_model, synthetic_samples[:6], synthetic_samples[6:], micro_config)
        other = Trans2UnetModel(micro_config, stream(1, "init"))
        with pytest.raises(ValidationError):
            train(other, synthetic_samples[:6], synthetic_samples[6:], micro_config, state=state)
