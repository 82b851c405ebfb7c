"""End-to-end integration tests for trans2unet."""

import numpy as np
import pandas as pd
import pytest

from trans2unet import Experiment
from trans2unet.checkpoint import load_checkpoint
from trans2unet.data import generate_synthetic, save_dataset, stack_batch, write_pnm
from trans2unet.data.pnm import read_pnm, to_pixels
from trans2unet.models import RunConfig, Trans2UnetModel
from trans2unet.training import confusion_counts, dsc, evaluate, predict_probabilities, train
from trans2unet.training.engine import BEST_CHECKPOINT, METRICS_FILE
from trans2unet.utils.random import stream


class TestExperimentWorkflow:
    """Integration tests for the Experiment class."""

    def test_train_then_evaluate(self, micro_config, tmp_path):
        """Test the run summary matches a later evaluation of final.ckpt."""
        experiment = Experiment(micro_config)
        samples = experiment.load_samples(synthetic=8)
        summary = experiment.train(samples, tmp_path / "run")

        assert summary.epochs == 2
        assert summary.parameters == experiment.build_model().num_parameters()

        restored = Experiment.from_checkpoint(tmp_path / "run" / "final.ckpt")
        report = restored.evaluate(restored.load_samples(synthetic=8), split="test", out_dir=tmp_path / "eval")
        assert report.mean_dsc == summary.test_dsc
        assert report.mean_iou == summary.test_iou
        assert (tmp_path / "eval" / "eval_test.csv").is_file()

    def test_rerun_is_bit_identical(self, micro_config, tmp_path):
        """Test the same seed reproduces the metrics log and the checkpoint bytes."""
        for name in ("a", "b"):
            experiment = Experiment(micro_config)
            experiment.train(experiment.load_samples(synthetic=8), tmp_path / name)

        for artifact in ("metrics.csv", "final.ckpt", "best.ckpt", "config.echo"):
            assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()

    def test_dataset_directory_round_trip(self, micro_config, tmp_path):
        """Test training from files gives the same split as the in-memory samples."""
        experiment = Experiment(micro_config)
        samples = experiment.load_samples(synthetic=8)
        save_dataset(samples, tmp_path / "data")
        loaded = experiment.load_samples(tmp_path / "data")
        assert experiment.split(loaded).split_hash == experiment.split(samples).split_hash

    def test_ablation(self, micro_config, tmp_path):
        """Test the three variants share one split and grow in size."""
        experiment = Experiment(micro_config)
        table = experiment.ablation(experiment.load_samples(synthetic=8), tmp_path)

        assert list(table["variant"]) == ["transunet", "trans2unet_wasp", "trans2unet_wasp_kc"]
        assert table["split_hash"].nunique() == 1
        parameters = list(table["parameters"])
        assert parameters[0] < parameters[1] < parameters[2]
        saved = pd.read_csv(tmp_path / "ablation.csv", comment="#")
        assert list(saved["variant"]) == list(table["variant"])
        for variant in table["variant"]:
            assert (tmp_path / variant / "final.ckpt").is_file()

    def test_predict_file(self, micro_config, tmp_path):
        """Test predicting a training image writes a binary mask."""
        experiment = Experiment(micro_config)
        samples = experiment.load_samples(synthetic=8)
        experiment.train(samples, tmp_path / "run")

        image = tmp_path / "image.pgm"
        write_pnm(image, to_pixels(samples[0].image[0]))
        mask_path, prob_path = experiment.predict(image, tmp_path / "mask.pgm")
        assert set(np.unique(read_pnm(mask_path))) <= {0, 255}
        assert prob_path.name == "mask_prob.pgm"


@pytest.fixture(scope="module")
def overfit_run(tmp_path_factory) -> dict:
    """The 32×32 desk recipe trained for 200 epochs and validated on the same 8 samples."""
    config = RunConfig.desk().with_overrides(["train.epochs=200", "train.augment=false", "seed=7"])
    samples = generate_synthetic(8, config.input_size, seed=config.seed)
    model = Trans2UnetModel(config, stream(config.seed, "init"))
    out_dir = tmp_path_factory.mktemp("overfit")
    state = train(model, samples, samples, config, out_dir)
    return {"config": config, "samples": samples, "model": model, "state": state, "out_dir": out_dir}


@pytest.mark.slow
class TestOverfit:
    """Long memorization run on a tiny synthetic set."""

    def test_overfits_eight_samples(self, overfit_run):
        """Test the desk recipe reaches train DSC 0.95 on 8 samples within 200 epochs."""
        config, samples = overfit_run["config"], overfit_run["samples"]
        report = evaluate(overfit_run["model"], samples, config.loss, split="train")
        assert overfit_run["state"].epoch == 200
        assert report.mean_dsc >= 0.95

    def test_loss_does_not_rise_across_windows(self, overfit_run):
        """Test each 20-epoch mean of the loss stays within 5% of the previous window's."""
        log = pd.read_csv(overfit_run["out_dir"] / METRICS_FILE)
        assert len(log) == 200
        for column in ("train_loss", "val_loss"):
            windows = log[column].to_numpy().reshape(-1, 20).mean(axis=1)
            for earlier, later in zip(windows, windows[1:]):
                assert later <= 1.05 * earlier, f"{column}: {windows}"
            assert windows[-1] < windows[0]
        assert log["lr"].is_monotonic_decreasing

    def test_best_checkpoint_is_best_epoch(self, overfit_run):
        """Test best.ckpt holds the epoch with the highest validation DSC in metrics.csv."""
        out_dir = overfit_run["out_dir"]
        log = pd.read_csv(out_dir / METRICS_FILE)
        best = load_checkpoint(out_dir / BEST_CHECKPOINT)
        best_epoch = int(best.state["epoch"])
        best_dsc = log.loc[log["epoch"] == best_epoch, "val_dsc"].item()
        # metrics.csv rounds to 6 decimals
        assert best_dsc >= log["val_dsc"].max() - 1e-6
        assert (log.loc[log["epoch"] < best_epoch, "val_dsc"] <= best_dsc + 1e-6).all()
        assert int(best.state["best_epoch"]) == best_epoch == overfit_run["state"].best_epoch

    def test_single_image_prediction(self, overfit_run):
        """Test the memorized model segments one training image on its own."""
        model = overfit_run["model"].eval()
        images, masks = stack_batch(overfit_run["samples"][:1])
        counts = confusion_counts(predict_probabilities(model, images), masks)
        assert dsc(counts) >= 0.9
