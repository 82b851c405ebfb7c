"""High-level API for Trans2Unet experiments."""

import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd
from platformdirs import user_data_dir

from trans2unet.checkpoint import Checkpoint, load_checkpoint
from trans2unet.data import generate_synthetic, load_dataset, read_pnm, select, split_dataset, write_pnm
from trans2unet.data.pnm import to_pixels
from trans2unet.models.config import RunConfig
from trans2unet.models.records import DatasetSplit, EvaluationReport, RunSummary, SegmentationSample
from trans2unet.models.trans2unet import Trans2UnetModel, parameter_breakdown
from trans2unet.nn import context_parameter_table, dense_skip_parameter_delta, wasp_parameter_count
from trans2unet.processors import export_to_csv, export_to_json, format_flat
from trans2unet.training import evaluate, predict_probabilities, train
from trans2unet.training.engine import FINAL_CHECKPOINT
from trans2unet.training.metrics import THRESHOLD
from trans2unet.training.state import TrainState
from trans2unet.utils.exceptions import DatasetError, ValidationError
from trans2unet.utils.random import stream

logger = logging.getLogger(__name__)

CONFIG_ECHO = "config.echo"
SUMMARY_FILE = "summary.txt"
ABLATION_FILE = "ablation.csv"
CONFIG_HEADER = "Trans2Unet run configuration"

ABLATION_VARIANTS: dict[str, list[str]] = {
    "transunet": ["use_unet_branch=false", "wasp.enabled=false"],
    "trans2unet_wasp": ["use_unet_branch=true", "wasp.enabled=true", "wasp.dense_skip=false"],
    "trans2unet_wasp_kc": ["use_unet_branch=true", "wasp.enabled=true", "wasp.dense_skip=true"],
}


def default_run_dir(prefix: str = "run") -> Path:
    """Timestamped directory under the platform user-data directory."""
    stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
    return Path(user_data_dir("trans2unet", "trans2unet")) / "runs" / f"{prefix}-{stamp}"


class Experiment:
    """Single entry point for training, evaluating and inspecting models.

    An experiment is bound to one ``RunConfig``. ``train`` builds a fresh
    model from the config's ``init`` stream; ``from_checkpoint`` restores
    the config and the trained model of an earlier run so it can be
    evaluated or used for prediction, and ``resume`` continues training
    from a checkpoint's optimizer and scheduler state.

    Args:
        config: Run configuration (default: desk-scale preset)
        model: Already-built model matching ``config``

    Example:
        >>> from trans2unet import Experiment
        >>> exp = Experiment(RunConfig.desk().with_overrides(["train.epochs=5"]))
        >>> samples = exp.load_samples(synthetic=8)
        >>> summary = exp.train(samples, Path("run1"))
        >>> print(f"test DSC {summary.test_dsc:.3f}")
    """

    def __init__(self, config: Optional[RunConfig] = None, model: Optional[Trans2UnetModel] = None):
        self.config = config if config is not None else RunConfig.desk()
        self.model = model
        logger.info(f"Initialized experiment (seed={self.config.seed})")

    @classmethod
    def from_file(cls, path: Path, overrides: Optional[list[str]] = None) -> "Experiment":
        """Load a configuration file and apply ``key=value`` overrides."""
        return cls(RunConfig.load(path).with_overrides(list(overrides or [])))

    @classmethod
    def from_checkpoint(cls, path: Path) -> "Experiment":
        """Restore the configuration and trained model of a checkpoint.

        Raises:
            CheckpointError: If the file is corrupt or does not match its config
        """
        checkpoint = load_checkpoint(path)
        return cls(checkpoint.config, checkpoint.build_model())

    # Data

    def load_samples(
        self, data_dir: Optional[Path] = None, synthetic: Optional[int] = None
    ) -> list[SegmentationSample]:
        """Load a dataset directory or generate ``synthetic`` samples.

        Exactly one source must be given. Synthetic samples use the config's
        input size, channel count and seed.

        Raises:
            ValidationError: If neither or both sources are given
            DatasetError: If the directory cannot be ingested
        """
        if (data_dir is None) == (synthetic is None):
            raise ValidationError("Give exactly one data source: a dataset directory or a synthetic count")
        config = self.config
        if synthetic is not None:
            return generate_synthetic(synthetic, config.input_size, config.seed, config.in_channels)
        assert data_dir is not None
        return load_dataset(Path(data_dir), config.input_size, config.in_channels)

    def split(self, samples: list[SegmentationSample]) -> DatasetSplit:
        """Seeded train/val/test partition of ``samples``."""
        return split_dataset([s.id for s in samples], self.config.seed, self.config.data.split_ratios)

    def build_model(self) -> Trans2UnetModel:
        """Fresh model initialized from the ``init`` stream."""
        return Trans2UnetModel(self.config, stream(self.config.seed, "init"))

    def _require_model(self) -> Trans2UnetModel:
        if self.model is None:
            raise ValidationError("Experiment has no model: train one or load a checkpoint first")
        return self.model

    # Training

    def train(self, samples: list[SegmentationSample], out_dir: Path) -> RunSummary:
        """Train on the seeded split of ``samples`` and write the run directory.

        ``out_dir`` receives ``config.echo``, ``metrics.csv``, ``best.ckpt``,
        ``final.ckpt`` and ``summary.txt``. The final model is evaluated on
        the validation and test splits after reloading ``final.ckpt``, so the
        summary matches a later ``evaluate`` of that file.

        Returns:
            RunSummary of the final model

        Raises:
            DatasetError: If a split is empty
            NumericalError: If training diverges
        """
        return self._run(samples, out_dir, None)

    def resume(
        self, samples: list[SegmentationSample], checkpoint: Checkpoint, out_dir: Path
    ) -> RunSummary:
        """Continue a run from a training checkpoint up to ``train.epochs``.

        The experiment's config may differ from the checkpoint's only in its
        ``train`` section (typically a larger epoch count). ``metrics.csv`` in
        ``out_dir`` is appended to.

        Raises:
            CheckpointError: If the checkpoint holds no training state
            ValidationError: If the config describes a different run
        """
        if checkpoint.config.model_copy(update={"train": self.config.train}) != self.config:
            raise ValidationError(
                "A resumed run may only change the 'train' section of the checkpoint's configuration"
            )
        return self._run(samples, out_dir, checkpoint.build_state())

    def _run(
        self, samples: list[SegmentationSample], out_dir: Path, resume_state: Optional[TrainState]
    ) -> RunSummary:
        split = self.split(samples)
        parts = {name: select(samples, split.ids(name)) for name in ("train", "val", "test")}

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / CONFIG_ECHO).write_text(self.config.to_text(header=CONFIG_HEADER), encoding="utf-8")

        model = resume_state.model if resume_state is not None else self.build_model()
        state = train(model, parts["train"], parts["val"], self.config, out_dir, state=resume_state)

        final = load_checkpoint(out_dir / FINAL_CHECKPOINT).build_model()
        self.model = final
        val = evaluate(final, parts["val"], self.config.loss, split="val")
        test = evaluate(final, parts["test"], self.config.loss, split="test")

        summary = RunSummary(
            epochs=state.epoch,
            best_epoch=state.best_epoch,
            best_val_dsc=state.best_val_dsc,
            val_dsc=val.mean_dsc,
            val_iou=val.mean_iou,
            test_dsc=test.mean_dsc,
            test_iou=test.mean_iou,
            split_hash=split.split_hash,
            parameters=final.num_parameters(),
        )
        self._write_summary(out_dir / SUMMARY_FILE, summary)
        logger.info(f"Run finished: test DSC {summary.test_dsc:.4f}, IoU {summary.test_iou:.4f}")
        return summary

    @staticmethod
    def _write_summary(path: Path, summary: RunSummary) -> None:
        # the only file carrying a timestamp
        values: dict[str, Any] = {"finished_at": datetime.now(timezone.utc).isoformat()}
        values.update({k: ("none" if v is None else v) for k, v in summary.model_dump().items()})
        path.write_text(format_flat(values, header="Trans2Unet run summary"), encoding="utf-8")

    # Evaluation and prediction

    def evaluate(
        self,
        samples: list[SegmentationSample],
        split: str = "test",
        out_dir: Optional[Path] = None,
    ) -> EvaluationReport:
        """Evaluate the model on one split of the seeded partition of ``samples``.

        Writes ``eval_<split>.csv`` (per-image table) and ``eval_<split>.json``
        (aggregates) when ``out_dir`` is given.

        Raises:
            ValidationError: If there is no model or the split name is unknown
            DatasetError: If the split is empty
        """
        model = self._require_model()
        if split not in ("train", "val", "test"):
            raise ValidationError(f"Split must be train, val or test, got '{split}'")
        partition = self.split(samples)
        report = evaluate(model, select(samples, partition.ids(split)), self.config.loss, split=split)
        if out_dir is not None:
            out_dir = Path(out_dir)
            export_to_csv(
                report.per_image,
                out_dir / f"eval_{split}.csv",
                metadata={"split": split, "split_hash": partition.split_hash},
            )
            export_to_json(
                {**report.aggregates(), "split_hash": partition.split_hash},
                out_dir / f"eval_{split}.json",
            )
        return report

    def predict(self, image_path: Path, out_path: Path) -> tuple[Path, Path]:
        """Segment one image file.

        Writes the binary mask (0/255) to ``out_path`` and the probability map
        (×255, rounded) next to it as ``<stem>_prob.pgm``.

        Returns:
            Paths of the mask and the probability map

        Raises:
            ValidationError: If the image size or channels do not match the model
            DatasetError: If the image cannot be read
        """
        model = self._require_model()
        pixels = read_pnm(Path(image_path))
        image = pixels[None] if pixels.ndim == 2 else np.transpose(pixels, (2, 0, 1))
        channels, size = self.config.in_channels, self.config.input_size
        if image.shape != (channels, size, size):
            raise ValidationError(
                f"Image {image_path} is {image.shape[2]}x{image.shape[1]} with {image.shape[0]} "
                f"channel(s); the model expects {size}x{size} with {channels} channel(s)"
            )

        model.eval()
        prob = predict_probabilities(model, image[None].astype(np.float64) / 255.0)[0, 0]
        out_path = Path(out_path)
        prob_path = out_path.with_name(f"{out_path.stem}_prob.pgm")
        write_pnm(out_path, (prob >= THRESHOLD).astype(np.uint8) * np.uint8(255))
        write_pnm(prob_path, to_pixels(prob))
        logger.info(f"Wrote mask {out_path} and probabilities {prob_path}")
        return out_path, prob_path

    # Structure

    def parameter_report(self) -> dict[str, Any]:
        """Parameter counts of the configured model and its context module.

        Returns:
            Mapping with ``breakdown`` (per part and total), ``wasp`` and
            ``wasp_kc`` counts for the configured widths, their ``delta``,
            and the ``context_table`` DataFrame (ASPP / WASP / WASP-KC)
        """
        model = self.model if self.model is not None else self.build_model()
        wasp = self.config.wasp
        return {
            "breakdown": parameter_breakdown(model),
            "wasp": wasp_parameter_count(wasp.in_channels, wasp.branch_channels, dense_skip=False),
            "wasp_kc": wasp_parameter_count(wasp.in_channels, wasp.branch_channels, dense_skip=True),
            "delta": dense_skip_parameter_delta(wasp.in_channels, wasp.branch_channels),
            "context_table": context_parameter_table(wasp),
        }

    def ablation(self, samples: list[SegmentationSample], out_dir: Path) -> pd.DataFrame:
        """Train the three ablation variants on the same split.

        Each variant runs exactly like ``train`` in ``out_dir/<variant>``;
        ``ablation.csv`` collects test DSC / IoU per variant.

        Returns:
            DataFrame with columns variant, parameters, dsc, iou, split_hash

        Raises:
            DatasetError: If the variants disagree on the split
        """
        out_dir = Path(out_dir)
        variants = {name: self.config.with_overrides(o) for name, o in ABLATION_VARIANTS.items()}
        rows = []
        hashes = set()
        for name, config in variants.items():
            logger.info(f"Ablation variant {name}")
            summary = Experiment(config).train(samples, out_dir / name)
            hashes.add(summary.split_hash)
            rows.append(
                {
                    "variant": name,
                    "parameters": summary.parameters,
                    "dsc": summary.test_dsc,
                    "iou": summary.test_iou,
                    "split_hash": summary.split_hash,
                }
            )
        if len(hashes) != 1:
            raise DatasetError(f"Ablation variants were trained on different splits: {sorted(hashes)}")
        table = pd.DataFrame(rows)
        export_to_csv(table, out_dir / ABLATION_FILE, metadata={"seed": self.config.seed})
        return table

    def __repr__(self) -> str:
        return f"Experiment(seed={self.config.seed}, input_size={self.config.input_size})"
