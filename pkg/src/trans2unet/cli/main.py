"""Command-line interface for trans2unet."""

import logging
import sys
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Optional

import click
from click import Context

from trans2unet import Experiment
from trans2unet.__version__ import __version__
from trans2unet.checkpoint import load_checkpoint
from trans2unet.data import generate_synthetic, save_dataset
from trans2unet.experiment import default_run_dir
from trans2unet.gradcheck import require_passing, resolve_suites, run_suite
from trans2unet.models.config import RunConfig
from trans2unet.utils.exceptions import (
    CheckpointError,
    DatasetError,
    Trans2UnetError,
    ValidationError,
)

LOG_LEVELS = (logging.WARNING, logging.INFO, logging.DEBUG)


def handle_exceptions(func: Callable[..., Any]) -> Callable[..., Any]:
    """Decorator mapping library errors to exit codes.

    Validation, dataset and checkpoint errors exit with 1; numerical and
    every other failure exit with 2.
    """

    @wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> None:
        try:
            func(*args, **kwargs)
        except (ValidationError, DatasetError, CheckpointError) as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(1)
        except Trans2UnetError as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(2)
        except Exception as e:
            # Catch any other unexpected exceptions
            click.echo(f"An unexpected error occurred: {e}", err=True)
            sys.exit(2)

    return wrapper


def _resolve_config(
    config: Optional[str], overrides: tuple, seed: Optional[int], base: Optional[RunConfig] = None
) -> RunConfig:
    """Config file (or ``base``, or the desk preset) with ``--set`` overrides and ``--seed``."""
    if config:
        base = RunConfig.load(Path(config))
    elif base is None:
        base = RunConfig.desk()
    assignments = list(overrides)
    if seed is not None:
        assignments.append(f"seed={seed}")
    return base.with_overrides(assignments)


config_option = click.option(
    "--config", "-c", type=click.Path(exists=True, dir_okay=False), help="Configuration file"
)
set_option = click.option(
    "--set",
    "-s",
    "overrides",
    multiple=True,
    help="Override a configuration key (format: key=value)",
)
data_option = click.option(
    "--data", type=click.Path(exists=True, file_okay=False), help="Dataset directory"
)
synthetic_option = click.option(
    "--synthetic", type=click.IntRange(min=1), help="Use N generated samples instead of --data"
)
seed_option = click.option("--seed", type=click.IntRange(min=0), help="Override the run seed")


@click.group(help="""trans2unet - two-branch Unet + TransUnet nuclei segmentation.""")
@click.version_option(version=__version__, prog_name="trans2unet")
@click.option("--verbose", "-v", count=True, help="Log more (-v info, -vv debug)")
@click.pass_context
def cli(ctx: Context, verbose: int) -> None:  # type: ignore[misc]
    """trans2unet - two-branch Unet + TransUnet nuclei segmentation.

    \b
    Examples:
        trans2unet synth --n 8 --size 32 --seed 7 --out data
        trans2unet train --data data --out run1 --seed 7
        trans2unet eval --checkpoint run1/final.ckpt --data data --split test
        trans2unet gradcheck --op all
    """
    ctx.ensure_object(dict)
    logging.basicConfig(
        level=LOG_LEVELS[min(verbose, len(LOG_LEVELS) - 1)],
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.command()
@config_option
@set_option
@data_option
@synthetic_option
@click.option("--out", "-o", type=click.Path(file_okay=False), help="Run directory")
@seed_option
@click.option(
    "--resume",
    type=click.Path(exists=True, dir_okay=False),
    help="Continue from a training checkpoint (its configuration is the base)",
)
@handle_exceptions
def train(
    config: Optional[str],
    overrides: tuple,
    data: Optional[str],
    synthetic: Optional[int],
    out: Optional[str],
    seed: Optional[int],
    resume: Optional[str],
) -> None:
    """Train a model and write the run directory.

    \b
    Examples:
        trans2unet train --synthetic 8 --out run1 --seed 7
        trans2unet train --config run.cfg --data data --set train.epochs=50
        trans2unet train --resume run1/final.ckpt --synthetic 8 --set train.epochs=300
    """
    checkpoint = load_checkpoint(Path(resume)) if resume else None
    if checkpoint is not None and config:
        raise ValidationError("--resume takes its configuration from the checkpoint; drop --config")
    experiment = Experiment(
        _resolve_config(config, overrides, seed, checkpoint.config if checkpoint else None)
    )
    samples = experiment.load_samples(Path(data) if data else None, synthetic)
    if out:
        out_dir = Path(out)
    else:
        out_dir = Path(resume).parent if resume else default_run_dir("train")

    if checkpoint is not None:
        click.echo(f"Resuming {resume} on {len(samples)} samples into {out_dir}...")
        summary = experiment.resume(samples, checkpoint, out_dir)
    else:
        click.echo(f"Training on {len(samples)} samples into {out_dir}...")
        summary = experiment.train(samples, out_dir)

    click.echo(f"\n{click.style('Run Summary', bold=True)}")
    click.echo(f"Epochs: {summary.epochs} (best epoch {summary.best_epoch})")
    click.echo(f"Validation: DSC {summary.val_dsc:.4f}  IoU {summary.val_iou:.4f}")
    click.echo(f"Test:       DSC {summary.test_dsc:.4f}  IoU {summary.test_iou:.4f}")
    click.echo(f"Split hash: {summary.split_hash}")
    click.echo(f"✓ Run saved to {click.style(str(out_dir), fg='green')}")


@cli.command(name="eval")
@click.option(
    "--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False), help="Checkpoint file"
)
@data_option
@synthetic_option
@click.option(
    "--split",
    default="test",
    type=click.Choice(["train", "val", "test"]),
    help="Split of the seeded partition to evaluate",
)
@click.option(
    "--out", "-o", type=click.Path(file_okay=False), help="Output directory (default: checkpoint's)"
)
@handle_exceptions
def eval_command(
    checkpoint: str, data: Optional[str], synthetic: Optional[int], split: str, out: Optional[str]
) -> None:
    """Evaluate a checkpoint on one split.

    \b
    Examples:
        trans2unet eval --checkpoint run1/best.ckpt --data data
        trans2unet eval --checkpoint run1/final.ckpt --synthetic 8 --split train
    """
    experiment = Experiment.from_checkpoint(Path(checkpoint))
    samples = experiment.load_samples(Path(data) if data else None, synthetic)
    out_dir = Path(out) if out else Path(checkpoint).parent
    report = experiment.evaluate(samples, split=split, out_dir=out_dir)

    click.echo(f"\n{click.style(f'Evaluation ({split})', bold=True)}\n")
    for row in report.per_image.itertuples(index=False):
        click.echo(f"  {click.style(row.id, fg='cyan')}: DSC {row.dsc:.4f}  IoU {row.iou:.4f}")
    click.echo(f"\nMacro: DSC {report.macro['dsc']:.4f}  IoU {report.macro['iou']:.4f}")
    click.echo(f"Micro: DSC {report.micro['dsc']:.4f}  IoU {report.micro['iou']:.4f}")
    click.echo(f"Loss:  {report.mean_loss:.4f}")
    click.echo(f"✓ Results saved to {click.style(str(out_dir / f'eval_{split}.csv'), fg='green')}")


@cli.command()
@click.option(
    "--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False), help="Checkpoint file"
)
@click.option(
    "--image", required=True, type=click.Path(exists=True, dir_okay=False), help="PGM/PPM image"
)
@click.option("--out", "-o", required=True, type=click.Path(dir_okay=False), help="Mask PGM path")
@handle_exceptions
def predict(checkpoint: str, image: str, out: str) -> None:
    """Predict a binary mask and a probability map for one image.

    \b
    Examples:
        trans2unet predict --checkpoint run1/best.ckpt --image cell.pgm --out cell_mask.pgm
    """
    experiment = Experiment.from_checkpoint(Path(checkpoint))
    mask_path, prob_path = experiment.predict(Path(image), Path(out))
    click.echo(f"✓ Mask saved to {click.style(str(mask_path), fg='green')}")
    click.echo(f"✓ Probabilities saved to {click.style(str(prob_path), fg='green')}")


@cli.command()
@click.option("--op", "op", default="all", help="Suite name, or 'all'")
@click.option("--seed", type=click.IntRange(min=0), default=0, help="Seed of the check inputs")
@click.option("--corrupt", is_flag=True, hidden=True)
@handle_exceptions
def gradcheck(op: str, seed: int, corrupt: bool) -> None:
    """Compare analytic gradients with central finite differences.

    \b
    Examples:
        trans2unet gradcheck --op conv2d
        trans2unet gradcheck --op all --seed 3
    """
    names = resolve_suites(op)
    results = []
    for name in names:
        result = run_suite(name, seed=seed, corrupt=corrupt)
        results.append(result)
        status = click.style("PASS", fg="green") if result.passed else click.style("FAIL", fg="red")
        click.echo(
            f"  {name}: {status} max rel error {result.max_rel_error:.3e} ({result.entries} entries)"
        )
    require_passing(results)
    click.echo(f"✓ {len(results)} gradient check(s) passed")


@cli.command()
@config_option
@set_option
@handle_exceptions
def params(config: Optional[str], overrides: tuple) -> None:
    """Report parameter counts of the configured model.

    \b
    Examples:
        trans2unet params
        trans2unet params --config run.cfg --set wasp.branch_channels=64
    """
    experiment = Experiment(_resolve_config(config, overrides, None))
    report = experiment.parameter_report()

    click.echo(f"\n{click.style('Parameters', bold=True)}\n")
    for part, count in report["breakdown"].items():
        click.echo(f"  {part:<12} {count:>10,}")
    click.echo(f"\n{click.style('Context module', bold=True)}")
    click.echo(f"  WASP:    {report['wasp']:,}")
    click.echo(f"  WASP-KC: {report['wasp_kc']:,} (+{report['delta']:,})")
    for row in report["context_table"].itertuples(index=False):
        click.echo(f"  - {row.module}: {row.parameters:,}")
    click.echo()


@cli.command()
@config_option
@set_option
@data_option
@synthetic_option
@click.option("--out", "-o", type=click.Path(file_okay=False), help="Ablation directory")
@seed_option
@handle_exceptions
def ablation(
    config: Optional[str],
    overrides: tuple,
    data: Optional[str],
    synthetic: Optional[int],
    out: Optional[str],
    seed: Optional[int],
) -> None:
    """Train TransUnet, Trans2Unet+WASP and Trans2Unet+WASP-KC on one split.

    \b
    Examples:
        trans2unet ablation --synthetic 16 --out ablation1 --seed 7
    """
    experiment = Experiment(_resolve_config(config, overrides, seed))
    samples = experiment.load_samples(Path(data) if data else None, synthetic)
    out_dir = Path(out) if out else default_run_dir("ablation")

    click.echo(f"Running 3 ablation variants into {out_dir}...")
    table = experiment.ablation(samples, out_dir)

    click.echo(f"\n{click.style('Ablation (test split)', bold=True)}\n")
    for row in table.itertuples(index=False):
        click.echo(
            f"  {click.style(row.variant, fg='cyan'):<30} DSC {row.dsc:.4f}  IoU {row.iou:.4f}"
            f"  ({row.parameters:,} parameters)"
        )
    click.echo(f"\nSplit hash: {table['split_hash'].iloc[0]}")
    click.echo(f"✓ Table saved to {click.style(str(out_dir / 'ablation.csv'), fg='green')}")


@cli.command()
@click.option("--n", "count", required=True, type=click.IntRange(min=1), help="Number of samples")
@click.option("--size", default=32, type=int, help="Image side (multiple of 16)")
@click.option("--seed", default=0, type=click.IntRange(min=0), help="Generator seed")
@click.option("--channels", default=1, type=click.Choice(["1", "3"]), help="Image channels")
@click.option("--out", "-o", required=True, type=click.Path(file_okay=False), help="Dataset directory")
@handle_exceptions
def synth(count: int, size: int, seed: int, channels: str, out: str) -> None:
    """Write a synthetic nuclei dataset (images/*.pgm, masks/*.pgm).

    \b
    Examples:
        trans2unet synth --n 8 --size 32 --seed 7 --out data
    """
    samples = generate_synthetic(count, size, seed, channels=int(channels))
    save_dataset(samples, Path(out))
    click.echo(f"✓ {len(samples)} samples saved to {click.style(out, fg='green')}")


@cli.command(name="init-config")
@click.option(
    "--preset",
    default="desk",
    type=click.Choice(["desk", "micro"]),
    help="Configuration preset (desk: 32×32 training recipe; micro: 16×16 gradient-check model)",
)
@handle_exceptions
def init_config(preset: str) -> None:
    """Print the default configuration file.

    \b
    Examples:
        trans2unet init-config > run.cfg
        trans2unet init-config --preset micro
    """
    config = RunConfig.micro() if preset == "micro" else RunConfig.desk()
    click.echo(config.to_text(header=f"Trans2Unet configuration ({preset} preset)"), nl=False)


if __name__ == "__main__":
    cli()
