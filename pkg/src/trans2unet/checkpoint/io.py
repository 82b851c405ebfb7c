"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic      4 bytes   b"T2U1"
    version    u32       FORMAT_VERSION
    echo_len   u32       length of the UTF-8 config echo
    echo       bytes     flat configuration, then ``state.* = value`` lines
    count      u32       number of tensors
    count × tensor:
        name_len u16, name bytes (UTF-8)
        ndim     u8,  dims u32 × ndim
        data     float32 × prod(dims), row-major

Tensors are the model parameters, the BN running statistics and, for
training checkpoints, the Adam moments ``optim.m.<name>`` / ``optim.v.<name>``.
"""

import logging
import struct
from pathlib import Path
from typing import TYPE_CHECKING, Optional

import numpy as np

from trans2unet.models.config import RunConfig
from trans2unet.models.trans2unet import Trans2UnetModel
from trans2unet.nn import Module
from trans2unet.utils.exceptions import CheckpointError, Trans2UnetError
from trans2unet.utils.random import stream

if TYPE_CHECKING:
    from trans2unet.training.state import TrainState

logger = logging.getLogger(__name__)

MAGIC = b"T2U1"
FORMAT_VERSION = 1
OPTIM_PREFIX = "optim."
STATE_PREFIX = "state."


class Checkpoint:
    """Decoded checkpoint content.

    Attributes:
        config: Run configuration the model was built from
        state: ``state.*`` entries of the echo, prefix stripped (text values)
        tensors: Every stored tensor by name (float32)
    """

    def __init__(
        self, config: RunConfig, state: dict[str, str], tensors: dict[str, np.ndarray]
    ) -> None:
        self.config = config
        self.state = state
        self.tensors = tensors

    @property
    def model_tensors(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith(OPTIM_PREFIX)}

    @property
    def optimizer_tensors(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if k.startswith(OPTIM_PREFIX)}

    def build_model(self) -> Trans2UnetModel:
        """Rebuild the model from the config and load the stored tensors.

        Raises:
            CheckpointError: If tensor names or shapes do not match the config
        """
        model = Trans2UnetModel(self.config, stream(self.config.seed, "init"))
        model.load_state_dict(self.model_tensors)
        return model

    def build_state(self) -> "TrainState":
        """Rebuild the model together with its optimizer and scheduler state.

        Restores the epoch counter, the best validation DSC and its epoch,
        the Adam step count, learning rate and moments, and the plateau
        scheduler's best loss and counter. The epoch log is not stored in
        checkpoints, so ``records`` starts empty (``metrics.csv`` holds it).

        Raises:
            CheckpointError: If the checkpoint holds only model tensors or its
                training state is incomplete or malformed
        """
        from trans2unet.training.state import TrainState

        if not self.state or not self.optimizer_tensors:
            raise CheckpointError("Checkpoint holds no training state (model tensors only)")
        try:
            epoch = int(self.state["epoch"])
            step = int(self.state["step"])
            lr = float(self.state["lr"])
            scheduler_best = self.state["scheduler_best"]
            counter = int(self.state["scheduler_counter"])
            best_val_dsc = float(self.state["best_val_dsc"])
            best_epoch = self.state["best_epoch"]
            best_loss = None if scheduler_best == "none" else float(scheduler_best)
            best_at = None if best_epoch == "none" else int(best_epoch)
        except KeyError as e:
            raise CheckpointError(f"Checkpoint state is missing 'state.{e.args[0]}'") from e
        except ValueError as e:
            raise CheckpointError(f"Checkpoint state is malformed: {e}") from e
        if epoch < 0 or step < 0 or counter < 0 or not lr >= 0.0:
            raise CheckpointError(
                f"Checkpoint state out of range (epoch {epoch}, step {step}, lr {lr}, counter {counter})"
            )

        state = TrainState(self.build_model(), self.config)
        state.optimizer.load_state_tensors(self.optimizer_tensors, step)
        state.optimizer.lr = lr
        state.scheduler.lr = lr
        state.scheduler.best = best_loss
        state.scheduler.epochs_since_improvement = counter
        state.epoch = epoch
        state.best_val_dsc = best_val_dsc
        state.best_epoch = best_at
        logger.info(f"Restored training state at epoch {epoch} (step {step}, lr {lr:.3g})")
        return state


def state_lines(state: "TrainState") -> dict[str, str]:
    """The ``state.*`` echo entries of a training state."""
    best = state.scheduler.best
    return {
        "epoch": str(state.epoch),
        "step": str(state.optimizer.t),
        "lr": repr(float(state.optimizer.lr)),
        "scheduler_best": "none" if best is None else repr(float(best)),
        "scheduler_counter": str(state.scheduler.epochs_since_improvement),
        "best_val_dsc": repr(float(state.best_val_dsc)),
        "best_epoch": "none" if state.best_epoch is None else str(state.best_epoch),
    }


def encode_checkpoint(
    model: Module, config: RunConfig, state: Optional["TrainState"] = None
) -> bytes:
    """Serialize a model (and optionally its training state)."""
    tensors = model.state_dict()
    echo = config.to_text()
    if state is not None:
        tensors.update(state.optimizer.state_tensors())
        echo += "".join(f"{STATE_PREFIX}{k} = {v}\n" for k, v in state_lines(state).items())

    echo_bytes = echo.encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(echo_bytes)), echo_bytes]
    parts.append(struct.pack("<I", len(tensors)))
    for name, array in tensors.items():
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)) + name_bytes)
        parts.append(struct.pack(f"<B{array.ndim}I", array.ndim, *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(
    path: Path, model: Module, config: RunConfig, state: Optional["TrainState"] = None
) -> None:
    """Write a checkpoint atomically (temporary file, then rename).

    Raises:
        CheckpointError: If the file cannot be written
    """
    path = Path(path)
    data = encode_checkpoint(model, config, state)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(data)
        tmp.replace(path)
    except OSError as e:
        logger.error(f"Failed to write checkpoint {path}: {e}")
        raise CheckpointError(f"Failed to write checkpoint {path}: {e}") from e
    logger.info(f"Wrote checkpoint {path} ({len(data)} bytes)")


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    """Parse checkpoint bytes.

    Raises:
        CheckpointError: On bad magic, unsupported version, truncation,
            trailing bytes, an undecodable or malformed echo, or an invalid config
    """
    if data[:4] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic {data[:4]!r})")
    try:
        version, echo_len = struct.unpack_from("<II", data, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
        offset = 12
        echo = data[offset : offset + echo_len]
        if len(echo) != echo_len:
            raise CheckpointError(f"{source}: truncated checkpoint (config echo)")
        offset += echo_len
        (count,) = struct.unpack_from("<I", data, offset)
        offset += 4

        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", data, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", data, offset)
            offset += 4 * ndim
            nbytes = 4 * int(np.prod(shape, dtype=np.int64))
            if offset + nbytes > len(data):
                raise CheckpointError(f"{source}: truncated checkpoint (tensor '{name}')")
            values = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=offset)
            tensors[name] = values.reshape(shape).astype(np.float32)
            offset += nbytes
    except (struct.error, UnicodeDecodeError) as e:
        logger.error(f"Corrupt checkpoint {source}: {e}")
        raise CheckpointError(f"{source}: truncated or corrupt checkpoint") from e
    if offset != len(data):
        raise CheckpointError(f"{source}: {len(data) - offset} unexpected trailing bytes")

    config_lines, state = [], {}
    try:
        for line in echo.decode("utf-8").splitlines():
            if line.startswith(STATE_PREFIX):
                key, sep, value = line[len(STATE_PREFIX) :].partition("=")
                if not sep or not key.strip():
                    raise ValueError(f"malformed state line {line!r}")
                state[key.strip()] = value.strip()
            else:
                config_lines.append(line)
    except ValueError as e:
        logger.error(f"Corrupt config echo in {source}: {e}")
        raise CheckpointError(f"{source}: corrupt config echo: {e}") from e
    try:
        config = RunConfig.from_text("\n".join(config_lines))
    except Trans2UnetError as e:
        raise CheckpointError(f"{source}: invalid config echo: {e}") from e
    return Checkpoint(config, state, tensors)


def load_checkpoint(path: Path) -> Checkpoint:
    """Read and decode a checkpoint file.

    Example:
        >>> ckpt = load_checkpoint(Path("run1/best.ckpt"))
        >>> model = ckpt.build_model()
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        logger.error(f"Cannot read checkpoint {path}: {e}")
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    return decode_checkpoint(data, str(path))
