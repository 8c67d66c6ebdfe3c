"""
Checkpoint files.

Layout (little-endian): magic ``DFV2``, u32 version, u32 tensor count, then per tensor
u16 name length, UTF-8 name, u8 rank, u32 per dim, float32 data. The model
configuration travels next to the checkpoint as ``<checkpoint>.cfg``.
"""

import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict

import numpy as np

from app.errors import CheckpointError, ConfigError
from app.services.backbone import DFormerV2, ModelConfig
from app.services.validators import format_config, read_config_file

logger = logging.getLogger(__name__)

MAGIC = b"DFV2"
VERSION = 1


def config_path_for(checkpoint_path) -> Path:
    path = Path(checkpoint_path)
    return path.with_name(path.name + ".cfg")


def save_checkpoint(path, state: Dict[str, np.ndarray], version: int = VERSION) -> Path:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", version, len(state))]
    for name, value in state.items():
        encoded = name.encode("utf-8")
        value = np.asarray(value)
        if len(encoded) > 0xFFFF or value.ndim > 0xFF:
            raise CheckpointError(f"Tensor '{name}' cannot be stored (name or rank too long)")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    logger.info(f"Wrote checkpoint {path} ({len(state)} tensors)")
    return path


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read ({exc.strerror})") from None

    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated at byte {pos} (needed {n} more)")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a DFV2 checkpoint")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    state: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape)) if rank else 1
        state[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} unexpected trailing bytes")
    return state


def save_model(path, model: DFormerV2) -> Path:
    path = save_checkpoint(path, model.state_dict())
    config_path_for(path).write_text(format_config(model.config.to_mapping()))
    return path


def load_model(path) -> DFormerV2:
    """Rebuild the model from ``<path>.cfg`` and load the checkpoint tensors into it."""
    cfg_path = config_path_for(path)
    if not cfg_path.exists():
        raise CheckpointError(f"{path}: missing model config {cfg_path.name}")
    try:
        config = ModelConfig.from_mapping(read_config_file(cfg_path))
    except ConfigError as exc:
        raise CheckpointError(f"{cfg_path}: {exc}") from None
    model = DFormerV2(config)
    model.load_state_dict(load_checkpoint(path))
    return model
