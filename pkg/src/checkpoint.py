"""
Versioned binary parameter containers.

Layout (little-endian):
    magic (4 bytes) | u32 format version | u32 length + UTF-8 JSON config echo
    | u32 tensor count | per tensor: u16 name length, name, u8 rank,
    u32 dims..., float32 data
"""

import json
import struct
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np
import torch

from errors import CheckpointFormatError, DataNotFoundError
from logging_config import get_logger

logger = get_logger(__name__)

FORMAT_VERSION = 1


def save_container(
    path: str | Path, magic: bytes, config: dict[str, Any], tensors: Mapping[str, torch.Tensor]
) -> Path:
    """Write named tensors as float32 with a JSON echo of the config."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    config_bytes = json.dumps(config, sort_keys=True).encode("utf-8")

    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(config_bytes)))
        f.write(config_bytes)
        f.write(struct.pack("<I", len(tensors)))
        for name, tensor in tensors.items():
            name_bytes = name.encode("utf-8")
            data = tensor.detach().cpu().to(torch.float32).numpy()
            f.write(struct.pack("<H", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<B", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.astype("<f4").tobytes())

    logger.debug("Wrote container", extra={"path": str(path), "tensors": len(tensors)})
    return path


def _read(f, fmt: str) -> tuple:
    size = struct.calcsize(fmt)
    chunk = f.read(size)
    if len(chunk) != size:
        raise CheckpointFormatError(f"{f.name}: truncated container")
    return struct.unpack(fmt, chunk)


def load_container(path: str | Path, magic: bytes) -> tuple[dict[str, Any], dict[str, torch.Tensor]]:
    """
    Read a container written by save_container.

    Raises:
        DataNotFoundError: missing file
        CheckpointFormatError: wrong magic, unsupported version or truncation
    """
    path = Path(path)
    if not path.exists():
        raise DataNotFoundError(path, "Train a model first (`tgvfm e2vid-train` or `tgvfm train`).")

    with open(path, "rb") as f:
        found = f.read(len(magic))
        if found != magic:
            raise CheckpointFormatError(f"{path}: bad magic {found!r}, expected {magic!r}")
        (version,) = _read(f, "<I")
        if version != FORMAT_VERSION:
            raise CheckpointFormatError(f"{path}: unsupported format version {version}")
        (config_len,) = _read(f, "<I")
        config = json.loads(f.read(config_len).decode("utf-8"))
        (count,) = _read(f, "<I")

        tensors: dict[str, torch.Tensor] = {}
        for _ in range(count):
            (name_len,) = _read(f, "<H")
            name = f.read(name_len).decode("utf-8")
            (rank,) = _read(f, "<B")
            shape = _read(f, f"<{rank}I") if rank else ()
            n = int(np.prod(shape)) if rank else 1
            raw = f.read(4 * n)
            if len(raw) != 4 * n:
                raise CheckpointFormatError(f"{path}: truncated tensor {name!r}")
            tensors[name] = torch.from_numpy(np.frombuffer(raw, dtype="<f4").reshape(shape).copy())

    return config, tensors
