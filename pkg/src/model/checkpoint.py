"""Binary checkpoints: magic, JSON header, raw little-endian fp64 parameters."""

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np
from loguru import logger

from src.autodiff import Module

MAGIC = b"DMVLCKPT"
DTYPE = "<f8"


class CheckpointError(Exception):
    """Checkpoint file is malformed or does not match the model."""

    pass


def save_checkpoint(path: Path, model: Module, config: dict[str, Any]) -> Path:
    """Write every parameter of ``model`` with a header echoing ``config``."""
    path = Path(path)
    manifest = []
    offset = 0
    arrays = []
    for name, param in model.named_parameters():
        data = np.ascontiguousarray(param.data, dtype=DTYPE)
        manifest.append({"name": name, "shape": list(data.shape), "offset": offset})
        offset += data.nbytes
        arrays.append(data)

    header = json.dumps({"config": config, "parameters": manifest, "dtype": DTYPE}).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for data in arrays:
            f.write(data.tobytes())
    logger.info(f"Saved checkpoint with {len(manifest)} tensors to {path}")
    return path


def read_checkpoint(path: Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """Return ``(header, {name: array})`` without touching any model."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    start = len(MAGIC) + 8
    if len(raw) < start:
        raise CheckpointError(f"{path} is truncated")
    (header_len,) = struct.unpack("<Q", raw[len(MAGIC) : start])
    try:
        header = json.loads(raw[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path} has an unreadable header: {e}") from e
    if header.get("dtype") != DTYPE:
        raise CheckpointError(f"{path} stores dtype {header.get('dtype')}, expected {DTYPE}")

    body = raw[start + header_len :]
    state = {}
    for entry in header.get("parameters", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        begin = entry["offset"]
        end = begin + count * 8
        if end > len(body):
            raise CheckpointError(f"{path}: parameter '{entry['name']}' runs past the end of the file")
        state[entry["name"]] = np.frombuffer(body[begin:end], dtype=DTYPE).reshape(shape).copy()
    return header, state


def load_checkpoint(path: Path, model: Module) -> dict[str, Any]:
    """Load parameters into ``model`` and return the stored config."""
    header, state = read_checkpoint(path)
    expected = {name: p.shape for name, p in model.named_parameters()}
    found = {name: arr.shape for name, arr in state.items()}
    if expected != found:
        missing = sorted(set(expected) - set(found))
        unexpected = sorted(set(found) - set(expected))
        mismatched = sorted(n for n in set(expected) & set(found) if expected[n] != found[n])
        raise CheckpointError(
            f"{path} does not match the model: missing={missing}, unexpected={unexpected}, "
            f"shape mismatch={mismatched}"
        )
    model.load_state_dict(state)
    logger.info(f"Loaded checkpoint from {path}")
    return header["config"]
