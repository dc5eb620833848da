"""Self-describing checkpoint container.

A checkpoint is a single ``.npz`` file holding named float arrays plus a JSON
metadata block (format version, checkpoint kind, and a config dict describing
the architecture). Writes are atomic: temp file in the target directory, then
rename.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
_META_KEY = "__meta__"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, kind: str, config: dict, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    if _META_KEY in arrays:
        raise CheckpointError(f"array name {_META_KEY!r} is reserved")
    meta = {"format_version": FORMAT_VERSION, "kind": kind, "config": config}
    payload = {_META_KEY: np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    payload.update(arrays)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez_compressed(fh, **payload)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_checkpoint(path: str | Path, expect_kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    with np.load(path) as data:
        if _META_KEY not in data:
            raise CheckpointError(f"{path}: missing metadata block; not a carikit checkpoint")
        meta = json.loads(bytes(data[_META_KEY]).decode("utf-8"))
        arrays = {k: data[k] for k in data.files if k != _META_KEY}
    if "format_version" not in meta:
        raise CheckpointError(f"{path}: metadata lacks a format_version field")
    if meta["format_version"] > FORMAT_VERSION:
        raise CheckpointError(f"{path}: format_version {meta['format_version']} is newer than supported {FORMAT_VERSION}")
    if expect_kind is not None and meta.get("kind") != expect_kind:
        raise CheckpointError(f"{path}: expected kind {expect_kind!r}, found {meta.get('kind')!r}")
    return meta, arrays


def state_dict_to_arrays(state_dict) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in state_dict.items()}


def arrays_to_state_dict(arrays: dict[str, np.ndarray]):
    import torch

    return {k: torch.from_numpy(np.array(v)) for k, v in arrays.items()}
