"""Checkpoint archive: named float64 (little-endian) arrays plus JSON metadata."""

import json

import numpy as np

_META_KEY = "__metadata__"


class CheckpointError(IOError):
    pass


def save_checkpoint(path, state, metadata):
    arrays = {name: np.asarray(value, dtype="<f8") for name, value in state.items()}
    if _META_KEY in arrays:
        raise CheckpointError(f"reserved name {_META_KEY}")
    meta = np.frombuffer(json.dumps(metadata, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays, **{_META_KEY: meta})


def load_checkpoint(path):
    """Return ``(state, metadata)``."""
    try:
        with np.load(path, allow_pickle=False) as archive:
            state = {k: archive[k].astype(np.float64) for k in archive.files if k != _META_KEY}
            metadata = json.loads(archive[_META_KEY].tobytes().decode("utf-8"))
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    return state, metadata
