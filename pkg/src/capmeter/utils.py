import json
import os
import tempfile
from collections.abc import Iterator
from pathlib import Path
from typing import Any

import numpy as np

from capmeter.config import Config, Stream


# MARK: rng_stream
def rng_stream(seed: int, stream: Stream, *extra: int) -> np.random.Generator:
    """Independent generator for one named substream of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(stream), *extra)))


# MARK: sign_patterns
def sign_patterns(n: int, chunk: int = Config.SIGN_CHUNK) -> Iterator[np.ndarray]:
    """Yield every vector in {-1, +1}^n, in blocks of at most ``chunk`` rows.

    Row ``r`` of the full enumeration has entry ``j`` equal to +1 when bit ``j`` of ``r`` is set.
    """
    total = 1 << n
    bits = np.arange(n, dtype=np.int64)
    for start in range(0, total, chunk):
        rows = np.arange(start, min(start + chunk, total), dtype=np.int64)
        yield (((rows[:, None] >> bits) & 1) * 2 - 1).astype(np.float64)


# MARK: atomic_write_bytes
def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` via a temp file in the same directory and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


# MARK: atomic_write_text
def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# MARK: write_json
def write_json(path: Path, payload: Any) -> None:
    atomic_write_text(path, json.dumps(to_jsonable(payload), indent=2, sort_keys=True) + "\n")


# MARK: to_jsonable
def to_jsonable(value: Any) -> Any:
    """Convert numpy containers and non-finite floats into strict JSON values."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.integer | np.bool_):
        return value.item()
    if isinstance(value, float | np.floating):
        value = float(value)
        return value if np.isfinite(value) else None
    return value
