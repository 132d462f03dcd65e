"""Helper functions for tontine_flow."""
import hashlib
import json
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import IO, Any, Iterator, Tuple, Union

import numpy as np

#: Paths are generated in fixed size chunks; each chunk owns an independent
#: random stream so results do not depend on how chunks are scheduled.
PATH_CHUNK: int = 4096

# Stream purposes, used as the first element of the spawn key.
MARKET_STREAM = 0
MORTALITY_STREAM = 1
DEATH_STREAM = 2
BATCH_STREAM = 3
INIT_STREAM = 4


@contextmanager
def change_log_level(level: int | str | None, *, logger: logging.Logger | None = None):
    """Temporarily change the log level of a logger."""
    if level is None:
        yield
    else:
        logger = logger or logging.root
        old_level = logger.level
        logger.setLevel(level)
        try:
            yield
        finally:
            logger.setLevel(old_level)


def human_join_strings(items, *, conjunction: str = "and", empty: str = ""):
    """Join a list of strings with a human-readable conjunction."""
    if not items:
        return empty

    if len(items) == 1:
        return items[0]

    return f"{', '.join(items[:-1])} {conjunction} {items[-1]}"


def read_source(source: Union[str, Path, IO[str]]) -> Tuple[str, str]:
    """Read text from a path or file-like object.

    :return: Tuple of ``(text, name)``; name is used in error messages.
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        return path.read_text(), str(path)
    return source.read(), getattr(source, "name", "<input>")


def stream(seed: int, purpose: int, *key: int) -> np.random.Generator:
    """Random generator keyed by ``(seed, purpose, *key)``."""
    return np.random.default_rng(
        np.random.SeedSequence(int(seed), spawn_key=(int(purpose), *map(int, key)))
    )


def path_chunks(
    seed: int, n_paths: int, purpose: int
) -> Iterator[Tuple[slice, np.random.Generator]]:
    """Yield ``(rows, generator)`` pairs covering ``n_paths`` paths.

    The generator for a chunk depends only on the seed, the purpose and the
    chunk index.
    """
    for chunk, start in enumerate(range(0, n_paths, PATH_CHUNK)):
        yield slice(start, min(start + PATH_CHUNK, n_paths)), stream(seed, purpose, chunk)


def digest_arrays(*arrays: np.ndarray) -> str:
    """SHA-256 over the raw bytes, shapes and dtypes of arrays."""
    sha = hashlib.sha256()
    for array in arrays:
        array = np.ascontiguousarray(array)
        sha.update(str((array.shape, array.dtype.str)).encode())
        sha.update(array.tobytes())
    return sha.hexdigest()


def digest_file(path: Path) -> str:
    """SHA-256 of a file's contents."""
    sha = hashlib.sha256()
    with Path(path).open("rb") as f_in:
        for block in iter(lambda: f_in.read(1 << 16), b""):
            sha.update(block)
    return sha.hexdigest()


def _json_default(value: Any):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return value.as_posix()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serialisable")


def dumps(data: Any) -> str:
    """Deterministic JSON encoding (sorted keys, numpy aware)."""
    return json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n"


def write_json(path: Path, data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(data))
    return path
