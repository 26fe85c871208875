"""
Atomic artifact writes
"""

import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import IO, Iterator, Sequence, Union

import pandas as pd
from pydantic import BaseModel

PathLike = Union[str, os.PathLike]


@contextmanager
def atomic_open(path: PathLike, mode: str = "w") -> Iterator[IO]:
    """Open a temp file beside `path`; rename over it only if the block succeeds"""

    target = Path(path)
    if target.parent and not target.parent.exists():
        target.parent.mkdir(parents=True, exist_ok=True)

    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=str(target.parent))
    binary = "b" in mode
    try:
        with os.fdopen(fd, mode, **({} if binary else {"encoding": "utf-8", "newline": ""})) as handle:
            yield handle
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise


def atomic_write_bytes(path: PathLike, payload: bytes) -> None:
    with atomic_open(path, "wb") as handle:
        handle.write(payload)


def atomic_write_text(path: PathLike, text: str) -> None:
    with atomic_open(path, "w") as handle:
        handle.write(text)


def write_frame_jsonl(path: PathLike, frame: pd.DataFrame) -> Path:
    """One JSON object per row; NaN becomes null"""

    text = frame.to_json(orient="records", lines=True, double_precision=15) if len(frame) else ""
    with atomic_open(path, "w") as handle:
        if text:
            handle.write(text.rstrip("\n") + "\n")
    return Path(path)


def write_frame_csv(path: PathLike, frame: pd.DataFrame) -> Path:
    with atomic_open(path, "w") as handle:
        frame.to_csv(handle, index=False, lineterminator="\n")
    return Path(path)


def write_records_jsonl(path: PathLike, records: Sequence[BaseModel]) -> Path:
    with atomic_open(path, "w") as handle:
        for record in records:
            handle.write(record.model_dump_json() + "\n")
    return Path(path)
