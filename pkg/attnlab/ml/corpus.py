"""
Byte-level corpus ingestion: 256 byte tokens plus a BOS marker
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Tuple, Union

import numpy as np

from attnlab.core.config import settings
from attnlab.core.errors import CorpusError, VocabularyError

logger = logging.getLogger(__name__)

BOS = 256
VOCAB_SIZE = 257


def encode(data: Union[bytes, str]) -> np.ndarray:
    """BOS followed by the raw byte values"""

    if isinstance(data, str):
        data = data.encode("utf-8")
    tokens = np.empty(len(data) + 1, dtype=np.int64)
    tokens[0] = BOS
    tokens[1:] = np.frombuffer(data, dtype=np.uint8)
    return tokens


def decode(tokens: Iterable[int]) -> bytes:
    """Inverse of `encode`; BOS markers are dropped"""

    values = np.asarray(list(tokens) if not isinstance(tokens, np.ndarray) else tokens, dtype=np.int64)
    if values.size and (values.min() < 0 or values.max() > BOS):
        raise VocabularyError("token outside the byte vocabulary")
    return values[values != BOS].astype(np.uint8).tobytes()


def ingest_corpus(path: Union[str, Path]) -> np.ndarray:
    """Read a file as bytes and tokenize it"""

    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"corpus not found: {path}")
    data = path.read_bytes()
    if not data:
        raise CorpusError(f"corpus is empty: {path}")
    logger.info(f"Ingested {len(data):,} bytes from {path}")
    return encode(data)


def window_count(n_tokens: int, seq_len: int) -> int:
    """Number of non-overlapping windows with a one-token-shifted target"""
    return max(0, (n_tokens - 1) // seq_len)


def windows(tokens: np.ndarray, seq_len: int) -> Tuple[np.ndarray, np.ndarray]:
    """(inputs, targets), each [n_windows, seq_len]"""

    n = window_count(len(tokens), seq_len)
    span = n * seq_len
    inputs = tokens[:span].reshape(n, seq_len)
    targets = tokens[1:span + 1].reshape(n, seq_len)
    return inputs, targets


@dataclass
class Corpus:
    """Tokenized corpus cut into training and validation windows"""

    tokens: np.ndarray
    seq_len: int
    inputs: np.ndarray
    targets: np.ndarray
    n_train: int

    @classmethod
    def from_tokens(cls, tokens: np.ndarray, seq_len: int,
                    val_fraction: Optional[float] = None) -> "Corpus":
        val_fraction = settings.VAL_FRACTION if val_fraction is None else val_fraction
        inputs, targets = windows(tokens, seq_len)
        n = len(inputs)
        n_val = max(1, math.floor(n * val_fraction))
        if n - n_val < 1:
            raise CorpusError(
                f"corpus of {len(tokens)} tokens gives {n} windows of {seq_len}; "
                f"need at least 2 for a train/validation split"
            )
        logger.info(f"Corpus split: {n - n_val} training windows, {n_val} validation windows")
        return cls(tokens, seq_len, inputs, targets, n - n_val)

    @classmethod
    def from_path(cls, path: Union[str, Path], seq_len: int,
                  val_fraction: Optional[float] = None) -> "Corpus":
        return cls.from_tokens(ingest_corpus(path), seq_len, val_fraction)

    @property
    def n_val(self) -> int:
        return len(self.inputs) - self.n_train

    def train_batch(self, rng: np.random.Generator, batch_size: int) -> Tuple[np.ndarray, np.ndarray]:
        rows = rng.integers(0, self.n_train, size=batch_size)
        return self.inputs[rows], self.targets[rows]

    def val_tokens(self) -> np.ndarray:
        """Contiguous token slice covering the validation windows plus the final target"""
        start = self.n_train * self.seq_len
        return self.tokens[start:start + self.n_val * self.seq_len + 1]

    def val_batches(self, batch_size: int, limit: Optional[int] = None):
        stop = len(self.inputs) if limit is None else min(len(self.inputs), self.n_train + limit * batch_size)
        for start in range(self.n_train, stop, batch_size):
            end = min(start + batch_size, stop)
            yield self.inputs[start:end], self.targets[start:end]
