"""
Binary checkpoint codec.

Layout (little-endian):

    b"DATN"                      magic
    u32                          format version
    u32 + bytes                  manifest, UTF-8 JSON (model/train config, seed, parity widths)
    u64                          parameter version counter
    u32 + bytes                  RNG state, UTF-8 JSON ("null" when absent)
    u32                          parameter count
    per parameter:
        u16 + bytes              name
        u8                       dtype code (1 = f32, 2 = f64)
        u8                       rank
        u32 * rank               dims
        raw values               row-major
"""

import json
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from attnlab.core.errors import (
    CheckpointError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from attnlab.core.io import atomic_write_bytes
from attnlab.ml.composer import Model, mlp_width, parameter_count, parameter_shapes
from attnlab.ml.tensor import Tensor
from attnlab.models.config import ModelConfig, TrainConfig

logger = logging.getLogger(__name__)

MAGIC = b"DATN"
FORMAT_VERSION = 1

DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}


@dataclass
class CheckpointContents:
    """Everything a checkpoint holds"""

    manifest: Dict[str, Any]
    param_version: int
    rng_state: Optional[Dict[str, Any]]
    params: "OrderedDict[str, np.ndarray]"

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.model_validate(self.manifest["model"])

    @property
    def train_config(self) -> Optional[TrainConfig]:
        train = self.manifest.get("train")
        return TrainConfig.model_validate(train) if train else None


def build_manifest(model: Model, train_cfg: Optional[TrainConfig] = None) -> Dict[str, Any]:
    width, gains = mlp_width(model.cfg.d_model)
    return {
        "format": "DATN",
        "model": model.cfg.model_dump(mode="json"),
        "train": train_cfg.model_dump(mode="json") if train_cfg else None,
        "seed": model.seed,
        "mlp_width": width,
        "mlp_gain_vectors": gains,
        "parameters": parameter_count(model.cfg),
    }


def encode_checkpoint(model: Model, train_cfg: Optional[TrainConfig] = None,
                      rng_state: Optional[Dict[str, Any]] = None) -> bytes:
    manifest = json.dumps(build_manifest(model, train_cfg), indent=2, sort_keys=True).encode("utf-8")
    rng = json.dumps(rng_state, sort_keys=True).encode("utf-8")

    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION),
              struct.pack("<I", len(manifest)), manifest,
              struct.pack("<Q", model.version),
              struct.pack("<I", len(rng)), rng,
              struct.pack("<I", len(model.params))]
    for name, param in model.params.items():
        data = param.data
        if data.dtype not in DTYPE_CODES:
            raise CheckpointError(f"{name}: unsupported dtype {data.dtype}")
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<BB", DTYPE_CODES[data.dtype], data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(np.ascontiguousarray(data, dtype=data.dtype.newbyteorder("<")).tobytes())
    return b"".join(chunks)


def _validate_manifest(manifest: Any) -> None:
    if not isinstance(manifest, dict) or not isinstance(manifest.get("model"), dict):
        raise CheckpointFormatError("manifest has no model section")
    try:
        ModelConfig.model_validate(manifest["model"])
        if manifest.get("train"):
            TrainConfig.model_validate(manifest["train"])
    except ValidationError as e:
        raise CheckpointFormatError(f"manifest holds an invalid config: {e}") from e


def _decode_rng_state(raw: bytes) -> Optional[Dict[str, Any]]:
    try:
        state = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"rng state is not valid JSON: {e}") from e
    if state is not None and not isinstance(state, dict):
        raise CheckpointFormatError("rng state must be a JSON object or null")
    return state


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise CheckpointTruncatedError(
                f"checkpoint ends at byte {len(self.payload)} while reading {what} ({size} bytes at {self.offset})"
            )
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(payload: bytes) -> CheckpointContents:
    reader = _Reader(payload)
    magic = reader.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointFormatError(f"not a checkpoint: magic {magic!r}, expected {MAGIC!r}")
    (version,) = reader.unpack("<I", "format version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version} is not supported (this build reads {FORMAT_VERSION})"
        )

    (manifest_len,) = reader.unpack("<I", "manifest length")
    try:
        manifest = json.loads(reader.take(manifest_len, "manifest").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"manifest is not valid JSON: {e}") from e
    _validate_manifest(manifest)
    (param_version,) = reader.unpack("<Q", "parameter version")
    (rng_len,) = reader.unpack("<I", "rng state length")
    rng_state = _decode_rng_state(reader.take(rng_len, "rng state"))

    (n_params,) = reader.unpack("<I", "parameter count")
    params: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(n_params):
        (name_len,) = reader.unpack("<H", "name length")
        name = reader.take(name_len, "parameter name").decode("utf-8")
        code, rank = reader.unpack("<BB", f"{name} header")
        if code not in CODE_DTYPES:
            raise CheckpointFormatError(f"{name}: unknown dtype code {code}")
        dims = reader.unpack(f"<{rank}I", f"{name} dims")
        dtype = CODE_DTYPES[code].newbyteorder("<")
        size = int(np.prod(dims)) * dtype.itemsize
        raw = reader.take(size, f"{name} values")
        params[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).astype(CODE_DTYPES[code])
    if reader.offset != len(payload):
        raise CheckpointFormatError(f"{len(payload) - reader.offset} trailing bytes after the parameter table")
    return CheckpointContents(manifest, param_version, rng_state, params)


def save_checkpoint(model: Model, path: Union[str, Path], train_cfg: Optional[TrainConfig] = None,
                    rng_state: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    atomic_write_bytes(path, encode_checkpoint(model, train_cfg, rng_state))
    logger.info(f"Checkpoint saved to {path} (parameter version {model.version})")
    return path


def read_checkpoint(path: Union[str, Path]) -> CheckpointContents:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def model_from_contents(contents: CheckpointContents) -> Model:
    cfg = contents.model_config
    expected = parameter_shapes(cfg)
    if list(contents.params) != list(expected):
        raise CheckpointFormatError("parameter table does not match the manifest's model config")
    params: "OrderedDict[str, Tensor]" = OrderedDict()
    for name, array in contents.params.items():
        if tuple(array.shape) != expected[name]:
            raise CheckpointFormatError(f"{name}: stored shape {array.shape}, config implies {expected[name]}")
        params[name] = Tensor(array, requires_grad=True, name=name)
    model = Model(cfg, params, seed=int(contents.manifest.get("seed", 0)))
    model.version = contents.param_version
    return model


def load_checkpoint(path: Union[str, Path]) -> Model:
    model = model_from_contents(read_checkpoint(path))
    logger.info(f"Loaded checkpoint {path}: {model.cfg.n_layers} layers, {model.num_parameters():,} parameters")
    return model
