"""
Run-configuration resolution: config file, preset, then command-line overrides
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import ValidationError

from attnlab.core.errors import ConfigError
from attnlab.core.io import atomic_write_text
from attnlab.ml.composer import layer_map_from_name, load_presets, parse_variant
from attnlab.models.config import ModelConfig, RunConfig, TrainConfig

logger = logging.getLogger(__name__)

DEFAULT_PRESET = "desk"


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    """Raw JSON document, or {} when no path is given"""

    if not path:
        return {}
    config_file = Path(path)
    if not config_file.is_file():
        raise ConfigError(f"config file not found: {config_file}")
    try:
        data = json.loads(config_file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{config_file} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{config_file} must hold a JSON object")
    return data


def _drop_unset(values: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    return {k: v for k, v in (values or {}).items() if v is not None}


def resolve_run_config(config_path: Optional[str] = None,
                       preset: Optional[str] = None,
                       variant: Optional[str] = None,
                       layer_map: Optional[str] = None,
                       model_overrides: Optional[Dict[str, Any]] = None,
                       train_overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Merge file values, preset sizes and flag overrides into one validated RunConfig.

    Precedence, lowest first: preset sizes, config file, flags. A preset is
    applied when named explicitly or when the file has no model section.
    --variant / --layer-map rebuild the variant map from the resolved n_layers.
    An unset train.seq_len defaults to min(256, model.max_seq_len).
    """

    data = load_config_file(config_path)
    unknown = set(data) - {"model", "train"}
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")
    model_data = dict(data.get("model") or {})
    train_data = dict(data.get("train") or {})

    if preset or not model_data:
        presets = load_presets()
        name = preset or DEFAULT_PRESET
        if name not in presets["sizes"]:
            raise ConfigError(f"unknown preset {name!r}; expected one of {', '.join(presets['sizes'])}")
        model_data = {**presets["defaults"], **presets["sizes"][name], **model_data}

    model_data.update(_drop_unset(model_overrides))
    if variant is not None or layer_map is not None or "variant_map" not in model_data:
        n_layers = model_data.get("n_layers")
        if not isinstance(n_layers, int):
            raise ConfigError("n_layers must be set to build a layer map")
        tags = layer_map_from_name(layer_map or "uniform", n_layers, parse_variant(variant or "standard"))
        model_data["variant_map"] = tags.model_dump(mode="json")
    train_data.update(_drop_unset(train_overrides))
    if "seq_len" not in train_data and isinstance(model_data.get("max_seq_len"), int):
        train_data["seq_len"] = min(TrainConfig.model_fields["seq_len"].default, model_data["max_seq_len"])
    if "max_steps" in train_data and "warmup_steps" not in train_data:
        default_warmup = TrainConfig.model_fields["warmup_steps"].default
        if isinstance(train_data["max_steps"], int):
            train_data["warmup_steps"] = min(default_warmup, max(0, train_data["max_steps"]))

    try:
        run_cfg = RunConfig.model_validate({"model": model_data, "train": train_data})
    except ValidationError as e:
        raise ConfigError(f"invalid run config: {e}") from e
    if run_cfg.train.seq_len > run_cfg.model.max_seq_len:
        raise ConfigError(
            f"train.seq_len {run_cfg.train.seq_len} exceeds model.max_seq_len {run_cfg.model.max_seq_len}"
        )
    return run_cfg


def log_resolved_config(run_cfg: RunConfig) -> str:
    """Log the fully resolved config as JSON and return the text"""

    text = run_cfg.model_dump_json(indent=2)
    logger.info(f"Resolved config:\n{text}")
    return text


def write_resolved_config(run_cfg: RunConfig, path: Path) -> Path:
    atomic_write_text(path, run_cfg.model_dump_json(indent=2) + "\n")
    return path


def checkpoint_run_config(model_cfg: ModelConfig, train_cfg: Optional[TrainConfig] = None,
                          seed: Optional[int] = None) -> RunConfig:
    """RunConfig describing a loaded checkpoint, for commands that read one"""

    train = train_cfg or TrainConfig(seq_len=min(TrainConfig.model_fields["seq_len"].default,
                                                 model_cfg.max_seq_len))
    if seed is not None:
        train = train.model_copy(update={"seed": seed})
    return RunConfig(model=model_cfg, train=train)
