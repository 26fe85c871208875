"""
Decoder stacks with a per-layer token-mixing variant.

Block layout (pre-norm, residual):

    x = x + Mix_l(RMSNorm(x))
    x = x + FFN_l(RMSNorm(x))        FFN is the gated SiLU MLP with width d_ff

rnd_emb_qk and fixed_seq_qk layers take Q and K from a shadow stream: a fixed
sequence (random embeddings or embedded bundled text) run through the same
stack on its own, with standard attention on every projection layer.
"""

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from pydantic import ValidationError

from attnlab.core.config import settings
from attnlab.core.errors import ConfigError, ShapeError, UnknownVariantError
from attnlab.ml import attention as attn
from attnlab.ml import tensor as ops
from attnlab.ml.corpus import encode
from attnlab.ml.tensor import Tensor
from attnlab.models.config import LayerMap, ModelConfig, VariantTag

logger = logging.getLogger(__name__)

INIT_STD = 0.02

MAP_NAMES = ("even", "odd", "top", "middle", "bottom", "25%", "first", "last", "bilateral", "uniform")
MAP_ALIASES = {"50%": "even", "hybrid": "even", "bilteral": "bilateral"}


# Presets and layer maps

@lru_cache(maxsize=4)
def load_presets(path: Optional[str] = None) -> Dict:
    """Parse the preset table; returns {"defaults": {...}, "sizes": {...}}"""

    with open(path or settings.PRESETS_PATH, "r") as f:
        table = yaml.safe_load(f)["model_presets"]
    return {"defaults": table.get("defaults", {}), "sizes": table["sizes"]}


def preset_names() -> List[str]:
    return list(load_presets()["sizes"])


def standard_layer_ids(name: str, n_layers: int) -> List[int]:
    """1-indexed standard-attention layers of a named map"""

    if n_layers < 1:
        raise ConfigError("n_layers must be at least 1")
    key = MAP_ALIASES.get(name, name)
    n = n_layers
    if key == "even":
        ids = range(2, n + 1, 2)
    elif key == "odd":
        ids = range(1, n + 1, 2)
    elif key == "top":
        ids = range(1, n // 2 + 1)
    elif key == "bottom":
        ids = range(n - math.ceil(n / 2) + 1, n + 1)
    elif key == "middle":
        edge = max(1, n // 4)
        ids = sorted(set(range(1, edge + 1)) | set(range(n - edge + 1, n + 1)))
    elif key == "25%":
        ids = range(4, n + 1, 4) if n >= 4 else [n]
    elif key == "first":
        ids = [1]
    elif key == "last":
        ids = [n]
    elif key == "bilateral":
        ids = sorted({1, n})
    elif key == "uniform":
        ids = []
    else:
        raise UnknownVariantError(
            f"unknown layer map {name!r}; expected one of {', '.join(MAP_NAMES)} "
            f"or aliases {', '.join(MAP_ALIASES)}"
        )
    return list(ids)


def layer_map_from_name(name: str, n_layers: int,
                        simplified: Union[VariantTag, str] = VariantTag.NONAPPROX) -> LayerMap:
    """Standard attention on the named layers, `simplified` everywhere else"""

    simplified = parse_variant(simplified)
    standard = set(standard_layer_ids(name, n_layers))
    return LayerMap(tags=[VariantTag.STANDARD if i in standard else simplified
                          for i in range(1, n_layers + 1)])


def format_layer_ids(ids: Sequence[int]) -> str:
    return "{" + ",".join(str(i) for i in ids) + "}"


def parse_variant(tag: Union[VariantTag, str]) -> VariantTag:
    try:
        return VariantTag(tag)
    except ValueError:
        raise UnknownVariantError(
            f"unknown variant {tag!r}; expected one of {', '.join(t.value for t in VariantTag)}"
        )


def validate_config(data: Dict) -> ModelConfig:
    """ModelConfig from a plain dict, pydantic failures surfaced as ConfigError"""

    try:
        return ModelConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid model config: {e}") from e


def preset_config(name: str, variant: Union[VariantTag, str] = VariantTag.STANDARD,
                  layer_map: str = "uniform", **overrides) -> ModelConfig:
    """ModelConfig for a named size; `layer_map` places standard layers among `variant` ones"""

    presets = load_presets()
    if name not in presets["sizes"]:
        raise UnknownVariantError(f"unknown preset {name!r}; expected one of {', '.join(presets['sizes'])}")
    data = {**presets["defaults"], **presets["sizes"][name], **overrides}
    data["variant_map"] = layer_map_from_name(layer_map, data["n_layers"], variant)
    return validate_config(data)


# Parameter layout

def mlp_width(d_model: int) -> Tuple[int, int]:
    """(d_ff', r): 3*d*d_ff' + r*d == 4*d^2, the r gain vectors covering the remainder"""
    return (4 * d_model) // 3, (4 * d_model) % 3


def parameter_shapes(cfg: ModelConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    """Every parameter name and shape, in initialization order"""

    d, d_ff = cfg.d_model, cfg.d_ff
    shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
    shapes["embed.weight"] = (cfg.vocab_size, d)
    for i, tag in enumerate(cfg.variant_map.tags):
        prefix = f"layers.{i}"
        shapes[f"{prefix}.attn_norm.gain"] = (d,)
        if tag is VariantTag.MLP:
            width, gains = mlp_width(d)
            shapes[f"{prefix}.attn.W_Gt"] = (d, width)
            shapes[f"{prefix}.attn.W_Up"] = (d, width)
            shapes[f"{prefix}.attn.W_Dn"] = (width, d)
            if gains >= 1:
                shapes[f"{prefix}.attn.out_gain"] = (d,)
            if gains >= 2:
                shapes[f"{prefix}.attn.in_gain"] = (d,)
        else:
            for name in ("W_Q", "W_K", "W_V", "W_O"):
                shapes[f"{prefix}.attn.{name}"] = (d, d)
        shapes[f"{prefix}.ffn_norm.gain"] = (d,)
        shapes[f"{prefix}.ffn.W_Gt"] = (d, d_ff)
        shapes[f"{prefix}.ffn.W_Up"] = (d, d_ff)
        shapes[f"{prefix}.ffn.W_Dn"] = (d_ff, d)
    shapes["final_norm.gain"] = (d,)
    if not cfg.tie_embeddings:
        shapes["lm_head.weight"] = (cfg.vocab_size, d)
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for shape in parameter_shapes(cfg).values())


def _is_gain(name: str) -> bool:
    return name.endswith(".gain") or name.endswith("_gain")


# Forward capture

@dataclass
class LayerCapture:
    layer: int  # 1-indexed
    variant: VariantTag
    A: Optional[np.ndarray]
    prelogits: Optional[np.ndarray]
    stochastic: bool = True


@dataclass
class Capture:
    """Attention weights and pre-softmax activations recorded during a forward"""

    layers: List[LayerCapture] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.layers)


class Model:
    """Decoder stack: parameters, variant assignment and the shadow-stream cache"""

    def __init__(self, cfg: ModelConfig, params: "OrderedDict[str, Tensor]", seed: int = 0):
        self.cfg = cfg
        self.params = params
        self.seed = seed
        self.version = 0
        self._shadow_cache: Dict[Tuple[int, int], List[Optional[Tensor]]] = {}
        self._shadow_source = self._make_shadow_source() if cfg.needs_shadow else None

    # Parameters

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return list(self.params.items())

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def bump_version(self) -> None:
        """Mark parameters as changed; cached shadow states go stale"""
        self.version += 1
        self._shadow_cache.clear()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.params.items())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        expected = parameter_shapes(self.cfg)
        if list(state) != list(expected):
            missing = set(expected) - set(state)
            extra = set(state) - set(expected)
            raise ConfigError(f"parameter names differ (missing {sorted(missing)}, unexpected {sorted(extra)})")
        for name, array in state.items():
            if tuple(array.shape) != expected[name]:
                raise ConfigError(f"{name}: shape {array.shape} does not match {expected[name]}")
            self.params[name].data = np.array(array, dtype=self.dtype)
        self.bump_version()

    @property
    def dtype(self) -> np.dtype:
        return ops.resolve_dtype(self.cfg.dtype)

    def attn_params(self, index: int) -> attn.AttnParams:
        """Weights of layer `index` (0-based) as AttnParams"""

        prefix = f"layers.{index}.attn."
        kwargs = {name[len(prefix):]: p for name, p in self.params.items() if name.startswith(prefix)}
        return attn.AttnParams(n_heads=self.cfg.n_heads, rope_base=self.cfg.rope_base,
                               layer=index + 1, **kwargs)

    # Blocks

    def _norm(self, x: Tensor, name: str) -> Tensor:
        return ops.rms_norm(x, self.params[name], self.cfg.norm_eps)

    def _ffn(self, index: int, x: Tensor) -> Tensor:
        prefix = f"layers.{index}.ffn."
        gate = ops.silu(x @ self.params[prefix + "W_Gt"])
        return (gate * (x @ self.params[prefix + "W_Up"])) @ self.params[prefix + "W_Dn"]

    def _mix(self, index: int, tag: VariantTag, h: Tensor, embedded: Tensor,
             shadow: Optional[Tensor], need_weights: bool) -> attn.AttentionOutput:
        p = self.attn_params(index)
        norm = f"layers.{index}.attn_norm.gain"
        if tag is VariantTag.STANDARD:
            return attn.standard_attention(h, p, need_weights)
        if tag is VariantTag.MLP:
            return attn.gated_mlp(h, p)
        if tag is VariantTag.APPROX:
            return attn.approximate_attention_parallel(h, p, self.cfg.approx_mode, need_weights)
        if tag is VariantTag.NONAPPROX:
            return attn.nonapprox_attention_parallel(h, p, need_weights)
        if tag is VariantTag.STATIC_EMB_QK:
            return attn.static_emb_qk_attention(h, self._norm(embedded, norm), p, need_weights)
        # rnd_emb_qk / fixed_seq_qk
        return attn.external_qk_attention(h, self._norm(shadow, norm), p, need_weights)

    def _embed(self, tokens: np.ndarray) -> Tensor:
        return ops.embedding(self.params["embed.weight"], tokens)

    def _logits(self, x: Tensor) -> Tensor:
        x = self._norm(x, "final_norm.gain")
        head = self.params["embed.weight"] if self.cfg.tie_embeddings else self.params["lm_head.weight"]
        return x @ ops.swapaxes(head, -1, -2)

    def forward(self, tokens, capture: Optional[Capture] = None) -> Tensor:
        """Next-token logits [L, V] for tokens [L], or [B, L, V] for tokens [B, L]"""

        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim not in (1, 2) or tokens.shape[-1] == 0:
            raise ShapeError(f"tokens must be [L] or [B, L] with L >= 1, got shape {tokens.shape}")
        length = tokens.shape[-1]
        if length > self.cfg.max_seq_len:
            raise ShapeError(f"sequence length {length} exceeds max_seq_len {self.cfg.max_seq_len}")

        embedded = self._embed(tokens)
        shadow = self.shadow_states(length) if self.cfg.needs_shadow else None

        x = embedded
        for i, tag in enumerate(self.cfg.variant_map.tags):
            h = self._norm(x, f"layers.{i}.attn_norm.gain")
            out = self._mix(i, tag, h, embedded, shadow[i] if shadow else None, capture is not None)
            if capture is not None:
                capture.layers.append(LayerCapture(
                    layer=i + 1,
                    variant=tag,
                    A=None if out.A is None else out.A.data,
                    prelogits=None if out.prelogits is None else out.prelogits.data,
                    stochastic=out.stochastic,
                ))
            x = x + out.O
            x = x + self._ffn(i, self._norm(x, f"layers.{i}.ffn_norm.gain"))
        return self._logits(x)

    __call__ = forward

    # Shadow stream

    def _make_shadow_source(self) -> np.ndarray:
        spec = self.cfg.shadow
        length = self.cfg.shadow_length
        if spec.kind == "random_embeddings":
            rng = np.random.default_rng(spec.seed)
            return rng.normal(0.0, spec.sigma, (length, self.cfg.d_model)).astype(self.dtype)
        path = Path(spec.source_path or settings.SHADOW_TEXT_PATH)
        if not path.is_file():
            raise ConfigError(f"shadow text not found: {path}")
        tokens = encode(path.read_bytes())[spec.offset:spec.offset + length]
        if len(tokens) < length:
            raise ConfigError(
                f"shadow text {path} yields {len(tokens)} tokens from offset {spec.offset}, need {length}"
            )
        return tokens

    def _shadow_input(self, length: int) -> Tensor:
        if self.cfg.shadow.kind == "random_embeddings":
            return Tensor(self._shadow_source[:length])
        return self._embed(self._shadow_source[:length])

    def shadow_states(self, length: int) -> List[Optional[Tensor]]:
        """X^(l) entering each layer l, for the first `length` shadow positions.

        Entries after the last layer that reads the shadow stream are None.
        With a tape active the pass is recomputed so gradients reach the
        shared parameters; otherwise it is cached per (version, length).
        """

        if not self.cfg.needs_shadow:
            return [None] * self.cfg.n_layers
        if length > self.cfg.shadow_length:
            raise ShapeError(f"shadow stream holds {self.cfg.shadow_length} positions, {length} requested")
        if ops.current_tape() is not None:
            return self._shadow_pass(length)
        key = (self.version, length)
        if key not in self._shadow_cache:
            self._shadow_cache[key] = self._shadow_pass(length)
        return self._shadow_cache[key]

    def _shadow_pass(self, length: int) -> List[Optional[Tensor]]:
        tags = self.cfg.variant_map.tags
        last = max(i for i, tag in enumerate(tags) if tag in (VariantTag.RND_EMB_QK, VariantTag.FIXED_SEQ_QK))
        states: List[Optional[Tensor]] = [None] * len(tags)
        x = self._shadow_input(length)
        for i, tag in enumerate(tags[:last + 1]):
            states[i] = x
            if i == last:
                break
            p = self.attn_params(i)
            h = self._norm(x, f"layers.{i}.attn_norm.gain")
            mixed = attn.gated_mlp(h, p) if tag is VariantTag.MLP else attn.standard_attention(h, p)
            x = x + mixed.O
            x = x + self._ffn(i, self._norm(x, f"layers.{i}.ffn_norm.gain"))
        return states

    def describe(self) -> Dict:
        return {
            "layers": [tag.value for tag in self.cfg.variant_map.tags],
            "standard_layers": self.cfg.variant_map.standard_layers(),
            "parameters": self.num_parameters(),
            "version": self.version,
        }


def shadow_forward(model: Model, length: Optional[int] = None) -> List[Optional[Tensor]]:
    """Per-layer shadow hidden states X^(l) for `length` positions (default: all)"""
    return model.shadow_states(length or model.cfg.shadow_length)


def build_model(cfg: ModelConfig, seed: int = 0) -> Model:
    """Initialize parameters from `seed`: matrices N(0, 0.02^2), gains 1"""

    count = parameter_count(cfg)
    if count > settings.MAX_BUILD_PARAMS:
        raise ConfigError(
            f"config has {count:,} parameters, above the build limit of {settings.MAX_BUILD_PARAMS:,}"
        )
    dtype = ops.resolve_dtype(cfg.dtype)
    rng = np.random.default_rng(seed)
    params: "OrderedDict[str, Tensor]" = OrderedDict()
    for name, shape in parameter_shapes(cfg).items():
        if _is_gain(name):
            value = np.ones(shape, dtype=dtype)
        else:
            value = rng.normal(0.0, INIT_STD, shape).astype(dtype)
        params[name] = Tensor(value, requires_grad=True, name=name)

    logger.info(f"Built model: {cfg.n_layers} layers, d_model={cfg.d_model}, {count:,} parameters")
    return Model(cfg, params, seed)


def skip_transform(model: Model) -> Model:
    """Drop every non-standard layer.

    The result owns copies of the kept weights, so training it leaves `model` unchanged.
    """

    tags = model.cfg.variant_map.tags
    keep = [i for i, tag in enumerate(tags) if tag is VariantTag.STANDARD]
    if not keep:
        raise ConfigError("layer map has no standard layers to keep")

    cfg = model.cfg.model_copy(update={
        "n_layers": len(keep),
        "variant_map": LayerMap(tags=[VariantTag.STANDARD] * len(keep)),
        "shadow": None,
    })
    sources: Dict[str, str] = {name: name for name in model.params if not name.startswith("layers.")}
    for new_index, old_index in enumerate(keep):
        old_prefix = f"layers.{old_index}."
        for name in model.params:
            if name.startswith(old_prefix):
                sources[f"layers.{new_index}.{name[len(old_prefix):]}"] = name
    params: "OrderedDict[str, Tensor]" = OrderedDict(
        (name, Tensor(model.params[sources[name]].data.copy(), requires_grad=True, name=name))
        for name in parameter_shapes(cfg)
    )
    logger.info(f"Skip transform kept layers {format_layer_ids([i + 1 for i in keep])} of {len(tags)}")
    return Model(cfg, params, model.seed)
