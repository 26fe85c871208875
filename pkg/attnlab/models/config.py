"""
Model, shadow-stream and training configuration models
"""

from enum import Enum
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class VariantTag(str, Enum):
    """Token-mixing mechanism assigned to one layer"""

    STANDARD = "standard"
    MLP = "mlp"
    APPROX = "approx"
    NONAPPROX = "nonapprox"
    RND_EMB_QK = "rnd_emb_qk"
    FIXED_SEQ_QK = "fixed_seq_qk"
    STATIC_EMB_QK = "static_emb_qk"


SHADOW_VARIANTS = (VariantTag.RND_EMB_QK, VariantTag.FIXED_SEQ_QK)
PROJECTION_VARIANTS = tuple(tag for tag in VariantTag if tag is not VariantTag.MLP)


class LayerMap(BaseModel):
    """Per-layer variant assignment, layer 1 first"""

    model_config = ConfigDict(extra="forbid")

    tags: List[VariantTag] = Field(min_length=1)

    def __len__(self) -> int:
        return len(self.tags)

    def standard_layers(self) -> List[int]:
        """1-indexed ids of the standard-attention layers"""
        return [i + 1 for i, tag in enumerate(self.tags) if tag is VariantTag.STANDARD]

    def uses(self, *tags: VariantTag) -> bool:
        return any(tag in tags for tag in self.tags)

    @classmethod
    def uniform(cls, tag: VariantTag, n_layers: int) -> "LayerMap":
        return cls(tags=[tag] * n_layers)


class ShadowSpec(BaseModel):
    """Fixed input sequence feeding Q/K of rnd_emb_qk and fixed_seq_qk layers"""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["random_embeddings", "fixed_text"]
    sigma: float = Field(default=0.02, gt=0.0)
    source_path: Optional[str] = None  # bundled text when unset
    offset: int = Field(default=0, ge=0)
    length: Optional[int] = Field(default=None, ge=1)
    seed: int = 0


class ModelConfig(BaseModel):
    """Decoder stack configuration"""

    model_config = ConfigDict(extra="forbid")

    vocab_size: int = Field(default=257, ge=2)
    d_model: int = Field(ge=1)
    d_ff: int = Field(ge=1)
    n_layers: int = Field(ge=1)
    n_heads: int = Field(ge=1)
    max_seq_len: int = Field(ge=1)
    rope_base: float = Field(default=10000.0, gt=0.0)
    norm_eps: float = Field(default=1e-6, ge=0.0)
    variant_map: LayerMap
    shadow: Optional[ShadowSpec] = None
    tie_embeddings: bool = True
    approx_mode: Literal["split", "shared"] = "split"
    dtype: Literal["f32", "f64"] = "f32"

    @model_validator(mode="after")
    def check_consistency(self) -> "ModelConfig":
        if len(self.variant_map) != self.n_layers:
            raise ValueError(
                f"variant_map has {len(self.variant_map)} layers, n_layers is {self.n_layers}"
            )
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if (self.d_model // self.n_heads) % 2:
            raise ValueError("head size must be even for rotary embeddings")

        has_rnd = self.variant_map.uses(VariantTag.RND_EMB_QK)
        has_fixed = self.variant_map.uses(VariantTag.FIXED_SEQ_QK)
        if has_rnd and has_fixed:
            raise ValueError("rnd_emb_qk and fixed_seq_qk cannot share one shadow stream")
        wanted = "random_embeddings" if has_rnd else "fixed_text" if has_fixed else None
        if wanted and self.shadow is None:
            self.shadow = ShadowSpec(kind=wanted)
        elif wanted and self.shadow.kind != wanted:
            raise ValueError(f"shadow kind {self.shadow.kind!r} does not match layers needing {wanted!r}")
        if self.shadow is not None and self.shadow.length is not None \
                and self.shadow.length < self.max_seq_len:
            raise ValueError(f"shadow length {self.shadow.length} is below max_seq_len {self.max_seq_len}")
        return self

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def needs_shadow(self) -> bool:
        return self.variant_map.uses(*SHADOW_VARIANTS)

    @property
    def shadow_length(self) -> int:
        if self.shadow is not None and self.shadow.length is not None:
            return self.shadow.length
        return self.max_seq_len


class TrainConfig(BaseModel):
    """Optimizer, schedule and data settings for one training run"""

    model_config = ConfigDict(extra="forbid")

    max_steps: int = Field(default=2000, ge=0)
    batch_size: int = Field(default=16, ge=1)
    seq_len: int = Field(default=256, ge=1)
    peak_lr: float = Field(default=4e-4, ge=0.0)
    warmup_steps: int = Field(default=100, ge=0)
    schedule: Literal["cosine"] = "cosine"
    cycles: float = Field(default=0.5, gt=0.0)
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.9999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    weight_decay: float = Field(default=0.1, ge=0.0)
    grad_clip_norm: float = Field(default=1.0, gt=0.0)
    seed: int = 0
    eval_every: int = Field(default=200, ge=0)  # 0 disables periodic eval
    corpus_path: Optional[str] = None

    @model_validator(mode="after")
    def check_warmup(self) -> "TrainConfig":
        if self.warmup_steps > self.max_steps:
            raise ValueError(f"warmup_steps {self.warmup_steps} exceeds max_steps {self.max_steps}")
        return self


class RunConfig(BaseModel):
    """One JSON document holding everything a run needs"""

    model_config = ConfigDict(extra="forbid")

    model: ModelConfig
    train: TrainConfig = Field(default_factory=TrainConfig)
