"""
Attention-diagnostic record models
"""

from typing import List, Optional

from pydantic import BaseModel, Field


class IndicatorRecord(BaseModel):
    """Raw indicators for one (layer, head); layers and heads are 1-indexed"""
    layer: int
    head: int
    entropy: float = Field(ge=0.0)
    conc: float = Field(ge=0.0)
    head_div: Optional[float] = None  # per layer, repeated on each head
    sink: float
    loc_foc0: Optional[float] = None
    loc_foc1: Optional[float] = None
    loc_foc2: Optional[float] = None
    loc_foc3: Optional[float] = None


class LayerIndicatorRecord(BaseModel):
    """Head-averaged indicators for one layer, raw or normalized for plotting"""
    layer: int
    variant: str
    normalized: bool
    weights_renormalized: bool = False
    entropy: float
    conc: float
    head_div: Optional[float] = None
    sink: float
    loc_foc0: Optional[float] = None
    loc_foc1: Optional[float] = None
    loc_foc2: Optional[float] = None
    loc_foc3: Optional[float] = None


class PrelogitStatsRecord(BaseModel):
    """Distribution of pre-softmax activations over the causal support of one layer"""
    layer: int
    variant: str
    count: int = Field(ge=1)
    min: float
    q01: float
    q25: float
    q50: float
    q75: float
    q99: float
    max: float


class IndicatorReport(BaseModel):
    """Everything `diagnose` emits for one evaluation batch"""
    seq_len: int
    batch_size: int
    batch_source: str
    heads: List[IndicatorRecord]
    layers: List[LayerIndicatorRecord]
    normalized: List[LayerIndicatorRecord]
    prelogits: List[PrelogitStatsRecord]
