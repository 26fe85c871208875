"""
Pydantic schemas shared by the library and the CLI
"""

from .config import LayerMap, ModelConfig, RunConfig, ShadowSpec, TrainConfig, VariantTag
from .cost import CostQuery, CostReport, CostTerm
from .report import IndicatorRecord, IndicatorReport, LayerIndicatorRecord, PrelogitStatsRecord
from .training import EquivalenceResult, EvalRecord, PerplexityResult, TrainLogRecord, TrainResult

__all__ = [
    "LayerMap", "ModelConfig", "RunConfig", "ShadowSpec", "TrainConfig", "VariantTag",
    "CostQuery", "CostReport", "CostTerm",
    "IndicatorRecord", "IndicatorReport", "LayerIndicatorRecord", "PrelogitStatsRecord",
    "EquivalenceResult", "EvalRecord", "PerplexityResult", "TrainLogRecord", "TrainResult",
]
