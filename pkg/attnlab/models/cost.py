"""
Analytical cost model query and report models
"""

from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, model_validator

Metric = Literal["complexity", "flops", "activation_memory", "cache_size", "cache_size_prefetch"]
Stage = Literal["prefill", "decode"]


class CostQuery(BaseModel):
    """One point at which to evaluate a formula"""
    variant: str
    B: int = Field(default=1, ge=1)
    L: int = Field(ge=1)
    d: int = Field(ge=1)
    h: int = Field(default=1, ge=1)
    t: int = Field(default=1, ge=1)
    stage: Stage = "prefill"
    delta: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def check_heads(self) -> "CostQuery":
        if self.d % self.h:
            raise ValueError(f"d={self.d} not divisible by h={self.h}")
        return self


class CostTerm(BaseModel):
    """coef * B^a L^b d^c h^e t^f delta^g; coef as an integer or "p/q" string"""
    coef: str
    exponents: Dict[str, int]
    value: Union[int, str]


class CostReport(BaseModel):
    """Evaluated formula for one (variant, metric, stage) at one query"""
    variant: str
    metric: Metric
    stage: Optional[Stage] = None
    unit: str
    precomputed: bool = False
    query: CostQuery
    terms: List[CostTerm]
    value: Union[int, str]  # exact integer, or "p/q" when not integral
