"""
Training, evaluation and equivalence result models
"""

from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class TrainLogRecord(BaseModel):
    """One optimizer step"""
    step: int
    loss: float
    lr: float
    grad_norm: float
    elapsed_s: float


class EvalRecord(BaseModel):
    """Validation loss at a step"""
    step: int
    val_loss: float


class TrainResult(BaseModel):
    """Summary of a finished run"""
    steps: int
    final_loss: Optional[float] = None
    final_val_loss: Optional[float] = None
    checkpoint_path: Optional[str] = None
    log: List[TrainLogRecord] = []
    evals: List[EvalRecord] = []


class PerplexityResult(BaseModel):
    """Perplexity at one context length"""
    context_length: int
    mean_nll: float
    perplexity: float
    n_targets: int = Field(ge=1)


class EquivalenceResult(BaseModel):
    """Parallel versus recurrent agreement for one configuration"""
    variant: str
    mode: Optional[str] = None
    seq_len: int
    d_head: int
    n_heads: int
    dtype: str
    max_rel_err: float
    threshold: float
    passed: bool
    extra: Dict[str, float] = {}
