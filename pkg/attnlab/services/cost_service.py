"""
Cost-table service: point queries and CSV sweeps over the analytical cost model
"""

import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import pandas as pd

from attnlab.core.errors import ConfigError
from attnlab.core.io import write_frame_csv
from attnlab.ml import cost_model
from attnlab.models.cost import CostReport

logger = logging.getLogger(__name__)


class CostService:
    """Evaluates cost formulas for one variant/metric or across a grid"""

    def __init__(self, precomputed: bool = False):
        self.precomputed = precomputed

    def point(self, variant: str, metric: str, L: int, d: int, B: int = 1, h: int = 1, t: int = 1,
              stage: str = "prefill", delta: Optional[int] = None) -> CostReport:
        query = cost_model.validate_query({"variant": variant, "B": B, "L": L, "d": d, "h": h,
                                           "t": t, "stage": stage, "delta": delta})
        return cost_model.evaluate(query, metric, self.precomputed)

    def sweep(self, variants: Sequence[str], metrics: Sequence[str], B: Sequence[int], L: Sequence[int],
              d: Sequence[int], h: Sequence[int], t: Sequence[int],
              stages: Sequence[str] = cost_model.STAGES, delta: Optional[int] = None) -> pd.DataFrame:
        """One row per (variant, metric, stage, B, L, d, h, t); stage is blank except for flops"""

        if not variants or not metrics:
            raise ConfigError("a sweep needs at least one variant and one metric")
        queries = cost_model.query_grid(variants, B, L, d, h, t, stages, delta)
        return cost_model.sweep(queries, metrics, self.precomputed)

    @staticmethod
    def write(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
        written = write_frame_csv(path, frame)
        logger.info(f"Wrote {len(frame)} cost rows to {written}")
        return written
