"""
Diagnostics service: attention indicators and pre-softmax statistics of a checkpoint
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Type, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from attnlab.core.config import settings
from attnlab.core.errors import CorpusError
from attnlab.core.io import write_frame_csv, write_frame_jsonl
from attnlab.ml.composer import Capture, Model
from attnlab.ml.corpus import ingest_corpus, windows
from attnlab.ml.diagnostics import layer_indicator_frame, normalize_for_plot, prelogit_stats
from attnlab.models.report import (
    IndicatorRecord,
    IndicatorReport,
    LayerIndicatorRecord,
    PrelogitStatsRecord,
)

logger = logging.getLogger(__name__)

HEAD_COLUMNS = list(IndicatorRecord.model_fields)


def _plain(value):
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and np.isnan(value):
        return None
    return value


def _records(frame: pd.DataFrame, model_cls: Type[BaseModel]) -> List[BaseModel]:
    return [model_cls.model_validate({k: _plain(v) for k, v in row.items()})
            for row in frame.to_dict("records")]


class DiagnosticsService:
    """Runs one evaluation batch through a model with capture enabled"""

    def __init__(self, model: Model):
        self.model = model

    def eval_batch(self, data_path: Optional[str] = None, batch_size: int = 4,
                   seq_len: Optional[int] = None) -> Tuple[np.ndarray, str]:
        """First `batch_size` windows of the eval file, [B, L]"""

        path = data_path or settings.SHADOW_TEXT_PATH
        seq_len = seq_len or self.model.cfg.max_seq_len
        inputs, _ = windows(ingest_corpus(path), seq_len)
        if len(inputs) == 0:
            raise CorpusError(f"{path} holds fewer than {seq_len + 1} tokens")
        return inputs[:batch_size], str(path)

    def capture(self, tokens: np.ndarray) -> Capture:
        capture = Capture()
        self.model.forward(tokens, capture=capture)
        return capture

    def build_report(self, capture: Capture, tokens: np.ndarray, source: str) -> IndicatorReport:
        variants: Dict[int, str] = {lc.layer: lc.variant.value for lc in capture.layers}
        renormalized = {lc.layer: not lc.stochastic for lc in capture.layers if lc.A is not None}

        frames = []
        for lc in capture.layers:
            if lc.A is None:
                continue
            frame = layer_indicator_frame(lc.A, lc.stochastic)
            frame.insert(0, "layer", lc.layer)
            frames.append(frame)
        if not frames:
            logger.warning("No layer produced attention weights; the report holds no indicators")
            return IndicatorReport(seq_len=int(tokens.shape[-1]), batch_size=len(np.atleast_2d(tokens)),
                                   batch_source=source, heads=[], layers=[], normalized=[], prelogits=[])
        heads = pd.concat(frames, ignore_index=True)[HEAD_COLUMNS]

        layers = heads.drop(columns="head").groupby("layer", sort=True).mean().reset_index()
        layers.insert(1, "variant", layers["layer"].map(variants))
        layers.insert(2, "weights_renormalized", layers["layer"].map(renormalized).astype(bool))
        raw = layers.assign(normalized=False)
        normalized = normalize_for_plot(layers).assign(normalized=True) if len(layers) >= 2 else raw.iloc[0:0]

        prelogits: List[PrelogitStatsRecord] = []
        if any(lc.prelogits is not None for lc in capture.layers):
            by_index: List[Optional[np.ndarray]] = [None] * self.model.cfg.n_layers
            for lc in capture.layers:
                by_index[lc.layer - 1] = lc.prelogits
            prelogits = [PrelogitStatsRecord(variant=variants[s["layer"]], **s) for s in prelogit_stats(by_index)]

        logger.info(f"Indicators for {len(layers)} attention layers, {len(heads)} heads")
        return IndicatorReport(
            seq_len=int(tokens.shape[-1]),
            batch_size=len(np.atleast_2d(tokens)),
            batch_source=source,
            heads=_records(heads, IndicatorRecord),
            layers=_records(raw, LayerIndicatorRecord),
            normalized=_records(normalized, LayerIndicatorRecord),
            prelogits=prelogits,
        )

    def run(self, data_path: Optional[str] = None, batch_size: int = 4,
            seq_len: Optional[int] = None) -> IndicatorReport:
        tokens, source = self.eval_batch(data_path, batch_size, seq_len)
        return self.build_report(self.capture(tokens), tokens, source)

    @staticmethod
    def write(report: IndicatorReport, out_dir: Union[str, Path], csv: bool = False) -> List[Path]:
        """indicators.jsonl, layer_indicators.jsonl, prelogits.jsonl (+ indicators.csv)"""

        out_dir = Path(out_dir)
        heads = pd.DataFrame([r.model_dump() for r in report.heads], columns=HEAD_COLUMNS)
        layers = pd.DataFrame([r.model_dump() for r in report.layers + report.normalized],
                              columns=list(LayerIndicatorRecord.model_fields))
        stats = pd.DataFrame([r.model_dump() for r in report.prelogits],
                             columns=list(PrelogitStatsRecord.model_fields))
        written = [
            write_frame_jsonl(out_dir / "indicators.jsonl", heads),
            write_frame_jsonl(out_dir / "layer_indicators.jsonl", layers),
            write_frame_jsonl(out_dir / "prelogits.jsonl", stats),
        ]
        if csv:
            written.append(write_frame_csv(out_dir / "indicators.csv", heads))
        for path in written:
            logger.info(f"Wrote {path}")
        return written
