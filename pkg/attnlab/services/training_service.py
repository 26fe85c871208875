"""
Training service: corpus, model construction, the training loop and its artifacts
"""

import io
import logging
from pathlib import Path
from typing import Optional, Union

from attnlab.core.config import settings
from attnlab.core.errors import ConfigError
from attnlab.core.io import atomic_write_text
from attnlab.core.logging import JsonlWriter
from attnlab.ml.checkpoint import load_checkpoint
from attnlab.ml.composer import Model, build_model
from attnlab.ml.corpus import Corpus
from attnlab.ml.train import Trainer
from attnlab.models.config import RunConfig
from attnlab.models.training import TrainResult
from attnlab.services.config_service import write_resolved_config

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.datn"
LOG_NAME = "train_log.jsonl"
CONFIG_NAME = "run_config.json"
SUMMARY_NAME = "summary.json"


class TrainingService:
    """Trains one model described by a RunConfig and writes its artifacts to out_dir"""

    def __init__(self, run_cfg: RunConfig, out_dir: Union[str, Path, None] = None):
        self.run_cfg = run_cfg
        self.out_dir = Path(out_dir or settings.ARTIFACTS_DIR)

    @property
    def checkpoint_path(self) -> Path:
        return self.out_dir / CHECKPOINT_NAME

    @property
    def log_path(self) -> Path:
        return self.out_dir / LOG_NAME

    def load_corpus(self) -> Corpus:
        """Training corpus; the bundled text stands in when none is configured"""

        path = self.run_cfg.train.corpus_path
        if path is None:
            path = settings.SHADOW_TEXT_PATH
            logger.warning(f"No corpus_path configured, training on the bundled text {path}")
        return Corpus.from_path(path, self.run_cfg.train.seq_len)

    def init_model(self, init_checkpoint: Optional[str] = None) -> Model:
        if init_checkpoint is None:
            return build_model(self.run_cfg.model, seed=self.run_cfg.train.seed)
        model = load_checkpoint(init_checkpoint)
        if model.cfg != self.run_cfg.model:
            raise ConfigError(f"checkpoint {init_checkpoint} was written for a different model config")
        return model

    def run(self, init_checkpoint: Optional[str] = None) -> TrainResult:
        """Train and write run_config.json, train_log.jsonl, checkpoint.datn and summary.json.

        The log is written even when training stops on a numerical failure.
        """

        self.out_dir.mkdir(parents=True, exist_ok=True)
        write_resolved_config(self.run_cfg, self.out_dir / CONFIG_NAME)
        corpus = self.load_corpus()
        model = self.init_model(init_checkpoint)

        buffer = io.StringIO()
        trainer = Trainer(model, self.run_cfg.train, corpus, self.checkpoint_path, JsonlWriter(buffer))
        try:
            result = trainer.train()
        finally:
            atomic_write_text(self.log_path, buffer.getvalue())
            logger.info(f"Training log written to {self.log_path}")

        summary = result.model_copy(update={"log": []})
        atomic_write_text(self.out_dir / SUMMARY_NAME, summary.model_dump_json(indent=2) + "\n")
        return result
