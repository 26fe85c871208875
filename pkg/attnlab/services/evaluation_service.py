"""
Evaluation service: held-out loss and perplexity across context lengths
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

from attnlab.core.config import settings
from attnlab.core.errors import ConfigError
from attnlab.core.io import write_records_jsonl
from attnlab.ml.checkpoint import read_checkpoint, model_from_contents
from attnlab.ml.composer import Model, skip_transform
from attnlab.ml.corpus import Corpus, ingest_corpus
from attnlab.ml.train import evaluate_perplexity
from attnlab.models.config import ModelConfig
from attnlab.models.training import PerplexityResult

logger = logging.getLogger(__name__)


def check_config_matches(checkpoint_cfg: ModelConfig, requested: Optional[ModelConfig]) -> None:
    """ConfigError naming the fields where a requested config differs from the checkpoint's"""

    if requested is None or requested == checkpoint_cfg:
        return
    stored = checkpoint_cfg.model_dump(mode="json")
    wanted = requested.model_dump(mode="json")
    fields = sorted(k for k in stored if stored[k] != wanted.get(k))
    raise ConfigError(f"checkpoint/config mismatch in {', '.join(fields)}")


def load_model(checkpoint: Union[str, Path], requested: Optional[ModelConfig] = None,
               skip: bool = False) -> Model:
    contents = read_checkpoint(checkpoint)
    check_config_matches(contents.model_config, requested)
    model = model_from_contents(contents)
    if skip:
        model = skip_transform(model)
        logger.info(f"Skip transform kept standard layers {model.cfg.n_layers} of {contents.model_config.n_layers}")
    return model


class EvaluationService:
    """Perplexity of a checkpoint on a byte corpus"""

    def __init__(self, model: Model, batch_size: int = 16):
        self.model = model
        self.batch_size = batch_size

    def evaluation_tokens(self, data_path: Optional[str], seq_len: int, held_out: bool = True):
        """Validation slice of `data_path` (whole file when held_out is False)"""

        path = data_path or settings.SHADOW_TEXT_PATH
        if not held_out:
            return ingest_corpus(path)
        return Corpus.from_path(path, seq_len).val_tokens()

    def perplexity(self, data_path: Optional[str], context_lengths: Sequence[int],
                   held_out: bool = True) -> List[PerplexityResult]:
        lengths = list(context_lengths) or [self.model.cfg.max_seq_len]
        if max(lengths) > self.model.cfg.max_seq_len:
            raise ConfigError(f"context length {max(lengths)} exceeds max_seq_len {self.model.cfg.max_seq_len}")
        tokens = self.evaluation_tokens(data_path, max(lengths), held_out)
        return evaluate_perplexity(self.model, tokens, lengths, self.batch_size)

    @staticmethod
    def write(results: Sequence[PerplexityResult], path: Union[str, Path]) -> Path:
        written = write_records_jsonl(path, results)
        logger.info(f"Wrote {len(results)} perplexity records to {written}")
        return written
