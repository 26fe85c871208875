"""
Causal-LM training and evaluation at desk scale
"""

import logging
import math
import time
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from attnlab.core.config import settings
from attnlab.core.errors import (
    ConfigError,
    CorpusError,
    DenominatorError,
    NonFiniteError,
    NonFiniteLossError,
    ShapeError,
)
from attnlab.core.logging import JsonlWriter
from attnlab.ml import tensor as ops
from attnlab.ml.checkpoint import save_checkpoint
from attnlab.ml.composer import Model
from attnlab.ml.corpus import Corpus
from attnlab.ml.tensor import Tape, Tensor, backward
from attnlab.models.config import TrainConfig
from attnlab.models.training import EvalRecord, PerplexityResult, TrainLogRecord, TrainResult

logger = logging.getLogger(__name__)


def cross_entropy_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean next-token negative log-likelihood in nats"""
    return ops.cross_entropy(logits, targets)


def token_nll(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-position negative log-likelihood, computed in float64"""

    flat = np.asarray(logits, dtype=np.float64).reshape(-1, logits.shape[-1])
    flat_targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    shifted = flat - flat.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1))
    return log_norm - shifted[np.arange(len(flat_targets)), flat_targets]


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup 0 -> peak, then cosine with `cycles` periods down to 0 at max_steps"""

    if step >= cfg.max_steps:
        return 0.0
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / (cfg.max_steps - cfg.warmup_steps)
    return max(0.0, cfg.peak_lr * 0.5 * (1.0 + math.cos(2.0 * math.pi * cfg.cycles * progress)))


def global_grad_norm(params: Sequence[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    return math.sqrt(total)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale gradients so their global norm is at most max_norm; returns the norm before clipping"""

    norm = global_grad_norm(params)
    if norm > max_norm and math.isfinite(norm):
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = (p.grad * scale).astype(p.dtype)
    return norm


def adamw_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, step: int,
               lr: float, beta1: float, beta2: float, eps: float,
               weight_decay: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One AdamW update with bias-corrected moments and decoupled decay; returns (param, m, v)"""

    if param.shape != grad.shape:
        raise ShapeError(f"gradient shape {grad.shape} does not match parameter shape {param.shape}")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    updated = param - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * param)
    return updated.astype(param.dtype), m, v


class AdamW:
    """AdamW over a fixed list of tensors; missing gradients count as zero"""

    def __init__(self, params: Sequence[Tensor], betas: Tuple[float, float] = (0.9, 0.9999),
                 eps: float = 1e-8, weight_decay: float = 0.1):
        self.params = list(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    @classmethod
    def from_config(cls, params: Sequence[Tensor], cfg: TrainConfig) -> "AdamW":
        return cls(params, (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps, cfg.weight_decay)

    def step(self, lr: float) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data, self.m[i], self.v[i] = adamw_step(
                p.data, grad, self.m[i], self.v[i], self.t, lr,
                self.beta1, self.beta2, self.eps, self.weight_decay,
            )


def evaluate_loss(model: Model, corpus: Corpus, batch_size: int,
                  max_batches: Optional[int] = None) -> float:
    """Mean validation NLL over (up to max_batches of) the held-out windows"""

    max_batches = settings.EVAL_BATCHES if max_batches is None else max_batches
    total, count = 0.0, 0
    for inputs, targets in corpus.val_batches(batch_size, max_batches):
        nll = token_nll(model.forward(inputs).data, targets)
        total += float(nll.sum())
        count += nll.size
    return total / count


def evaluate_perplexity(model: Model, tokens: np.ndarray, context_lengths: Sequence[int],
                        batch_size: int = 16) -> List[PerplexityResult]:
    """exp(mean NLL) at each context length over the same target positions.

    The targets are the first floor((N-1)/L_max)*L_max positions of `tokens`;
    each length c cuts them into consecutive chunks of c.
    """

    lengths = list(context_lengths)
    if not lengths:
        raise ConfigError("no context lengths requested")
    for c in lengths:
        if c < 1 or c > model.cfg.max_seq_len:
            raise ConfigError(f"context length {c} outside [1, max_seq_len={model.cfg.max_seq_len}]")
    longest = max(lengths)
    n_targets = ((len(tokens) - 1) // longest) * longest
    if n_targets == 0:
        raise CorpusError(f"{len(tokens)} tokens are too few for context length {longest}")

    results = []
    for c in lengths:
        n_full = n_targets // c
        inputs = tokens[:n_full * c].reshape(n_full, c)
        targets = tokens[1:n_full * c + 1].reshape(n_full, c)
        total = 0.0
        for start in range(0, n_full, batch_size):
            logits = model.forward(inputs[start:start + batch_size]).data
            total += float(token_nll(logits, targets[start:start + batch_size]).sum())
        tail = n_targets - n_full * c
        if tail:
            begin = n_full * c
            logits = model.forward(tokens[begin:begin + tail]).data
            total += float(token_nll(logits, tokens[begin + 1:begin + tail + 1]).sum())
        mean_nll = total / n_targets
        results.append(PerplexityResult(context_length=c, mean_nll=mean_nll,
                                        perplexity=math.exp(mean_nll), n_targets=n_targets))
        logger.info(f"Context {c}: perplexity {math.exp(mean_nll):.3f} over {n_targets} targets")
    return results


class Trainer:
    """Runs the optimizer loop, logs every step and keeps the last good checkpoint"""

    def __init__(self, model: Model, cfg: TrainConfig, corpus: Corpus,
                 checkpoint_path: Optional[Union[str, Path]] = None,
                 log_writer: Optional[JsonlWriter] = None):
        self.model = model
        self.cfg = cfg
        self.corpus = corpus
        self.checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
        self.log_writer = log_writer
        self.optimizer = AdamW.from_config(model.parameters(), cfg)
        self.rng = np.random.default_rng(cfg.seed)

    def _emit(self, record) -> None:
        if self.log_writer is not None:
            self.log_writer.write(record.model_dump())

    def save(self) -> Optional[Path]:
        if self.checkpoint_path is None:
            return None
        return save_checkpoint(self.model, self.checkpoint_path, self.cfg,
                               self.rng.bit_generator.state)

    def _abort(self, step: int, error: Exception) -> None:
        saved = self.save()
        if isinstance(error, DenominatorError):
            logger.error(f"Step {step}: {error}; last good checkpoint {saved}")
            raise error
        raise NonFiniteLossError(step, str(saved) if saved else None) from error

    def train_step(self, step: int) -> TrainLogRecord:
        lr = lr_at(step, self.cfg)
        inputs, targets = self.corpus.train_batch(self.rng, self.cfg.batch_size)
        self.model.zero_grad()
        try:
            with Tape() as tape:
                loss = cross_entropy_loss(self.model.forward(inputs), targets)
            backward(loss, tape)
        except (NonFiniteError, DenominatorError) as e:
            self._abort(step, e)

        grad_norm = clip_grad_norm(self.model.parameters(), self.cfg.grad_clip_norm)
        if not math.isfinite(grad_norm):
            self._abort(step, NonFiniteError(f"gradient norm {grad_norm}"))
        self.optimizer.step(lr)
        self.model.bump_version()
        return TrainLogRecord(step=step, loss=loss.item(), lr=lr, grad_norm=grad_norm, elapsed_s=0.0)

    def train(self) -> TrainResult:
        cfg = self.cfg
        logger.info(f"Training {cfg.max_steps} steps, batch {cfg.batch_size} x {cfg.seq_len}")
        started = time.perf_counter()
        log: List[TrainLogRecord] = []
        evals: List[EvalRecord] = []

        for step in range(cfg.max_steps):
            record = self.train_step(step)
            record.elapsed_s = round(time.perf_counter() - started, 3)
            log.append(record)
            self._emit(record)
            if step % 50 == 0:
                logger.info(f"Step {step}: loss {record.loss:.4f}, lr {record.lr:.2e}, "
                            f"grad norm {record.grad_norm:.3f}")
            if cfg.eval_every and (step + 1) % cfg.eval_every == 0:
                evals.append(self._evaluate(step + 1))

        final_val = evals[-1].val_loss if evals and evals[-1].step == cfg.max_steps else None
        if final_val is None and cfg.max_steps:
            evals.append(self._evaluate(cfg.max_steps))
            final_val = evals[-1].val_loss
        saved = self.save()
        logger.info(f"Training finished after {cfg.max_steps} steps in {time.perf_counter() - started:.1f}s")
        return TrainResult(
            steps=cfg.max_steps,
            final_loss=log[-1].loss if log else None,
            final_val_loss=final_val,
            checkpoint_path=str(saved) if saved else None,
            log=log,
            evals=evals,
        )

    def _evaluate(self, step: int) -> EvalRecord:
        record = EvalRecord(step=step, val_loss=evaluate_loss(self.model, self.corpus, self.cfg.batch_size))
        self._emit(record)
        logger.info(f"Step {step}: validation loss {record.val_loss:.4f}")
        return record


def train(model: Model, cfg: TrainConfig, corpus: Corpus,
          checkpoint_path: Optional[Union[str, Path]] = None,
          log_writer: Optional[JsonlWriter] = None) -> TrainResult:
    return Trainer(model, cfg, corpus, checkpoint_path, log_writer).train()
