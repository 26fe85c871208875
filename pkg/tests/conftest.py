"""
Shared fixtures: tiny model configs, seeded generators, a gradient checker and trained desk models
"""

from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pytest

from attnlab.ml import tensor as ops
from attnlab.ml.composer import build_model
from attnlab.ml.tensor import Tape, Tensor, backward, finite_difference_grad
from attnlab.models.config import LayerMap, ModelConfig, VariantTag

ALL_VARIANTS = [tag for tag in VariantTag]


def tiny_config(tags: Sequence[VariantTag], **overrides) -> ModelConfig:
    """Two heads of size 4, f64, short sequences"""

    data = dict(vocab_size=257, d_model=8, d_ff=16, n_layers=len(tags), n_heads=2,
                max_seq_len=12, dtype="f64", variant_map=LayerMap(tags=list(tags)))
    data.update(overrides)
    return ModelConfig(**data)


def hybrid_tags(simplified: VariantTag, n_layers: int = 4):
    return [VariantTag.STANDARD if (i + 1) % 2 == 0 else simplified for i in range(n_layers)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_config():
    return tiny_config


@pytest.fixture
def make_model():
    def make(tags, seed: int = 0, **overrides):
        return build_model(tiny_config(tags, **overrides), seed=seed)
    return make


@pytest.fixture
def tokens(rng):
    return rng.integers(0, 257, size=10)


def check_gradients(f: Callable[[], Tensor], x: Tensor, rng: np.random.Generator,
                    n_coords: int = 20, on_perturb=None, rtol: float = 1e-4, atol: float = 1e-8) -> None:
    """Tape gradient of scalar f() with respect to x against central differences"""

    x.requires_grad = True
    x.grad = None
    with Tape() as tape:
        loss = f()
    backward(loss, tape)
    analytic = np.zeros(x.shape) if x.grad is None else x.grad.copy()

    coords = rng.choice(x.size, size=min(n_coords, x.size), replace=False)
    numeric = finite_difference_grad(lambda _: f(), x, h=1e-5, indices=coords, on_perturb=on_perturb)
    np.testing.assert_allclose(analytic.reshape(-1)[coords], numeric.data.reshape(-1)[coords],
                               rtol=rtol, atol=atol)


@pytest.fixture
def gradcheck():
    return check_gradients


def weighted_readout(out: Tensor, seed: int = 7) -> Tensor:
    """Scalar sum(out * W) with a fixed random W so every output coordinate matters"""

    weights = np.random.default_rng(seed).normal(size=out.shape).astype(out.dtype)
    return ops.sum_(out * Tensor(weights))


def markov_text(source: bytes, n_bytes: int, seed: int) -> bytes:
    """Word-level second-order Markov text over `source`, at least n_bytes long"""

    words = source.split()
    follows = {}
    for a, b, c in zip(words, words[1:], words[2:]):
        follows.setdefault((a, b), []).append(c)
    starts = list(follows)
    gen = np.random.default_rng(seed)
    out, size = [], 0
    state = starts[gen.integers(len(starts))]
    while size < n_bytes:
        choices = follows.get(state)
        if not choices:
            state = starts[gen.integers(len(starts))]
            continue
        word = choices[gen.integers(len(choices))]
        out.append(word)
        size += len(word) + 1
        state = (state[1], word)
    return b" ".join(out)


@pytest.fixture(scope="session")
def trend_corpus(tmp_path_factory):
    """About 1MB of training text plus a separate held-out file, both seeded"""

    from attnlab.core.config import settings
    from attnlab.ml.corpus import Corpus, encode

    source = Path(settings.SHADOW_TEXT_PATH).read_bytes()
    root = tmp_path_factory.mktemp("trend_corpus")
    train_path, heldout_path = root / "train.txt", root / "heldout.txt"
    train_path.write_bytes(markov_text(source, 1_000_000, seed=0))
    heldout_path.write_bytes(markov_text(source, 40_000, seed=1))
    return Corpus.from_tokens(encode(train_path.read_bytes()), seq_len=256), heldout_path


@pytest.fixture(scope="session")
def trained_desk(trend_corpus):
    """Desk model trained 2000 steps for (variant, layer_map), cached for the session"""

    from attnlab.ml.composer import preset_config
    from attnlab.ml.train import train
    from attnlab.models.config import TrainConfig

    corpus, _ = trend_corpus
    cache = {}

    def get(variant: VariantTag, layer_map: str = "uniform"):
        key = (variant, layer_map)
        if key not in cache:
            model = build_model(preset_config("desk", variant, layer_map), seed=0)
            result = train(model, TrainConfig(max_steps=2000, warmup_steps=100, batch_size=16, seq_len=256,
                                              peak_lr=1e-3, eval_every=0, seed=0), corpus)
            cache[key] = (model, result)
        return cache[key]
    return get
