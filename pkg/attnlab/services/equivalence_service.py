"""
Parallel versus recurrent agreement for the linear-time attention variants
"""

import logging
from itertools import product
from typing import List, Optional, Sequence

import numpy as np

from attnlab.core.errors import UnknownVariantError
from attnlab.ml import attention as attn
from attnlab.ml import tensor as ops
from attnlab.ml.tensor import Tensor
from attnlab.models.training import EquivalenceResult

logger = logging.getLogger(__name__)

THRESHOLDS = {"f64": 1e-10, "f32": 1e-5}
RECURRENT_VARIANTS = ("approx", "nonapprox")


def check_equivalence(variant: str, seq_len: int, d_head: int = 4, n_heads: int = 2,
                      dtype: str = "f64", mode: str = "split", seed: int = 0) -> EquivalenceResult:
    """Run the parallel form and the token-by-token rollout on the same seeded input.

    Rotary embeddings are applied whenever the head size is even.
    """

    if variant not in RECURRENT_VARIANTS:
        raise UnknownVariantError(f"{variant!r} has no recurrent form; expected one of {', '.join(RECURRENT_VARIANTS)}")
    d_model = d_head * n_heads
    rope = d_head % 2 == 0
    p = attn.random_params(d_model, n_heads, seed=seed, dtype=dtype)
    rng = np.random.default_rng(seed + 1)
    H = rng.normal(0.0, 1.0, (seq_len, d_model)).astype(ops.resolve_dtype(dtype))

    extra = {"rope": float(rope)}
    if variant == "approx":
        parallel = attn.approximate_attention_parallel(Tensor(H), p, mode, rope=rope).O.data
        recurrent = attn.approximate_attention_rollout(H, p, mode, rope=rope)
    else:
        track: List[np.ndarray] = []
        parallel = attn.nonapprox_attention_parallel(Tensor(H), p, rope=rope).O.data
        recurrent = attn.nonapprox_attention_rollout(H, p, rope=rope, track=track)
        steps = np.diff(np.stack(track), axis=0)
        extra["min_log_den_step"] = float(steps.min()) if steps.size else 0.0
        mode = None

    error = attn.relative_error(recurrent, parallel)
    threshold = THRESHOLDS[dtype]
    result = EquivalenceResult(
        variant=variant, mode=mode, seq_len=seq_len, d_head=d_head, n_heads=n_heads, dtype=dtype,
        max_rel_err=error, threshold=threshold, passed=error <= threshold,
        extra={"max_abs_err": float(np.max(np.abs(recurrent - parallel))), **extra},
    )
    logger.info(f"{variant}{'/' + mode if mode else ''} L={seq_len} d_head={d_head} {dtype}: "
                f"max rel err {error:.3e} ({'pass' if result.passed else 'FAIL'})")
    return result


def equivalence_grid(variants: Sequence[str], seq_lens: Sequence[int], d_heads: Sequence[int],
                     n_heads: int = 2, dtype: str = "f64", modes: Optional[Sequence[str]] = None,
                     seed: int = 0) -> List[EquivalenceResult]:
    results = []
    for variant, length, d_head in product(variants, seq_lens, d_heads):
        for mode in (modes or ("split", "shared")) if variant == "approx" else ("split",):
            results.append(check_equivalence(variant, length, d_head, n_heads, dtype, mode, seed))
    return results
