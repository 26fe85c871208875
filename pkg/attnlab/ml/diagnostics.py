"""
Attention-pattern indicators and pre-softmax activation statistics
"""

from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from attnlab.core.errors import IndicatorError

LOCAL_FOCUS_OFFSETS = (0, 1, 2, 3)
MINMAX_FIELDS = ("entropy", "conc", "head_div")
LOCAL_FIELDS = tuple(f"loc_foc{n}" for n in LOCAL_FOCUS_OFFSETS)
PRELOGIT_QUANTILES = {"q01": 0.01, "q25": 0.25, "q50": 0.50, "q75": 0.75, "q99": 0.99}


def _square(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
        raise IndicatorError(f"expected a non-empty square attention matrix, got shape {A.shape}")
    return A


def _non_negative(A) -> np.ndarray:
    A = _square(A)
    if (A < 0).any():
        raise IndicatorError("attention matrix has negative entries")
    return A


def entropy(A, per_row_average: bool = False) -> float:
    """-sum a*ln(a) over the whole matrix (0 ln 0 = 0); row mean when per_row_average"""

    A = _non_negative(A)
    terms = np.zeros_like(A)
    positive = A > 0
    terms[positive] = A[positive] * np.log(A[positive])
    if per_row_average:
        return float(-terms.sum(axis=1).mean())
    return float(-terms.sum())


def concentration(A) -> float:
    """Frobenius norm"""
    return float(np.linalg.norm(_square(A)))


def head_diversity(heads) -> float:
    """Mean over causal positions of the population std across heads"""

    heads = np.asarray(heads, dtype=np.float64)
    if heads.ndim != 3 or heads.shape[1] != heads.shape[2]:
        raise IndicatorError(f"expected [n_heads, L, L], got shape {heads.shape}")
    if heads.shape[0] < 2:
        raise IndicatorError(f"head diversity needs at least 2 heads, got {heads.shape[0]}")
    length = heads.shape[1]
    spread = heads.std(axis=0)
    return float(spread[np.tril_indices(length)].sum() * 2.0 / (length * (length + 1)))


def sink(A) -> float:
    """Average weight every query puts on the first token"""
    A = _square(A)
    return float(A[:, 0].sum() / A.shape[0])


def local_focus(A, offset: int) -> float:
    """Mean of the `offset`-th subdiagonal: weight on the token `offset` positions back"""

    A = _square(A)
    if offset < 0:
        raise IndicatorError(f"offset must be non-negative, got {offset}")
    if A.shape[0] <= offset:
        raise IndicatorError(f"sequence length {A.shape[0]} too short for offset {offset}")
    return float(np.diagonal(A, offset=-offset).mean())


def renormalize_rows(A) -> np.ndarray:
    """|A| scaled so every row sums to one (all-zero rows stay zero)"""

    magnitude = np.abs(np.asarray(A, dtype=np.float64))
    totals = magnitude.sum(axis=-1, keepdims=True)
    return np.divide(magnitude, totals, out=np.zeros_like(magnitude), where=totals > 0)


def head_indicators(A) -> Dict[str, Optional[float]]:
    """entropy, conc, sink and loc_foc0..3 of one head (loc_focN is None when L <= N)"""

    A = _non_negative(A)
    values: Dict[str, Optional[float]] = {
        "entropy": entropy(A),
        "conc": concentration(A),
        "sink": sink(A),
    }
    for n in LOCAL_FOCUS_OFFSETS:
        values[f"loc_foc{n}"] = local_focus(A, n) if A.shape[0] > n else None
    return values


def layer_indicator_frame(A, stochastic: bool = True) -> pd.DataFrame:
    """One row per head of one layer, averaged over any batch axis.

    A is [h, L, L] or [B, h, L, L]. Non-stochastic weights are replaced by
    row-normalized magnitudes first.
    """

    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 3:
        A = A[None]
    if A.ndim != 4:
        raise IndicatorError(f"expected [h, L, L] or [B, h, L, L], got shape {A.shape}")
    if not stochastic:
        A = renormalize_rows(A)

    rows = []
    for b in range(A.shape[0]):
        div = head_diversity(A[b]) if A.shape[1] >= 2 else np.nan
        for h in range(A.shape[1]):
            values = {k: np.nan if v is None else v for k, v in head_indicators(A[b, h]).items()}
            rows.append({"item": b, "head": h + 1, "head_div": div, **values})
    frame = pd.DataFrame(rows).drop(columns="item")
    return frame.groupby("head", sort=True).mean().reset_index()


def normalize_for_plot(layers: pd.DataFrame) -> pd.DataFrame:
    """Min-max across layers for entropy/conc/head_div, loc_foc doubled, sink as is.

    A constant column normalizes to 0.
    """

    if len(layers) < 2:
        raise IndicatorError(f"normalization needs at least 2 layers, got {len(layers)}")
    out = layers.copy()
    for column in MINMAX_FIELDS:
        if column not in out or out[column].isna().all():
            continue
        values = out[column].astype(float)
        low, high = values.min(), values.max()
        out[column] = 0.0 if high == low else (values - low) / (high - low)
    for column in LOCAL_FIELDS:
        if column in out:
            out[column] = out[column] * 2.0
    return out


def prelogit_stats(prelogits: Sequence[Optional[np.ndarray]]) -> List[Dict[str, float]]:
    """Quantiles, min and max of each layer's pre-softmax activations on the causal support.

    prelogits[i] is [..., L, L] for layer i + 1, or None for layers without attention.
    """

    stats = []
    for index, layer in enumerate(prelogits):
        if layer is None:
            continue
        layer = np.asarray(layer, dtype=np.float64)
        length = layer.shape[-1]
        rows, cols = np.tril_indices(length)
        values = layer[..., rows, cols].reshape(-1)
        record = {"layer": index + 1, "count": int(values.size), "min": float(values.min())}
        for name, q in PRELOGIT_QUANTILES.items():
            record[name] = float(np.quantile(values, q))
        record["max"] = float(values.max())
        stats.append(record)
    if not stats:
        raise IndicatorError("no pre-softmax activations were captured")
    return stats
