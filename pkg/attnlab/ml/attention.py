"""
Token-mixing mechanisms: standard causal attention, the gated MLP stand-in,
Taylor-approximated linear attention, self-gated (non-approximate) attention,
and the three variants whose queries and keys come from somewhere other than
the layer input.

Parallel forms operate on Tensors of shape [..., L, d_model] and are
differentiable. Recurrent forms advance a per-head state one token at a time
on plain numpy arrays; they exist for decoding and as oracles for the
parallel forms.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np

from attnlab.core.config import settings
from attnlab.core.errors import DenominatorError, NonFiniteError, ShapeError
from attnlab.ml import tensor as ops
from attnlab.ml.tensor import Tensor

SQRT2 = math.sqrt(2.0)


@dataclass
class AttnParams:
    """Weights of one token-mixing layer"""

    n_heads: int
    W_Q: Optional[Tensor] = None
    W_K: Optional[Tensor] = None
    W_V: Optional[Tensor] = None
    W_O: Optional[Tensor] = None
    # gated MLP stand-in
    W_Gt: Optional[Tensor] = None
    W_Up: Optional[Tensor] = None
    W_Dn: Optional[Tensor] = None
    out_gain: Optional[Tensor] = None
    in_gain: Optional[Tensor] = None
    rope_base: float = 10000.0
    layer: Optional[int] = None  # 1-indexed, for error reports
    eps_den: float = field(default_factory=lambda: settings.EPS_DEN)

    @property
    def d_model(self) -> int:
        weight = self.W_Q if self.W_Q is not None else self.W_Gt
        return weight.shape[0]

    @property
    def d_head(self) -> int:
        if self.d_model % self.n_heads:
            raise ShapeError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        return self.d_model // self.n_heads

    def require(self, *names: str) -> None:
        missing = [name for name in names if getattr(self, name) is None]
        if missing:
            raise ShapeError(f"layer {self.layer}: missing weights {', '.join(missing)}")


@dataclass
class AttentionOutput:
    O: Tensor
    A: Optional[Tensor] = None
    prelogits: Optional[Tensor] = None
    # False when A rows need not be probability distributions (approx split mode)
    stochastic: bool = True


@dataclass
class ApproxState:
    """Running sums of the Taylor-feature recurrence, per head"""

    count: int
    sum_v: np.ndarray       # [h, dh]
    sum_kv: np.ndarray      # [h, dh, dh]       sum k^T v
    sum_k2v: np.ndarray     # [h, dh*dh, dh]    sum (k (x) k / sqrt 2)^T v
    sum_k: np.ndarray       # [h, dh]
    sum_k2: np.ndarray      # [h, dh*dh]


@dataclass
class NonApproxState:
    """Max-shifted exponential sums of the self-gated recurrence, per head"""

    count: int
    max_score: np.ndarray   # [h]
    numerator: np.ndarray   # [h, dh]   sum e^(s - max) v
    denominator: np.ndarray # [h]       sum e^(s - max)

    @property
    def log_denominator(self) -> np.ndarray:
        """log of sum e^s, strictly increasing from step to step"""
        return self.max_score + np.log(self.denominator)


RecurrentState = Union[ApproxState, NonApproxState]


# Shared pieces

def _require_finite(H: Tensor, what: str = "H") -> None:
    if not np.isfinite(H.data).all():
        raise NonFiniteError(f"{what} contains non-finite values")


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    """[..., L, d] -> [..., h, L, d/h]"""
    *lead, length, width = x.shape
    return ops.swapaxes(ops.reshape(x, (*lead, length, n_heads, width // n_heads)), -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    """[..., h, L, dh] -> [..., L, h*dh]"""
    x = ops.swapaxes(x, -2, -3)
    *lead, length, n_heads, d_head = x.shape
    return ops.reshape(x, (*lead, length, n_heads * d_head))


def _causal_constant(length: int, dtype) -> Tensor:
    return Tensor(ops.causal_mask(length).astype(dtype))


def _guard_denominator(den: np.ndarray, p: AttnParams, term: str) -> None:
    """Raise on the first |den| below eps_den; den has shape [..., h, L, 1]"""

    den = np.asarray(den)[..., 0]
    small = np.abs(den) < p.eps_den
    if small.any():
        index = tuple(np.argwhere(small)[0])
        raise DenominatorError(float(den[index]), index[-2] + 1, index[-1] + 1, p.layer, term)


def _rope_row(x: np.ndarray, position: int, base: float) -> np.ndarray:
    """Rotate each head row of x [h, dh] as if it sat at `position`"""

    cos, sin = ops.rope_tables([position], x.shape[-1], base, x.dtype)
    out = np.empty_like(x)
    even, odd = x[..., 0::2], x[..., 1::2]
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def _softmax_attention(q_src: Tensor, k_src: Tensor, v_src: Tensor, p: AttnParams,
                       need_weights: bool) -> AttentionOutput:
    p.require("W_Q", "W_K", "W_V", "W_O")
    length = v_src.shape[-2]
    positions = list(range(length))
    q = ops.rope_apply(_split_heads(q_src @ p.W_Q, p.n_heads), positions, p.rope_base)
    k = ops.rope_apply(_split_heads(k_src @ p.W_K, p.n_heads), positions, p.rope_base)
    v = _split_heads(v_src @ p.W_V, p.n_heads)

    logits = (q @ ops.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(p.d_head))
    weights = ops.softmax_causal_rows(logits)
    out = _merge_heads(weights @ v) @ p.W_O
    if need_weights:
        return AttentionOutput(out, weights, logits)
    return AttentionOutput(out)


# Parallel forms

def standard_attention(H: Tensor, p: AttnParams, need_weights: bool = False) -> AttentionOutput:
    """Multi-head causal softmax attention with rotary positions"""

    _require_finite(H)
    return _softmax_attention(H, H, H, p, need_weights)


def gated_mlp(H: Tensor, p: AttnParams, need_weights: bool = False) -> AttentionOutput:
    """FC_Dn(SiLU(FC_Gt(H)) * FC_Up(H)), position-wise; no attention weights"""

    _require_finite(H)
    p.require("W_Gt", "W_Up", "W_Dn")
    x = H * p.in_gain if p.in_gain is not None else H
    hidden = ops.silu(x @ p.W_Gt) * (x @ p.W_Up)
    out = hidden @ p.W_Dn
    if p.out_gain is not None:
        out = out * p.out_gain
    return AttentionOutput(out)


def approximate_attention_parallel(H: Tensor, p: AttnParams, mode: str = "split",
                                   need_weights: bool = False, rope: bool = True) -> AttentionOutput:
    """Second-order Taylor expansion of exp(q.k/sqrt(dh)) in place of softmax.

    split: mean of v plus the first- and second-order terms, each normalized
    by its own row sum. shared: weights 1 + x + x^2/2 over one row sum.
    """

    if mode not in ("split", "shared"):
        raise ShapeError(f"unknown approximate mode {mode!r}")
    _require_finite(H)
    p.require("W_Q", "W_K", "W_V", "W_O")
    length = H.shape[-2]
    positions = list(range(length))
    mask = _causal_constant(length, H.dtype)

    q = _split_heads(H @ p.W_Q, p.n_heads)
    k = _split_heads(H @ p.W_K, p.n_heads)
    if rope:
        q = ops.rope_apply(q, positions, p.rope_base)
        k = ops.rope_apply(k, positions, p.rope_base)
    v = _split_heads(H @ p.W_V, p.n_heads)

    scores = (q @ ops.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(p.d_head)) * mask

    if mode == "shared":
        phi = (1.0 + scores + ops.square(scores) * 0.5) * mask
        den = ops.sum_(phi, axis=-1, keepdims=True)
        _guard_denominator(den.data, p, "denominator")
        weights = phi / den
    else:
        counts = np.arange(1, length + 1, dtype=H.dtype)[:, None]
        mean_weights = Tensor(ops.causal_mask(length).astype(H.dtype) / counts)
        den1 = ops.sum_(scores, axis=-1, keepdims=True)
        _guard_denominator(den1.data, p, "first-order denominator")
        second = ops.square(scores) * 0.5
        den2 = ops.sum_(second, axis=-1, keepdims=True)
        _guard_denominator(den2.data, p, "second-order denominator")
        weights = mean_weights + scores / den1 + second / den2

    out = _merge_heads(weights @ v) @ p.W_O
    if need_weights:
        return AttentionOutput(out, weights, scores, stochastic=(mode == "shared"))
    return AttentionOutput(out, stochastic=(mode == "shared"))


def nonapprox_attention_parallel(H: Tensor, p: AttnParams, need_weights: bool = False,
                                 rope: bool = True) -> AttentionOutput:
    """Self-gated attention: A[i, j] = e^{s_j} / sum_{j'<=i} e^{s_j'} with s_j = q_j.k_j/sqrt(dh).

    q = SiLU(H W_Q) on the full projection, before the head split.
    """

    _require_finite(H)
    p.require("W_Q", "W_K", "W_V", "W_O")
    length = H.shape[-2]
    positions = list(range(length))

    q = _split_heads(ops.silu(H @ p.W_Q), p.n_heads)
    k = _split_heads(H @ p.W_K, p.n_heads)
    if rope:
        q = ops.rope_apply(q, positions, p.rope_base)
        k = ops.rope_apply(k, positions, p.rope_base)
    v = _split_heads(H @ p.W_V, p.n_heads)

    scores = ops.sum_(q * k, axis=-1) * (1.0 / math.sqrt(p.d_head))  # [..., h, L]
    *lead, n_heads, _ = scores.shape
    logits = ops.broadcast_to(ops.reshape(scores, (*lead, n_heads, 1, length)),
                              (*lead, n_heads, length, length))
    weights = ops.softmax_causal_rows(logits)
    out = _merge_heads(weights @ v) @ p.W_O
    if need_weights:
        return AttentionOutput(out, weights, logits)
    return AttentionOutput(out)


def external_qk_attention(H: Tensor, X: Tensor, p: AttnParams,
                          need_weights: bool = False) -> AttentionOutput:
    """Softmax attention with Q, K from X (first L rows) and V from H"""

    _require_finite(H)
    length = H.shape[-2]
    if X.shape[-2] < length:
        raise ShapeError(f"external sequence has {X.shape[-2]} rows, need at least {length}")
    if X.shape[-1] != H.shape[-1]:
        raise ShapeError(f"external width {X.shape[-1]} differs from hidden width {H.shape[-1]}")
    if X.shape[-2] > length:
        X = ops.slice_axis(X, 0, length, axis=-2)
    return _softmax_attention(X, X, H, p, need_weights)


def static_emb_qk_attention(H: Tensor, E: Tensor, p: AttnParams,
                            need_weights: bool = False) -> AttentionOutput:
    """Softmax attention with Q, K from the static token embeddings E, V from H"""

    _require_finite(H)
    if E.shape != H.shape:
        raise ShapeError(f"embedding shape {E.shape} differs from hidden shape {H.shape}")
    return _softmax_attention(E, E, H, p, need_weights)


# Recurrent forms

def _project_row(x_t, p: AttnParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    x = np.asarray(x_t.data if isinstance(x_t, Tensor) else x_t)
    if x.ndim != 1 or x.shape[0] != p.d_model:
        raise ShapeError(f"recurrent step expects a vector of {p.d_model}, got {x.shape}")
    if not np.isfinite(x).all():
        raise NonFiniteError("x_t contains non-finite values")
    shape = (p.n_heads, p.d_head)
    q = (x @ p.W_Q.data).reshape(shape)
    k = (x @ p.W_K.data).reshape(shape)
    v = (x @ p.W_V.data).reshape(shape)
    return x, q, k, v


def init_approx_state(p: AttnParams, dtype=np.float64) -> ApproxState:
    h, dh = p.n_heads, p.d_head
    return ApproxState(
        count=0,
        sum_v=np.zeros((h, dh), dtype=dtype),
        sum_kv=np.zeros((h, dh, dh), dtype=dtype),
        sum_k2v=np.zeros((h, dh * dh, dh), dtype=dtype),
        sum_k=np.zeros((h, dh), dtype=dtype),
        sum_k2=np.zeros((h, dh * dh), dtype=dtype),
    )


def _square_features(x: np.ndarray) -> np.ndarray:
    """(x (x) x) / sqrt 2 per head, flattened: features whose dot product is (x.y)^2 / 2"""
    return (x[:, :, None] * x[:, None, :]).reshape(x.shape[0], -1) / SQRT2


def approximate_attention_recurrent(x_t, p: AttnParams, state: Optional[ApproxState] = None,
                                    mode: str = "split", rope: bool = True) -> Tuple[np.ndarray, ApproxState]:
    """Advance the Taylor-feature sums by one token and return (o_t, state')"""

    if mode not in ("split", "shared"):
        raise ShapeError(f"unknown approximate mode {mode!r}")
    p.require("W_Q", "W_K", "W_V", "W_O")
    x, q, k, v = _project_row(x_t, p)
    if state is None:
        state = init_approx_state(p, x.dtype)

    position = state.count
    if rope:
        q = _rope_row(q, position, p.rope_base)
        k = _rope_row(k, position, p.rope_base)
    q = q / math.sqrt(p.d_head)
    k2 = _square_features(k)
    q2 = _square_features(q)

    state = ApproxState(
        count=state.count + 1,
        sum_v=state.sum_v + v,
        sum_kv=state.sum_kv + k[:, :, None] * v[:, None, :],
        sum_k2v=state.sum_k2v + k2[:, :, None] * v[:, None, :],
        sum_k=state.sum_k + k,
        sum_k2=state.sum_k2 + k2,
    )

    num1 = np.einsum("hd,hde->he", q, state.sum_kv)
    num2 = np.einsum("hf,hfe->he", q2, state.sum_k2v)
    den1 = np.einsum("hd,hd->h", q, state.sum_k)
    den2 = np.einsum("hf,hf->h", q2, state.sum_k2)

    if mode == "shared":
        den = state.count + den1 + den2
        _guard_step(den, p, position, "denominator")
        heads = (state.sum_v + num1 + num2) / den[:, None]
    else:
        _guard_step(den1, p, position, "first-order denominator")
        _guard_step(den2, p, position, "second-order denominator")
        heads = state.sum_v / state.count + num1 / den1[:, None] + num2 / den2[:, None]

    return heads.reshape(-1) @ p.W_O.data, state


def _guard_step(den: np.ndarray, p: AttnParams, position: int, term: str) -> None:
    small = np.abs(den) < p.eps_den
    if small.any():
        head = int(np.argmax(small))
        raise DenominatorError(float(den[head]), head + 1, position + 1, p.layer, term)


def init_nonapprox_state(p: AttnParams, dtype=np.float64) -> NonApproxState:
    h, dh = p.n_heads, p.d_head
    return NonApproxState(
        count=0,
        max_score=np.full(h, -np.inf, dtype=dtype),
        numerator=np.zeros((h, dh), dtype=dtype),
        denominator=np.zeros(h, dtype=dtype),
    )


def nonapprox_attention_recurrent(x_t, p: AttnParams, state: Optional[NonApproxState] = None,
                                  rope: bool = True) -> Tuple[np.ndarray, NonApproxState]:
    """Advance the self-gated exponential sums by one token and return (o_t, state')"""

    p.require("W_Q", "W_K", "W_V", "W_O")
    x, _, k, v = _project_row(x_t, p)
    q = ops.silu_array(x @ p.W_Q.data)
    q = q.reshape(p.n_heads, p.d_head)
    if state is None:
        state = init_nonapprox_state(p, x.dtype)

    if rope:
        q = _rope_row(q, state.count, p.rope_base)
        k = _rope_row(k, state.count, p.rope_base)
    score = np.einsum("hd,hd->h", q, k) / math.sqrt(p.d_head)

    if state.count == 0:
        new_max = score
        numerator = v.copy()
        denominator = np.ones_like(score)
    else:
        new_max = np.maximum(state.max_score, score)
        carry = np.exp(state.max_score - new_max)
        fresh = np.exp(score - new_max)
        numerator = state.numerator * carry[:, None] + fresh[:, None] * v
        denominator = state.denominator * carry + fresh

    state = NonApproxState(state.count + 1, new_max, numerator, denominator)
    heads = numerator / denominator[:, None]
    return heads.reshape(-1) @ p.W_O.data, state


def _rows(H) -> np.ndarray:
    rows = np.asarray(H.data if isinstance(H, Tensor) else H)
    if rows.ndim != 2:
        raise ShapeError(f"rollout expects [L, d_model], got {rows.shape}")
    return rows


def approximate_attention_rollout(H, p: AttnParams, mode: str = "split", rope: bool = True) -> np.ndarray:
    """Step the recurrent form over every row of H; returns O [L, d_model]"""

    state = None
    outputs: List[np.ndarray] = []
    for row in _rows(H):
        o_t, state = approximate_attention_recurrent(row, p, state, mode, rope)
        outputs.append(o_t)
    return np.stack(outputs)


def nonapprox_attention_rollout(H, p: AttnParams, rope: bool = True,
                                track: Optional[List[np.ndarray]] = None) -> np.ndarray:
    """Step the recurrent form over every row of H; appends log-denominators to `track`"""

    state = None
    outputs: List[np.ndarray] = []
    for row in _rows(H):
        o_t, state = nonapprox_attention_recurrent(row, p, state, rope)
        outputs.append(o_t)
        if track is not None:
            track.append(state.log_denominator.copy())
    return np.stack(outputs)


def random_params(d_model: int, n_heads: int, seed: int = 0, dtype="f64",
                  std: Optional[float] = None, rope_base: float = 10000.0) -> AttnParams:
    """Attention weights drawn from N(0, std^2), default std 1/sqrt(d_model)"""

    rng = np.random.default_rng(seed)
    scale = std if std is not None else 1.0 / math.sqrt(d_model)
    np_dtype = ops.resolve_dtype(dtype)

    def draw(name: str) -> Tensor:
        return Tensor(rng.normal(0.0, scale, (d_model, d_model)).astype(np_dtype),
                      requires_grad=True, name=name)

    return AttnParams(n_heads=n_heads, W_Q=draw("W_Q"), W_K=draw("W_K"),
                      W_V=draw("W_V"), W_O=draw("W_O"), rope_base=rope_base)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max|a - b| / max(max|b|, floor)"""

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.max(np.abs(b))) if b.size else 0.0, settings.RELATIVE_ERROR_FLOOR)
    return float(np.max(np.abs(a - b))) / scale if a.size else 0.0

