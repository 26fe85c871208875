"""
Token-mixing variants: hand values, parallel/recurrent agreement, gradients
"""

import math

import numpy as np
import pytest

from attnlab.core.errors import DenominatorError, NonFiniteError, ShapeError
from attnlab.ml import attention as attn
from attnlab.ml.tensor import Tensor
from attnlab.services.equivalence_service import check_equivalence

from conftest import weighted_readout

SILU_ONE = 0.7310585786300049


def scalar_params(w_q, w_k):
    def weight(value):
        return Tensor(np.array([[value]], dtype=np.float64))
    return attn.AttnParams(n_heads=1, W_Q=weight(w_q), W_K=weight(w_k), W_V=weight(1.0), W_O=weight(1.0))


@pytest.fixture
def params():
    return attn.random_params(8, 2, seed=3)


@pytest.fixture
def hidden(rng):
    return Tensor(rng.normal(size=(6, 8)))


def test_nonapprox_hand_computed_weights():
    p = scalar_params(1.0, math.log(3.0) / SILU_ONE)
    H = Tensor(np.array([[0.0], [1.0]]))
    out = attn.nonapprox_attention_parallel(H, p, need_weights=True, rope=False)
    np.testing.assert_allclose(out.A.data[0, 1], [0.25, 0.75], atol=1e-12)
    np.testing.assert_allclose(out.A.data[0, 0], [1.0, 0.0], atol=1e-12)
    # V is H itself, so the second output is the weighted mean of [0, 1]
    np.testing.assert_allclose(out.O.data[:, 0], [0.0, 0.75], atol=1e-12)


def test_nonapprox_weights_ignore_rotary_positions(params, hidden):
    rotated = attn.nonapprox_attention_parallel(hidden, params, need_weights=True, rope=True).A.data
    plain = attn.nonapprox_attention_parallel(hidden, params, need_weights=True, rope=False).A.data
    np.testing.assert_allclose(rotated, plain, atol=1e-12)


def test_nonapprox_silu_gates_only_the_query(params, hidden):
    logits = attn.nonapprox_attention_parallel(hidden, params, need_weights=True, rope=False).prelogits.data

    def heads(x):
        return x.reshape(6, 2, 4).transpose(1, 0, 2)

    def silu(x):
        return x / (1.0 + np.exp(-x))

    H, W_Q, W_K = hidden.data, params.W_Q.data, params.W_K.data
    expected = (heads(silu(H @ W_Q)) * heads(H @ W_K)).sum(-1) / 2.0
    np.testing.assert_allclose(logits[:, -1, :], expected, atol=1e-12)
    both_gated = (heads(silu(H @ W_Q)) * heads(silu(H @ W_K))).sum(-1) / 2.0
    assert not np.allclose(logits[:, -1, :], both_gated)


@pytest.mark.parametrize("variant", ["standard", "nonapprox", "shared", "external", "static"])
def test_attention_rows_are_probability_distributions(variant, params, hidden, rng):
    source = Tensor(rng.normal(size=hidden.shape))
    run = {
        "standard": lambda: attn.standard_attention(hidden, params, need_weights=True),
        "nonapprox": lambda: attn.nonapprox_attention_parallel(hidden, params, need_weights=True),
        "shared": lambda: attn.approximate_attention_parallel(hidden, params, "shared", need_weights=True),
        "external": lambda: attn.external_qk_attention(hidden, source, params, need_weights=True),
        "static": lambda: attn.static_emb_qk_attention(hidden, source, params, need_weights=True),
    }
    out = run[variant]()
    A = out.A.data
    assert out.stochastic
    assert A.shape == (2, 6, 6)
    assert (A >= 0).all()
    np.testing.assert_allclose(A.sum(axis=-1), 1.0, atol=1e-12)
    assert np.allclose(np.triu(A, k=1), 0.0)


def test_split_mode_weights_are_not_stochastic(params, hidden):
    out = attn.approximate_attention_parallel(hidden, params, "split", need_weights=True)
    assert not out.stochastic
    # each of the three normalized terms contributes a row sum of one
    np.testing.assert_allclose(out.A.data.sum(axis=-1), 3.0, atol=1e-9)


def test_external_sequence_is_truncated_to_input_length(params, hidden, rng):
    longer = rng.normal(size=(10, 8))
    full = attn.external_qk_attention(hidden, Tensor(longer), params).O.data
    cut = attn.external_qk_attention(hidden, Tensor(longer[:6]), params).O.data
    np.testing.assert_allclose(full, cut, atol=1e-14)


def test_external_sequence_too_short(params, hidden):
    with pytest.raises(ShapeError):
        attn.external_qk_attention(hidden, Tensor(np.ones((3, 8))), params)


def test_non_finite_input_rejected(params):
    H = np.ones((3, 8))
    H[1, 2] = np.nan
    with pytest.raises(NonFiniteError):
        attn.standard_attention(Tensor(H), params)


def test_split_denominator_guard_reports_head_and_position(hidden):
    p = attn.random_params(8, 2, seed=0)
    p.W_K = Tensor(np.zeros((8, 8)))
    with pytest.raises(DenominatorError) as info:
        attn.approximate_attention_parallel(hidden, p, "split")
    assert info.value.head == 1
    assert info.value.position == 1
    assert info.value.term == "first-order denominator"


def test_recurrent_split_denominator_guard(hidden):
    p = attn.random_params(8, 2, seed=0)
    p.W_K = Tensor(np.zeros((8, 8)))
    with pytest.raises(DenominatorError):
        attn.approximate_attention_rollout(hidden.data, p, "split")


def test_shared_mode_survives_zero_keys(hidden):
    p = attn.random_params(8, 2, seed=0)
    p.W_K = Tensor(np.zeros((8, 8)))
    out = attn.approximate_attention_parallel(hidden, p, "shared", need_weights=True)
    # phi is 1 everywhere, so attention is the running mean
    np.testing.assert_allclose(out.A.data[0, 3, :4], 0.25, atol=1e-14)


@pytest.mark.parametrize("seq_len", [1, 2, 8, 32, 64])
@pytest.mark.parametrize("d_head", [1, 4, 16])
@pytest.mark.parametrize("variant,mode", [("approx", "split"), ("approx", "shared"), ("nonapprox", "split")])
def test_recurrent_form_matches_parallel_form_f64(variant, mode, seq_len, d_head):
    result = check_equivalence(variant, seq_len, d_head=d_head, n_heads=2, dtype="f64", mode=mode)
    assert result.passed, f"relative error {result.max_rel_err:.3e}"
    assert result.max_rel_err <= 1e-10


@pytest.mark.parametrize("seq_len", [8, 32])
@pytest.mark.parametrize("variant,mode", [("approx", "shared"), ("nonapprox", "split")])
def test_recurrent_form_matches_parallel_form_f32(variant, mode, seq_len):
    result = check_equivalence(variant, seq_len, d_head=4, n_heads=2, dtype="f32", mode=mode)
    assert result.max_rel_err <= 1e-5


def test_nonapprox_log_denominator_strictly_increases(params, rng):
    track = []
    attn.nonapprox_attention_rollout(rng.normal(size=(20, 8)), params, track=track)
    steps = np.diff(np.stack(track), axis=0)
    assert (steps > 0).all()


def test_recurrent_step_rejects_wrong_width(params):
    with pytest.raises(ShapeError):
        attn.approximate_attention_recurrent(np.ones(5), params)


@pytest.mark.parametrize("variant", ["standard", "split", "shared", "nonapprox", "external", "static"])
def test_parallel_form_gradients(variant, params, hidden, rng, gradcheck):
    source = Tensor(rng.normal(size=hidden.shape))
    run = {
        "standard": lambda: attn.standard_attention(hidden, params),
        "split": lambda: attn.approximate_attention_parallel(hidden, params, "split"),
        "shared": lambda: attn.approximate_attention_parallel(hidden, params, "shared"),
        "nonapprox": lambda: attn.nonapprox_attention_parallel(hidden, params),
        "external": lambda: attn.external_qk_attention(hidden, source, params),
        "static": lambda: attn.static_emb_qk_attention(hidden, source, params),
    }
    f = lambda: weighted_readout(run[variant]().O)  # noqa: E731
    gradcheck(f, params.W_Q, rng, n_coords=10)
    gradcheck(f, hidden, rng, n_coords=10)


def test_gated_mlp_gradients(rng, gradcheck):
    def weight(*shape):
        return Tensor(rng.normal(0.0, 0.3, shape))

    p = attn.AttnParams(n_heads=1, W_Gt=weight(4, 5), W_Up=weight(4, 5), W_Dn=weight(5, 4),
                        out_gain=weight(4), in_gain=weight(4))
    H = Tensor(rng.normal(size=(3, 4)))
    out = attn.gated_mlp(H, p, need_weights=True)
    assert out.A is None
    f = lambda: weighted_readout(attn.gated_mlp(H, p).O)  # noqa: E731
    gradcheck(f, p.W_Gt, rng, n_coords=10)
    gradcheck(f, p.in_gain, rng, n_coords=4)
    gradcheck(f, H, rng, n_coords=10)


def test_relative_error_uses_floor_for_zero_reference():
    assert attn.relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert attn.relative_error(np.array([2.0]), np.array([1.0])) == 1.0


def test_standard_single_token_attends_to_itself(params, rng):
    out = attn.standard_attention(Tensor(rng.normal(size=(1, 8))), params, need_weights=True)
    np.testing.assert_array_equal(out.A.data, np.ones((2, 1, 1)))


def test_standard_zero_queries_give_uniform_causal_rows(params, hidden):
    p = attn.AttnParams(n_heads=2, W_Q=Tensor(np.zeros((8, 8))), W_K=params.W_K, W_V=params.W_V, W_O=params.W_O)
    A = attn.standard_attention(hidden, p, need_weights=True).A.data
    expected = np.tril(np.ones((6, 6))) / np.arange(1, 7)[:, None]
    for head in A:
        np.testing.assert_allclose(head, expected, atol=1e-15)


@pytest.fixture
def mlp_params(rng):
    def weight(shape):
        return Tensor(rng.normal(size=shape) / math.sqrt(shape[0]))
    return attn.AttnParams(n_heads=1, W_Gt=weight((8, 10)), W_Up=weight((8, 10)), W_Dn=weight((10, 8)))


def test_gated_mlp_is_position_wise(mlp_params, hidden, rng):
    perm = rng.permutation(6)
    out = attn.gated_mlp(hidden, mlp_params).O.data
    permuted = attn.gated_mlp(Tensor(hidden.data[perm]), mlp_params).O.data
    np.testing.assert_allclose(permuted, out[perm], rtol=1e-12, atol=1e-15)
    np.testing.assert_array_equal(attn.gated_mlp(Tensor(np.zeros((3, 8))), mlp_params).O.data, np.zeros((3, 8)))


def test_external_qk_with_own_hidden_states_is_standard(params, hidden):
    external = attn.external_qk_attention(hidden, hidden, params, need_weights=True)
    standard = attn.standard_attention(hidden, params, need_weights=True)
    np.testing.assert_array_equal(external.O.data, standard.O.data)
    np.testing.assert_array_equal(external.A.data, standard.A.data)


def test_external_qk_weights_ignore_hidden_states(params, rng):
    X = Tensor(rng.normal(size=(6, 8)))
    first = attn.external_qk_attention(Tensor(rng.normal(size=(6, 8))), X, params, need_weights=True)
    second = attn.external_qk_attention(Tensor(rng.normal(size=(6, 8))), X, params, need_weights=True)
    np.testing.assert_array_equal(first.A.data, second.A.data)
    assert not np.allclose(first.O.data, second.O.data)


def test_static_embeddings_equal_to_hidden_states_is_standard(params, hidden):
    static = attn.static_emb_qk_attention(hidden, hidden, params, need_weights=True)
    standard = attn.standard_attention(hidden, params, need_weights=True)
    np.testing.assert_array_equal(static.O.data, standard.O.data)
    np.testing.assert_array_equal(static.A.data, standard.A.data)
