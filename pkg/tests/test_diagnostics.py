"""
Attention indicators, normalization for plotting and pre-softmax statistics
"""

import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from attnlab.core.errors import IndicatorError
from attnlab.ml import diagnostics as diag

TWO_BY_TWO = np.array([[1.0, 0.0], [0.5, 0.5]])


def uniform_causal(length):
    return np.tril(np.ones((length, length))) / np.arange(1, length + 1)[:, None]


def random_causal(seed, length):
    rng = np.random.default_rng(seed)
    A = np.tril(rng.random((length, length)) + 1e-3)
    return A / A.sum(axis=1, keepdims=True)


def test_entropy_hand_values():
    assert diag.entropy(TWO_BY_TWO) == pytest.approx(math.log(2), abs=1e-9)
    assert diag.entropy(uniform_causal(3)) == pytest.approx(math.log(2) + math.log(3), abs=1e-9)
    assert diag.entropy(np.eye(4)) == 0.0


def test_entropy_per_row_average():
    assert diag.entropy(TWO_BY_TWO, per_row_average=True) == pytest.approx(math.log(2) / 2, abs=1e-9)


def test_concentration_hand_values():
    assert diag.concentration(TWO_BY_TWO) == pytest.approx(math.sqrt(1.5), abs=1e-9)
    assert diag.concentration(uniform_causal(2)) == pytest.approx(math.sqrt(1.5), abs=1e-9)
    assert diag.concentration(np.eye(5)) == pytest.approx(math.sqrt(5), abs=1e-9)


def test_sink_hand_values():
    assert diag.sink(TWO_BY_TWO) == pytest.approx(0.75, abs=1e-9)
    assert diag.sink(uniform_causal(3)) == pytest.approx((1 + 1 / 2 + 1 / 3) / 3, abs=1e-9)


def test_local_focus_hand_values():
    assert diag.local_focus(TWO_BY_TWO, 0) == pytest.approx(0.75, abs=1e-9)
    assert diag.local_focus(TWO_BY_TWO, 1) == pytest.approx(0.5, abs=1e-9)
    assert diag.local_focus(uniform_causal(3), 2) == pytest.approx(1 / 3, abs=1e-9)


def test_local_focus_needs_long_enough_sequence():
    with pytest.raises(IndicatorError):
        diag.local_focus(TWO_BY_TWO, 2)


def test_head_diversity_hand_value():
    # the heads differ by 1/2 at two of the three causal positions: std 1/4 there
    heads = np.stack([np.eye(2), uniform_causal(2)])
    expected = (0.0 + 0.25 + 0.25) / 3
    assert diag.head_diversity(heads) == pytest.approx(expected, abs=1e-9)


def test_head_diversity_needs_two_heads():
    with pytest.raises(IndicatorError):
        diag.head_diversity(np.eye(3)[None])


def test_head_diversity_of_identical_heads_is_zero():
    A = random_causal(0, 6)
    assert diag.head_diversity(np.stack([A, A, A])) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("bad", [np.ones((2, 3)), np.zeros((0, 0)), np.ones(4)])
def test_non_square_input_rejected(bad):
    with pytest.raises(IndicatorError):
        diag.sink(bad)


def test_negative_weights_rejected_for_entropy():
    with pytest.raises(IndicatorError):
        diag.entropy(np.array([[1.0, 0.0], [1.5, -0.5]]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), length=st.integers(1, 24))
def test_indicator_bounds_for_row_stochastic_causal_weights(seed, length):
    A = random_causal(seed, length)
    low = math.sqrt(sum(1.0 / i for i in range(1, length + 1)))
    assert low - 1e-9 <= diag.concentration(A) <= math.sqrt(length) + 1e-9
    assert 1.0 / length - 1e-12 <= diag.sink(A) <= 1.0 + 1e-12
    assert diag.entropy(A) >= 0.0


def test_renormalize_rows_uses_magnitudes():
    out = diag.renormalize_rows(np.array([[2.0, 0.0], [-1.0, 3.0], [0.0, 0.0]]))
    np.testing.assert_allclose(out, [[1.0, 0.0], [0.25, 0.75], [0.0, 0.0]])


def test_head_indicators_leave_missing_offsets_empty():
    values = diag.head_indicators(TWO_BY_TWO)
    assert values["loc_foc2"] is None and values["loc_foc3"] is None
    assert values["loc_foc1"] == pytest.approx(0.5)


def test_layer_frame_averages_batch_and_renormalizes():
    A = np.stack([np.stack([TWO_BY_TWO, np.eye(2)])] * 3)  # [B=3, h=2, 2, 2]
    frame = diag.layer_indicator_frame(A)
    assert list(frame["head"]) == [1, 2]
    assert frame.loc[0, "sink"] == pytest.approx(0.75)
    assert frame.loc[1, "entropy"] == pytest.approx(0.0)
    assert frame["head_div"].nunique() == 1

    doubled = diag.layer_indicator_frame(A * -2.0, stochastic=False)
    pd.testing.assert_frame_equal(doubled, frame)


def test_normalize_for_plot_conventions():
    layers = pd.DataFrame({
        "layer": [1, 2, 3],
        "entropy": [1.0, 2.0, 3.0],
        "conc": [2.0, 2.0, 2.0],
        "head_div": [0.1, 0.3, 0.2],
        "sink": [0.4, 0.5, 0.6],
        "loc_foc0": [0.1, 0.2, 0.3],
        "loc_foc1": [0.0, 0.25, 0.5],
    })
    out = diag.normalize_for_plot(layers)
    np.testing.assert_allclose(out["entropy"], [0.0, 0.5, 1.0])
    np.testing.assert_allclose(out["conc"], [0.0, 0.0, 0.0])
    np.testing.assert_allclose(out["head_div"], [0.0, 1.0, 0.5])
    np.testing.assert_allclose(out["sink"], layers["sink"])
    np.testing.assert_allclose(out["loc_foc1"], [0.0, 0.5, 1.0])
    # input untouched
    assert layers.loc[2, "entropy"] == 3.0


def test_normalize_needs_two_layers():
    with pytest.raises(IndicatorError):
        diag.normalize_for_plot(pd.DataFrame({"layer": [1], "entropy": [1.0]}))


def test_prelogit_stats_cover_causal_support_only(rng):
    logits = np.full((2, 4, 4), 1000.0)
    logits[..., np.tril_indices(4)[0], np.tril_indices(4)[1]] = rng.normal(size=(2, 10))
    stats = diag.prelogit_stats([None, logits])
    assert len(stats) == 1
    record = stats[0]
    assert record["layer"] == 2
    assert record["count"] == 20
    assert record["max"] < 1000.0
    ordered = [record[k] for k in ("min", "q01", "q25", "q50", "q75", "q99", "max")]
    assert ordered == sorted(ordered)


def test_prelogit_stats_need_some_layer():
    with pytest.raises(IndicatorError):
        diag.prelogit_stats([None, None])
