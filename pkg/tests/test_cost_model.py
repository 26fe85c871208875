"""
Analytical cost formulas: exact values, sweeps and lookup errors
"""

import pytest

from attnlab.core.errors import ConfigError, UnknownVariantError
from attnlab.ml import cost_model
from attnlab.services.cost_service import CostService


def query(variant, **values):
    return {"variant": variant, **values}


@pytest.mark.parametrize("variant,metric,values,expected", [
    ("standard", "flops", dict(B=1, L=2, d=4, stage="prefill"), 256),
    ("static_emb_qk", "flops", dict(B=1, L=2, d=4, stage="prefill"), 256),
    ("mlp", "flops", dict(B=2, L=5, d=4, stage="decode"), 192),
    ("approx", "flops", dict(B=1, L=3, d=4, stage="prefill"), 14 * 3 * 16),
    ("rnd_emb_qk", "flops", dict(B=2, L=2, d=4, stage="prefill"), 2 * 4 * 4 + 2 * 2 * 4 * 4 + 6 * 2 * 2 * 16),
    ("standard", "flops", dict(B=1, L=8, d=4, stage="decode"), 6 * 16 + 4 * 8 * 4),
    ("mlp", "complexity", dict(B=1, L=8, d=4), 128),
    ("standard", "complexity", dict(B=1, L=2, d=4), 48),
    ("nonapprox", "complexity", dict(B=1, L=1000, d=4), 16000),
    ("standard", "activation_memory", dict(B=1, L=2, d=4, h=2), 80),
    ("standard", "activation_memory", dict(B=1, L=2, d=4, h=2, t=2), 40),
    ("approx", "activation_memory", dict(B=1, L=1, d=2, h=2, t=3), "28/3"),
    ("standard", "cache_size", dict(B=1, L=8, d=16), 512),
    ("mlp", "cache_size", dict(B=4, L=8, d=16), 0),
    ("approx", "cache_size", dict(B=1, L=8, d=4, h=2), 56),
    ("nonapprox", "cache_size", dict(B=1, L=8, d=4, h=2), 16),
    ("fixed_seq_qk", "cache_size", dict(B=3, L=8, d=16), 2 * 4 * 8 * 16),
    ("rnd_emb_qk", "cache_size_prefetch", dict(L=8, d=4, delta=2), 36),
])
def test_formula_values(variant, metric, values, expected):
    assert cost_model.evaluate(query(variant, **values), metric).value == expected


def test_cache_grows_with_length_only_for_quadratic_variants():
    for variant in ("approx", "nonapprox", "mlp"):
        short = cost_model.cache_size(query(variant, L=16, d=8, h=2)).value
        long = cost_model.cache_size(query(variant, L=4096, d=8, h=2)).value
        assert short == long
    assert cost_model.cache_size(query("standard", L=4096, d=8)).value > \
        cost_model.cache_size(query("standard", L=16, d=8)).value


def test_approx_decode_costs_five_thirds_of_nonapprox():
    approx = cost_model.flops_per_iter(query("approx", B=2, L=9, d=8, stage="decode")).value
    nonapprox = cost_model.flops_per_iter(query("nonapprox", B=2, L=9, d=8, stage="decode")).value
    assert approx * 3 == nonapprox * 5


def test_precomputed_scores():
    report = cost_model.flops_per_iter(query("rnd_emb_qk", B=1, L=2, d=4), precomputed=True)
    assert report.precomputed
    assert report.value == 96
    with pytest.raises(UnknownVariantError):
        cost_model.flops_per_iter(query("standard", L=2, d=4), precomputed=True)


def test_precomputed_flag_ignored_for_other_metrics():
    report = cost_model.evaluate(query("standard", L=2, d=4), "complexity", precomputed=True)
    assert not report.precomputed
    assert report.value == 48


def test_report_lists_terms():
    report = cost_model.flops_per_iter(query("standard", B=1, L=2, d=4))
    assert report.unit == "FLOPs"
    assert [term.value for term in report.terms] == [64, 192]
    assert report.terms[0].exponents == {"B": 1, "L": 2, "d": 1}


def test_prefetch_needs_window():
    with pytest.raises(ConfigError):
        cost_model.cache_size_prefetch(query("rnd_emb_qk", L=8, d=4))
    with pytest.raises(UnknownVariantError):
        cost_model.cache_size_prefetch(query("standard", L=8, d=4, delta=2))


@pytest.mark.parametrize("bad", [
    query("standard", L=0, d=4),
    query("standard", L=2, d=5, h=2),
    query("standard", L=2, d=4, stage="train"),
])
def test_invalid_queries(bad):
    with pytest.raises(ConfigError):
        cost_model.evaluate(bad, "complexity")


def test_unknown_names():
    with pytest.raises(UnknownVariantError):
        cost_model.evaluate(query("sparse", L=2, d=4), "flops")
    with pytest.raises(UnknownVariantError):
        cost_model.evaluate(query("standard", L=2, d=4), "latency")


def test_every_variant_has_the_core_metrics():
    for variant in cost_model.VARIANTS:
        for metric in ("complexity", "activation_memory", "cache_size"):
            assert cost_model.evaluate(query(variant, B=2, L=4, d=8, h=2), metric).value is not None
        for stage in cost_model.STAGES:
            value = cost_model.evaluate(query(variant, B=2, L=4, d=8, h=2, stage=stage), "flops").value
            assert isinstance(value, int) and value > 0


def test_sweep_rows_and_order():
    grid = cost_model.query_grid(["mlp", "standard"], B=[1], L=[2], d=[4], h=[1], t=[1])
    frame = cost_model.sweep(grid, ["flops", "complexity"])
    assert list(frame.columns) == cost_model.CSV_COLUMNS
    assert list(frame["variant"]) == ["standard"] * 3 + ["mlp"] * 3
    assert list(frame["metric"])[:3] == ["complexity", "flops", "flops"]
    assert list(frame["stage"])[:3] == ["", "decode", "prefill"]
    assert frame.iloc[2]["value"] == 256


def test_sweep_ignores_input_order():
    grid = cost_model.query_grid(["approx", "standard", "nonapprox"], B=[1, 2], L=[4, 8], d=[8], h=[2], t=[1])
    forward = cost_model.sweep(grid, ["complexity", "cache_size", "flops"])
    backward = cost_model.sweep(list(reversed(grid)), ["flops", "cache_size", "complexity"])
    assert forward.equals(backward)


def test_empty_sweep_has_columns():
    frame = cost_model.sweep([], ["flops"])
    assert frame.empty
    assert list(frame.columns) == cost_model.CSV_COLUMNS


def test_cost_service_point_and_sweep(tmp_path):
    service = CostService()
    assert service.point("standard", "flops", L=2, d=4).value == 256
    frame = service.sweep(["standard"], ["cache_size"], B=[1], L=[8], d=[16], h=[1], t=[1])
    path = service.write(frame, tmp_path / "costs.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(cost_model.CSV_COLUMNS)
    assert lines[1] == "standard,cache_size,,1,8,16,1,1,512"
    with pytest.raises(ConfigError):
        service.sweep([], ["flops"], B=[1], L=[2], d=[4], h=[1], t=[1])
