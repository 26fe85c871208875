"""
Per-layer analytical cost formulas evaluated exactly.

Formulas live in cost_formulas.yaml as monomial lists; values are computed
with Fractions and reported as int when integral, otherwise as "p/q".
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import product
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import pandas as pd
import yaml
from pydantic import ValidationError

from attnlab.core.config import settings
from attnlab.core.errors import ConfigError, UnknownVariantError
from attnlab.models.config import VariantTag
from attnlab.models.cost import CostQuery, CostReport, CostTerm

logger = logging.getLogger(__name__)

SYMBOLS = ("B", "L", "d", "h", "t", "delta")
METRICS = ("complexity", "flops", "activation_memory", "cache_size", "cache_size_prefetch")
STAGES = ("prefill", "decode")
VARIANTS = tuple(tag.value for tag in VariantTag)
CSV_COLUMNS = ["variant", "metric", "stage", "B", "L", "d", "h", "t", "value"]

Exact = Union[int, str]


@dataclass(frozen=True)
class Monomial:
    """coef * prod(symbol ** exponent)"""

    coef: Fraction
    exponents: Tuple[Tuple[str, int], ...]

    @classmethod
    def from_entry(cls, entry: Dict) -> "Monomial":
        unknown = set(entry) - set(SYMBOLS) - {"coef"}
        if unknown:
            raise ConfigError(f"formula term has unknown symbols {sorted(unknown)}")
        exponents = tuple((s, int(entry[s])) for s in SYMBOLS if entry.get(s))
        return cls(Fraction(str(entry["coef"])), exponents)

    def evaluate(self, values: Dict[str, int]) -> Fraction:
        result = self.coef
        for symbol, power in self.exponents:
            value = values.get(symbol)
            if value is None:
                raise ConfigError(f"formula needs {symbol}, which the query does not set")
            result *= Fraction(value) ** power
        return result

    def describe(self) -> str:
        factors = [symbol if power == 1 else f"{symbol}^{power}" for symbol, power in self.exponents]
        return "*".join([str(self.coef)] + factors)


@dataclass(frozen=True)
class Formula:
    unit: str
    terms: Tuple[Monomial, ...]


def exact(value: Fraction) -> Exact:
    return int(value) if value.denominator == 1 else f"{value.numerator}/{value.denominator}"


def _terms(entries: Optional[List[Dict]]) -> Tuple[Monomial, ...]:
    return tuple(Monomial.from_entry(e) for e in (entries or []))


@lru_cache(maxsize=4)
def load_formulas(path: Optional[str] = None) -> Dict[Tuple[str, str, Optional[str], bool], Formula]:
    """Formula table keyed by (variant, metric, stage, precomputed)"""

    with open(path or settings.COST_FORMULAS_PATH, "r") as f:
        spec = yaml.safe_load(f)["cost_formulas"]

    table: Dict[Tuple[str, str, Optional[str], bool], Formula] = {}
    for metric in ("complexity", "activation_memory", "cache_size", "cache_size_prefetch"):
        section = spec[metric]
        for variant, entries in section["variants"].items():
            table[(variant, metric, None, False)] = Formula(section["unit"], _terms(entries))
    flops = spec["flops"]
    for stage, variants in flops["stages"].items():
        for variant, entries in variants.items():
            table[(variant, "flops", stage, False)] = Formula(flops["unit"], _terms(entries))
    for stage, variants in flops.get("precomputed", {}).items():
        for variant, entries in variants.items():
            table[(variant, "flops", stage, True)] = Formula(flops["unit"], _terms(entries))
    return table


def formula(variant: str, metric: str, stage: Optional[str] = None,
            precomputed: bool = False) -> Formula:
    if variant not in VARIANTS:
        raise UnknownVariantError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
    if metric not in METRICS:
        raise UnknownVariantError(f"unknown metric {metric!r}; expected one of {', '.join(METRICS)}")
    if metric == "flops":
        if stage not in STAGES:
            raise UnknownVariantError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
    else:
        stage = None
    key = (variant, metric, stage, precomputed)
    table = load_formulas()
    if key not in table:
        if precomputed:
            raise UnknownVariantError(f"precomputed attention scores do not apply to {variant}")
        raise UnknownVariantError(f"no {metric} formula for {variant}")
    return table[key]


def validate_query(query: Union[CostQuery, Dict]) -> CostQuery:
    if isinstance(query, CostQuery):
        return query
    try:
        return CostQuery.model_validate(query)
    except ValidationError as e:
        raise ConfigError(f"invalid cost query: {e}") from e


def evaluate(query: Union[CostQuery, Dict], metric: str, precomputed: bool = False) -> CostReport:
    """Evaluate one metric at one query"""

    query = validate_query(query)
    stage = query.stage if metric == "flops" else None
    precomputed = precomputed and metric == "flops"
    f = formula(query.variant, metric, stage, precomputed)
    values = {"B": query.B, "L": query.L, "d": query.d, "h": query.h, "t": query.t, "delta": query.delta}
    evaluated = [term.evaluate(values) for term in f.terms]
    return CostReport(
        variant=query.variant,
        metric=metric,
        stage=stage,
        unit=f.unit,
        precomputed=precomputed,
        query=query,
        terms=[CostTerm(coef=str(term.coef), exponents=dict(term.exponents), value=exact(v))
               for term, v in zip(f.terms, evaluated)],
        value=exact(sum(evaluated, Fraction(0))),
    )


def time_complexity(query) -> CostReport:
    return evaluate(query, "complexity")


def flops_per_iter(query, precomputed: bool = False) -> CostReport:
    return evaluate(query, "flops", precomputed)


def activation_memory(query) -> CostReport:
    return evaluate(query, "activation_memory")


def cache_size(query) -> CostReport:
    return evaluate(query, "cache_size")


def cache_size_prefetch(query) -> CostReport:
    return evaluate(query, "cache_size_prefetch")


def sweep(queries: Iterable[Union[CostQuery, Dict]], metrics: Sequence[str] = ("complexity", "flops",
          "activation_memory", "cache_size"), precomputed: bool = False) -> pd.DataFrame:
    """Evaluate every (query, metric) pair; rows sorted so input order does not matter"""

    rows = []
    for query, metric in product([validate_query(q) for q in queries], metrics):
        report = evaluate(query, metric, precomputed)
        rows.append({
            "variant": report.variant,
            "metric": report.metric,
            "stage": report.stage or "",
            "B": query.B, "L": query.L, "d": query.d, "h": query.h, "t": query.t,
            "value": report.value,
        })
    frame = pd.DataFrame(rows, columns=CSV_COLUMNS)
    if frame.empty:
        return frame
    frame["_variant_order"] = frame["variant"].map(VARIANTS.index)
    frame["_metric_order"] = frame["metric"].map(METRICS.index)
    frame = frame.drop_duplicates(subset=CSV_COLUMNS[:-1])
    frame = frame.sort_values(["_variant_order", "_metric_order", "stage", "B", "L", "d", "h", "t"],
                              kind="mergesort")
    return frame.drop(columns=["_variant_order", "_metric_order"]).reset_index(drop=True)


def query_grid(variants: Sequence[str], B: Sequence[int], L: Sequence[int], d: Sequence[int],
               h: Sequence[int], t: Sequence[int], stages: Sequence[str] = STAGES,
               delta: Optional[int] = None) -> List[CostQuery]:
    """Cartesian product of query values"""
    return [validate_query({"variant": v, "B": b, "L": l, "d": dm, "h": hh, "t": tt, "stage": s, "delta": delta})
            for v, b, l, dm, hh, tt, s in product(variants, B, L, d, h, t, stages)]
