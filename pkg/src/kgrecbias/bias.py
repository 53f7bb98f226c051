"""Categorical bias of recommendation lists and its chi-squared significance.

For a feature such as production country, every (recommendation, value)
pair counts once, so a movie with two countries contributes to both.
Observed fractions ``p(c) = |R_c| / |R|`` and catalog fractions ``c_e`` are
both normalised by the total number of assignment pairs, including pairs
whose value falls outside the analysed top values.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .evalkit import DataError, RatingsDataset
from .recommender import Recommendation

_EPS = 1e-15
_TINY = 1e-300
_MAX_ITER = 10_000


def _gamma_series(a: float, x: float) -> float:
    """Lower regularised incomplete gamma P(a, x) by its power series (x < a + 1)."""
    ap = a
    term = total = 1.0 / a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise ArithmeticError(f"series for P({a}, {x}) did not converge")
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_contfrac(a: float, x: float) -> float:
    """Upper regularised incomplete gamma Q(a, x) by modified Lentz continued fraction (x >= a + 1)."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise ArithmeticError(f"continued fraction for Q({a}, {x}) did not converge")
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_p(a: float, x: float) -> float:
    if a <= 0 or x < 0 or math.isnan(x):
        raise ValueError(f"P(a, x) needs a > 0 and x >= 0, got a={a}, x={x}")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(1.0, _gamma_series(a, x))
    return max(0.0, 1.0 - _gamma_contfrac(a, x))


def chi_square_cdf(x: float, df: float) -> float:
    if df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    if x < 0 or math.isnan(x):
        raise ValueError(f"chi-squared statistic must be >= 0, got {x}")
    return regularized_gamma_p(df / 2.0, x / 2.0)


def chi_square_sf(x: float, df: float) -> float:
    """Upper tail ``1 - cdf``, computed directly in the continued-fraction region."""
    if df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    if x < 0 or math.isnan(x):
        raise ValueError(f"chi-squared statistic must be >= 0, got {x}")
    a, half = df / 2.0, x / 2.0
    if half == 0:
        return 1.0
    if math.isinf(half):
        return 0.0
    if half < a + 1.0:
        return max(0.0, 1.0 - _gamma_series(a, half))
    return min(1.0, _gamma_contfrac(a, half))


def chi_square_ppf(q: float, df: float, tol: float = 1e-12) -> float:
    """Inverse CDF by bisection."""
    if not 0 <= q < 1:
        raise ValueError("quantile must lie in [0, 1)")
    if q == 0:
        return 0.0
    hi = max(1.0, float(df))
    while chi_square_cdf(hi, df) < q:
        hi *= 2.0
    lo = 0.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if chi_square_cdf(mid, df) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class CategoricalFeature:
    """A multi-valued item attribute restricted to an analysed value set."""

    name: str
    values: tuple[str, ...]
    assignment: dict[int, frozenset[str]]

    @classmethod
    def from_dataset(cls, d: RatingsDataset, name: str, top: int | None = 10) -> "CategoricalFeature":
        """Use ``genres`` or ``countries`` metadata; keep the ``top`` values by catalog assignment count."""
        attr = {"genre": "genres", "country": "countries"}.get(name, name)
        assignment = {item: frozenset(getattr(m, attr)) for item, m in d.meta.items()}
        counts = Counter(v for vals in assignment.values() for v in vals)
        ranked = sorted(counts, key=lambda v: (-counts[v], v))
        return cls(name, tuple(ranked if top is None else ranked[:top]), assignment)

    def of(self, item: int) -> frozenset[str]:
        return self.assignment.get(item, frozenset())


def _item_lists(recs) -> Iterable[Sequence[int]]:
    values = recs.values() if isinstance(recs, Mapping) else recs
    for rec in values:
        yield rec.items if isinstance(rec, Recommendation) else rec


def feature_distribution(recs, f: CategoricalFeature) -> tuple[dict[str, float], dict[str, int], int]:
    """Return ``(p, counts, total)`` over (recommendation, value) assignment pairs.

    ``counts`` covers the analysed values only; ``total`` counts every pair.
    """
    counts = Counter()
    total = 0
    for items in _item_lists(recs):
        for item in items:
            vals = f.of(item)
            total += len(vals)
            counts.update(vals)
    if total == 0:
        raise DataError(f"no {f.name} assignments among the recommendations")
    observed = {c: counts.get(c, 0) for c in f.values}
    return {c: observed[c] / total for c in f.values}, observed, total


def expected_fractions(
    catalog: Iterable[int], f: CategoricalFeature, weights: Mapping[int, float] | None = None
) -> dict[str, float]:
    """Catalog prevalence of each value; ``weights`` (e.g. rating counts) switches to weighted prevalence."""
    counts = Counter()
    total = 0.0
    catalog = list(catalog)
    if not catalog:
        raise DataError("empty catalog")
    for item in catalog:
        w = 1.0 if weights is None else float(weights.get(item, 0.0))
        vals = f.of(item)
        total += w * len(vals)
        for v in vals:
            counts[v] += w
    if total == 0:
        raise DataError(f"no {f.name} assignments in the catalog")
    return {c: counts.get(c, 0.0) / total for c in f.values}


def chi_square_stat(
    observed: Mapping[str, Mapping[str, float]],
    expected: Mapping[str, float],
    totals: Mapping[str, float],
) -> tuple[dict[str, float], float]:
    """Per-KG ``sum_c (|R_c| - c_e |R|)^2 / (c_e |R|)`` and the sum over KGs."""
    per_kg = {}
    for kg, obs in observed.items():
        total = totals[kg]
        if total <= 0:
            raise DataError(f"{kg}: no recommendations")
        stat = 0.0
        for c, ce in expected.items():
            o = obs.get(c, 0)
            if ce <= 0:
                if o:
                    raise DataError(f"{kg}: expected count for {c!r} is zero but {o} were observed")
                continue
            e = ce * total
            stat += (o - e) ** 2 / e
        per_kg[kg] = stat
    return per_kg, math.fsum(per_kg.values())


def significance_verdict(chi2: float, n_kgs: int, n_values: int, alpha: float = 0.05) -> dict:
    df = (n_kgs - 1) * (n_values - 1)
    if df <= 0:
        raise ValueError("need at least two KGs and two feature values")
    p = chi_square_sf(chi2, df)
    return {"df": df, "alpha": alpha, "p_value": p, "significant": p < alpha}


def contingency_test(observed: Mapping[str, Mapping[str, float]], values: Sequence[str]) -> dict:
    """Pearson test of independence on the KG x value count table (analysed values only)."""
    kgs = list(observed)
    cells = [[float(observed[kg].get(c, 0)) for c in values] for kg in kgs]
    row = [sum(r) for r in cells]
    col = [sum(cells[i][j] for i in range(len(kgs))) for j in range(len(values))]
    grand = sum(row)
    keep = [j for j, c in enumerate(col) if c > 0]
    stat = 0.0
    for i in range(len(kgs)):
        for j in keep:
            e = row[i] * col[j] / grand
            if e > 0:
                stat += (cells[i][j] - e) ** 2 / e
    df = (len(kgs) - 1) * (len(keep) - 1)
    return {"chi2": stat, "df": df, "p_value": chi_square_sf(stat, df) if df > 0 else 1.0}


@dataclass
class BiasReport:
    feature: str
    values: tuple[str, ...]
    p: dict[str, dict[str, float]]
    counts: dict[str, dict[str, int]]
    totals: dict[str, int]
    expected: dict[str, float]
    chi2: dict[str, float]
    chi2_sum: float
    df: int
    alpha: float
    p_value: float
    significant: bool
    contingency: dict = field(default_factory=dict)
    expected_mode: str = "catalog"

    def sidecar(self) -> dict:
        return {
            "feature": self.feature,
            "values": list(self.values),
            "expected_mode": self.expected_mode,
            "totals": self.totals,
            "counts": self.counts,
            "chi2_per_kg": self.chi2,
            "chi2": self.chi2_sum,
            "df": self.df,
            "alpha": self.alpha,
            "p_value": self.p_value,
            "significant": self.significant,
            "contingency": self.contingency,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def bias_report(
    recs_by_kg: Mapping[str, object],
    f: CategoricalFeature,
    catalog: Iterable[int],
    alpha: float = 0.05,
    weights: Mapping[int, float] | None = None,
) -> BiasReport:
    p, counts, totals = {}, {}, {}
    for kg, recs in recs_by_kg.items():
        p[kg], counts[kg], totals[kg] = feature_distribution(recs, f)
    expected = expected_fractions(catalog, f, weights)
    per_kg, summed = chi_square_stat(counts, expected, totals)
    verdict = significance_verdict(summed, len(recs_by_kg), len(f.values), alpha)
    return BiasReport(
        f.name, f.values, p, counts, totals, expected, per_kg, summed, verdict["df"], alpha,
        verdict["p_value"], verdict["significant"], contingency_test(counts, f.values),
        "catalog" if weights is None else "rating-weighted",
    )


def genre_partition(d: RatingsDataset, genre: str) -> RatingsDataset:
    """Restrict to items carrying ``genre``; users are not re-filtered."""
    items = sorted(i for i, m in d.meta.items() if genre in m.genres)
    if not items:
        raise DataError(f"no items with genre {genre!r}")
    part = d.subset(np.isin(d.items, items), f"genre partition {genre}")
    part.meta = {i: d.meta[i] for i in items}
    if len(part) == 0:
        raise DataError(f"genre {genre!r} has no ratings")
    return part
