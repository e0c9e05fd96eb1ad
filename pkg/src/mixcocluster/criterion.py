"""Exact evaluation of the MAP co-clustering criterion, in nats.

The criterion is the negative log posterior of a model. Its prior block
codes the structure (partition sizes, value groupings, cluster counts and
assignments, cell and cluster distributions); its likelihood block codes the
observations given that structure.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .model import CoclusterModel, Move, MoveEffect, StructuralError

# Above these sizes ln B(A, B) uses A ln B - ln B!  (see log_stirling2_cumulative)
STIRLING_RATIO_THRESHOLD = 10
STIRLING_ABSOLUTE_THRESHOLD = 10_000


class CombinatoricsCache:
    """Log-factorial table and memoized log cumulative Stirling numbers."""

    def __init__(self, size: int = 1024, ratio_threshold: int = STIRLING_RATIO_THRESHOLD,
                 absolute_threshold: int = STIRLING_ABSOLUTE_THRESHOLD):
        self.ratio_threshold = ratio_threshold
        self.absolute_threshold = absolute_threshold
        self._lock = threading.Lock()
        self._lf = np.zeros(1, dtype=np.float64)
        self._stirling: dict[int, np.ndarray] = {}
        self.reserve(size)

    def reserve(self, n: int):
        """Make ln k! available for every k <= n."""
        if n < self._lf.shape[0]:
            return
        with self._lock:
            if n < self._lf.shape[0]:
                return
            size = max(n + 1, 2 * self._lf.shape[0])
            lf = np.empty(size, dtype=np.float64)
            lf[0] = 0.0
            np.cumsum(np.log(np.arange(1, size, dtype=np.float64)), out=lf[1:])
            self._lf = lf

    @property
    def table(self) -> np.ndarray:
        return self._lf

    def log_factorial(self, n) -> float:
        n = int(n)
        if n < 0:
            raise ValueError(f"log_factorial of negative {n}")
        self.reserve(n)
        return float(self._lf[n])

    def log_factorials(self, n: np.ndarray) -> np.ndarray:
        n = np.asarray(n, dtype=np.int64)
        if n.size:
            self.reserve(int(n.max()))
        return self._lf[n]

    def log_binomial(self, a, b) -> float:
        a, b = int(a), int(b)
        if b < 0 or b > a:
            raise ValueError(f"log_binomial requires 0 <= b <= a, got ({a}, {b})")
        self.reserve(a)
        lf = self._lf
        return float(lf[a] - lf[b] - lf[a - b])

    def _stirling_row(self, a: int, b: int) -> np.ndarray:
        """ln of cumulative sums of S(a, 1..b), by a log-space recurrence over n."""
        row = self._stirling.get(a)
        if row is not None and row.shape[0] >= b:
            return row
        # log S(n, k) for k = 1..b, iterating n = 1..a
        logs = np.full(b, -np.inf)
        logs[0] = 0.0
        logk = np.log(np.arange(1, b + 1, dtype=np.float64))
        for n in range(2, a + 1):
            top = min(n, b)
            prev = logs[: top - 1].copy()
            logs[:top] = logk[:top] + logs[:top]
            logs[1:top] = np.logaddexp(logs[1:top], prev)
        cum = np.logaddexp.accumulate(logs)
        with self._lock:
            self._stirling[a] = cum
        return cum

    def log_stirling2_cumulative(self, a, b) -> float:
        """ln B(a, b) = ln sum_{k=1..min(a,b)} S(a, k)."""
        a, b = int(a), int(b)
        if a < 1 or b < 1:
            raise ValueError(f"log_stirling2_cumulative requires a, b >= 1, got ({a}, {b})")
        b = min(a, b)
        if b == 1:
            return 0.0
        if a > self.ratio_threshold * b or a > self.absolute_threshold:
            return a * math.log(b) - self.log_factorial(b)
        return float(self._stirling_row(a, b)[b - 1])


_default_cache = CombinatoricsCache()


def default_cache() -> CombinatoricsCache:
    return _default_cache


def log_factorial(n) -> float:
    return _default_cache.log_factorial(n)


def log_binomial(a, b) -> float:
    return _default_cache.log_binomial(a, b)


def log_stirling2_cumulative(a, b) -> float:
    return _default_cache.log_stirling2_cumulative(a, b)


# --------------------------------------------------------------------------- criterion

PRIOR_TERMS = (
    "prior.value-counts",
    "prior.numeric-sizes",
    "prior.value-groupings",
    "prior.instances",
    "prior.parts",
    "prior.instance-clusters",
    "prior.part-clusters",
    "prior.cells",
    "prior.instance-distributions",
    "prior.part-distributions",
    "prior.value-distributions",
)
LIKELIHOOD_TERMS = (
    "likelihood.observations",
    "likelihood.cells",
    "likelihood.instance-clusters",
    "likelihood.instances",
    "likelihood.part-clusters",
    "likelihood.values",
)
VARIANT_TERM = "likelihood.numeric-parts"


@dataclass
class CriterionValue:
    total: float
    prior: float
    likelihood: float
    terms: dict[str, float] = field(default_factory=dict)


def _lcomp(lf: np.ndarray, n: np.ndarray, m: np.ndarray) -> np.ndarray:
    """ln C(n+m-1, m-1) elementwise, 0 where m == 0 (vanished cluster)."""
    n = np.asarray(n, dtype=np.int64)
    m = np.asarray(m, dtype=np.int64)
    out = lf[np.maximum(n + m - 1, 0)] - lf[np.maximum(m - 1, 0)] - lf[n]
    return np.where(m > 0, out, 0.0)


def _fsum(a) -> float:
    return math.fsum(np.asarray(a, dtype=np.float64).ravel().tolist())


def _check(model: CoclusterModel):
    if model.n_observations < 0 or (model.cells < 0).any():
        raise StructuralError("negative counts in model")
    if (model.m_u < 1).any() or (model.m_p < 1).any():
        raise StructuralError("empty cluster in model")
    if int(model.cells.sum()) != model.n_observations:
        raise StructuralError("cell counts do not sum to N")


def _categorical(model: CoclusterModel) -> list[int]:
    ps = model.partitions
    return [k for k in ps.modeled if ps.is_categorical(k)]


def _numeric(model: CoclusterModel) -> list[int]:
    ps = model.partitions
    return [k for k in ps.modeled if not ps.is_categorical(k)]


def _cat_part_arrays(model: CoclusterModel) -> tuple[np.ndarray, np.ndarray]:
    ps = model.partitions
    n, m = [], []
    for k in _categorical(model):
        off = ps.offsets[k]
        for j, g in enumerate(ps.parts[k].groups):
            n.append(ps.part_counts[off + j])
            m.append(len(g))
    return np.asarray(n, dtype=np.int64), np.asarray(m, dtype=np.int64)


def prior_terms(model: CoclusterModel, cache: CombinatoricsCache | None = None) -> dict[str, float]:
    cache = cache or _default_cache
    _check(model)
    ps = model.partitions
    N, I, J = model.n_observations, model.n_instances, model.n_parts
    G = model.n_cells
    cache.reserve(N + G + J + I)
    lf = cache.table
    cats = _categorical(model)
    cat_n, cat_m = _cat_part_arrays(model)
    return {
        "prior.value-counts": math.fsum(math.log(len(ps.tokens[k])) for k in cats),
        "prior.numeric-sizes": len(_numeric(model)) * math.log(N),
        "prior.value-groupings": math.fsum(
            cache.log_stirling2_cumulative(len(ps.tokens[k]), ps.n_parts_of(k)) for k in cats
        ),
        "prior.instances": math.log(I),
        "prior.parts": math.log(J),
        "prior.instance-clusters": cache.log_stirling2_cumulative(I, model.g_u),
        "prior.part-clusters": cache.log_stirling2_cumulative(J, model.g_p),
        "prior.cells": cache.log_binomial(N + G - 1, G - 1),
        "prior.instance-distributions": _fsum(_lcomp(lf, model.row_tot, model.m_u)),
        "prior.part-distributions": _fsum(_lcomp(lf, model.col_tot, model.m_p)),
        "prior.value-distributions": _fsum(_lcomp(lf, cat_n, cat_m)),
    }


def likelihood_terms(model: CoclusterModel, cache: CombinatoricsCache | None = None,
                     numeric_part_factorials: bool = False) -> dict[str, float]:
    """Likelihood block as printed: no factorial term over numeric parts.

    ``numeric_part_factorials=True`` adds the variant term -sum ln n_.kj! over
    numeric parts, for comparison only; the optimizer never uses it.
    """
    cache = cache or _default_cache
    _check(model)
    N = model.n_observations
    cache.reserve(N)
    lf = cache.table
    ps = model.partitions
    value_n = [ps.value_counts[k] for k in _categorical(model)]
    terms = {
        "likelihood.observations": float(lf[N]),
        "likelihood.cells": -_fsum(lf[model.cells]),
        "likelihood.instance-clusters": _fsum(lf[model.row_tot]),
        "likelihood.instances": -_fsum(lf[model.n_i]),
        "likelihood.part-clusters": _fsum(lf[model.col_tot]),
        "likelihood.values": -_fsum(lf[np.concatenate(value_n)]) if value_n else 0.0,
    }
    if numeric_part_factorials:
        num = [p for p in range(model.n_parts) if not ps.is_categorical(ps.locate(p)[0])]
        terms[VARIANT_TERM] = -_fsum(lf[model.part_tot[num]])
    return terms


def prior_cost(model: CoclusterModel, cache: CombinatoricsCache | None = None) -> float:
    return math.fsum(prior_terms(model, cache).values())


def likelihood_cost(model: CoclusterModel, cache: CombinatoricsCache | None = None) -> float:
    return math.fsum(likelihood_terms(model, cache).values())


def criterion(model: CoclusterModel, cache: CombinatoricsCache | None = None,
              numeric_part_factorials: bool = False) -> CriterionValue:
    prior = prior_terms(model, cache)
    lik = likelihood_terms(model, cache, numeric_part_factorials)
    terms = {**prior, **lik}
    return CriterionValue(
        total=math.fsum(terms.values()),
        prior=math.fsum(prior.values()),
        likelihood=math.fsum(lik.values()),
        terms=terms,
    )


# --------------------------------------------------------------------------- deltas


def structure_cost(model: CoclusterModel, g_u: int, g_p: int, n_parts: int,
                   cat_parts: dict[int, int], cache: CombinatoricsCache) -> float:
    """Terms depending only on cluster/part counts (those a move can change)."""
    N, I = model.n_observations, model.n_instances
    G = g_u * g_p
    ps = model.partitions
    total = (
        math.log(n_parts)
        + cache.log_stirling2_cumulative(I, g_u)
        + cache.log_stirling2_cumulative(n_parts, g_p)
        + cache.log_binomial(N + G - 1, G - 1)
    )
    for k, jk in cat_parts.items():
        total += cache.log_stirling2_cumulative(len(ps.tokens[k]), jk)
    return total


def _pairs_cost(lf: np.ndarray, pairs: list) -> float:
    """sum over (n, m) of ln C(n+m-1, m-1) + ln n!."""
    if not pairs:
        return 0.0
    n = np.array([p[0] for p in pairs], dtype=np.int64)
    m = np.array([p[1] for p in pairs], dtype=np.int64)
    return float(np.sum(_lcomp(lf, n, m) + lf[n]))


def effect_delta(model: CoclusterModel, eff: MoveEffect, cache: CombinatoricsCache | None = None) -> float:
    cache = cache or _default_cache
    N = model.n_observations
    cache.reserve(N + max(model.n_cells, 1) + model.n_parts + model.n_instances)
    lf = cache.table
    old_cat = {k: model.partitions.n_parts_of(k) for k in eff.cat_parts}
    delta = structure_cost(model, eff.g_u, eff.g_p, eff.n_parts, eff.cat_parts, cache) - structure_cost(
        model, model.g_u, model.g_p, model.n_parts, old_cat, cache
    )
    delta += _pairs_cost(lf, eff.rows_new) - _pairs_cost(lf, eff.rows_old)
    delta += _pairs_cost(lf, eff.cols_new) - _pairs_cost(lf, eff.cols_old)
    # categorical parts carry no factorial term of their own
    delta += float(np.sum(_lcomp(lf, [p[0] for p in eff.parts_new], [p[1] for p in eff.parts_new])))
    delta -= float(np.sum(_lcomp(lf, [p[0] for p in eff.parts_old], [p[1] for p in eff.parts_old])))
    delta -= float(lf[eff.cells_new].sum() - lf[eff.cells_old].sum())
    return delta


def delta_criterion(model: CoclusterModel, move: Move, cache: CombinatoricsCache | None = None) -> float:
    """criterion(apply_move(model, move)).total - criterion(model).total, touching only changed terms."""
    return effect_delta(model, model.effect(move), cache)
