"""Two-stage criterion minimization.

Stage 1 discretizes every variable into equal-frequency parts for each size
of a grid, co-clusters the instance x part table by greedy agglomeration and
keeps the size whose model has the lowest criterion. Stage 2 post-optimizes
that model with cluster merges, part merges, part moves and value moves,
always applying the single best improving move. When no single move
improves, both stages also try the coarsenings reached by chains of merges
(see ``collapses``).
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .criterion import (
    CombinatoricsCache,
    CriterionValue,
    criterion,
    default_cache,
    delta_criterion,
)
from .ingest import Dataset
from .model import CoclusterModel, Move, MoveKind, StructuralError, apply_move, singleton_model
from .partition import IntervalPartition, ValueGrouping, initial_partitions

logger = logging.getLogger(__name__)

SMALL_GRID = tuple(range(2, 11))
LARGE_GRID = (2, 4, 8, 16, 32, 64, 128)
LARGE_DATA_INSTANCES = 10_000


def default_grid(dataset: Dataset) -> tuple[int, ...]:
    return SMALL_GRID if dataset.n_instances <= LARGE_DATA_INSTANCES else LARGE_GRID


@dataclass
class OptimizerConfig:
    """Search settings.

    ``grid=None`` picks {2..10} for small data and powers of two up to 128
    otherwise. ``neighbors`` bounds the merge candidates kept per cluster in
    stage 1 (0 means exhaustive). The search is deterministic; ``seed`` is
    recorded for provenance of the run.
    """

    grid: tuple[int, ...] | None = None
    seed: int = 0
    max_sweeps: int = 1000
    neighbors: int = 10
    threads: int = 1
    tolerance: float = 1e-9

    def __post_init__(self):
        if self.grid is not None:
            self.grid = tuple(int(p) for p in self.grid)
            if not self.grid or min(self.grid) < 1:
                raise ValueError(f"grid must be a non-empty list of sizes >= 1: {self.grid}")
        if self.max_sweeps < 0 or self.neighbors < 0 or self.threads < 1:
            raise ValueError("max_sweeps, neighbors must be >= 0 and threads >= 1")

    def to_json(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid) if self.grid is not None else None
        return d

    @classmethod
    def from_json(cls, d: dict) -> "OptimizerConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class FitResult:
    model: CoclusterModel
    criterion: CriterionValue
    trace: list[float]
    chosen_size: int | None = None
    grid_criteria: dict[int, float] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    move_counts: dict[str, int] = field(default_factory=dict)
    converged: bool = True


def _improves(delta: float, current: float, tol: float) -> bool:
    return delta < -tol * max(1.0, abs(current))


# --------------------------------------------------------------------------- stage 1


def _lcomp(lf, n, m):
    out = lf[np.maximum(n + m - 1, 0)] - lf[np.maximum(m - 1, 0)] - lf[n]
    return np.where(m > 0, out, 0.0)


def _pair_gain(lf, x, y):
    """ln (x+y)! - ln x! - ln y! elementwise."""
    return lf[x + y] - lf[x] - lf[y]


class _Agglomeration:
    """Greedy merging of rows (instance clusters) and columns (part clusters).

    Each live cluster keeps up to ``k`` merge candidates (its nearest
    clusters by cosine of cell profiles) together with the part of the merge
    delta that depends on the pair. Deltas are refreshed incrementally; the
    delta of the selected merge is recomputed exactly before it is applied.
    """

    def __init__(self, model: CoclusterModel, k: int, cache: CombinatoricsCache, tol: float):
        self.cache = cache
        self.tol = tol
        self.N = model.n_observations
        self.I = model.n_instances
        self.J = model.n_parts
        self.C = model.cells.astype(np.int64).copy()
        cache.reserve(self.N + self.C.size + self.I + self.J + 2)
        self.lf = cache.table
        self.tot = [model.row_tot.astype(np.int64).copy(), model.col_tot.astype(np.int64).copy()]
        self.m = [model.m_u.astype(np.int64).copy(), model.m_p.astype(np.int64).copy()]
        self.alive = [np.ones(self.C.shape[0], bool), np.ones(self.C.shape[1], bool)]
        self.count = [self.C.shape[0], self.C.shape[1]]
        self.owner = [model.inst_cluster.copy(), model.part_cluster.copy()]
        self.norm2 = [(self.C.astype(np.float64) ** 2).sum(axis=1), (self.C.astype(np.float64) ** 2).sum(axis=0)]
        self.k = [self._width(0, k), self._width(1, k)]
        self.nbr = [None, None]
        self.val = [None, None]
        for axis in (0, 1):
            self._init_neighbors(axis)
        self.merges = 0

    def _width(self, axis, k):
        n = self.C.shape[axis]
        return max(n - 1, 1) if k <= 0 else max(min(k, n - 1), 1)

    def _mat(self, axis):
        return self.C if axis == 0 else self.C.T

    def _local(self, axis, a, b) -> np.ndarray:
        """Pair-dependent part of the delta for merging clusters a[i] and b[i]."""
        lf = self.lf
        tot, m = self.tot[axis], self.m[axis]
        ta, tb, ma, mb = tot[a], tot[b], m[a], m[b]
        t = _lcomp(lf, ta + tb, ma + mb) - _lcomp(lf, ta, ma) - _lcomp(lf, tb, mb) + _pair_gain(lf, ta, tb)
        M = self._mat(axis)
        out = np.empty(len(a))
        step = max(1, 4_000_000 // max(M.shape[1], 1))
        for s in range(0, len(a), step):
            xa, xb = M[a[s:s + step]], M[b[s:s + step]]
            out[s:s + step] = t[s:s + step] - _pair_gain(lf, xa, xb).sum(axis=1)
        return out

    def _global(self, axis) -> float:
        """Delta of the terms shared by every merge along ``axis``."""
        if self.count[axis] < 2:
            return math.inf
        c = self.cache
        gu, gp = self.count
        size = self.I if axis == 0 else self.J
        before = c.log_stirling2_cumulative(size, self.count[axis])
        after = c.log_stirling2_cumulative(size, self.count[axis] - 1)
        g0 = gu * gp
        g1 = (gu - 1) * gp if axis == 0 else gu * (gp - 1)
        return after - before + c.log_binomial(self.N + g1 - 1, g1 - 1) - c.log_binomial(self.N + g0 - 1, g0 - 1)

    def _similarities(self, axis, rows: np.ndarray) -> np.ndarray:
        M = self._mat(axis).astype(np.float64)
        norms = np.sqrt(self.norm2[axis])
        s = M[rows] @ M.T
        denom = np.outer(norms[rows], norms)
        s = np.divide(s, denom, out=np.zeros_like(s), where=denom > 0)
        s[:, ~self.alive[axis]] = -np.inf
        s[np.arange(len(rows)), rows] = -np.inf
        return s

    def _top(self, axis, rows: np.ndarray) -> np.ndarray:
        k = self.k[axis]
        s = self._similarities(axis, rows)
        order = np.argsort(-s, axis=1, kind="stable")[:, :k]
        picked = np.take_along_axis(s, order, axis=1)
        return np.where(np.isfinite(picked), order, -1)

    def _fill(self, axis, rows: np.ndarray):
        nbr = self.nbr[axis][rows]
        val = np.full(nbr.shape, np.inf)
        ok = nbr >= 0
        r, c = np.nonzero(ok)
        if r.size:
            val[r, c] = self._local(axis, rows[r], nbr[r, c])
        self.val[axis][rows] = val

    def _init_neighbors(self, axis):
        n, k = self.C.shape[axis], self.k[axis]
        self.nbr[axis] = np.full((n, k), -1, dtype=np.int64)
        self.val[axis] = np.full((n, k), np.inf)
        chunk = max(1, 2_000_000 // max(n, 1))
        for s in range(0, n, chunk):
            rows = np.arange(s, min(n, s + chunk))
            self.nbr[axis][rows] = self._top(axis, rows)
            self._fill(axis, rows)

    def _best(self, axis) -> tuple[float, int, int]:
        val = self.val[axis]
        flat = int(np.argmin(val))
        v = val.flat[flat]
        a, pos = divmod(flat, val.shape[1])
        return float(v), a, int(self.nbr[axis][a, pos])

    def _apply(self, axis, lo, hi):
        other = 1 - axis
        M = self._mat(axis)
        old_lo, row_hi = M[lo].copy(), M[hi].copy()
        # pairs along the other axis see their cell terms change at lo and hi only
        nb, vo = self.nbr[other], self.val[other]
        r, c = np.nonzero(nb >= 0)
        if r.size:
            b = nb[r, c]
            new_lo = old_lo + row_hi
            lf = self.lf
            vo[r, c] += (_pair_gain(lf, old_lo[r], old_lo[b]) + _pair_gain(lf, row_hi[r], row_hi[b])
                         - _pair_gain(lf, new_lo[r], new_lo[b]))
        M[lo] += row_hi
        M[hi] = 0
        self.norm2[other] += 2.0 * old_lo.astype(np.float64) * row_hi
        self.norm2[axis][lo] = float((M[lo].astype(np.float64) ** 2).sum())
        self.norm2[axis][hi] = 0.0
        self.tot[axis][lo] += self.tot[axis][hi]
        self.tot[axis][hi] = 0
        self.m[axis][lo] += self.m[axis][hi]
        self.m[axis][hi] = 0
        self.alive[axis][hi] = False
        self.count[axis] -= 1
        own = self.owner[axis]
        own[own == hi] = lo

        nbr, val = self.nbr[axis], self.val[axis]
        nbr[hi] = -1
        val[hi] = np.inf
        nbr[nbr == hi] = lo
        hit = nbr == lo
        # a list that named both lo and hi keeps a single entry
        dup = hit & (np.cumsum(hit, axis=1) > 1)
        nbr[dup] = -1
        val[dup] = np.inf
        hit &= ~dup
        rows = np.flatnonzero(hit.any(axis=1))
        rows = rows[rows != lo]
        if rows.size:
            rr, cc = np.nonzero(hit[rows])
            val[rows[rr], cc] = self._local(axis, rows[rr], np.full(rr.size, lo))
        if self.count[axis] > 1:
            nbr[lo] = self._top(axis, np.array([lo]))[0]
            self._fill(axis, np.array([lo]))
        else:
            nbr[lo] = -1
            val[lo] = np.inf
        self.merges += 1

    def run(self) -> list[float]:
        """Merge until no candidate improves; returns the criterion deltas applied."""
        applied = []
        while True:
            options = []
            for axis in (0, 1):
                if self.count[axis] >= 2:
                    v, a, b = self._best(axis)
                    if math.isfinite(v):
                        options.append((v + self._global(axis), axis, min(a, b), max(a, b)))
            if not options:
                break
            options.sort()
            approx, axis, a, b = options[0]
            if approx >= 0:
                break
            exact = float(self._local(axis, np.array([a]), np.array([b]))[0]) + self._global(axis)
            if exact >= 0 or abs(exact) <= self.tol:
                # stale estimate: store the exact local value and retry
                self._refresh_pair(axis, a, b)
                continue
            self._apply(axis, a, b)
            applied.append(exact)
        return applied

    def _refresh_pair(self, axis, a, b):
        nbr, val = self.nbr[axis], self.val[axis]
        for x, y in ((a, b), (b, a)):
            pos = np.flatnonzero(nbr[x] == y)
            if pos.size:
                local = float(self._local(axis, np.array([x]), np.array([y]))[0])
                # clamp so a non-improving pair cannot be reselected forever
                val[x, pos] = max(local, -self._global(axis))

    def labels(self, axis) -> np.ndarray:
        # cluster ids are the lowest original index they absorbed

        return np.unique(self.owner[axis], return_inverse=True)[1]


def agglomerative_cocluster(model: CoclusterModel, config: OptimizerConfig | None = None,
                            cache: CombinatoricsCache | None = None) -> tuple[CoclusterModel, list[float]]:
    """Greedily merge instance clusters and part clusters while the criterion decreases.

    Returns the merged model and the list of applied deltas.
    """
    config = config or OptimizerConfig()
    cache = cache or default_cache()
    deltas = []
    while True:
        agg = _Agglomeration(model, config.neighbors, cache, config.tolerance)
        deltas += agg.run()
        model = CoclusterModel(model.schema, model.instances, model.partitions, model.inst_part,
                               model.value_inst, agg.labels(0), agg.labels(1))
        jump = best_collapse(model, criterion(model, cache).total, config.tolerance, cache, with_parts=False)
        if jump is None:
            return model, deltas
        model, value, before = jump
        deltas.append(value.total - before)


def collapses(model: CoclusterModel, with_parts: bool = True) -> list[tuple[str, CoclusterModel]]:
    """Coarsenings reachable by a chain of merges: all instance clusters into
    one, all part clusters into one, both, and (with ``with_parts``) all parts
    of one variable into one.

    Single merges can all be uphill while the chain ending at the coarser
    model is downhill, so these are checked once single moves stop improving.
    """
    def rebuilt(inst, part, partitions=None, src=model):
        return CoclusterModel(src.schema, src.instances, partitions or src.partitions, src.inst_part,
                              src.value_inst, inst, part)

    one_u = np.zeros(model.n_instances, dtype=np.int64)
    one_p = np.zeros(model.n_parts, dtype=np.int64)
    out = []
    if model.g_u > 1:
        out.append(("instance-clusters", rebuilt(one_u, model.part_cluster)))
    if model.g_p > 1:
        out.append(("part-clusters", rebuilt(model.inst_cluster, one_p)))
    if model.g_u > 1 and model.g_p > 1:
        out.append(("all-clusters", rebuilt(one_u, one_p)))
    if with_parts:
        ps = model.partitions
        for k in ps.modeled:
            m = model
            while m.partitions.n_parts_of(k) > 1:
                m = apply_move(m, Move.merge_parts(k, 0, 1))
            if m is not model:
                out.append((f"parts-of-{model.schema.variables[k].name}", m))
    return out


def best_collapse(model: CoclusterModel, current: float, tol: float, cache: CombinatoricsCache | None = None,
                  with_parts: bool = True):
    """``(model, criterion, current)`` for the best strictly improving collapse, else None."""
    best = None
    for _, candidate in collapses(model, with_parts):
        value = criterion(candidate, cache)
        if _improves(value.total - current, current, tol) and (best is None or value.total < best[1].total):
            best = (candidate, value)
    return None if best is None else (best[0], best[1], current)


def stage1_initialize(dataset: Dataset, n_parts: int, config: OptimizerConfig | None = None,
                      cache: CombinatoricsCache | None = None) -> CoclusterModel:
    if n_parts < 1:
        raise ValueError(f"part count must be >= 1, got {n_parts}")
    if dataset.n_observations == 0:
        raise StructuralError("dataset has zero observations")
    partitions = initial_partitions(dataset, n_parts)
    model, _ = agglomerative_cocluster(singleton_model(dataset, partitions), config, cache)
    return model


def grid_search(dataset: Dataset, config: OptimizerConfig | None = None,
                cache: CombinatoricsCache | None = None) -> tuple[int, CoclusterModel, dict[int, float]]:
    """Run stage 1 for every grid size; keep the lowest criterion (smaller size on ties)."""
    config = config or OptimizerConfig()
    grid = sorted(set(config.grid or default_grid(dataset)))
    best = None
    scores = {}
    for p in grid:
        model = stage1_initialize(dataset, p, config, cache)
        value = criterion(model, cache).total
        scores[p] = value
        logger.info("grid size %d: %dx%d clusters, %d parts, criterion %.6f", p, model.g_u, model.g_p,
                    model.n_parts, value)
        if best is None or value < best[0]:
            best = (value, p, model)
    return best[1], best[2], scores


# --------------------------------------------------------------------------- stage 2


def candidate_moves(model: CoclusterModel) -> list[Move]:
    """All stage-2 moves in their total tie-break order."""
    moves = []
    for g in range(model.g_u):
        for h in range(g + 1, model.g_u):
            moves.append(Move.merge_instance_clusters(g, h))
    for g in range(model.g_p):
        for h in range(g + 1, model.g_p):
            moves.append(Move.merge_part_clusters(g, h))
    ps = model.partitions
    for k in ps.modeled:
        part = ps.parts[k]
        if isinstance(part, IntervalPartition):
            moves.extend(Move.merge_parts(k, j, j + 1) for j in range(part.n_parts - 1))
        else:
            moves.extend(Move.merge_parts(k, j, h) for j in range(part.n_parts) for h in range(j + 1, part.n_parts))
    for p in range(model.n_parts):
        moves.extend(Move.move_part(p, t) for t in range(model.g_p) if t != model.part_cluster[p])
    for k in ps.modeled:
        part = ps.parts[k]
        if isinstance(part, ValueGrouping) and part.n_parts > 1:
            for tok in ps.tokens[k]:
                src = part.part_of(tok)
                moves.extend(Move.move_value(k, tok, t) for t in range(part.n_parts) if t != src)
    return moves


def evaluate_moves(model: CoclusterModel, moves: list[Move], threads: int = 1,
                   cache: CombinatoricsCache | None = None) -> np.ndarray:
    cache = cache or default_cache()
    cache.reserve(model.n_observations + model.n_cells + model.n_parts + model.n_instances)
    if threads <= 1 or len(moves) < 64:
        return np.array([delta_criterion(model, mv, cache) for mv in moves])
    chunks = np.array_split(np.arange(len(moves)), threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = pool.map(lambda idx: [delta_criterion(model, moves[i], cache) for i in idx], chunks)
        return np.array([d for part in parts for d in part])


def _kind_name(kind: MoveKind) -> str:
    return kind.name.lower().replace("_", "-")


def post_optimize(model: CoclusterModel, config: OptimizerConfig | None = None,
                  cache: CombinatoricsCache | None = None) -> FitResult:
    """Best-improvement descent over merges and moves until no move improves."""
    config = config or OptimizerConfig()
    cache = cache or default_cache()
    start = time.perf_counter()
    current = criterion(model, cache)
    trace = [current.total]
    counts = {_kind_name(k): 0 for k in MoveKind}
    counts["collapse"] = 0
    converged = False
    for _ in range(config.max_sweeps):
        moves = candidate_moves(model)
        if not moves:
            converged = True
            break
        deltas = evaluate_moves(model, moves, config.threads, cache)
        best = int(np.argmin(deltas))  # first minimum = lowest in the move order
        if not _improves(deltas[best], current.total, config.tolerance):
            jump = best_collapse(model, current.total, config.tolerance, cache)
            if jump is None:
                converged = True
                break
            model, current, _ = jump
            trace.append(current.total)
            counts["collapse"] += 1
            continue
        candidate = apply_move(model, moves[best])
        value = criterion(candidate, cache)
        if not value.total < current.total:
            converged = True
            break
        model, current = candidate, value
        trace.append(current.total)
        counts[_kind_name(moves[best].kind)] += 1
    else:
        converged = not any(
            _improves(d, current.total, config.tolerance)
            for d in evaluate_moves(model, candidate_moves(model), config.threads, cache)
        ) and best_collapse(model, current.total, config.tolerance, cache) is None
    return FitResult(
        model=model,
        criterion=current,
        trace=trace,
        timings={"stage2": time.perf_counter() - start},
        move_counts=counts,
        converged=converged,
    )


def fit(dataset: Dataset, config: OptimizerConfig | None = None,
        cache: CombinatoricsCache | None = None) -> FitResult:
    config = config or OptimizerConfig()
    cache = cache or default_cache()
    if dataset.n_observations == 0:
        raise StructuralError("dataset has zero observations")
    t0 = time.perf_counter()
    size, initial, scores = grid_search(dataset, config, cache)
    t1 = time.perf_counter()
    result = post_optimize(initial, config, cache)
    result.chosen_size = size
    result.grid_criteria = scores
    result.timings = {"stage1": t1 - t0, **result.timings}
    result.move_counts = {"stage1-initial-parts": initial.n_parts, **result.move_counts}
    return result
