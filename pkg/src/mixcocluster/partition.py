"""Per-variable partitions: right-closed intervals and value groups."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .ingest import Dataset


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class IntervalPartition:
    """Intervals ]-inf;b1], ]b1;b2], ..., ]b_last;+inf[ of a numeric variable."""

    variable: int
    boundaries: tuple[float, ...] = ()

    def __post_init__(self):
        b = tuple(float(x) for x in self.boundaries)
        if any(not math.isfinite(x) for x in b) or any(x >= y for x, y in zip(b, b[1:])):
            raise PartitionError(f"boundaries must be finite and strictly increasing: {b}")
        object.__setattr__(self, "boundaries", b)

    @property
    def n_parts(self) -> int:
        return len(self.boundaries) + 1

    def part_of(self, value: float) -> int:
        return bisect.bisect_left(self.boundaries, value)

    def parts_of(self, values: np.ndarray) -> np.ndarray:
        return np.searchsorted(np.asarray(self.boundaries), values, side="left")

    def bounds(self, j: int) -> tuple[float, float]:
        lo = self.boundaries[j - 1] if j > 0 else -math.inf
        hi = self.boundaries[j] if j < len(self.boundaries) else math.inf
        return lo, hi

    def merged(self, j: int, j2: int) -> "IntervalPartition":
        j, j2 = min(j, j2), max(j, j2)
        if j2 != j + 1:
            raise PartitionError(f"intervals {j} and {j2} are not adjacent")
        if not 0 <= j < len(self.boundaries):
            raise PartitionError(f"interval index out of range: {j2}")
        return IntervalPartition(self.variable, self.boundaries[:j] + self.boundaries[j + 1:])


@dataclass(frozen=True)
class ValueGrouping:
    """Disjoint non-empty groups of the tokens of a categorical variable."""

    variable: int
    groups: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        groups = tuple(tuple(g) for g in self.groups)
        if not groups or any(len(g) == 0 for g in groups):
            raise PartitionError("value groups must be non-empty")
        flat = [t for g in groups for t in g]
        if len(set(flat)) != len(flat):
            raise PartitionError("a token appears in more than one group")
        object.__setattr__(self, "groups", groups)

    @property
    def n_parts(self) -> int:
        return len(self.groups)

    @property
    def group_sizes(self) -> list[int]:
        return [len(g) for g in self.groups]

    def part_of(self, token: str) -> int:
        for j, g in enumerate(self.groups):
            if token in g:
                return j
        raise PartitionError(f"token {token!r} is not in the domain of variable {self.variable}")

    def merged(self, j: int, j2: int) -> "ValueGrouping":
        j, j2 = min(j, j2), max(j, j2)
        if j == j2 or not (0 <= j and j2 < len(self.groups)):
            raise PartitionError(f"invalid groups {j}, {j2}")
        groups = list(self.groups)
        groups[j] = groups[j] + groups[j2]
        del groups[j2]
        return ValueGrouping(self.variable, tuple(groups))

    def moved(self, token: str, target: int) -> "ValueGrouping":
        source = self.part_of(token)
        if not 0 <= target < len(self.groups):
            raise PartitionError(f"target group {target} out of range")
        if source == target:
            raise PartitionError(f"token {token!r} already in group {target}")
        groups = [list(g) for g in self.groups]
        groups[source].remove(token)
        groups[target].append(token)
        return ValueGrouping(self.variable, tuple(tuple(g) for g in groups if g))


Partition = IntervalPartition | ValueGrouping


def equal_frequency_intervals(values: Sequence[float], n_parts: int, variable: int = 0) -> IntervalPartition:
    """Split a multiset of reals into at most ``n_parts`` near-equal-count intervals.

    Cuts fall at midpoints between consecutive distinct sorted values, so tied
    values always share an interval. Each ideal cut rank ``i*n/P`` is
    moved to the nearest admissible rank (the higher one on ties).
    """
    if n_parts < 1:
        raise PartitionError(f"part count must be >= 1, got {n_parts}")
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = v.shape[0]
    if n == 0:
        raise PartitionError("cannot discretize an empty value set")
    # admissible cut ranks c: v[c-1] < v[c]
    ranks = np.flatnonzero(v[1:] > v[:-1]) + 1
    if ranks.size == 0 or n_parts == 1:
        return IntervalPartition(variable)
    cuts: list[int] = []
    for i in range(1, n_parts):
        target = i * n / n_parts
        pos = np.searchsorted(ranks, target)
        cands = [ranks[p] for p in (pos - 1, pos) if 0 <= p < ranks.size]
        best = min(cands, key=lambda c: (abs(c - target), -c))
        if not cuts or best > cuts[-1]:
            cuts.append(int(best))
    return IntervalPartition(variable, tuple(_midpoint(v[c - 1], v[c]) for c in cuts))


def _midpoint(lo: float, hi: float) -> float:
    """(lo+hi)/2 with binary round-off trimmed, e.g. 2.85 rather than 2.8499999999999996."""
    mid = (lo + hi) / 2.0
    for digits in range(16):
        r = round(mid, digits)
        if abs(r - mid) <= 1e-12 * max(1.0, abs(mid)) and lo <= r < hi:
            return float(r)
    return float(mid)


def frequency_balanced_groups(value_counts: Mapping[str, int], n_parts: int, variable: int = 0) -> ValueGrouping:
    """Greedy largest-first load balancing of tokens into ``min(P, V)`` groups."""
    if n_parts < 1:
        raise PartitionError(f"part count must be >= 1, got {n_parts}")
    if not value_counts:
        raise PartitionError("cannot group an empty value set")
    n_groups = min(n_parts, len(value_counts))
    groups: list[list[str]] = [[] for _ in range(n_groups)]
    loads = [0] * n_groups
    for tok, cnt in sorted(value_counts.items(), key=lambda kv: (-kv[1], kv[0])):
        g = min(range(n_groups), key=lambda j: (loads[j], j))
        groups[g].append(tok)
        loads[g] += cnt
    return ValueGrouping(variable, tuple(tuple(g) for g in groups))


@dataclass(frozen=True, eq=False)
class PartitionSet:
    """One partition per modeled variable, plus the counts the criterion needs.

    ``parts[k]`` is None for variables without observations. Global part
    indices run over variables in schema order, then over parts.
    ``part_counts[p]`` is n_.kj of global part ``p``; ``value_counts[k]`` holds
    n_v for each token of a categorical variable (None otherwise).
    """

    parts: tuple[Partition | None, ...]
    tokens: tuple[tuple[str, ...], ...]
    part_counts: np.ndarray
    value_counts: tuple[np.ndarray | None, ...]

    @classmethod
    def from_dataset(cls, dataset: Dataset, parts: Sequence[Partition | None]) -> "PartitionSet":
        parts = tuple(parts)
        if len(parts) != len(dataset.schema):
            raise PartitionError("one partition per schema variable is required")
        counts = dataset.variable_counts()
        value_counts = []
        for k, (var, part) in enumerate(zip(dataset.schema.variables, parts)):
            if (part is None) != (counts[k] == 0):
                raise PartitionError(f"variable {var.name!r}: partition required iff observations exist")
            if part is not None and part.variable != k:
                raise PartitionError(f"partition for variable {k} is labelled {part.variable}")
            if var.is_numeric:
                if part is not None and not isinstance(part, IntervalPartition):
                    raise PartitionError(f"numeric variable {var.name!r} needs intervals")
                value_counts.append(None)
            else:
                if part is not None:
                    if not isinstance(part, ValueGrouping):
                        raise PartitionError(f"categorical variable {var.name!r} needs value groups")
                    if sorted(t for g in part.groups for t in g) != sorted(dataset.tokens[k]):
                        raise PartitionError(f"groups of {var.name!r} must cover exactly its observed values")
                value_counts.append(dataset.value_counts(k))
        ps = cls(parts, dataset.tokens, np.zeros(0, dtype=np.int64), tuple(value_counts))
        part_counts = np.bincount(ps.observation_parts(dataset), minlength=ps.n_parts).astype(np.int64)
        object.__setattr__(ps, "part_counts", part_counts)
        if (part_counts == 0).any():
            raise PartitionError("every part must hold at least one observation")
        return ps

    # ---- sizes and indexing

    @property
    def modeled(self) -> list[int]:
        return [k for k, p in enumerate(self.parts) if p is not None]

    def n_parts_of(self, k: int) -> int:
        p = self.parts[k]
        return 0 if p is None else p.n_parts

    @property
    def offsets(self) -> list[int]:
        out, acc = [], 0
        for k in range(len(self.parts)):
            out.append(acc)
            acc += self.n_parts_of(k)
        return out

    @property
    def n_parts(self) -> int:
        return sum(self.n_parts_of(k) for k in range(len(self.parts)))

    def global_index(self, k: int, j: int) -> int:
        if not 0 <= j < self.n_parts_of(k):
            raise PartitionError(f"variable {k} has no part {j}")
        return self.offsets[k] + j

    def locate(self, p: int) -> tuple[int, int]:
        """Global part index -> (variable, local part)."""
        for k, off in enumerate(self.offsets):
            if off <= p < off + self.n_parts_of(k):
                return k, p - off
        raise PartitionError(f"global part {p} out of range")

    def part_variables(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.parts)), [self.n_parts_of(k) for k in range(len(self.parts))])

    def is_categorical(self, k: int) -> bool:
        return isinstance(self.parts[k], ValueGrouping)

    def part_value_counts(self, p: int) -> int:
        """m^(k)_j: number of values in a categorical part."""
        k, j = self.locate(p)
        return len(self.parts[k].groups[j])

    def token_code(self, k: int, token: str) -> int:
        try:
            return self.tokens[k].index(token)
        except ValueError:
            raise PartitionError(f"token {token!r} is not in the domain of variable {k}") from None

    def part_of(self, k: int, value) -> int:
        part = self.parts[k]
        if part is None:
            raise PartitionError(f"variable {k} is not modeled")
        if isinstance(part, IntervalPartition):
            return part.part_of(float(value))
        return part.part_of(value)

    def code_to_part(self, k: int) -> np.ndarray:
        """Local part index of every token code of categorical variable k."""
        part = self.parts[k]
        out = np.empty(len(self.tokens[k]), dtype=np.int64)
        for j, g in enumerate(part.groups):
            for tok in g:
                out[self.token_code(k, tok)] = j
        return out

    def observation_parts(self, dataset: Dataset) -> np.ndarray:
        out = np.empty(dataset.n_observations, dtype=np.int64)
        offsets = self.offsets
        for k in self.modeled:
            idx = np.flatnonzero(dataset.obs_variable == k)
            part = self.parts[k]
            if isinstance(part, IntervalPartition):
                local = part.parts_of(dataset.obs_number[idx])
            else:
                local = self.code_to_part(k)[dataset.obs_code[idx]]
            out[idx] = offsets[k] + local
        return out

    # ---- edits

    def _replace(self, k: int, part: Partition, part_counts: np.ndarray) -> "PartitionSet":
        parts = list(self.parts)
        parts[k] = part
        return PartitionSet(tuple(parts), self.tokens, part_counts, self.value_counts)

    def merge_parts(self, k: int, j: int, j2: int) -> "PartitionSet":
        """Merge parts j and j2 of variable k; the merged part takes the lower index."""
        part = self.parts[k]
        if part is None:
            raise PartitionError(f"variable {k} is not modeled")
        if part.n_parts == 1:
            raise PartitionError(f"variable {k} has a single part; nothing to merge")
        lo, hi = min(j, j2), max(j, j2)
        if lo == hi or lo < 0 or hi >= part.n_parts:
            raise PartitionError(f"invalid parts {j}, {j2} for variable {k}")
        new_part = part.merged(lo, hi)
        off = self.offsets[k]
        counts = self.part_counts.copy()
        counts[off + lo] += counts[off + hi]
        counts = np.delete(counts, off + hi)
        return self._replace(k, new_part, counts)

    def move_value(self, k: int, token: str, target: int) -> "PartitionSet":
        part = self.parts[k]
        if not isinstance(part, ValueGrouping):
            raise PartitionError(f"variable {k} is not categorical; values cannot move")
        source = part.part_of(token)
        new_part = part.moved(token, target)
        off = self.offsets[k]
        n_v = int(self.value_counts[k][self.token_code(k, token)])
        counts = self.part_counts.copy()
        counts[off + source] -= n_v
        counts[off + target] += n_v
        if len(part.groups[source]) == 1:
            counts = np.delete(counts, off + source)
        return self._replace(k, new_part, counts)


def initial_partitions(dataset: Dataset, n_parts: int) -> PartitionSet:
    """Equal-frequency partition of every modeled variable into at most ``n_parts`` parts."""
    parts: list[Partition | None] = []
    counts = dataset.variable_counts()
    for k, var in enumerate(dataset.schema.variables):
        if counts[k] == 0:
            parts.append(None)
        elif var.is_numeric:
            parts.append(equal_frequency_intervals(dataset.numeric_values(k), n_parts, k))
        else:
            vc = dataset.value_counts(k)
            parts.append(frequency_balanced_groups(dict(zip(dataset.tokens[k], vc.tolist())), n_parts, k))
    return PartitionSet.from_dataset(dataset, parts)
