"""Co-clustering model state and the structural moves that edit it.

The model keeps the instance x part count matrix (and, for categorical
variables, the instance x value matrix) so that every count entering the
criterion can be maintained incrementally without going back to the raw
observations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np

from .ingest import Dataset, Schema
from .partition import IntervalPartition, PartitionError, PartitionSet, ValueGrouping


class StructuralError(ValueError):
    pass


class MoveKind(IntEnum):
    # order is the tie-break order between move families
    MERGE_INSTANCE_CLUSTERS = 0
    MERGE_PART_CLUSTERS = 1
    MERGE_PARTS = 2
    MOVE_PART = 3
    MOVE_VALUE = 4


@dataclass(frozen=True, order=True)
class Move:
    """A structural edit.

    ``args`` by kind:
      MERGE_INSTANCE_CLUSTERS (g, g2); MERGE_PART_CLUSTERS (g, g2);
      MERGE_PARTS (k, j, j2) with local part indices of variable k;
      MOVE_PART (p, target_cluster) with global part index p;
      MOVE_VALUE (k, token, target_group).
    """

    kind: MoveKind
    args: tuple

    @classmethod
    def merge_instance_clusters(cls, g, g2):
        return cls(MoveKind.MERGE_INSTANCE_CLUSTERS, (min(g, g2), max(g, g2)))

    @classmethod
    def merge_part_clusters(cls, g, g2):
        return cls(MoveKind.MERGE_PART_CLUSTERS, (min(g, g2), max(g, g2)))

    @classmethod
    def merge_parts(cls, k, j, j2):
        return cls(MoveKind.MERGE_PARTS, (k, min(j, j2), max(j, j2)))

    @classmethod
    def move_part(cls, p, target):
        return cls(MoveKind.MOVE_PART, (p, target))

    @classmethod
    def move_value(cls, k, token, target):
        return cls(MoveKind.MOVE_VALUE, (k, token, target))


@dataclass
class MoveEffect:
    """Every count of the criterion that a move changes, before and after.

    Row/column/part entries are ``(observation count, member count)`` pairs;
    a pair with member count 0 stands for a cluster or part that disappears.
    """

    g_u: int
    g_p: int
    n_parts: int
    cat_parts: dict[int, int] = field(default_factory=dict)
    rows_old: list = field(default_factory=list)
    rows_new: list = field(default_factory=list)
    cols_old: list = field(default_factory=list)
    cols_new: list = field(default_factory=list)
    cells_old: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cells_new: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    parts_old: list = field(default_factory=list)
    parts_new: list = field(default_factory=list)


def _densify(labels: Sequence[int], size: int, what: str) -> tuple[np.ndarray, int]:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != size:
        raise StructuralError(f"{what} assignment has {labels.shape[0]} entries, expected {size}")
    if size == 0:
        return labels, 0
    if labels.min() < 0:
        raise StructuralError(f"{what} cluster labels must be non-negative")
    g = int(labels.max()) + 1
    sizes = np.bincount(labels, minlength=g)
    empty = np.flatnonzero(sizes == 0)
    if empty.size:
        raise StructuralError(f"{what} cluster {int(empty[0])} is empty")
    return labels.copy(), g


class CoclusterModel:
    """Partitions, cluster assignments and all sufficient statistics.

    Instance clusters index rows and part clusters index columns of
    ``cells``. ``part_rows[:, p]`` holds the counts of part ``p`` in each
    instance cluster.
    """

    def __init__(
        self,
        schema: Schema,
        instances: Sequence[str],
        partitions: PartitionSet,
        inst_part: np.ndarray,
        value_inst: dict[int, np.ndarray],
        inst_cluster: Sequence[int],
        part_cluster: Sequence[int],
    ):
        self.schema = schema
        self.instances = tuple(instances)
        self.partitions = partitions
        self.inst_part = np.asarray(inst_part, dtype=np.int64)
        self.value_inst = {k: np.asarray(v, dtype=np.int64) for k, v in value_inst.items()}
        n_inst, n_parts = self.inst_part.shape
        if n_inst != len(self.instances) or n_parts != partitions.n_parts:
            raise StructuralError("count matrix shape does not match instances/parts")
        if n_inst < 1 or n_parts < 1:
            raise StructuralError("a model needs at least one instance and one part")
        self.inst_cluster, self.g_u = _densify(inst_cluster, n_inst, "instance")
        self.part_cluster, self.g_p = _densify(part_cluster, n_parts, "part")
        self._derive()

    def _derive(self):
        self.n_i = self.inst_part.sum(axis=1)
        self.part_tot = self.inst_part.sum(axis=0)
        self.part_rows = np.zeros((self.g_u, self.n_parts), dtype=np.int64)
        np.add.at(self.part_rows, self.inst_cluster, self.inst_part)
        self.cells = np.zeros((self.g_u, self.g_p), dtype=np.int64)
        np.add.at(self.cells.T, self.part_cluster, self.part_rows.T)
        self.m_u = np.bincount(self.inst_cluster, minlength=self.g_u).astype(np.int64)
        self.m_p = np.bincount(self.part_cluster, minlength=self.g_p).astype(np.int64)
        self.row_tot = self.cells.sum(axis=1)
        self.col_tot = self.cells.sum(axis=0)

    # ---- sizes

    @property
    def n_instances(self) -> int:
        return self.inst_part.shape[0]

    @property
    def n_parts(self) -> int:
        return self.inst_part.shape[1]

    @property
    def n_observations(self) -> int:
        return int(self.n_i.sum())

    @property
    def n_cells(self) -> int:
        return self.g_u * self.g_p

    def copy(self) -> "CoclusterModel":
        new = object.__new__(CoclusterModel)
        new.__dict__.update(self.__dict__)
        for name in ("inst_part", "inst_cluster", "part_cluster", "n_i", "part_tot",
                     "part_rows", "cells", "m_u", "m_p", "row_tot", "col_tot"):
            setattr(new, name, getattr(self, name).copy())
        new.value_inst = {k: v.copy() for k, v in self.value_inst.items()}
        return new

    def rebuilt(self) -> "CoclusterModel":
        """Same structure with every statistic recomputed from the count matrices."""
        return CoclusterModel(self.schema, self.instances, self.partitions, self.inst_part,
                              self.value_inst, self.inst_cluster, self.part_cluster)

    def instance_clusters(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.inst_cluster == g) for g in range(self.g_u)]

    def part_clusters(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.part_cluster == g) for g in range(self.g_p)]

    # ---- move validation and effects

    def _check_cluster(self, g, n, what):
        if not (isinstance(g, (int, np.integer)) and 0 <= g < n):
            raise StructuralError(f"{what} cluster {g!r} out of range [0, {n})")

    def _part_value_count(self, p: int) -> int:
        return self.partitions.part_value_counts(p)

    def _categorical_part(self, p: int) -> bool:
        k, _ = self.partitions.locate(p)
        return self.partitions.is_categorical(k)

    def validate(self, move: Move):
        kind, a = move.kind, move.args
        if kind == MoveKind.MERGE_INSTANCE_CLUSTERS:
            self._check_cluster(a[0], self.g_u, "instance")
            self._check_cluster(a[1], self.g_u, "instance")
            if a[0] == a[1]:
                raise StructuralError("cannot merge a cluster with itself")
        elif kind == MoveKind.MERGE_PART_CLUSTERS:
            self._check_cluster(a[0], self.g_p, "part")
            self._check_cluster(a[1], self.g_p, "part")
            if a[0] == a[1]:
                raise StructuralError("cannot merge a cluster with itself")
        elif kind == MoveKind.MERGE_PARTS:
            k, j, j2 = a
            if not 0 <= k < len(self.partitions.parts) or self.partitions.parts[k] is None:
                raise StructuralError(f"variable {k!r} is not modeled")
            part = self.partitions.parts[k]
            if part.n_parts == 1:
                raise StructuralError(f"variable {k} has a single part")
            if j == j2 or min(j, j2) < 0 or max(j, j2) >= part.n_parts:
                raise StructuralError(f"invalid parts {j}, {j2} of variable {k}")
            if isinstance(part, IntervalPartition) and abs(j - j2) != 1:
                raise StructuralError(f"intervals {j} and {j2} of variable {k} are not adjacent")
        elif kind == MoveKind.MOVE_PART:
            p, t = a
            if not 0 <= p < self.n_parts:
                raise StructuralError(f"part {p!r} out of range")
            self._check_cluster(t, self.g_p, "part")
            if self.part_cluster[p] == t:
                raise StructuralError(f"part {p} is already in cluster {t}")
        elif kind == MoveKind.MOVE_VALUE:
            k, token, t = a
            if not 0 <= k < len(self.partitions.parts):
                raise StructuralError(f"variable {k!r} out of range")
            part = self.partitions.parts[k]
            if not isinstance(part, ValueGrouping):
                raise StructuralError(f"variable {k} is not categorical")
            try:
                s = part.part_of(token)
            except PartitionError as exc:
                raise StructuralError(str(exc)) from None
            if not 0 <= t < part.n_parts or t == s:
                raise StructuralError(f"invalid target group {t!r} for token {token!r}")
        else:
            raise StructuralError(f"unknown move kind {kind!r}")

    def _value_rows(self, k: int, token: str) -> tuple[np.ndarray, int]:
        """Counts of one categorical value per instance cluster, and its total."""
        code = self.partitions.token_code(k, token)
        col = self.value_inst[k][:, code]
        return np.bincount(self.inst_cluster, weights=col, minlength=self.g_u).astype(np.int64), int(col.sum())

    def effect(self, move: Move) -> MoveEffect:
        """Counts touched by ``move``; raises StructuralError if the move is invalid."""
        self.validate(move)
        kind, a = move.kind, move.args
        ps = self.partitions
        eff = MoveEffect(self.g_u, self.g_p, self.n_parts)
        if kind == MoveKind.MERGE_INSTANCE_CLUSTERS:
            g, h = a
            eff.g_u -= 1
            eff.rows_old = [(self.row_tot[g], self.m_u[g]), (self.row_tot[h], self.m_u[h])]
            eff.rows_new = [(self.row_tot[g] + self.row_tot[h], self.m_u[g] + self.m_u[h])]
            eff.cells_old = np.concatenate([self.cells[g], self.cells[h]])
            eff.cells_new = self.cells[g] + self.cells[h]
        elif kind == MoveKind.MERGE_PART_CLUSTERS:
            g, h = a
            eff.g_p -= 1
            eff.cols_old = [(self.col_tot[g], self.m_p[g]), (self.col_tot[h], self.m_p[h])]
            eff.cols_new = [(self.col_tot[g] + self.col_tot[h], self.m_p[g] + self.m_p[h])]
            eff.cells_old = np.concatenate([self.cells[:, g], self.cells[:, h]])
            eff.cells_new = self.cells[:, g] + self.cells[:, h]
        elif kind == MoveKind.MERGE_PARTS:
            k, j, j2 = a
            p, q = ps.global_index(k, min(j, j2)), ps.global_index(k, max(j, j2))
            eff.n_parts -= 1
            if ps.is_categorical(k):
                eff.cat_parts[k] = ps.n_parts_of(k) - 1
                mp, mq = self._part_value_count(p), self._part_value_count(q)
                eff.parts_old = [(self.part_tot[p], mp), (self.part_tot[q], mq)]
                eff.parts_new = [(self.part_tot[p] + self.part_tot[q], mp + mq)]
            cp, cq = self.part_cluster[p], self.part_cluster[q]
            if cp == cq:
                eff.cols_old = [(self.col_tot[cp], self.m_p[cp])]
                eff.cols_new = [(self.col_tot[cp], self.m_p[cp] - 1)]
            else:
                x = self.part_rows[:, q]
                nq = self.part_tot[q]
                eff.cols_old = [(self.col_tot[cp], self.m_p[cp]), (self.col_tot[cq], self.m_p[cq])]
                eff.cols_new = [(self.col_tot[cp] + nq, self.m_p[cp]), (self.col_tot[cq] - nq, self.m_p[cq] - 1)]
                eff.cells_old = np.concatenate([self.cells[:, cp], self.cells[:, cq]])
                eff.cells_new = np.concatenate([self.cells[:, cp] + x, self.cells[:, cq] - x])
                if self.m_p[cq] == 1:
                    eff.g_p -= 1
        elif kind == MoveKind.MOVE_PART:
            p, t = a
            s = self.part_cluster[p]
            x = self.part_rows[:, p]
            n_p = self.part_tot[p]
            eff.cols_old = [(self.col_tot[s], self.m_p[s]), (self.col_tot[t], self.m_p[t])]
            eff.cols_new = [(self.col_tot[s] - n_p, self.m_p[s] - 1), (self.col_tot[t] + n_p, self.m_p[t] + 1)]
            eff.cells_old = np.concatenate([self.cells[:, s], self.cells[:, t]])
            eff.cells_new = np.concatenate([self.cells[:, s] - x, self.cells[:, t] + x])
            if self.m_p[s] == 1:
                eff.g_p -= 1
        elif kind == MoveKind.MOVE_VALUE:
            k, token, t = a
            js = ps.parts[k].part_of(token)
            p_s, p_t = ps.global_index(k, js), ps.global_index(k, t)
            xr, n_v = self._value_rows(k, token)
            m_s, m_t = self._part_value_count(p_s), self._part_value_count(p_t)
            emptied = m_s == 1
            eff.parts_old = [(self.part_tot[p_s], m_s), (self.part_tot[p_t], m_t)]
            eff.parts_new = [(self.part_tot[p_s] - n_v, m_s - 1), (self.part_tot[p_t] + n_v, m_t + 1)]
            if emptied:
                eff.n_parts -= 1
                eff.cat_parts[k] = ps.n_parts_of(k) - 1
            cs, ct = self.part_cluster[p_s], self.part_cluster[p_t]
            lost = 1 if emptied else 0
            if cs == ct:
                if emptied:
                    eff.cols_old = [(self.col_tot[cs], self.m_p[cs])]
                    eff.cols_new = [(self.col_tot[cs], self.m_p[cs] - 1)]
            else:
                eff.cols_old = [(self.col_tot[cs], self.m_p[cs]), (self.col_tot[ct], self.m_p[ct])]
                eff.cols_new = [(self.col_tot[cs] - n_v, self.m_p[cs] - lost), (self.col_tot[ct] + n_v, self.m_p[ct])]
                eff.cells_old = np.concatenate([self.cells[:, cs], self.cells[:, ct]])
                eff.cells_new = np.concatenate([self.cells[:, cs] - xr, self.cells[:, ct] + xr])
                if emptied and self.m_p[cs] == 1:
                    eff.g_p -= 1
        return eff

    # ---- incremental edits (in place, on a private copy)

    def _drop_part(self, q: int):
        self.inst_part = np.delete(self.inst_part, q, axis=1)
        self.part_rows = np.delete(self.part_rows, q, axis=1)
        self.part_tot = np.delete(self.part_tot, q)
        c = self.part_cluster[q]
        self.part_cluster = np.delete(self.part_cluster, q)
        self.m_p[c] -= 1
        if self.m_p[c] == 0:
            self._drop_part_cluster(c)

    def _drop_part_cluster(self, c: int):
        if self.col_tot[c] != 0 or self.cells[:, c].any():
            raise StructuralError(f"part cluster {c} still holds observations")
        self.cells = np.delete(self.cells, c, axis=1)
        self.col_tot = np.delete(self.col_tot, c)
        self.m_p = np.delete(self.m_p, c)
        self.part_cluster[self.part_cluster > c] -= 1
        self.g_p -= 1

    def _shift_part(self, p: int, source: int, target: int, x: np.ndarray, n: int):
        """Move the counts ``x`` (per instance cluster) of part p between part clusters."""
        self.cells[:, source] -= x
        self.cells[:, target] += x
        self.col_tot[source] -= n
        self.col_tot[target] += n

    def _apply_in_place(self, move: Move):
        kind, a = move.kind, move.args
        if kind == MoveKind.MERGE_INSTANCE_CLUSTERS:
            g, h = min(a), max(a)
            self.cells[g] += self.cells[h]
            self.part_rows[g] += self.part_rows[h]
            self.row_tot[g] += self.row_tot[h]
            self.m_u[g] += self.m_u[h]
            self.cells = np.delete(self.cells, h, axis=0)
            self.part_rows = np.delete(self.part_rows, h, axis=0)
            self.row_tot = np.delete(self.row_tot, h)
            self.m_u = np.delete(self.m_u, h)
            self.inst_cluster[self.inst_cluster == h] = g
            self.inst_cluster[self.inst_cluster > h] -= 1
            self.g_u -= 1
        elif kind == MoveKind.MERGE_PART_CLUSTERS:
            g, h = min(a), max(a)
            self.cells[:, g] += self.cells[:, h]
            self.col_tot[g] += self.col_tot[h]
            self.m_p[g] += self.m_p[h]
            self.cells = np.delete(self.cells, h, axis=1)
            self.col_tot = np.delete(self.col_tot, h)
            self.m_p = np.delete(self.m_p, h)
            self.part_cluster[self.part_cluster == h] = g
            self.part_cluster[self.part_cluster > h] -= 1
            self.g_p -= 1
        elif kind == MoveKind.MERGE_PARTS:
            k, j, j2 = a
            ps = self.partitions
            p, q = ps.global_index(k, min(j, j2)), ps.global_index(k, max(j, j2))
            cp, cq = self.part_cluster[p], self.part_cluster[q]
            if cp != cq:
                self._shift_part(q, cq, cp, self.part_rows[:, q], self.part_tot[q])
            self.inst_part[:, p] += self.inst_part[:, q]
            self.part_rows[:, p] += self.part_rows[:, q]
            self.part_tot[p] += self.part_tot[q]
            self.partitions = ps.merge_parts(k, j, j2)
            self._drop_part(q)
        elif kind == MoveKind.MOVE_PART:
            p, t = a
            s = self.part_cluster[p]
            self._shift_part(p, s, t, self.part_rows[:, p], self.part_tot[p])
            self.part_cluster[p] = t
            self.m_p[s] -= 1
            self.m_p[t] += 1
            if self.m_p[s] == 0:
                self._drop_part_cluster(s)
        elif kind == MoveKind.MOVE_VALUE:
            k, token, t = a
            ps = self.partitions
            js = ps.parts[k].part_of(token)
            p_s, p_t = ps.global_index(k, js), ps.global_index(k, t)
            col = self.value_inst[k][:, ps.token_code(k, token)]
            xr, n_v = self._value_rows(k, token)
            cs, ct = self.part_cluster[p_s], self.part_cluster[p_t]
            if cs != ct:
                self._shift_part(p_s, cs, ct, xr, n_v)
            self.inst_part[:, p_s] -= col
            self.inst_part[:, p_t] += col
            self.part_rows[:, p_s] -= xr
            self.part_rows[:, p_t] += xr
            self.part_tot[p_s] -= n_v
            self.part_tot[p_t] += n_v
            emptied = len(ps.parts[k].groups[js]) == 1
            self.partitions = ps.move_value(k, token, t)
            if emptied:
                self._drop_part(p_s)


def build_model(
    dataset: Dataset,
    partitions: PartitionSet,
    instance_assignment: Sequence[int] | None = None,
    part_assignment: Sequence[int] | None = None,
) -> CoclusterModel:
    """Tally every statistic from the observations in one pass.

    Missing assignments default to the null clustering (everything in
    cluster 0).
    """
    if dataset.n_observations == 0:
        raise StructuralError("dataset has zero observations")
    n_inst, n_parts = dataset.n_instances, partitions.n_parts
    obs_part = partitions.observation_parts(dataset)
    inst_part = np.zeros((n_inst, n_parts), dtype=np.int64)
    np.add.at(inst_part, (dataset.obs_instance, obs_part), 1)
    value_inst = {}
    for k in partitions.modeled:
        if partitions.is_categorical(k):
            idx = dataset.obs_variable == k
            m = np.zeros((n_inst, len(dataset.tokens[k])), dtype=np.int64)
            np.add.at(m, (dataset.obs_instance[idx], dataset.obs_code[idx]), 1)
            value_inst[k] = m
    if instance_assignment is None:
        instance_assignment = np.zeros(n_inst, dtype=np.int64)
    if part_assignment is None:
        part_assignment = np.zeros(n_parts, dtype=np.int64)
    return CoclusterModel(dataset.schema, dataset.instances, partitions, inst_part, value_inst,
                          instance_assignment, part_assignment)


def singleton_model(dataset: Dataset, partitions: PartitionSet) -> CoclusterModel:
    return build_model(dataset, partitions, np.arange(dataset.n_instances), np.arange(partitions.n_parts))


def apply_move(model: CoclusterModel, move: Move) -> CoclusterModel:
    """Return a new model with ``move`` applied; ``model`` is never modified."""
    model.validate(move)
    new = model.copy()
    new._apply_in_place(move)
    return new


@dataclass
class Verification:
    ok: bool
    discrepancy: str | None = None

    def __bool__(self):
        return self.ok


def verify_counts(model: CoclusterModel, dataset: Dataset | None = None) -> Verification:
    """Recompute every statistic from scratch and compare exactly.

    With a dataset the count matrices themselves are re-tallied from the raw
    observations; without one, the derived statistics are checked against the
    model's own count matrices.
    """
    if dataset is not None:
        if dataset.instances != model.instances:
            return Verification(False, "instance identifiers differ from the dataset")
        try:
            ref = build_model(dataset, model.partitions, model.inst_cluster, model.part_cluster)
        except (StructuralError, PartitionError) as exc:
            return Verification(False, f"rebuild failed: {exc}")
        if not np.array_equal(ref.inst_part, model.inst_part):
            i, j = np.argwhere(ref.inst_part != model.inst_part)[0]
            return Verification(False, f"instance-part count ({i}, {j}): model {model.inst_part[i, j]}, data {ref.inst_part[i, j]}")
        for k, m in ref.value_inst.items():
            if k not in model.value_inst or not np.array_equal(m, model.value_inst[k]):
                return Verification(False, f"instance-value counts of variable {k} differ")
        pc = np.bincount(model.partitions.observation_parts(dataset), minlength=model.n_parts)
        if not np.array_equal(pc, model.partitions.part_counts):
            j = int(np.flatnonzero(pc != model.partitions.part_counts)[0])
            return Verification(False, f"part count n_.kj of part {j} differs")
        for k in model.partitions.modeled:
            if model.partitions.is_categorical(k) and not np.array_equal(
                model.partitions.value_counts[k], dataset.value_counts(k)
            ):
                return Verification(False, f"value counts of variable {k} differ")
    else:
        try:
            ref = model.rebuilt()
        except StructuralError as exc:
            return Verification(False, f"rebuild failed: {exc}")
    if ref.g_u != model.g_u or ref.g_p != model.g_p:
        return Verification(False, f"cluster counts differ: model {model.g_u}x{model.g_p}, rebuilt {ref.g_u}x{ref.g_p}")
    checks = [
        ("cell", "cells"), ("instance-cluster total", "row_tot"), ("part-cluster total", "col_tot"),
        ("instance-cluster size", "m_u"), ("part-cluster size", "m_p"), ("instance count", "n_i"),
        ("part total", "part_tot"), ("part-by-instance-cluster count", "part_rows"),
    ]
    for label, name in checks:
        a, b = getattr(model, name), getattr(ref, name)
        if a.shape != b.shape:
            return Verification(False, f"{label} shape {a.shape} != {b.shape}")
        bad = np.argwhere(a != b)
        if bad.size:
            idx = tuple(int(x) for x in bad[0])
            return Verification(False, f"{label} {idx}: model {a[idx]}, recomputed {b[idx]}")
    if not np.array_equal(model.part_tot, model.partitions.part_counts):
        return Verification(False, "part totals disagree with the partition counts")
    return Verification(True)
