import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixcocluster.criterion import CombinatoricsCache, criterion
from mixcocluster.ingest import parse_long_observations, parse_wide_table
from mixcocluster.model import MoveKind, build_model, singleton_model
from mixcocluster.optimizer import (
    LARGE_GRID,
    SMALL_GRID,
    OptimizerConfig,
    agglomerative_cocluster,
    candidate_moves,
    collapses,
    default_grid,
    evaluate_moves,
    fit,
    grid_search,
    post_optimize,
    stage1_initialize,
)
from mixcocluster.partition import initial_partitions

import oracles


def _striped(ds, n_parts, g_u, g_p):
    ps = initial_partitions(ds, n_parts)
    return build_model(ds, ps, np.arange(ds.n_instances) % g_u, np.arange(ps.n_parts) % g_p)


def _two_blocks():
    lines = []
    for inst, tokens in (("i1", "ab"), ("i2", "ab"), ("i3", "cd"), ("i4", "cd")):
        for t in tokens:
            lines += [f"{inst},X,{t}"] * 6
    return parse_long_observations(io.StringIO("\n".join(lines) + "\n"))


def test_two_perfect_blocks_are_recovered():
    ds = _two_blocks()
    model, deltas = agglomerative_cocluster(singleton_model(ds, initial_partitions(ds, 4)))
    assert (model.g_u, model.g_p) == (2, 2)
    assert model.inst_cluster[0] == model.inst_cluster[1] != model.inst_cluster[2] == model.inst_cluster[3]
    assert all(d < 0 for d in deltas)


def test_single_instance_has_one_cluster():
    ds = parse_wide_table(io.StringIO("A,B\n1,x\n"))
    assert stage1_initialize(ds, 3).g_u == 1


def test_stage1_on_iris_has_fifteen_parts(iris):
    assert stage1_initialize(iris, 3).n_parts == 15


def test_grid_of_one_gives_the_null_model(iris):
    result = fit(iris, OptimizerConfig(grid=(1,)))
    null = build_model(iris, initial_partitions(iris, 1))
    assert (result.model.g_u, result.model.g_p, result.model.n_parts) == (1, 1, 5)
    assert result.criterion.total == criterion(null).total


def test_duplicate_grid_sizes(iris):
    a = grid_search(iris, OptimizerConfig(grid=(4, 4)))
    b = grid_search(iris, OptimizerConfig(grid=(4,)))
    assert a[0] == b[0] and a[2] == b[2]
    assert np.array_equal(a[1].inst_cluster, b[1].inst_cluster)


def test_saturated_sizes_hit_natural_caps():
    ds = parse_wide_table(io.StringIO("A,C\n1,x\n2,y\n2,x\n"))
    ps = initial_partitions(ds, 50)
    assert ps.n_parts_of(0) == 2 and ps.n_parts_of(1) == 2


def test_iris_choice_and_result(iris_fit):
    assert iris_fit.chosen_size == 3
    assert set(iris_fit.grid_criteria) == set(range(2, 11))
    assert min(iris_fit.grid_criteria, key=iris_fit.grid_criteria.get) == 3
    model = iris_fit.model
    assert model.g_u == 3 and model.n_parts == 14
    assert sorted(np.bincount(model.inst_cluster).tolist()) == [49, 50, 51]
    assert iris_fit.move_counts["merge-parts"] == 1


def test_post_optimization_is_idempotent(iris_fit):
    again = post_optimize(iris_fit.model)
    assert again.trace == [iris_fit.criterion.total]
    assert sum(v for k, v in again.move_counts.items()) == 0
    assert np.array_equal(again.model.inst_cluster, iris_fit.model.inst_cluster)


def test_post_optimization_never_worsens(iris):
    start = _striped(iris, 4, 5, 4)
    result = post_optimize(start, OptimizerConfig(max_sweeps=50))
    assert result.criterion.total <= criterion(start).total
    assert all(b < a for a, b in zip(result.trace, result.trace[1:]))


def test_sweep_budget_is_honoured(iris):
    start = _striped(iris, 4, 5, 4)
    result = post_optimize(start, OptimizerConfig(max_sweeps=2))
    assert len(result.trace) == 3
    assert not result.converged


def test_fit_is_deterministic(iris):
    config = OptimizerConfig(grid=(2, 3, 5), seed=17)
    a, b = fit(iris, config), fit(iris, config)
    assert a.trace == b.trace
    assert a.grid_criteria == b.grid_criteria
    assert np.array_equal(a.model.inst_cluster, b.model.inst_cluster)
    assert np.array_equal(a.model.part_cluster, b.model.part_cluster)


def test_parallel_evaluation_matches_serial(iris):
    model = _striped(iris, 5, 4, 6)
    moves = candidate_moves(model)
    serial = evaluate_moves(model, moves, threads=1)
    parallel = evaluate_moves(model, moves, threads=4)
    assert np.array_equal(serial, parallel)
    a = fit(iris, OptimizerConfig(grid=(3,), threads=1))
    b = fit(iris, OptimizerConfig(grid=(3,), threads=4))
    assert a.trace == b.trace


def test_candidate_moves_are_in_tie_break_order(iris):
    model = _striped(iris, 3, 3, 4)
    moves = candidate_moves(model)
    kinds = [m.kind for m in moves]
    assert kinds == sorted(kinds)
    assert set(kinds) == set(MoveKind)


def test_collapses_are_merge_chains(example_table):
    ds = parse_wide_table(io.StringIO(example_table))
    model = singleton_model(ds, initial_partitions(ds, 2))
    names = [name for name, _ in collapses(model)]
    assert names[:3] == ["instance-clusters", "part-clusters", "all-clusters"]
    for _, m in collapses(model):
        assert m.g_u <= model.g_u and m.g_p <= model.g_p and m.n_parts <= model.n_parts


def test_default_grid():
    assert SMALL_GRID == tuple(range(2, 11))
    assert LARGE_GRID == (2, 4, 8, 16, 32, 64, 128)
    ds = parse_wide_table(io.StringIO("A\n1\n2\n"))
    assert default_grid(ds) == SMALL_GRID


def test_config_validation_and_json():
    with pytest.raises(ValueError):
        OptimizerConfig(grid=())
    with pytest.raises(ValueError):
        OptimizerConfig(grid=(0, 2))
    with pytest.raises(ValueError):
        OptimizerConfig(threads=0)
    config = OptimizerConfig(grid=(2, 8), seed=3, neighbors=0)
    assert OptimizerConfig.from_json(config.to_json()) == config


def test_zero_observations_rejected():
    ds = parse_wide_table(io.StringIO("A,B\n.,.\n"))
    with pytest.raises(ValueError, match="zero observations"):
        fit(ds)


# ---------------------------------------------------------------- exhaustive oracle


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_tiny_problems_land_in_the_top_decile(seed):
    ds = oracles.tiny_dataset_within_budget(seed, 5000, n_vars=(1, 1))
    cache = CombinatoricsCache()
    values, winner = [], None
    for combo, il, pl in oracles.enumerate_models(ds):
        v = criterion(build_model(ds, oracles.to_partitions(ds, combo), il, pl), cache).total
        values.append(v)
        if winner is None or v < winner[0]:
            winner = (v, combo, il, pl)
    values = np.asarray(values)
    result = fit(ds, OptimizerConfig())
    better = (values < result.criterion.total - 1e-9 * abs(result.criterion.total)).mean()
    assert better <= 0.10
    v, combo, il, pl = winner
    assert v == criterion(build_model(ds, oracles.to_partitions(ds, combo), il, pl)).total
    assert oracles.eq1(ds, combo, il, pl) == pytest.approx(v, rel=1e-10)


def test_planted_blocks_small():
    from sklearn.metrics import adjusted_rand_score

    from mixcocluster.datasets import planted_blocks

    ds, rows = planted_blocks(n_instances=400, n_variables=8, seed=1)
    result = fit(ds, OptimizerConfig(grid=(2, 4)))
    assert adjusted_rand_score(rows, result.model.inst_cluster) > 0.95
