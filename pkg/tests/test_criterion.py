import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixcocluster.criterion import (
    LIKELIHOOD_TERMS,
    PRIOR_TERMS,
    VARIANT_TERM,
    CombinatoricsCache,
    criterion,
    delta_criterion,
    likelihood_cost,
    log_binomial,
    log_factorial,
    log_stirling2_cumulative,
    prior_cost,
)
from mixcocluster.ingest import parse_wide_table
from mixcocluster.model import Move, StructuralError, apply_move, build_model
from mixcocluster.optimizer import candidate_moves
from mixcocluster.partition import initial_partitions

import oracles

# ---------------------------------------------------------------- combinatorics


@pytest.mark.parametrize("n,expected", [(0, 0.0), (1, 0.0), (5, math.log(120))])
def test_log_factorial(n, expected):
    assert log_factorial(n) == pytest.approx(expected, abs=1e-14)


def test_log_factorial_table_stays_accurate():
    cache = CombinatoricsCache(size=10)
    for n in (10, 1000, 54321, 200_000):
        assert cache.log_factorial(n) == pytest.approx(math.lgamma(n + 1), rel=1e-12)


def _pascal(n):
    row = [1]
    for _ in range(n):
        row = [a + b for a, b in zip([0] + row, row + [0])]
    return row


@pytest.mark.parametrize("a,b", [(6, 1), (10, 3), (7, 0), (0, 0), (40, 17)])
def test_log_binomial_against_pascal(a, b):
    assert log_binomial(a, b) == pytest.approx(math.log(_pascal(a)[b]), rel=1e-13, abs=1e-13)


def test_log_binomial_domain():
    with pytest.raises(ValueError):
        log_binomial(3, 4)


def test_cumulative_stirling_small_values():
    assert log_stirling2_cumulative(7, 1) == 0.0
    assert log_stirling2_cumulative(3, 2) == pytest.approx(math.log(4), abs=1e-15)
    assert log_stirling2_cumulative(4, 4) == pytest.approx(math.log(15), abs=1e-15)
    assert log_stirling2_cumulative(4, 9) == log_stirling2_cumulative(4, 4)
    with pytest.raises(ValueError):
        log_stirling2_cumulative(0, 1)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 160), st.integers(1, 160))
def test_cumulative_stirling_against_big_integers(a, b):
    exact = math.log(oracles.cumulative_stirling(a, b))
    got = log_stirling2_cumulative(a, b)
    # exact recurrence below the approximation threshold, A ln B - ln B! above it
    tol = 1e-12 if a <= 10 * min(a, b) else 1e-6
    assert got == pytest.approx(exact, rel=tol, abs=1e-12)


def test_stirling_approximation_threshold_error():
    cache = CombinatoricsCache()
    worst = 0.0
    for b in range(2, 33):
        a = 10 * b + 1
        exact = math.log(oracles.cumulative_stirling(a, b))
        worst = max(worst, abs(cache.log_stirling2_cumulative(a, b) - exact) / exact)
    assert worst < 1e-6


# ---------------------------------------------------------------- closed forms


def _numeric_dataset(columns: int, rows: list[list[str]]):
    header = ",".join(f"X{k}" for k in range(columns))
    body = "\n".join(",".join(f"\"{c}\"" for c in r) for r in rows)
    return parse_wide_table(io.StringIO(header + "\n" + body + "\n"))


def test_null_model_prior_single_numeric_variable():
    ds = _numeric_dataset(1, [["1"], ["{2, 3}"], ["4"], ["7"]])
    model = build_model(ds, initial_partitions(ds, 1))
    N, I, Kn = 5, 4, 1
    expected = Kn * math.log(N) + math.log(I) + math.log(Kn) + math.log(math.comb(N + I - 1, I - 1))
    assert prior_cost(model) == pytest.approx(expected, rel=1e-14)


def test_null_model_prior_several_numeric_variables():
    ds = _numeric_dataset(3, [["1", "2", "."], ["{2, 3}", "1", "5"], ["4", ".", "0"]])
    model = build_model(ds, initial_partitions(ds, 1))
    N, I, Kn = 8, 3, 3
    expected = (Kn * math.log(N) + math.log(I) + math.log(Kn) + math.log(math.comb(N + I - 1, I - 1))
                + math.log(math.comb(N + Kn - 1, Kn - 1)))
    assert prior_cost(model) == pytest.approx(expected, rel=1e-14)


def test_single_instance_likelihood_is_log_n_factorial():
    ds = _numeric_dataset(1, [["{1, 2, 2, 5, 9, 9}"]])
    model = build_model(ds, initial_partitions(ds, 1))
    assert likelihood_cost(model) == pytest.approx(math.log(720), rel=1e-14)


def test_single_valued_categorical_costs_nothing_extra():
    ds = parse_wide_table(io.StringIO("A,C\n1,x\n2,x\n"))
    terms = criterion(build_model(ds, initial_partitions(ds, 3))).terms
    assert terms["prior.value-counts"] == 0.0
    assert terms["prior.value-groupings"] == 0.0


def test_terms_and_totals(iris):
    value = criterion(build_model(iris, initial_partitions(iris, 3)))
    assert tuple(value.terms) == PRIOR_TERMS + LIKELIHOOD_TERMS
    assert value.total == pytest.approx(value.prior + value.likelihood, rel=1e-15)
    assert value.prior == math.fsum(value.terms[t] for t in PRIOR_TERMS)


def test_worked_example_by_direct_evaluation(example_table):
    ds = parse_wide_table(io.StringIO(example_table))
    ps = initial_partitions(ds, 2)
    inst, part = [0, 1, 0, 1], [p % 3 for p in range(ps.n_parts)]
    combo = []
    for k, p in enumerate(ps.parts):
        combo.append(("num", p.boundaries) if ds.schema.variables[k].is_numeric else ("cat", [set(g) for g in p.groups]))
    ours = criterion(build_model(ds, ps, inst, part)).total
    assert ours == pytest.approx(oracles.eq1(ds, combo, inst, part), rel=1e-13)


def test_variant_term_is_opt_in(iris):
    model = build_model(iris, initial_partitions(iris, 3))
    base = criterion(model)
    variant = criterion(model, numeric_part_factorials=True)
    assert VARIANT_TERM not in base.terms
    assert variant.total == pytest.approx(base.total + variant.terms[VARIANT_TERM], rel=1e-14)
    assert variant.terms[VARIANT_TERM] < 0


def test_iris_fit_beats_null_and_initial_models(iris, iris_fit):
    null = criterion(build_model(iris, initial_partitions(iris, 1))).total
    initial = criterion(build_model(iris, initial_partitions(iris, 3))).total
    assert iris_fit.criterion.total < initial
    assert iris_fit.criterion.total < null


# ---------------------------------------------------------------- invariances


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_relabeling_clusters_is_bit_exact(seed):
    rng = np.random.default_rng(seed)
    ds, model = oracles.random_model(rng)
    pu, pp = rng.permutation(model.g_u), rng.permutation(model.g_p)
    relabeled = build_model(ds, model.partitions, pu[model.inst_cluster], pp[model.part_cluster])
    a, b = criterion(model), criterion(relabeled)
    assert a.total == b.total
    assert a.prior == b.prior and a.likelihood == b.likelihood


# ---------------------------------------------------------------- deltas


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_delta_equals_recompute(seed):
    rng = np.random.default_rng(seed)
    ds, model = oracles.random_model(rng)
    moves = candidate_moves(model)
    if not moves:
        return
    move = moves[int(rng.integers(len(moves)))]
    c0 = criterion(model).total
    full = criterion(apply_move(model, move)).total - c0
    assert abs(delta_criterion(model, move) - full) <= 1e-9 * max(abs(full), abs(c0))


def test_deltas_along_a_path_add_up():
    rng = np.random.default_rng(5)
    for _ in range(30):
        ds, model = oracles.random_model(rng)
        start = criterion(model).total
        total = 0.0
        for _ in range(6):
            moves = candidate_moves(model)
            if not moves:
                break
            move = moves[int(rng.integers(len(moves)))]
            total += delta_criterion(model, move)
            model = apply_move(model, move)
        end = criterion(build_model(ds, model.partitions, model.inst_cluster, model.part_cluster)).total
        assert total == pytest.approx(end - start, rel=1e-9, abs=1e-9 * abs(start))


def test_merge_then_split_back_is_consistent(example_table):
    ds = parse_wide_table(io.StringIO(example_table))
    ps = initial_partitions(ds, 2)
    split = build_model(ds, ps, [0, 1, 0, 1], [0] * ps.n_parts)
    merged = build_model(ds, ps, [0, 0, 0, 0], [0] * ps.n_parts)
    d = delta_criterion(split, Move.merge_instance_clusters(0, 1))
    assert d == pytest.approx(criterion(merged).total - criterion(split).total, rel=1e-12)


def test_invalid_move_leaves_model_alone(example_table):
    ds = parse_wide_table(io.StringIO(example_table))
    model = build_model(ds, initial_partitions(ds, 2))
    before = criterion(model).total
    with pytest.raises(StructuralError):
        delta_criterion(model, Move.merge_instance_clusters(0, 0))
    assert criterion(model).total == before
