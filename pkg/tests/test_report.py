import io
import json
import math
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixcocluster.criterion import criterion
from mixcocluster.ingest import Schema, Variable, parse_long_observations
from mixcocluster.model import build_model, verify_counts
from mixcocluster.partition import IntervalPartition, PartitionSet, ValueGrouping, initial_partitions
from mixcocluster.report import (
    cluster_summaries,
    export_json,
    format_summary,
    import_json,
    interval_label,
    mutual_information_matrix,
    parse_part_label,
    part_label,
    render_heatmap_svg,
)

import oracles

CAT = Schema((Variable("X", "categorical"),))


def _grouped_model(counts: dict[tuple[str, str], int]):
    """One categorical variable; each value its own part and part cluster; each instance its own cluster."""
    lines = [f"{i},X,{t}" for (i, t), c in counts.items() for _ in range(c)]
    ds = parse_long_observations(io.StringIO("\n".join(lines) + "\n"), CAT)
    ps = PartitionSet.from_dataset(ds, [ValueGrouping(0, tuple((t,) for t in ds.tokens[0]))])
    return build_model(ds, ps, range(ds.n_instances), range(ps.n_parts))


def diagonal_model(n: int):
    return _grouped_model({("i1", "a"): n, ("i2", "b"): n})


def independent_model(scale: int):
    rows, cols = {"i1": 1, "i2": 2, "i3": 3}, {"a": 1, "b": 2}
    return _grouped_model({(i, t): r * c * scale for i, r in rows.items() for t, c in cols.items()})


# ---------------------------------------------------------------- mutual information


def test_diagonal_table_has_half_ln2_on_the_diagonal():
    mi = mutual_information_matrix(diagonal_model(50))
    assert mi[0, 0] == pytest.approx(0.5 * math.log(2), abs=1e-15)
    assert mi[1, 1] == pytest.approx(0.5 * math.log(2), abs=1e-15)
    assert mi[0, 1] == 0 and mi[1, 0] == 0


def test_independent_table_is_all_zero():
    assert not mutual_information_matrix(independent_model(4)).any()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_total_mutual_information_is_non_negative(seed):
    _, model = oracles.random_model(np.random.default_rng(seed))
    mi = mutual_information_matrix(model)
    assert math.fsum(mi.ravel()) >= -1e-12
    assert (mi[model.cells == 0] == 0).all()


def test_null_model_summary(iris):
    model = build_model(iris, initial_partitions(iris, 1))
    report = cluster_summaries(model)
    assert report.cells.tolist() == [[iris.n_observations]]
    assert not report.mutual_information.any()
    assert report.instance_clusters[0].size == 150


# ---------------------------------------------------------------- labels


def test_interval_labels():
    assert interval_label(-math.inf, 0.8) == "]-inf;0.8]"
    assert interval_label(1.65, math.inf) == "]1.65;+inf["


@settings(max_examples=100)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=0, max_size=5, unique=True))
def test_interval_label_round_trip(bounds):
    schema = Schema((Variable("Petal Width", "numeric"),))
    part = IntervalPartition(0, tuple(sorted(bounds)))
    ps = PartitionSet((part,), ((),), np.ones(part.n_parts, dtype=np.int64), (None,))
    for p in range(part.n_parts):
        assert parse_part_label(part_label(schema, ps, p), schema) == (0, part.bounds(p))


def test_group_label_round_trip(iris):
    ps = initial_partitions(iris, 3)
    k = iris.schema.index("Class")
    for j in range(ps.n_parts_of(k)):
        p = ps.global_index(k, j)
        assert parse_part_label(part_label(iris.schema, ps, p), iris.schema) == (k, frozenset(ps.parts[k].groups[j]))


def test_unparseable_label():
    with pytest.raises(ValueError):
        parse_part_label("Nope{x}", CAT)


# ---------------------------------------------------------------- Iris best model


def test_setosa_cluster_explained_by_setosa_parts(iris_fit):
    model = iris_fit.model
    report = cluster_summaries(model)
    setosa = [ic for ic in report.instance_clusters if ic.size == 50 and "1" in ic.members]
    assert len(setosa) == 1
    h = setosa[0].associations[0][0]
    labels = report.part_clusters[h].parts
    assert "Class{setosa}" in labels
    petal = [parse_part_label(lab, model.schema) for lab in labels if lab.startswith("PetalLength")]
    (_, (lo, hi)), = petal
    # largest setosa petal length is 1.9, smallest of the others 3.0
    assert lo == -math.inf and 1.9 <= hi < 3.0
    assert "PetalWidth]-inf;0.8]" in labels


# ---------------------------------------------------------------- JSON


def test_iris_export_has_fourteen_part_records(iris_fit):
    doc = json.loads(export_json(iris_fit.model))
    assert len(doc["parts"]) == 14
    assert sum(map(sum, doc["counts"]["cells"])) == 750


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_json_round_trip_is_bit_exact(seed):
    ds, model = oracles.random_model(np.random.default_rng(seed))
    text = export_json(model)
    back = import_json(text)
    assert verify_counts(back, ds)
    assert criterion(back).total == criterion(model).total
    assert export_json(back) == text
    assert sum(map(sum, json.loads(text)["counts"]["cells"])) == ds.n_observations


@pytest.mark.parametrize("mangle", [
    lambda t: t[: len(t) // 2],
    lambda t: t.replace('"mixcocluster-model"', '"other"'),
    lambda t: t.replace('"version": 1', '"version": 99'),
    lambda t: t.replace('"instance_clusters": [', '"instance_clusterz": ['),
])
def test_import_rejects_malformed_documents(mangle):
    text = export_json(diagonal_model(3))
    with pytest.raises(ValueError):
        import_json(mangle(text))


# ---------------------------------------------------------------- summaries and SVG


def _fills(svg: str) -> list[str]:
    return re.findall(r'<rect [^>]*fill="(#[0-9a-f]{6})"', svg)


def test_svg_is_deterministic(iris_fit):
    report = cluster_summaries(iris_fit.model)
    first = render_heatmap_svg(report)
    assert first == render_heatmap_svg(cluster_summaries(iris_fit.model))
    assert first.startswith("<?xml") and first.rstrip().endswith("</svg>")
    assert len(_fills(first)) == iris_fit.model.n_cells


def test_svg_colors():
    assert set(_fills(render_heatmap_svg(cluster_summaries(independent_model(2))))) == {"#ffffff"}
    diag = _fills(render_heatmap_svg(cluster_summaries(diagonal_model(5))))
    assert diag == ["#ff0000", "#ffffff", "#ffffff", "#ff0000"]


def test_svg_negative_cells_are_blue():
    model = _grouped_model({("i1", "a"): 9, ("i1", "b"): 1, ("i2", "a"): 1, ("i2", "b"): 9})
    fills = _fills(render_heatmap_svg(cluster_summaries(model)))
    assert fills[0] == fills[3] == "#ff0000"
    assert all(f.endswith("ff") and f != "#ffffff" for f in (fills[1], fills[2]))


def test_single_cell_is_white():
    model = _grouped_model({("i1", "a"): 3})
    assert _fills(render_heatmap_svg(cluster_summaries(model))) == ["#ffffff"]


def test_format_summary_mentions_every_cluster(iris_fit):
    text = format_summary(cluster_summaries(iris_fit.model))
    assert text.count("\n  U") == iris_fit.model.g_u
    assert text.count("\n  P") == iris_fit.model.g_p
