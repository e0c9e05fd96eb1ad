import io
import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixcocluster.ingest import (
    CATEGORICAL,
    NUMERIC,
    ParseError,
    Schema,
    SchemaError,
    Variable,
    infer_schema,
    load_schema,
    parse_long_observations,
    parse_wide_table,
    read_dataset,
)

import oracles

NNC = Schema((Variable("A", NUMERIC), Variable("B", NUMERIC), Variable("C", CATEGORICAL)))


def _wide(text, schema=None, **kw):
    return parse_wide_table(io.StringIO(text), schema, **kw)


def _long(text, schema=None, **kw):
    return parse_long_observations(io.StringIO(text), schema, **kw)


def _triples(ds):
    return Counter(ds.observations())


def test_worked_example_matrix(example_table):
    ds = _wide(example_table)
    assert ds.n_instances == 4
    assert ds.schema.n_numeric == 3 and ds.schema.n_categorical == 2
    assert ds.n_observations == 21
    assert ds.instances == ("i1", "i2", "i3", "i4")
    assert ds.tokens[3] == ("a", "b", "c")
    assert ds.value_counts(3).tolist() == [2, 2, 2]
    assert sorted(ds.numeric_values(1).tolist()) == [-1.0, 0.0, 0.2, 1.0, 1.0]
    assert ds.variable_counts().tolist() == [3, 5, 3, 6, 4]


def test_header_only_table():
    ds = _wide("A,B,C\n", NNC)
    assert ds.n_instances == 0 and ds.n_observations == 0


def test_missing_cell_yields_no_observation():
    ds = _wide("#id,A,B,C\ni1,0,.,a\n", NNC)
    assert ds.n_observations == 2
    assert list(ds.observations()) == [("i1", "A", 0.0), ("i1", "C", "a")]


def test_custom_missing_token():
    ds = _wide("#id,A,B,C\ni1,0,NA,.\n", NNC, missing="NA")
    assert ds.n_observations == 2
    assert ds.tokens[2] == (".",)


def test_instances_without_id_column_are_numbered():
    ds = _wide("A,B,C\n1,2,x\n3,4,y\n", NNC)
    assert ds.instances == ("1", "2")


def test_long_format_counts():
    ds = _long("i1,X1,0.5\ni1,X1,0.7\ni2,X1,1.0\n")
    assert ds.n_observations == 3 and ds.n_instances == 2
    assert ds.schema.variables[0].kind == NUMERIC


def test_long_format_is_deterministic():
    text = "instance,variable,value\nu,c,b\nu,c,a\nv,x,2\n"
    a, b = _long(text), _long(text)
    assert a.schema == b.schema and a.instances == b.instances and a.tokens == b.tokens
    for name in ("obs_instance", "obs_variable", "obs_number", "obs_code"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_long_and_wide_agree_on_the_example(example_table):
    wide = _wide(example_table)
    long = _long(wide.to_long_csv(), wide.schema)
    assert long.instances == wide.instances
    assert _triples(long) == _triples(wide)
    assert long.tokens == wide.tokens


def test_long_format_rejects_unknown_variable():
    with pytest.raises(SchemaError, match="line 2"):
        _long("i1,A,1\ni1,Z,2\n", NNC)


def test_long_format_rejects_bad_arity():
    with pytest.raises(ParseError):
        _long("i1,A\n", NNC)


@pytest.mark.parametrize("tokens,kind", [
    (["1", "2.5", "."], NUMERIC),
    (["1", "2", "a"], CATEGORICAL),
    (["-3e2", "{4, 5}"], NUMERIC),
    (["inf", "1"], CATEGORICAL),
])
def test_type_inference(tokens, kind):
    text = "X\n" + "\n".join(f'"{t}"' for t in tokens) + "\n"
    assert _wide(text).schema.variables[0].kind == kind


def test_all_missing_column_is_categorical_and_flagged():
    text = "A,B\n1,.\n2,.\n"
    with pytest.warns(UserWarning, match="entirely missing"):
        schema = infer_schema(io.StringIO(text))
    assert schema.variables[1].kind == CATEGORICAL
    ds = _wide(text)
    assert ds.n_values(1) == 0
    assert any("'B'" in w for w in ds.warnings)
    assert ds.modeled_variables() == [0]


def test_duplicate_header_is_an_error():
    with pytest.raises(SchemaError, match="duplicate"):
        _wide("A,A\n1,2\n")


def test_malformed_numeric_value_is_located():
    with pytest.raises(ParseError, match=r"row 3, column 'B'"):
        _wide("A,B,C\n1,2,x\n1,oops,y\n", NNC)


def test_too_many_cells():
    with pytest.raises(ParseError, match="row 2"):
        _wide("A,B,C\n1,2,x,9\n", NNC)


def test_schema_round_trip(tmp_path):
    path = tmp_path / "schema.json"
    path.write_text(json.dumps(NNC.to_json()))
    assert load_schema(path) == NNC
    with pytest.raises(SchemaError):
        Schema((Variable("A", NUMERIC), Variable("A", CATEGORICAL)))


def test_read_dataset_by_path(tmp_path, example_table):
    wide = tmp_path / "t.csv"
    wide.write_text(example_table)
    tsv = tmp_path / "t.tsv"
    tsv.write_text(example_table.replace(",", "\t").replace("\t ", ", "))
    a, b = read_dataset(wide), read_dataset(tsv)
    assert _triples(a) == _triples(b)


def test_dataset_arrays_are_read_only(example_table):
    ds = _wide(example_table)
    with pytest.raises(ValueError):
        ds.obs_number[0] = 1.0


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_wide_long_round_trip(seed):
    rng = np.random.default_rng(seed)
    kinds = [NUMERIC if rng.random() < 0.5 else CATEGORICAL for _ in range(int(rng.integers(1, 5)))]
    text, schema = oracles.random_table(rng, int(rng.integers(1, 12)), kinds)
    wide = _wide(text, schema)
    long = _long(wide.to_long_csv(), schema)
    assert _triples(long) == _triples(wide)
    # multi-valued cells and missing tokens account for every observation
    assert wide.n_observations == sum(wide.variable_counts())
