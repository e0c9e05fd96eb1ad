"""Bundled example data."""
from __future__ import annotations

import io
from importlib import resources

import numpy as np

from .ingest import CATEGORICAL, NUMERIC, Dataset, Schema, Variable, parse_wide_table


def iris_path():
    return resources.files(__package__) / "data" / "iris.csv"


def load_iris() -> Dataset:
    """Fisher's Iris: 150 instances, four numeric variables and the class."""
    with iris_path().open() as f:
        return parse_wide_table(f)


def planted_blocks(n_instances: int = 5000, n_variables: int = 20, n_row_groups: int = 4,
                   n_var_groups: int = 4, categorical_share: float = 0.4, noise: float = 0.15,
                   seed: int = 0) -> tuple[Dataset, np.ndarray]:
    """Synthetic mixed table with a planted row-group x variable-group structure.

    Every (row group, variable group) block draws its values around a level
    ``(r + v) mod L``: numeric variables from N(4*level, 1), categorical ones
    return token ``level`` except with probability ``noise``. Returns the
    dataset (one observation per cell) and the true row groups.
    """
    rng = np.random.default_rng(seed)
    rows = rng.integers(n_row_groups, size=n_instances)
    var_group = np.arange(n_variables) % n_var_groups
    n_cat = int(round(categorical_share * n_variables))
    kinds = [CATEGORICAL if k % n_variables < n_cat else NUMERIC
             for k in rng.permutation(n_variables)]
    levels = max(n_row_groups, n_var_groups)
    variables, columns = [], []
    for k in range(n_variables):
        level = (rows + var_group[k]) % levels
        if kinds[k] == NUMERIC:
            col = [repr(round(float(x), 3)) for x in rng.normal(4.0 * level, 1.0)]
        else:
            flip = rng.random(n_instances) < noise
            tok = np.where(flip, rng.integers(levels, size=n_instances), level)
            col = [f"v{t}" for t in tok]
        variables.append(Variable(f"X{k + 1}", kinds[k]))
        columns.append(col)
    out = io.StringIO()
    out.write(",".join(v.name for v in variables) + "\n")
    for i in range(n_instances):
        out.write(",".join(c[i] for c in columns) + "\n")
    out.seek(0)
    return parse_wide_table(out, Schema(tuple(variables))), rows
