"""Interpretation artifacts: mutual information per co-cluster, cluster
summaries, the model JSON document and an SVG heatmap."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from html import escape

import numpy as np

from .criterion import CriterionValue, criterion
from .ingest import Schema
from .model import CoclusterModel, StructuralError
from .partition import IntervalPartition, PartitionSet, ValueGrouping

FORMAT = "mixcocluster-model"
VERSION = 1


def mutual_information_matrix(model: CoclusterModel) -> np.ndarray:
    """Signed contribution p*ln(p/(p_u*p_p)) of every co-cluster; 0 for empty cells."""
    N = model.n_observations
    if N <= 0:
        raise StructuralError("mutual information needs at least one observation")
    cells = model.cells.astype(np.float64)
    expected = np.outer(model.row_tot, model.col_tot).astype(np.float64)
    out = np.zeros_like(cells)
    nz = cells > 0
    out[nz] = cells[nz] / N * np.log(cells[nz] * N / expected[nz])
    return out


# --------------------------------------------------------------------------- labels


def _fmt(x: float) -> str:
    if x == -math.inf:
        return "-inf"
    if x == math.inf:
        return "+inf"
    return repr(float(x))


def interval_label(lo: float, hi: float) -> str:
    return f"]{_fmt(lo)};{_fmt(hi)}" + ("[" if hi == math.inf else "]")


def part_label(schema: Schema, partitions: PartitionSet, p: int) -> str:
    """``PetalWidth]0.8;1.65]`` for an interval, ``Class{versicolor}`` for a value group."""
    k, j = partitions.locate(p)
    name = schema.variables[k].name
    part = partitions.parts[k]
    if isinstance(part, IntervalPartition):
        return name + interval_label(*part.bounds(j))
    return name + "{" + ", ".join(part.groups[j]) + "}"


def parse_part_label(label: str, schema: Schema):
    """Inverse of part_label: ``(variable index, (lo, hi))`` or ``(variable index, frozenset)``."""
    names = sorted(schema.names, key=len, reverse=True)
    for name in names:
        if not label.startswith(name):
            continue
        rest = label[len(name):]
        k = schema.index(name)
        if schema.variables[k].is_numeric and rest.startswith("]") and rest[-1] in "[]" and ";" in rest:
            lo, hi = rest[1:-1].split(";")
            return k, (float(lo), float(hi))
        if not schema.variables[k].is_numeric and rest.startswith("{") and rest.endswith("}"):
            inner = rest[1:-1]
            return k, frozenset(t for t in inner.split(", ") if t)
    raise ValueError(f"cannot parse part label {label!r}")


# --------------------------------------------------------------------------- summaries


@dataclass
class InstanceClusterSummary:
    index: int
    size: int
    observations: int
    members: list[str]
    associations: list[tuple[int, float]]  # (part cluster, MI contribution), positive only, descending


@dataclass
class PartClusterSummary:
    index: int
    size: int
    observations: int
    parts: list[str]


@dataclass
class CoclusterReport:
    cells: np.ndarray
    mutual_information: np.ndarray
    instance_clusters: list[InstanceClusterSummary]
    part_clusters: list[PartClusterSummary]
    criterion: CriterionValue
    empty: np.ndarray = field(default=None)

    @property
    def total_mutual_information(self) -> float:
        return math.fsum(self.mutual_information.ravel().tolist())


def cluster_summaries(model: CoclusterModel, dataset=None) -> CoclusterReport:
    """Cluster compositions, with instance clusters explained by their most
    over-represented part clusters. ``dataset`` is accepted for interface
    symmetry; everything needed is in the model."""
    mi = mutual_information_matrix(model)
    inst = []
    for g, members in enumerate(model.instance_clusters()):
        order = sorted((h for h in range(model.g_p) if mi[g, h] > 0), key=lambda h: (-mi[g, h], h))
        inst.append(InstanceClusterSummary(
            index=g,
            size=len(members),
            observations=int(model.row_tot[g]),
            members=[model.instances[i] for i in members],
            associations=[(h, float(mi[g, h])) for h in order],
        ))
    parts = []
    for h, members in enumerate(model.part_clusters()):
        parts.append(PartClusterSummary(
            index=h,
            size=len(members),
            observations=int(model.col_tot[h]),
            parts=[part_label(model.schema, model.partitions, int(p)) for p in members],
        ))
    return CoclusterReport(
        cells=model.cells.copy(),
        mutual_information=mi,
        instance_clusters=inst,
        part_clusters=parts,
        criterion=criterion(model),
        empty=model.cells == 0,
    )


def format_summary(report: CoclusterReport, max_members: int = 8) -> str:
    c = report.criterion
    g_u, g_p = report.cells.shape
    lines = [
        f"co-clusters: {g_u} instance clusters x {g_p} part clusters",
        f"criterion: {c.total:.6f} (prior {c.prior:.6f}, likelihood {c.likelihood:.6f})",
        f"mutual information: {report.total_mutual_information:.6f} nats",
        "",
        "part clusters:",
    ]
    for pc in report.part_clusters:
        lines.append(f"  P{pc.index + 1} ({pc.size} parts, {pc.observations} obs): " + ", ".join(pc.parts))
    lines += ["", "instance clusters:"]
    for ic in report.instance_clusters:
        shown = ", ".join(ic.members[:max_members]) + (", ..." if ic.size > max_members else "")
        lines.append(f"  U{ic.index + 1} ({ic.size} instances, {ic.observations} obs): {shown}")
        for h, v in ic.associations[:3]:
            lines.append(f"    P{h + 1}  MI {v:+.6f}  n={int(report.cells[ic.index, h])}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- JSON


def _triplets(m: np.ndarray) -> list[list[int]]:
    r, c = np.nonzero(m)
    return [[int(i), int(j), int(m[i, j])] for i, j in zip(r, c)]


def model_to_dict(model: CoclusterModel, report: CoclusterReport | None = None, fit: dict | None = None) -> dict:
    report = report or cluster_summaries(model)
    ps, schema = model.partitions, model.schema
    partitions = []
    for k, var in enumerate(schema.variables):
        part = ps.parts[k]
        entry = {"variable": var.name, "kind": var.kind}
        if part is None:
            entry["excluded"] = True
        elif isinstance(part, IntervalPartition):
            entry["boundaries"] = list(part.boundaries)
        else:
            entry["tokens"] = list(ps.tokens[k])
            entry["value_counts"] = [int(x) for x in ps.value_counts[k]]
            entry["groups"] = [list(g) for g in part.groups]
        partitions.append(entry)
    c = report.criterion
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "schema": schema.to_json(),
        "instances": list(model.instances),
        "n_observations": model.n_observations,
        "shape": {"instance_clusters": model.g_u, "part_clusters": model.g_p, "parts": model.n_parts},
        "partitions": partitions,
        "parts": [
            {
                "index": p,
                "variable": schema.variables[ps.locate(p)[0]].name,
                "label": part_label(schema, ps, p),
                "count": int(ps.part_counts[p]),
                "cluster": int(model.part_cluster[p]),
            }
            for p in range(model.n_parts)
        ],
        "instance_clusters": [int(g) for g in model.inst_cluster],
        "counts": {
            "cells": model.cells.tolist(),
            "instance_totals": [int(x) for x in model.n_i],
            "instance_part": _triplets(model.inst_part),
            "instance_value": {schema.variables[k].name: _triplets(m) for k, m in sorted(model.value_inst.items())},
        },
        "criterion": {"total": c.total, "prior": c.prior, "likelihood": c.likelihood, "terms": c.terms},
        "mutual_information": report.mutual_information.tolist(),
    }
    if fit is not None:
        doc["fit"] = fit
    return doc


def export_json(model: CoclusterModel, report: CoclusterReport | None = None, fit: dict | None = None) -> str:
    return json.dumps(model_to_dict(model, report, fit), indent=1, sort_keys=False) + "\n"


def model_from_dict(doc: dict) -> CoclusterModel:
    if doc.get("format") != FORMAT:
        raise ValueError(f"not a {FORMAT} document")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    schema = Schema.from_json(doc["schema"])
    instances = doc["instances"]
    parts, tokens, value_counts = [], [], []
    for k, entry in enumerate(doc["partitions"]):
        if entry.get("excluded"):
            parts.append(None)
            tokens.append(())
            value_counts.append(None)
        elif schema.variables[k].is_numeric:
            parts.append(IntervalPartition(k, tuple(entry["boundaries"])))
            tokens.append(())
            value_counts.append(None)
        else:
            parts.append(ValueGrouping(k, tuple(tuple(g) for g in entry["groups"])))
            tokens.append(tuple(entry["tokens"]))
            value_counts.append(np.asarray(entry["value_counts"], dtype=np.int64))
    part_counts = np.asarray([rec["count"] for rec in doc["parts"]], dtype=np.int64)
    ps = PartitionSet(tuple(parts), tuple(tokens), part_counts, tuple(value_counts))
    if ps.n_parts != len(part_counts):
        raise ValueError("part records do not match the partitions")
    counts = doc["counts"]
    inst_part = np.zeros((len(instances), ps.n_parts), dtype=np.int64)
    for i, p, c in counts["instance_part"]:
        inst_part[i, p] = c
    value_inst = {}
    for name, trip in counts["instance_value"].items():
        k = schema.index(name)
        m = np.zeros((len(instances), len(tokens[k])), dtype=np.int64)
        for i, v, c in trip:
            m[i, v] = c
        value_inst[k] = m
    part_cluster = [rec["cluster"] for rec in doc["parts"]]
    return CoclusterModel(schema, instances, ps, inst_part, value_inst, doc["instance_clusters"], part_cluster)


def import_json(text: str) -> CoclusterModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed model JSON: {exc}") from None
    try:
        return model_from_dict(doc)
    except (KeyError, TypeError, IndexError) as exc:
        raise ValueError(f"malformed model JSON: missing or invalid field {exc}") from None


# --------------------------------------------------------------------------- SVG


def _color(value: float, scale: float, empty: bool) -> str:
    if empty or scale <= 0 or value == 0:
        return "#ffffff"
    t = min(abs(value) / scale, 1.0)
    fade = int(round(255 * (1 - t)))
    return f"#ff{fade:02x}{fade:02x}" if value > 0 else f"#{fade:02x}{fade:02x}ff"


def render_heatmap_svg(report: CoclusterReport, show_counts: bool = True, cell: int = 44) -> str:
    """Grid of co-clusters: red for over-represented, blue for under-represented, white for empty."""
    mi = report.mutual_information
    cells = report.cells
    g_u, g_p = mi.shape
    scale = float(np.abs(mi).max()) if mi.size else 0.0
    left, top = 48, 40
    width, height = left + g_p * cell + 12, top + g_u * cell + 28
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<title>{escape(f"{g_u} x {g_p} co-clusters, mutual information scale {scale:.6g}")}</title>',
    ]
    for h in range(g_p):
        x = left + h * cell + cell / 2
        out.append(f'<text x="{x:g}" y="{top - 8}" text-anchor="middle">P{h + 1}</text>')
    for g in range(g_u):
        y = top + g * cell + cell / 2 + 4
        out.append(f'<text x="{left - 6}" y="{y:g}" text-anchor="end">U{g + 1}</text>')
        for h in range(g_p):
            empty = cells[g, h] == 0
            x0, y0 = left + h * cell, top + g * cell
            fill = _color(float(mi[g, h]), scale, bool(empty))
            out.append(
                f'<rect x="{x0}" y="{y0}" width="{cell}" height="{cell}" fill="{fill}" stroke="#888888" '
                f'stroke-width="1"><title>U{g + 1} x P{h + 1}: n={int(cells[g, h])}, MI={float(mi[g, h]):.6g}</title></rect>'
            )
            if show_counts:
                out.append(
                    f'<text x="{x0 + cell / 2:g}" y="{y0 + cell / 2 + 4:g}" text-anchor="middle">{int(cells[g, h])}</text>'
                )
    out.append(
        f'<text x="{left}" y="{height - 8}">red: over-represented, blue: under-represented, white: empty</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"
