"""Command line: ``mixcocluster fit | inspect | report``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .criterion import criterion
from .ingest import DEFAULT_MISSING, ParseError, SchemaError, load_schema, read_dataset
from .model import StructuralError, verify_counts
from .optimizer import OptimizerConfig, fit
from .partition import PartitionError
from .report import cluster_summaries, export_json, format_summary, import_json, render_heatmap_svg

logger = logging.getLogger("mixcocluster")


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


def parse_grid(text: str) -> tuple[int, ...]:
    """``2..10`` (dense), ``2:pow2:128`` (powers of two) or ``2,3,5``."""
    text = text.strip()
    try:
        if ".." in text:
            a, b = (int(x) for x in text.split(".."))
            grid = tuple(range(a, b + 1))
        elif ":pow2:" in text:
            a, b = (int(x) for x in text.split(":pow2:"))
            grid, p = [], 1
            while p <= b:
                if p >= a:
                    grid.append(p)
                p *= 2
            grid = tuple(grid)
        else:
            grid = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid grid {text!r}") from None
    if not grid or min(grid) < 1:
        raise argparse.ArgumentTypeError(f"grid {text!r} must contain sizes >= 1")
    return grid


@dataclass
class RunConfig:
    inputs: list[Path]
    fmt: str = "wide"
    schema: Path | None = None
    missing: str = DEFAULT_MISSING
    delimiter: str | None = None
    out: Path = Path("out")
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    emit: tuple[str, ...] = ("json", "trace", "summary", "svg")

    def validate(self):
        for p in self.inputs:
            if not p.exists():
                raise StageError("config", f"input {p} does not exist")


def _load(cfg: RunConfig):
    try:
        schema = load_schema(cfg.schema) if cfg.schema else None
    except (OSError, ValueError) as exc:
        raise StageError("schema", str(exc)) from None
    try:
        if len(cfg.inputs) != 1:
            raise StageError("ingest", "exactly one input file is supported")
        return read_dataset(cfg.inputs[0], cfg.fmt, schema, cfg.delimiter, cfg.missing)
    except (ParseError, SchemaError, OSError, UnicodeDecodeError) as exc:
        raise StageError("ingest", str(exc)) from None


def _write_outputs(model, out: Path, emit, fit_info=None, trace=None):
    out.mkdir(parents=True, exist_ok=True)
    report = cluster_summaries(model)
    written = []
    if "json" in emit:
        (out / "model.json").write_text(export_json(model, report, fit_info))
        written.append("model.json")
    if "trace" in emit and trace is not None:
        with open(out / "trace.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["step", "criterion"])
            for i, v in enumerate(trace):
                w.writerow([i, repr(v)])
        written.append("trace.csv")
    if "summary" in emit:
        (out / "summary.txt").write_text(format_summary(report))
        written.append("summary.txt")
    if "svg" in emit:
        (out / "heatmap.svg").write_text(render_heatmap_svg(report))
        written.append("heatmap.svg")
    return report, written


def cmd_fit(cfg: RunConfig) -> int:
    cfg.validate()
    dataset = _load(cfg)
    for w in dataset.warnings:
        logger.warning(w)
    if dataset.n_observations == 0:
        raise StageError("fit", "dataset has zero observations")
    try:
        result = fit(dataset, cfg.optimizer)
    except (StructuralError, PartitionError) as exc:
        raise StageError("fit", str(exc)) from None
    info = {
        "config": cfg.optimizer.to_json(),
        "chosen_size": result.chosen_size,
        "grid_criteria": {str(k): v for k, v in sorted(result.grid_criteria.items())},
        "trace": result.trace,
        "move_counts": result.move_counts,
        "converged": result.converged,
    }
    _, written = _write_outputs(result.model, cfg.out, cfg.emit, info, result.trace)
    m = result.model
    print(f"chosen partition size P* = {result.chosen_size}")
    print(f"model: {m.g_u} instance clusters x {m.g_p} part clusters, {m.n_parts} parts")
    print(f"final criterion = {result.criterion.total:.6f}")
    print(f"wrote {', '.join(written)} to {cfg.out}")
    return 0


def _read_model(path: Path):
    try:
        return import_json(Path(path).read_text())
    except OSError as exc:
        raise StageError("inspect", str(exc)) from None
    except (ValueError, StructuralError, PartitionError, SchemaError) as exc:
        raise StageError("parse", str(exc)) from None


def cmd_inspect(model_path: Path, data: Path | None = None, fmt: str = "wide", schema: Path | None = None,
                missing: str = DEFAULT_MISSING) -> int:
    model = _read_model(model_path)
    stored = json.loads(Path(model_path).read_text())
    print(format_summary(cluster_summaries(model)), end="")
    check = verify_counts(model)
    if not check:
        print(f"count check FAILED: {check.discrepancy}")
        return 1
    if data is not None:
        dataset = _load(RunConfig([Path(data)], fmt=fmt, schema=schema, missing=missing))
        check = verify_counts(model, dataset)
        if not check:
            print(f"dataset check FAILED: {check.discrepancy}")
            return 1
        print("dataset check: pass")
    value = criterion(model)
    saved = stored.get("criterion", {})
    for name, v in value.terms.items():
        if saved.get("terms", {}).get(name) != v:
            print(f"criterion mismatch in term {name}: stored {saved.get('terms', {}).get(name)!r}, recomputed {v!r}")
            return 1
    if saved.get("total") != value.total:
        print(f"criterion mismatch in total: stored {saved.get('total')!r}, recomputed {value.total!r}")
        return 1
    stored_cells = stored.get("counts", {}).get("cells")
    if stored_cells != model.cells.tolist():
        print("cell counts differ from the stored matrix")
        return 1
    print(f"criterion check: pass ({value.total!r})")
    return 0


def cmd_report(model_path: Path, out: Path, emit=("json", "summary", "svg")) -> int:
    model = _read_model(model_path)
    stored = json.loads(Path(model_path).read_text())
    _, written = _write_outputs(model, out, emit, stored.get("fit"))
    print(f"wrote {', '.join(written)} to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixcocluster", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="co-cluster a data file")
    f.add_argument("input", type=Path)
    f.add_argument("--format", choices=("wide", "long"), default="wide")
    f.add_argument("--schema", type=Path)
    f.add_argument("--missing-token", default=DEFAULT_MISSING)
    f.add_argument("--delimiter")
    f.add_argument("--grid", type=parse_grid, help="2..10, 2:pow2:128 or 2,4,8 (default depends on data size)")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--max-sweeps", type=int, default=1000)
    f.add_argument("--neighbors", type=int, default=10)
    f.add_argument("--threads", type=int, default=1)
    f.add_argument("--config", type=Path, help="optimizer settings as JSON; flags given explicitly win")
    f.add_argument("--out", type=Path, default=Path("out"))
    f.add_argument("--quiet", action="store_true", help="write model.json only")

    i = sub.add_parser("inspect", help="summarize and verify a model.json")
    i.add_argument("model", type=Path)
    i.add_argument("--data", type=Path)
    i.add_argument("--format", choices=("wide", "long"), default="wide")
    i.add_argument("--schema", type=Path)
    i.add_argument("--missing-token", default=DEFAULT_MISSING)

    r = sub.add_parser("report", help="re-render outputs from a model.json")
    r.add_argument("model", type=Path)
    r.add_argument("--out", type=Path, default=Path("out"))
    return parser


def _optimizer_config(args, argv) -> OptimizerConfig:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise StageError("config", str(exc)) from None
    flags = {"grid": args.grid, "seed": args.seed, "max_sweeps": args.max_sweeps,
             "neighbors": args.neighbors, "threads": args.threads}
    given = {a.split("=")[0] for a in argv if a.startswith("--")}
    for key, value in flags.items():
        if key not in base or "--" + key.replace("_", "-") in given:
            base[key] = value
    try:
        return OptimizerConfig.from_json(base)
    except (TypeError, ValueError) as exc:
        raise StageError("config", str(exc)) from None


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "fit":
            cfg = RunConfig(
                inputs=[args.input], fmt=args.format, schema=args.schema, missing=args.missing_token,
                delimiter=args.delimiter, out=args.out, optimizer=_optimizer_config(args, argv),
                emit=("json",) if args.quiet else ("json", "trace", "summary", "svg"),
            )
            return cmd_fit(cfg)
        if args.command == "inspect":
            return cmd_inspect(args.model, args.data, args.format, args.schema, args.missing_token)
        return cmd_report(args.model, args.out)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
