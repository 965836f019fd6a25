"""Campaign persistence: CSV tables, long-format plot data, JSON metadata.

Floats are written with ``repr`` so a parsed table reproduces the records
exactly, and files are written in a fixed order, which keeps reruns
byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import astuple, fields
from importlib import metadata as importlib_metadata
from pathlib import Path

from .campaigns import (
    CampaignResult,
    NormFunctionRecord,
    NormRecord,
    PlotRow,
    RoundRecord,
    TrialDiagnostics,
    TrialRecord,
    columns,
)
from .errors import OutputError

RESULTS = "results.csv"
PLOT_DATA = "plot_data.csv"
METADATA = "metadata.json"
RECORD_TYPES = {
    "simulate": TrialRecord,
    "norm-study": NormRecord,
    "toy-dpo": RoundRecord,
}
SIDE_TABLES = {"diagnostics": TrialDiagnostics, "functions": NormFunctionRecord}


def library_version() -> str:
    try:
        return importlib_metadata.version("artifact")
    except importlib_metadata.PackageNotFoundError:
        from . import __version__

        return __version__


def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, kind):
    if kind is bool:
        return text == "true"
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def write_table(path, record_type, records) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns(record_type))
            for rec in records:
                writer.writerow([_cell(v) for v in astuple(rec)])
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def read_table(path, record_type) -> list:
    """Parse a table written by ``write_table`` back into records."""
    path = Path(path)
    kinds = {"int": int, "float": float, "str": str, "bool": bool}
    spec = [(f.name, kinds[f.type] if isinstance(f.type, str) else f.type) for f in fields(record_type)]
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != [name for name, _ in spec]:
                raise OutputError(f"{path}: unexpected header {header}")
            return [record_type(*(_parse(v, k) for v, (_, k) in zip(row, spec))) for row in reader]
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc}") from exc


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def campaign_metadata(result: CampaignResult) -> dict:
    config = result.config
    tables = {"results": RESULTS, "plot_data": PLOT_DATA}
    tables.update({name: f"{name}.csv" for name in result.tables})
    return _clean({
        "experiment": config.experiment,
        "library_version": library_version(),
        "seeds": list(config.seeds),
        "config": config.to_dict(),
        "columns": list(columns(result.record_type)),
        "tables": tables,
        "partial": result.partial,
        "failures": result.failures,
    })


def emit_outputs(result: CampaignResult, path) -> dict:
    """Write every table and the metadata file under directory ``path``.

    Returns a mapping from table name to written file.
    """
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out}: {exc}") from exc
    written = {"results": write_table(out / RESULTS, result.record_type, result.records)}
    for name, rows in result.tables.items():
        written[name] = write_table(out / f"{name}.csv", SIDE_TABLES[name], rows)
    written["plot_data"] = write_table(out / PLOT_DATA, PlotRow, result.plot_rows)
    meta_path = out / METADATA
    try:
        meta_path.write_text(json.dumps(campaign_metadata(result), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {meta_path}: {exc}") from exc
    written["metadata"] = meta_path
    return written


def read_metadata(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise OutputError(f"{path} is not valid JSON: {exc}") from exc


PLOT_METRICS = {
    "simulate": ("t", "strategy", ("max_suboptimality", "median_suboptimality")),
    "toy-dpo": ("round", "arm", ("win_rate", "mean_length")),
}


def plot_rows_from_results(experiment: str, records) -> list[PlotRow]:
    """Long-format rows rebuilt from a results table."""
    if experiment not in PLOT_METRICS:
        raise ValueError(f"no plot recipe for {experiment!r} results")
    step_field, label_field, metrics = PLOT_METRICS[experiment]
    return [PlotRow(getattr(r, step_field), m, getattr(r, label_field), r.seed, getattr(r, m))
            for r in records for m in metrics]
