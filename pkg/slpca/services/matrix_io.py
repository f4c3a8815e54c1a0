"""
File surface of the command line: data matrices, fitted models, reports
and run manifests.

Floats are written with 17 significant digits so that a written model
reads back bit for bit.
"""

import hashlib
import json
import logging
import os
import subprocess
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from slpca import __version__
from slpca.config import settings
from slpca.models.schemas import (
    BinaryDataMatrix,
    BootstrapEnvelope,
    ColumnKind,
    CorrelationSummary,
    ExperimentTable,
    FitResult,
    Link,
    RunManifest,
    SelectionReport,
    SimulationSpec,
    SlpcaModel,
)
from slpca.services.errors import DataValidationError, MatrixParseError
from slpca.services.likelihood import log_likelihood
from slpca.services.selection import bic

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

NA_TOKENS = {"", "NA", "na", "NaN", "nan", "."}


def _float_format() -> str:
    return f"%.{settings.float_digits}g"


def _to_float(token: str) -> Optional[float]:
    try:
        return float(token)
    except ValueError:
        return None


def _is_header(row: Sequence[str]) -> bool:
    return any(cell.strip() not in NA_TOKENS and _to_float(cell.strip()) is None for cell in row)


def _read_schema(path: Path, names: List[str]) -> Optional[List[ColumnKind]]:
    if not path.exists():
        return None
    with open(path, "r") as f:
        schema = json.load(f)
    columns = schema.get("columns", schema) if isinstance(schema, dict) else schema
    kinds: List[Optional[ColumnKind]] = [None] * len(names)
    if isinstance(columns, list):
        if len(columns) != len(names):
            raise DataValidationError(f"schema lists {len(columns)} columns for {len(names)}")
        return [ColumnKind(kind) for kind in columns]
    for key, kind in columns.items():
        if key in names:
            index = names.index(key)
        elif str(key).isdigit() and 1 <= int(key) <= len(names):
            index = int(key) - 1
        else:
            raise DataValidationError(f"schema names unknown column {key!r}")
        kinds[index] = ColumnKind(kind)
    return kinds


def load_matrix(
    path: PathLike,
    header: Optional[bool] = None,
    schema_path: Optional[PathLike] = None,
) -> BinaryDataMatrix:
    """
    Read a CSV data matrix.

    Cells are 0, 1 or NA in binary columns; a column holding any
    non-integer real is tagged continuous unless a sidecar schema
    (<path>.schema.json) says otherwise. Error positions are 1-based data
    rows, not counting a header.

    Args:
        path: CSV file
        header: Whether the first row holds names (default: detected)
        schema_path: Column-kind schema (default: the sidecar, if present)

    Returns:
        BinaryDataMatrix with the missingness mask filled from NA cells
    """
    path = Path(path)
    try:
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except pd.errors.EmptyDataError as exc:
        raise MatrixParseError(f"{path} is empty") from exc
    except pd.errors.ParserError as exc:
        raise MatrixParseError(f"{path} has ragged rows: {exc}") from exc

    if raw.empty:
        raise MatrixParseError(f"{path} is empty")
    cells = raw.to_numpy(dtype=object)
    if header is None:
        header = _is_header([str(cell) for cell in cells[0]])
    names = [str(cell).strip() for cell in cells[0]] if header else None
    body = cells[1:] if header else cells
    if body.shape[0] == 0:
        raise MatrixParseError(f"{path} has no data rows")

    n, d = body.shape
    values = np.zeros((n, d))
    mask = np.zeros((n, d), dtype=bool)
    for i in range(n):
        for j in range(d):
            cell = body[i, j]
            if not isinstance(cell, str):
                raise MatrixParseError(f"row {i + 1} has fewer than {d} fields", row=i + 1, col=j + 1)
            token = cell.strip()
            if token in NA_TOKENS:
                mask[i, j] = True
                continue
            value = _to_float(token)
            if value is None or not np.isfinite(value):
                raise MatrixParseError(f"malformed cell {token!r} at row {i + 1}, col {j + 1}", row=i + 1, col=j + 1)
            values[i, j] = value

    column_names = names or [f"V{j + 1}" for j in range(d)]
    sidecar = Path(schema_path) if schema_path else Path(str(path) + settings.schema_suffix)
    declared = _read_schema(sidecar, column_names)

    kinds: List[ColumnKind] = []
    for j in range(d):
        observed = values[~mask[:, j], j]
        kind = declared[j] if declared and declared[j] is not None else None
        if kind is None:
            fractional = np.any(observed != np.round(observed))
            kind = ColumnKind.CONTINUOUS if fractional else ColumnKind.BINARY
        if kind == ColumnKind.BINARY:
            bad = np.flatnonzero(~mask[:, j] & (values[:, j] != 0.0) & (values[:, j] != 1.0))
            if bad.size:
                i = int(bad[0])
                raise MatrixParseError(
                    f"cell {body[i, j].strip()!r} at row {i + 1}, col {j + 1} is not 0, 1 or NA",
                    row=i + 1,
                    col=j + 1,
                )
        kinds.append(kind)

    data = BinaryDataMatrix(values=values, mask=mask, col_kind=kinds, column_names=names)
    logger.info(f"Loaded {n}×{d} matrix from {path} ({int(mask.sum())} missing cells)")
    return data


def _pc_columns(k: int) -> List[str]:
    return [f"pc{l + 1}" for l in range(k)]


def write_model(
    result: FitResult,
    out_dir: PathLike,
    data: Optional[BinaryDataMatrix] = None,
    manifest: Optional[RunManifest] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    Write mu.csv, scores.csv, loadings.csv, trace.csv and summary.json.

    Args:
        result: Fit to write
        out_dir: Output directory (created if needed)
        data: Data the model was fitted to; adds log likelihood and BIC to the summary
        manifest: Run manifest written as manifest.json
        extra: Additional summary fields

    Returns:
        Output directory
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = result.model
    fmt = _float_format()
    columns = _pc_columns(model.k)

    names = data.column_names if data is not None and data.column_names else None
    mu = pd.DataFrame({"mu": model.mu})
    loadings = pd.DataFrame(model.B, columns=columns)
    if names:
        mu.insert(0, "variable", names)
        loadings.insert(0, "variable", names)
    mu.to_csv(out / "mu.csv", index=False, float_format=fmt)
    loadings.to_csv(out / "loadings.csv", index=False, float_format=fmt)
    pd.DataFrame(model.A, columns=columns).to_csv(out / "scores.csv", index=False, float_format=fmt)
    pd.DataFrame(
        {"iteration": np.arange(len(result.objective_trace)), "objective": result.objective_trace}
    ).to_csv(out / "trace.csv", index=False, float_format=fmt)

    summary: Dict[str, Any] = {
        "k": model.k,
        "lambda": list(model.lambda_),
        "link": model.link.value,
        "sigma2": model.sigma2,
        "nnz": result.nnz,
        "final_objective": result.final_objective,
        "iterations": result.iterations,
        "converged": result.converged,
        "restart": result.restart,
    }
    if data is not None:
        summary["loglik"] = log_likelihood(data, model)
        summary["bic"] = bic(data, result)
    if extra:
        summary.update(extra)
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)

    if manifest is not None:
        write_manifest(manifest, out)
    logger.info(f"Wrote model (k={model.k}, nnz={result.nnz}) to {out}")
    return out


def read_model(model_dir: PathLike) -> Tuple[SlpcaModel, Dict[str, Any]]:
    """Read a model written by write_model."""
    folder = Path(model_dir)
    with open(folder / "summary.json", "r") as f:
        summary = json.load(f)

    def numeric(name: str) -> np.ndarray:
        frame = pd.read_csv(folder / name, float_precision="round_trip")
        return frame.drop(columns=["variable"], errors="ignore").to_numpy(dtype=float)

    model = SlpcaModel(
        mu=numeric("mu.csv")[:, 0],
        A=numeric("scores.csv"),
        B=numeric("loadings.csv"),
        link=Link(summary["link"]),
        lambda_=summary["lambda"],
        sigma2=summary.get("sigma2"),
    )
    return model, summary


def file_digest(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_identity() -> Optional[str]:
    """`git describe` of the source tree, when available."""
    try:
        completed = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    if completed.returncode != 0:
        return None
    return completed.stdout.strip() or None


def build_manifest(
    command: str,
    config: Dict[str, Any],
    seed: Optional[int] = None,
    input_path: Optional[PathLike] = None,
) -> RunManifest:
    return RunManifest(
        command=command,
        config=config,
        seed=seed,
        input_digest=file_digest(input_path) if input_path else None,
        library_version=__version__,
        build=build_identity(),
    )


def finish_manifest(manifest: RunManifest) -> RunManifest:
    return manifest.model_copy(update={"finished_at": datetime.now(timezone.utc)})


def write_manifest(manifest: RunManifest, out_dir: PathLike) -> Path:
    path = Path(out_dir) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(finish_manifest(manifest).model_dump_json(indent=2))
    return path


def write_selection(reports: Sequence[SelectionReport], path: PathLike) -> Path:
    """One row per grid point, tagged with its stage."""
    rows = []
    for report in reports:
        for row in report.grid:
            rows.append({"stage": report.stage, "parameter": report.parameter, **row.model_dump()})
    frame = pd.DataFrame(rows)
    frame.to_csv(path, index=False, float_format=_float_format())
    return Path(path)


def write_envelope(envelope: BootstrapEnvelope, path: PathLike) -> Path:
    """Plot-ready envelope: index, point, lower, upper."""
    frame = pd.DataFrame(
        {"index": envelope.order, "point": envelope.point, "lower": envelope.lower, "upper": envelope.upper}
    )
    frame.to_csv(path, index=False, float_format=_float_format())
    return Path(path)


def write_correlations(summaries: Dict[str, CorrelationSummary], path: PathLike) -> Path:
    """One correlation list per model, in long format."""
    rows = []
    for label, summary in summaries.items():
        for group, (a, b), value in zip(summary.groups, summary.pairs, summary.correlations):
            rows.append({"model": label, "group": group, "col_a": a, "col_b": b, "correlation": value})
    pd.DataFrame(rows, columns=["model", "group", "col_a", "col_b", "correlation"]).to_csv(
        path, index=False, float_format=_float_format()
    )
    return Path(path)


def write_experiment(table: ExperimentTable, out_dir: PathLike) -> Path:
    """summary.csv (one row per mode) and replicates.csv (one row per fit)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fmt = _float_format()
    summary_rows = []
    for item in table.summaries:
        row = item.model_dump(mode="json")
        row["selected_k"] = ";".join(f"{k}:{count}" for k, count in item.selected_k.items())
        summary_rows.append(row)
    pd.DataFrame(summary_rows).to_csv(out / "summary.csv", index=False, float_format=fmt)
    pd.DataFrame([record.model_dump(mode="json", by_alias=True) for record in table.records]).to_csv(
        out / "replicates.csv", index=False, float_format=fmt
    )
    with open(out / "baseline.json", "w") as f:
        json.dump({"baseline": table.baseline, "failures": table.failures}, f, indent=2)
    return out


def _parse_support(text: str) -> List[List[int]]:
    groups = []
    for part in text.split(";"):
        rows: List[int] = []
        for piece in part.split(","):
            piece = piece.strip()
            if not piece:
                continue
            if "-" in piece:
                start, stop = (int(x) for x in piece.split("-", 1))
                rows.extend(range(start - 1, stop))
            else:
                rows.append(int(piece) - 1)
        groups.append(rows)
    return groups


def _floats(text: str) -> List[float]:
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


SPEC_KEYS = {
    "n": int,
    "d": int,
    "k_true": int,
    "snr": _floats,
    "support": _parse_support,
    "replicates": int,
    "k_fit": str,
    "seed": int,
    "baseline": float,
    "baseline_replicates": int,
    "k_large": int,
    "k_max": int,
    "lambda_grid": _floats,
    "modes": lambda text: [m.strip() for m in text.split(",") if m.strip()],
}


def parse_spec_file(path: PathLike) -> SimulationSpec:
    """
    Read a key = value simulation spec.

    Support sets are 1-based ranges or lists separated by ';', e.g.
    ``support = 1-20; 21-40``. Lines starting with '#' are ignored.
    """
    fields: Dict[str, Any] = {}
    with open(path, "r") as f:
        for number, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataValidationError(f"{path}:{number}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in SPEC_KEYS:
                raise DataValidationError(f"{path}:{number}: unknown key {key!r}")
            try:
                fields[key] = SPEC_KEYS[key](value)
            except ValueError as exc:
                raise DataValidationError(f"{path}:{number}: bad value for {key}: {exc}") from exc
    return SimulationSpec(**fields)


def read_labels(path: PathLike) -> np.ndarray:
    """Row labels: the last column of a CSV with one row per observation."""
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    return frame.iloc[:, -1].str.strip().to_numpy()


def read_groups(path: PathLike, column_names: Optional[Sequence[str]] = None) -> List[List[int]]:
    """
    Column partition from a CSV of (column, group) rows; columns are names
    or 1-based indices.
    """
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    names = list(column_names or [])
    groups: Dict[str, List[int]] = {}
    for column, group in frame.iloc[:, :2].itertuples(index=False):
        column = column.strip()
        if column in names:
            index = names.index(column)
        elif column.isdigit():
            index = int(column) - 1
        else:
            raise DataValidationError(f"unknown column {column!r} in {path}")
        groups.setdefault(group.strip(), []).append(index)
    return list(groups.values())
