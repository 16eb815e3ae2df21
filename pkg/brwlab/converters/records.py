"""
Result-to-file writers.

CSV carries data (mandatory header, one statistic family per file, floats in
round-trippable form); JSON carries manifests and aggregates only.
"""
import csv
import json
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Union

import numpy as np

from brwlab.converters.address_codec import AddressCodec
from brwlab.core.utils import format_float

PathLike = Union[str, Path]


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    if value is None:
        return ""
    return str(value)


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """
    Write one CSV file with ``\\n`` line endings.

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        f = float(value)
        return f if np.isfinite(f) else format_float(f)
    return value


def write_json(path: PathLike, payload: Any) -> Path:
    """Write sorted, indented JSON; non-finite floats become strings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def series_rows(series) -> List[List[Any]]:
    """Rows (n, p_n, log p_n) of a return series."""
    p = series.probabilities
    return [[n, float(p[n]), float(series.log_p[n])] for n in range(series.horizon + 1)]


def edge_rows(trace, codec: AddressCodec) -> List[List[str]]:
    """Trace edges as sorted endpoint address pairs."""
    rows = []
    for edge in trace.edges:
        a, b = sorted(codec.encode(v) for v in edge)
        rows.append([a, b])
    rows.sort()
    return rows


def visit_rows(first_visit, codec: AddressCodec) -> List[List[Any]]:
    """(vertex, first generation) rows sorted by address."""
    return sorted([codec.encode(v), g] for v, g in first_visit.items())
