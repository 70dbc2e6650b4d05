"""
File formats.

Masks:
    Text grid of 0/1 rows, one row per y level with the top row at
    j = 2^l − 1, or JSON {"level": l, "cells": [[i, j], ...]}.
Fields:
    CSV of n rows × n numbers without a header. Row r holds the values at
    y = (n − r − 1/2)/n, column c the value at x = (c + 1/2)/n.
Polygons:
    JSON {"outer": [[x, y], ...], "holes": [[[x, y], ...], ...]}.
Traces:
    JSON lines, one record per iteration.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from .core import CompactSetMask, ScalarField
from .covering import StripFamily
from .errors import FieldFormatError, InputError, MaskFormatError, PolygonFormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _read_text(path: PathLike, error) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise error(f"cannot read {path}: {e}") from e


# ============================================================================
# MASKS
# ============================================================================


def parse_mask_text(text: str) -> CompactSetMask:
    """Parse a 0/1 text grid; blank lines and spaces are ignored."""
    rows: List[Tuple[int, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        row = raw.replace(" ", "").replace("\t", "")
        if not row:
            continue
        bad = set(row) - {"0", "1"}
        if bad:
            raise MaskFormatError(f"unexpected characters {sorted(bad)}", lineno)
        rows.append((lineno, row))

    n = len(rows)
    if n == 0:
        raise MaskFormatError("mask grid is empty")
    if n & (n - 1):
        raise MaskFormatError(f"grid has {n} rows, expected a power of two", rows[-1][0])
    for lineno, row in rows:
        if len(row) != n:
            raise MaskFormatError(f"row has {len(row)} entries, expected {n}", lineno)

    grid = np.zeros((n, n), dtype=bool)
    for r, (_, row) in enumerate(rows):
        grid[:, n - 1 - r] = [c == "1" for c in row]
    return CompactSetMask.from_array(grid)


def format_mask_text(mask: CompactSetMask) -> str:
    grid = mask.to_array()
    n = mask.size
    lines = ["".join("1" if grid[i, j] else "0" for i in range(n)) for j in range(n - 1, -1, -1)]
    return "\n".join(lines) + "\n"


def mask_from_dict(data: Dict[str, Any]) -> CompactSetMask:
    try:
        level = int(data["level"])
        cells = frozenset((int(i), int(j)) for i, j in data.get("cells", []))
    except (KeyError, TypeError, ValueError) as e:
        raise MaskFormatError(f"invalid mask JSON: {e}") from e
    try:
        return CompactSetMask(level, cells)
    except ValueError as e:
        raise MaskFormatError(str(e)) from e


def mask_to_dict(mask: CompactSetMask) -> Dict[str, Any]:
    return {"level": mask.level, "cells": [list(c) for c in mask.sorted_cells()]}


def read_mask(path: PathLike) -> CompactSetMask:
    """
    Read a mask file (.json or text grid).

    Raises:
        MaskFormatError: malformed content, with the offending line for text grids
    """
    text = _read_text(path, MaskFormatError)
    if Path(path).suffix == ".json":
        try:
            mask = mask_from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise MaskFormatError(f"invalid JSON: {e.msg}", e.lineno) from e
    else:
        mask = parse_mask_text(text)
    logger.info(f"Loaded mask {path}: level {mask.level}, {len(mask)} cells")
    return mask


def write_mask(mask: CompactSetMask, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".json":
        path.write_text(json.dumps(mask_to_dict(mask)))
    else:
        path.write_text(format_mask_text(mask))


# ============================================================================
# FIELDS
# ============================================================================


def read_field(path: PathLike) -> ScalarField:
    """
    Read a field CSV (top row = highest y).

    Raises:
        FieldFormatError: non-numeric entries, ragged rows or a non-square table
    """
    try:
        table = pd.read_csv(path, header=None, skip_blank_lines=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FieldFormatError(f"cannot read field {path}: {e}") from e
    values = table.apply(pd.to_numeric, errors="coerce")
    if values.isna().any().any():
        r, c = np.argwhere(values.isna().to_numpy())[0]
        raise FieldFormatError(f"non-numeric or missing entry at row {r + 1}, column {c + 1}")
    arr = values.to_numpy(dtype=float)
    if arr.shape[0] != arr.shape[1]:
        raise FieldFormatError(f"field must be square, got {arr.shape[0]}×{arr.shape[1]}")
    try:
        field = ScalarField(arr[::-1, :].T)
    except (ValueError, InputError) as e:
        raise FieldFormatError(str(e)) from e
    logger.info(f"Loaded field {path}: {field.n}×{field.n}, ∫f = {field.integral():.6f}")
    return field


def write_field(field: ScalarField, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(field.samples.T[::-1, :]).to_csv(path, header=False, index=False)


# ============================================================================
# POLYGONS AND STRIPS
# ============================================================================


def read_polygon(path: PathLike) -> Tuple[List[Sequence[float]], List[List[Sequence[float]]]]:
    """
    Read a polygon JSON file.

    Returns:
        Tuple of (outer ring, list of hole rings)
    """
    text = _read_text(path, PolygonFormatError)
    try:
        data = json.loads(text)
        outer = [(float(x), float(y)) for x, y in data["outer"]]
        holes = [[(float(x), float(y)) for x, y in ring] for ring in data.get("holes", [])]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise PolygonFormatError(f"invalid polygon file {path}: {e}") from e
    if len(outer) < 3:
        raise PolygonFormatError(f"outer ring needs at least 3 vertices, got {len(outer)}")
    return outer, holes


def write_strips(family: StripFamily, path: PathLike) -> None:
    write_json(family.to_dict(), path)


def read_strips(path: PathLike) -> StripFamily:
    return StripFamily.from_dict(json.loads(Path(path).read_text()))


# ============================================================================
# REPORTS AND TRACES
# ============================================================================


def write_json(data: Union[BaseModel, Dict[str, Any]], path: PathLike) -> None:
    """Write a report model (camelCase keys) or a plain dict as indented JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, BaseModel):
        payload = data.model_dump(by_alias=True, mode="json")
    else:
        payload = data
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    logger.info(f"✓ Wrote {path}")


def write_trace_jsonl(records: Sequence[BaseModel], path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [r.model_dump(by_alias=True, mode="json") for r in records]
    with path.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    logger.info(f"✓ Wrote {len(rows)} trace records to {path}")


def read_trace_jsonl(path: PathLike) -> pd.DataFrame:
    return pd.read_json(path, lines=True)
