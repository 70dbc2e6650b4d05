"""
Tests for the mask, field, polygon and trace file formats.

Prerequisites:
- pandas installed
"""

import json
import sys
import logging
from pathlib import Path

import numpy as np
import pytest

# Configure logging for tests
logging.basicConfig(level=logging.INFO, format='%(levelname)s - %(name)s - %(message)s')
logger = logging.getLogger(__name__)

# Add src to path for imports
src_path = Path(__file__).parent.parent.parent / 'src'
sys.path.insert(0, str(src_path))

from jacforge.core import CompactSetMask, ScalarField
from jacforge.errors import FieldFormatError, MaskFormatError, PolygonFormatError
from jacforge.io import (
    format_mask_text,
    parse_mask_text,
    read_field,
    read_mask,
    read_polygon,
    read_trace_jsonl,
    write_field,
    write_json,
    write_mask,
    write_trace_jsonl,
)
from jacforge.solver import IterationRecord


class TestMaskText:
    """0/1 grids with the top row at the highest y"""

    def test_top_row_is_highest_y(self):
        mask = parse_mask_text("10\n00\n")
        assert mask.cells == frozenset({(0, 1)})

    def test_spaces_and_blank_lines_ignored(self):
        mask = parse_mask_text("0 1 0 0\n\n0000\n0000\n0001\n")
        assert mask.cells == frozenset({(1, 3), (3, 0)})
        assert mask.level == 2

    def test_format_inverts_parse(self):
        text = "0100\n0000\n1000\n0001\n"
        assert format_mask_text(parse_mask_text(text)) == text

    def test_bad_character_reports_line(self):
        with pytest.raises(MaskFormatError) as exc:
            parse_mask_text("01\n0x\n")
        assert exc.value.line == 2
        assert exc.value.exit_code == 2

    def test_ragged_row(self):
        with pytest.raises(MaskFormatError):
            parse_mask_text("01\n011\n")

    def test_non_power_of_two(self):
        with pytest.raises(MaskFormatError):
            parse_mask_text("010\n000\n001\n")

    def test_empty(self):
        with pytest.raises(MaskFormatError):
            parse_mask_text("\n\n")


class TestMaskFiles:
    def test_json_and_text_files(self, tmp_path):
        mask = CompactSetMask(3, frozenset({(0, 7), (5, 2)}))
        for name in ("m.json", "m.txt"):
            write_mask(mask, tmp_path / name)
            assert read_mask(tmp_path / name) == mask

    def test_json_cell_out_of_range(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"level": 1, "cells": [[2, 0]]}))
        with pytest.raises(MaskFormatError):
            read_mask(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MaskFormatError):
            read_mask(tmp_path / "nope.txt")


class TestFieldFiles:
    def test_csv_orientation(self, tmp_path):
        """Row 0 of the CSV is the top of the square"""
        path = tmp_path / "f.csv"
        path.write_text("0.1,0.2\n0.3,0.4\n")
        f = read_field(path)
        assert f.samples[0, 1] == pytest.approx(0.1)
        assert f.samples[1, 0] == pytest.approx(0.4)

    def test_write_then_read(self, tmp_path):
        f = ScalarField(np.arange(16, dtype=float).reshape(4, 4) / 20)
        write_field(f, tmp_path / "f.csv")
        assert np.allclose(read_field(tmp_path / "f.csv").samples, f.samples)

    def test_non_numeric(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("0.1,abc\n0.3,0.4\n")
        with pytest.raises(FieldFormatError):
            read_field(path)

    def test_not_square(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("0.1,0.2,0.3\n0.3,0.4,0.5\n")
        with pytest.raises(FieldFormatError):
            read_field(path)

    def test_negative_values(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("0.1,-0.2\n0.3,0.4\n")
        with pytest.raises(FieldFormatError):
            read_field(path)


class TestPolygonAndTraces:
    def test_polygon_with_hole(self, tmp_path):
        path = tmp_path / "p.json"
        path.write_text(json.dumps({"outer": [[0, 0], [4, 0], [4, 4], [0, 4]], "holes": [[[1, 1], [1, 2], [2, 2]]]}))
        outer, holes = read_polygon(path)
        assert len(outer) == 4
        assert holes[0][2] == (2.0, 2.0)

    def test_polygon_missing_outer(self, tmp_path):
        path = tmp_path / "p.json"
        path.write_text(json.dumps({"holes": []}))
        with pytest.raises(PolygonFormatError):
            read_polygon(path)

    def test_trace_lines(self, tmp_path):
        records = [
            IterationRecord(
                i=k, measure_mi=0.1 / k, measure_ai=0.1, min_det_on_mi=2.0,
                min_det_global=0.8, w1q_increment=0.01, depth=k, ratio=None,
            )
            for k in (1, 2)
        ]
        path = tmp_path / "trace.jsonl"
        write_trace_jsonl(records, path)
        df = read_trace_jsonl(path)
        assert list(df["i"]) == [1, 2]
        assert "measureMi" in df.columns

    def test_json_report_keys_sorted(self, tmp_path):
        path = tmp_path / "r.json"
        write_json({"b": 1, "a": 2}, path)
        assert path.read_text().index('"a"') < path.read_text().index('"b"')
