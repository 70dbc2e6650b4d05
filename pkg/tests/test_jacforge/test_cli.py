"""
End-to-end tests of the command-line front end: output files and exit codes.

Prerequisites:
- all runtime dependencies installed (matplotlib for --svg)
"""

import json
import sys
import logging
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

# Configure logging for tests
logging.basicConfig(level=logging.INFO, format='%(levelname)s - %(name)s - %(message)s')
logger = logging.getLogger(__name__)

# Add src to path for imports
src_path = Path(__file__).parent.parent.parent / 'src'
sys.path.insert(0, str(src_path))

from jacforge.cli import build_parser, main
from jacforge.core import CompactSetMask, ScalarField
from jacforge.io import write_field, write_mask


@pytest.fixture
def small_mask_file(tmp_path):
    path = tmp_path / "mask.json"
    write_mask(CompactSetMask(8, frozenset({(128, 128)})), path)
    return path


@pytest.fixture
def zero_field_file(tmp_path):
    path = tmp_path / "zero.csv"
    write_field(ScalarField.constant(0.0, 16), path)
    return path


class TestParser:
    def test_flags_default_to_none(self):
        args = build_parser().parse_args(["cover", "--mask", "m.txt"])
        assert args.svg is None
        assert args.tau is None


class TestCover:
    def test_outputs(self, tmp_path, small_mask_file):
        out = tmp_path / "out"
        code = main(["cover", "--mask", str(small_mask_file), "--out", str(out), "--svg"])
        assert code == 0
        summary = json.loads((out / "cover_summary.json").read_text())
        assert summary["cells"] == 1
        assert summary["withinBound"]
        assert (out / "strips.json").exists()
        assert (out / "strips.svg").exists()
        logger.info(f"✓ cover wrote {sorted(p.name for p in out.iterdir())}")

    def test_malformed_mask(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("01\n0x\n")
        assert main(["cover", "--mask", str(bad), "--out", str(tmp_path / "out")]) == 2

    def test_missing_mask_flag(self, tmp_path):
        assert main(["cover", "--out", str(tmp_path / "out")]) == 2


class TestStretchAndVerify:
    def test_stretch(self, tmp_path, small_mask_file):
        out = tmp_path / "out"
        code = main([
            "stretch", "--mask", str(small_mask_file), "--tau", "0.1",
            "--grid", "64", "--out", str(out),
        ])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["minDetOnMask"] >= 1.1 - 1e-9

    def test_stretch_without_boundary(self, tmp_path, small_mask_file):
        out = tmp_path / "out"
        code = main([
            "stretch", "--mask", str(small_mask_file), "--tau", "0.1", "--no-boundary",
            "--grid", "64", "--out", str(out),
        ])
        assert code == 0
        assert (out / "stretch_estimates.json").exists()

    def test_gate_violation(self, tmp_path):
        mask = tmp_path / "big.txt"
        mask.write_text("11\n11\n")
        code = main(["stretch", "--mask", str(mask), "--tau", "1.0", "--out", str(tmp_path / "o")])
        assert code == 3

    def test_verify(self, tmp_path, small_mask_file):
        out = tmp_path / "out"
        code = main([
            "verify", "--mask", str(small_mask_file), "--tau", "0.1",
            "--grid", "64", "--seed", "3", "--out", str(out),
        ])
        assert code == 0
        transport = json.loads((out / "transport.json").read_text())
        assert transport["interfaceJump"] <= 1e-9
        cells = pd.read_csv(out / "cells.csv")
        assert len(cells) == 64 * 64


class TestSolve:
    def test_zero_field(self, tmp_path, zero_field_file):
        out = tmp_path / "out"
        code = main(["solve", "--field", str(zero_field_file), "--mode", "lp", "--out", str(out)])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["fractionSatisfied"] == 1.0
        weak = json.loads((out / "weak_form.json").read_text())
        assert weak["passed"]

    def test_mass_condition_is_a_gate(self, tmp_path):
        path = tmp_path / "one.csv"
        write_field(ScalarField.constant(1.0, 16), path)
        code = main(["solve", "--field", str(path), "--out", str(tmp_path / "out")])
        assert code == 3

    def test_validation_errors_are_logged(self, tmp_path, caplog):
        """Validator findings reach the log before the solver gates run"""
        path = tmp_path / "one.csv"
        write_field(ScalarField.constant(1.0, 16), path)
        with caplog.at_level(logging.ERROR, logger="jacforge.cli"):
            main(["solve", "--field", str(path), "--out", str(tmp_path / "out")])
        messages = [r.getMessage() for r in caplog.records if r.levelno == logging.ERROR]
        assert "∫f = 1.000000 must be below |Ω| = 1" in messages

    def test_infeasible_exponents(self, tmp_path, zero_field_file):
        code = main([
            "solve", "--field", str(zero_field_file), "--p", "2", "--q", "1.5",
            "--out", str(tmp_path / "out"),
        ])
        assert code == 3

    def test_config_file_overridden_by_flag(self, tmp_path, zero_field_file):
        cfg = tmp_path / "run.yaml"
        cfg.write_text("mode: nonsense\n")
        code = main([
            "solve", "--config", str(cfg), "--field", str(zero_field_file),
            "--mode", "linf", "--out", str(tmp_path / "out"),
        ])
        assert code == 0


class TestRender:
    def test_mask_evolution(self, tmp_path):
        masks = []
        for k, cells in enumerate(({(0, 0), (3, 3)}, {(1, 2)})):
            path = tmp_path / f"m_{k}.json"
            write_mask(CompactSetMask(2, frozenset(cells)), path)
            masks.append(str(path))
        out = tmp_path / "out"
        assert main(["render", "--masks", *masks, "--out", str(out)]) == 0
        assert (out / "mask_evolution.svg").read_text().startswith("<?xml")

    def test_nothing_to_render(self, tmp_path):
        assert main(["render", "--out", str(tmp_path / "out")]) == 2

    def test_svg_is_deterministic(self, tmp_path, small_mask_file):
        texts = []
        for name in ("a", "b"):
            out = tmp_path / name
            main(["cover", "--mask", str(small_mask_file), "--out", str(out), "--svg"])
            texts.append((out / "strips.svg").read_text())
        assert texts[0] == texts[1]
