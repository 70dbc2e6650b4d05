"""
Command-line front end.

    jacforge cover   --mask M --out DIR [--svg]
    jacforge stretch --mask M --tau T [--polygon P] [--no-boundary] --out DIR [--svg]
    jacforge solve   --field F --mode lp|linf [--p --q --delta --eps --tol] --out DIR [--svg]
    jacforge verify  --mask M --tau T [--grid N --seed S] --out DIR
    jacforge render  [--strips S] [--mask M] [--polygon P] [--masks M1 M2 ...] --out DIR

Values from --config (YAML or key=value) are overridden by flags.
Exit codes: 0 success, 2 input error, 3 gate violation, 4 tolerance not met.
"""

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from pydantic import ValidationError

from .boundary import BoundaryCorrectedMap, build_boundary_corrected, stretch_from_config
from .config import COMMANDS, RunConfig, get_settings, load_config_file
from .constants import EXIT_CODE_NAMES, EXIT_INPUT_ERROR, EXIT_OK
from .core import Box, CompositeMap
from .covering import cover_mask
from .domain import FramedMask, build_polygon_stretch, decompose_polygon
from .errors import GateViolation, InputError, JacforgeError
from .io import (
    read_field,
    read_mask,
    read_polygon,
    read_strips,
    write_json,
    write_mask,
    write_strips,
    write_trace_jsonl,
)
from .render import (
    render_boundary_frame,
    render_decomposition,
    render_deformed_grid,
    render_mask_evolution,
    render_strips,
)
from .solver import LinfConfig, LpConfig, solve_linf, solve_lp
from .stretch import StretchMap, stretch_estimates
from .validators import validate_field, validate_mask_for_stretch, validate_polygon_rings
from .verify import (
    export_cell_dets,
    interface_jumps,
    jacobian_report,
    pushforward_crosscheck,
    weak_form_residuals,
)

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jacforge", description="Constructive maps with prescribed Jacobian lower bounds"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path)
        p.add_argument("--mask", type=Path)
        p.add_argument("--field", type=Path)
        p.add_argument("--polygon", type=Path)
        p.add_argument("--strips", type=Path)
        p.add_argument("--masks", type=Path, nargs="+")
        p.add_argument("--mode", choices=["lp", "linf"])
        p.add_argument("--tau", type=float)
        p.add_argument("--p", type=float)
        p.add_argument("--q", type=float)
        p.add_argument("--delta", type=float)
        p.add_argument("--eps", type=float)
        p.add_argument("--grid", type=int)
        p.add_argument("--tol", type=float)
        p.add_argument("--measure-tol", type=float)
        p.add_argument("--max-iter", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path)
        p.add_argument("--no-boundary", action="store_true", default=None)
        p.add_argument("--svg", action="store_true", default=None)
        p.add_argument("--verbose", "-v", action="store_true")
        p.add_argument("--quiet", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file values, then every flag that was given."""
    values: Dict[str, Any] = {}
    if args.config is not None:
        values.update(load_config_file(args.config))
    skip = {"config", "verbose", "quiet", "command"}
    for key, value in vars(args).items():
        if key not in skip and value is not None:
            values[key] = value
    values["command"] = args.command
    return RunConfig(**values)


def _require(value: Optional[Path], flag: str) -> Path:
    if value is None:
        raise InputError(f"{flag} is required for this command")
    return value


def _write_svg(cfg: RunConfig, render, *args, name: str) -> None:
    if cfg.svg:
        render(*args, cfg.out / name)


# ============================================================================
# COMMANDS
# ============================================================================


def cmd_cover(cfg: RunConfig) -> int:
    mask = read_mask(_require(cfg.mask, "--mask"))
    family = cover_mask(mask)
    root = math.sqrt(mask.measure)
    summary = {
        "cells": len(mask),
        "level": mask.level,
        "measure": mask.measure,
        "sqrtMeasure": root,
        "N": family.N,
        "M": family.M,
        "delta": family.delta,
        "deltaN": family.delta * family.N,
        "deltaM": family.delta * family.M,
        "bound": 2.0 * root,
        "withinBound": family.delta * max(family.N, family.M) <= 2.0 * root + 1e-15,
        "trivial": family.is_empty(),
    }
    write_strips(family, cfg.out / "strips.json")
    write_json(summary, cfg.out / "cover_summary.json")
    _write_svg(cfg, render_strips, family, mask, name="strips.svg")
    return EXIT_OK


def _log_validation(result) -> None:
    is_valid, errors, warnings = result
    for w in warnings:
        logger.warning(w)
    if not is_valid:
        for e in errors:
            logger.error(e)


def build_stretch_map(cfg: RunConfig):
    """Map and the mask it stretches, on the unit square or on a polygon."""
    mask = read_mask(_require(cfg.mask, "--mask"))
    _log_validation(validate_mask_for_stretch(mask, cfg.tau))
    if cfg.polygon is not None:
        outer, holes = read_polygon(cfg.polygon)
        is_valid, errors, _ = validate_polygon_rings(outer, holes)
        if not is_valid:
            raise InputError("; ".join(errors))
        decomposition = decompose_polygon(outer, holes)
        x0, y0, x1, y1 = decomposition.polygon.bounds
        framed = FramedMask(mask, Box(x0, y0, x1, y1))
        _write_svg(cfg, render_decomposition, decomposition, name="decomposition.svg")
        return build_polygon_stretch(decomposition, framed, cfg.tau), mask
    return stretch_from_config(mask, cfg.stretch_config()), mask


def cmd_stretch(cfg: RunConfig) -> int:
    m, mask = build_stretch_map(cfg)
    vcfg = cfg.verify_config()
    report = jacobian_report(m, mask, vcfg.grid_n, vcfg.q, cfg.tau, vcfg.pair_count, vcfg.seed)
    write_json(report, cfg.out / "report.json")
    if isinstance(m, StretchMap):
        write_json(stretch_estimates(m, vcfg.grid_n, mask), cfg.out / "stretch_estimates.json")
    _write_svg(cfg, render_deformed_grid, m, name="deformed_grid.svg")
    if cfg.svg and isinstance(m, CompositeMap):
        for factor in m.factors:
            if isinstance(factor, BoundaryCorrectedMap):
                render_boundary_frame(factor, cfg.out / "boundary_frame.svg")
    return EXIT_OK


def cmd_solve(cfg: RunConfig) -> int:
    f = read_field(_require(cfg.field, "--field"))
    is_valid, errors, warnings = validate_field(f, cfg.mode)
    _log_validation((is_valid, errors, warnings))
    if not is_valid and f.n & (f.n - 1):
        raise InputError("; ".join(errors))

    moser_cfg = cfg.moser_config()
    if cfg.mode == "lp":
        lp_cfg = LpConfig.for_exponents(
            cfg.p, cfg.q, max_iter=cfg.max_iter, measure_tol=cfg.measure_tol,
            boundary=not cfg.no_boundary,
        )
        m, report, trace = solve_lp(
            f, cfg.p, cfg.q, cfg.delta, cfg.eps or 0.125, lp_cfg, moser_cfg
        )
        if trace is not None:
            write_trace_jsonl(trace.records, cfg.out / "trace.jsonl")
            for k, mi in enumerate(trace.masks, start=1):
                write_mask(mi, cfg.out / "masks" / f"m_{k:02d}.json")
            _write_svg(cfg, render_mask_evolution, trace.masks, name="mask_evolution.svg")
    else:
        linf_cfg = LinfConfig(measure_tol=cfg.measure_tol, boundary=not cfg.no_boundary)
        m, report = solve_linf(f, linf_cfg, moser_cfg)
    write_json(report, cfg.out / "report.json")

    passed, residuals = weak_form_residuals(m, f)
    write_json(
        {"passed": passed, "residuals": residuals}, cfg.out / "weak_form.json"
    )
    _write_svg(cfg, render_deformed_grid, m, name="deformed_grid.svg")
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    m, mask = build_stretch_map(cfg)
    vcfg = cfg.verify_config()
    report = jacobian_report(m, mask, vcfg.grid_n, vcfg.q, cfg.tau, vcfg.pair_count, vcfg.seed)
    write_json(report, cfg.out / "report.json")
    raster, quadrature = pushforward_crosscheck(m, mask)
    write_json(
        {
            "pushforwardRaster": raster,
            "pushforwardQuadrature": quadrature,
            "interfaceJump": interface_jumps(m),
        },
        cfg.out / "transport.json",
    )
    if isinstance(m.domain, Box):
        export_cell_dets(m, vcfg.grid_n, cfg.out / "cells.csv")
    return EXIT_OK


def cmd_render(cfg: RunConfig) -> int:
    rendered = 0
    mask = read_mask(cfg.mask) if cfg.mask is not None else None
    if cfg.strips is not None:
        render_strips(read_strips(cfg.strips), mask, cfg.out / "strips.svg")
        rendered += 1
    if cfg.polygon is not None:
        outer, holes = read_polygon(cfg.polygon)
        render_decomposition(decompose_polygon(outer, holes), cfg.out / "decomposition.svg")
        rendered += 1
    if cfg.masks:
        render_mask_evolution([read_mask(p) for p in cfg.masks], cfg.out / "mask_evolution.svg")
        rendered += 1
    if mask is not None and cfg.strips is None:
        corrected = build_boundary_corrected(mask, cfg.tau)
        render_boundary_frame(corrected, cfg.out / "boundary_frame.svg")
        render_deformed_grid(corrected, cfg.out / "deformed_grid.svg")
        rendered += 2
    if rendered == 0:
        raise InputError("nothing to render: give --strips, --polygon, --masks or --mask")
    return EXIT_OK


HANDLERS = {
    "cover": cmd_cover,
    "stretch": cmd_stretch,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "render": cmd_render,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    else:
        level = getattr(logging, settings.log_level, logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s - %(name)s - %(message)s")

    try:
        cfg = resolve_config(args)
        cfg.out.mkdir(parents=True, exist_ok=True)
        code = HANDLERS[cfg.command](cfg)
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        code = EXIT_INPUT_ERROR
    except JacforgeError as e:
        kind = "Gate violation" if isinstance(e, GateViolation) else EXIT_CODE_NAMES[e.exit_code]
        logger.error(f"{kind}: {e}")
        code = e.exit_code
    logger.info(f"Exit {code} ({EXIT_CODE_NAMES.get(code, 'unknown')})")
    return code


if __name__ == "__main__":
    sys.exit(main())
