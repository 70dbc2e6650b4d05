"""
Deterministic SVG figures (matplotlib, Agg backend).

SVG output uses a fixed hash salt and no date metadata so identical inputs
give byte-identical files.
"""

import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection, PolyCollection  # noqa: E402

from .boundary import BoundaryCorrectedMap  # noqa: E402
from .constants import DEFORMED_GRID_LINES, STRIP_COLORS, SVG_HASH_SALT  # noqa: E402
from .core import Box, CompactSetMask, PlanarMap  # noqa: E402
from .covering import StripFamily  # noqa: E402
from .domain import PolygonDecomposition  # noqa: E402

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
CURVE_SAMPLES = 201


def _save(fig, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"✓ Rendered {path}")
    return path


def _axes(frame: Box = Box()):
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.set_xlim(frame.x0, frame.x1)
    ax.set_ylim(frame.y0, frame.y1)
    ax.set_aspect("equal")
    return fig, ax


def _mask_patches(mask: CompactSetMask, frame: Box = Box()) -> PolyCollection:
    d = mask.delta
    quads = []
    for i, j in mask.sorted_cells():
        unit = np.array([[i, j], [i + 1, j], [i + 1, j + 1], [i, j + 1]], dtype=float) * d
        quads.append(frame.from_unit(unit))
    return PolyCollection(quads, facecolors="#444444", edgecolors="none", alpha=0.6)


def render_strips(family: StripFamily, mask: Optional[CompactSetMask], path: PathLike) -> Path:
    """Strips of width 2δ around each graph, drawn over the mask."""
    fig, ax = _axes()
    if mask is not None and not mask.is_empty():
        ax.add_collection(_mask_patches(mask))
    t = np.linspace(0.0, 1.0, CURVE_SAMPLES)
    d = family.delta
    for k, f in enumerate(family.horizontal):
        color = STRIP_COLORS[k % len(STRIP_COLORS)]
        ax.fill_between(t, f(t) - d, f(t) + d, color=color, alpha=0.35, linewidth=0)
        ax.plot(t, f(t), color=color, linewidth=0.8)
    for k, g in enumerate(family.vertical):
        color = STRIP_COLORS[(k + len(family.horizontal)) % len(STRIP_COLORS)]
        ax.fill_betweenx(t, g(t) - d, g(t) + d, color=color, alpha=0.35, linewidth=0)
        ax.plot(g(t), t, color=color, linewidth=0.8, linestyle="--")
    ax.set_title(f"N={family.N}, M={family.M}, δ={d:g}")
    return _save(fig, path)


def render_deformed_grid(
    m: PlanarMap, path: PathLike, lines: int = DEFORMED_GRID_LINES, frame: Optional[Box] = None
) -> Path:
    """Image of a lines×lines grid of the domain's bounding box."""
    if frame is None:
        x0, y0, x1, y1 = m.domain.bounds()
        frame = Box(x0, y0, x1, y1)
    t = np.linspace(0.0, 1.0, CURVE_SAMPLES)
    levels = np.linspace(0.0, 1.0, lines + 1)
    segments = []
    for s in levels:
        for unit in (np.column_stack([t, np.full_like(t, s)]), np.column_stack([np.full_like(t, s), t])):
            pts = frame.from_unit(unit)
            pts = pts[m.domain.contains(pts)]
            if len(pts) > 1:
                segments.append(m._evaluate(pts))
    fig, ax = _axes(frame)
    ax.add_collection(LineCollection(segments, colors="#0F2866", linewidths=0.5))
    return _save(fig, path)


def render_boundary_frame(m: BoundaryCorrectedMap, path: PathLike) -> Path:
    """Inner square S and the four quadrilaterals between S and ∂[−1,1]²."""
    c = m.c
    outer = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
    inner = [(-c, -c), (c, -c), (c, c), (-c, c)]
    quads = [
        [outer[k], outer[(k + 1) % 4], inner[(k + 1) % 4], inner[k]] for k in range(4)
    ]
    labels = ["Q_d", "Q_r", "Q_u", "Q_l"]
    fig, ax = _axes(Box(-1.0, -1.0, 1.0, 1.0))
    ax.add_collection(
        PolyCollection(quads, facecolors=STRIP_COLORS[:4], edgecolors="black", alpha=0.4)
    )
    ax.add_collection(PolyCollection([inner], facecolors="white", edgecolors="black"))
    for quad, label in zip(quads, labels):
        center = np.mean(np.array(quad, dtype=float), axis=0)
        ax.text(center[0], center[1], label, ha="center", va="center")
    ax.set_title(f"|M|={m.measure:.3g}, s={m.s:.3g}")
    return _save(fig, path)


def render_decomposition(decomposition: PolygonDecomposition, path: PathLike) -> Path:
    x0, y0, x1, y1 = decomposition.polygon.bounds
    pad = 0.05 * max(x1 - x0, y1 - y0)
    fig, ax = _axes(Box(x0 - pad, y0 - pad, x1 + pad, y1 + pad))
    quads = [q.vertices() for q in decomposition.quads]
    colors = [STRIP_COLORS[k % len(STRIP_COLORS)] for k in range(len(quads))]
    ax.add_collection(PolyCollection(quads, facecolors=colors, edgecolors="black", alpha=0.5))
    ax.set_title(f"{decomposition.triangle_count} triangles, {len(quads)} quads")
    return _save(fig, path)


def render_mask_evolution(masks: Sequence[CompactSetMask], path: PathLike) -> Path:
    """Side-by-side panels of the sets M_i."""
    count = max(len(masks), 1)
    fig, axes = plt.subplots(1, count, figsize=(3 * count, 3), squeeze=False)
    for k, ax in enumerate(axes[0]):
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_aspect("equal")
        ax.set_xticks([])
        ax.set_yticks([])
        if k < len(masks):
            ax.add_collection(_mask_patches(masks[k]))
            ax.set_title(f"M_{k + 1}: {masks[k].measure:.2e}", fontsize=8)
    return _save(fig, path)
