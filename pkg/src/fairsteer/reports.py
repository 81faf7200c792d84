"""Deterministic report artifacts: CSV tables, a minimal SVG scatter plot,
and atomic file writes. Floats are rendered with repr (shortest round-trip),
so identical values always produce identical bytes.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np


def atomic_write_text(path: Path | str, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def fmt_float(x) -> str:
    return repr(float(x))


def fmt_cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return fmt_float(x)
    return str(x)


def write_csv(path, header: list[str], rows: list[list]) -> None:
    """UTF-8, comma-separated, header row, LF line endings."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt_cell(c) for c in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def svg_scatter(path, points, groups, means=None, title: str = "") -> None:
    """Scatter plot of 2-D points colored by integer group label.

    Purely string-built with fixed-precision coordinates, so reruns with the
    same data produce identical bytes.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    groups = np.asarray(groups, dtype=int)
    if points.shape[1] != 2:
        raise ValueError(f"scatter plot needs 2-D points, got dimension {points.shape[1]}")
    size, pad = 480.0, 30.0
    stack = points if means is None else np.vstack([points, np.atleast_2d(means)])
    lo = stack.min(axis=0)
    hi = stack.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)

    def sx(v: float) -> str:
        return f"{pad + (v - lo[0]) / span[0] * (size - 2 * pad):.2f}"

    def sy(v: float) -> str:
        return f"{size - pad - (v - lo[1]) / span[1] * (size - 2 * pad):.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0f}" height="{size:.0f}" '
        f'viewBox="0 0 {size:.0f} {size:.0f}">',
        f'<rect width="{size:.0f}" height="{size:.0f}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{pad:.0f}" y="20" font-family="monospace" font-size="13">{title}</text>')
    for (x, y), g in zip(points, groups):
        color = _PALETTE[int(g) % len(_PALETTE)]
        parts.append(f'<circle cx="{sx(x)}" cy="{sy(y)}" r="3" fill="{color}" fill-opacity="0.55"/>')
    if means is not None:
        for gi, (x, y) in enumerate(np.atleast_2d(means)):
            color = _PALETTE[gi % len(_PALETTE)]
            parts.append(
                f'<circle cx="{sx(x)}" cy="{sy(y)}" r="6" fill="none" stroke="{color}" stroke-width="2"/>'
            )
    parts.append("</svg>")
    atomic_write_text(path, "\n".join(parts) + "\n")
