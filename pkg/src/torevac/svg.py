"""Minimal SVG emitter for closed curves in the poloidal plane."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def curves_svg(curves, styles=None, size: int = 480, margin: float = 0.05) -> str:
    """One closed ``<path>`` per curve, ``z`` axis pointing up."""
    arrays = [np.asarray(c, dtype=float) for c in curves]
    allpts = np.vstack(arrays)
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    span = float(max(hi - lo)) * (1 + 2 * margin)
    mid = 0.5 * (lo + hi)
    scale = size / span
    styles = styles or [{} for _ in arrays]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">'
    ]
    for pts, style in zip(arrays, styles):
        x = (pts[:, 0] - mid[0]) * scale + size / 2
        y = size / 2 - (pts[:, 1] - mid[1]) * scale
        d = "M " + " L ".join(f"{a:.3f} {b:.3f}" for a, b in zip(x, y)) + " Z"
        stroke = style.get("stroke", "black")
        width = style.get("width", 1.0)
        dash = f' stroke-dasharray="{style["dash"]}"' if "dash" in style else ""
        out.append(f'<path d="{d}" fill="none" stroke="{stroke}" stroke-width="{width}"{dash}/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_curves_svg(path, curves, styles=None) -> None:
    Path(path).write_text(curves_svg(curves, styles))


def circle_points(center, radius: float, n: int = 256) -> np.ndarray:
    th = 2 * np.pi * np.arange(n) / n
    return np.column_stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)])
