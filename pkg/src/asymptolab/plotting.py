"""SVG figures for run directories: log-log remainder curves and profile sections."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .field import Field  # noqa: E402

SVG_SALT = "asymptolab"


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def remainder_figure(
    curves: dict[str, tuple[Sequence[float], Sequence[float]]],
    guides: Sequence[tuple[float, str]],
    path: Path,
    title: str = "",
) -> Path:
    """curves: label -> (times, normalized values).  guides: (slope, annotation), one per branch.

    Each guide is anchored at the first point of the first curve.
    """
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    anchor = None
    for label, (t, y) in curves.items():
        t, y = np.asarray(t, float), np.asarray(y, float)
        ax.loglog(t, y, "o-", ms=3, label=label)
        if anchor is None and t.size:
            anchor = (t[0], y[0], t[-1])
    if anchor is not None:
        t0, y0, t1 = anchor
        tt = np.array([t0, t1])
        for i, (slope, note) in enumerate(guides):
            line = y0 * (tt / t0) ** slope
            ax.loglog(tt, line, "--", color="0.4", lw=1, gid=f"guide_{i}")
            ax.annotate(note, (tt[-1], line[-1]), textcoords="offset points", xytext=(-4, 6),
                        ha="right", fontsize=8, color="0.3")
    ax.set_xlabel("t")
    ax.set_ylabel("normalized remainder")
    if title:
        ax.set_title(title, fontsize=9)
    ax.legend(fontsize=8)
    ax.grid(True, which="major", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def profile_figure(fields: dict[str, Field], path: Path, title: str = "", width: float | None = None) -> Path:
    """Cross-sections along the first axis through the origin."""
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for label, phi in fields.items():
        grid = phi.grid
        x = grid.coords
        values = phi.values
        if grid.dim == 2:
            values = values[:, grid.points_per_axis // 2]
        keep = np.abs(x) <= width if width else slice(None)
        ax.plot(x[keep], values[keep], lw=1.2, label=label)
    ax.set_xlabel("x")
    if title:
        ax.set_title(title, fontsize=9)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def count_guides(svg_path: Path) -> int:
    """Number of guide lines in a remainder figure."""
    text = Path(svg_path).read_text()
    return text.count('id="guide_')
