"""2×2 multi-view grid assembly and splitting.

Layout is fixed row-major: view0 top-left, view1 top-right, view2
bottom-left, view3 bottom-right. split(assemble(v)) is byte-exact.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def assemble_grid(views) -> np.ndarray:
    """Tile 4 equally-sized square images into one 2×2 grid image."""
    if len(views) != 4:
        raise ShapeError(f"expected exactly 4 views, got {len(views)}")
    arrs = [np.asarray(v) for v in views]
    first = arrs[0].shape
    for i, a in enumerate(arrs):
        if a.ndim != 3 or a.shape[2] != 3:
            raise ShapeError(f"view {i}: expected H×W×3, got shape {a.shape}")
        if a.shape != first:
            raise ShapeError(f"view {i} shape {a.shape} differs from view 0 shape {first}")
        if a.shape[0] != a.shape[1]:
            raise ShapeError(f"view {i}: views must be square, got shape {a.shape}")
    top = np.concatenate([arrs[0], arrs[1]], axis=1)
    bottom = np.concatenate([arrs[2], arrs[3]], axis=1)
    return np.concatenate([top, bottom], axis=0)


def split_grid(grid: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Invert :func:`assemble_grid`; grid dimensions must be even."""
    grid = np.asarray(grid)
    if grid.ndim != 3 or grid.shape[2] != 3:
        raise ShapeError(f"expected H×W×3 grid, got shape {grid.shape}")
    h, w = grid.shape[:2]
    if h % 2 or w % 2:
        raise ShapeError(f"grid dimensions must be even to split, got {h}×{w}")
    hh, hw = h // 2, w // 2
    return (
        grid[:hh, :hw].copy(),
        grid[:hh, hw:].copy(),
        grid[hh:, :hw].copy(),
        grid[hh:, hw:].copy(),
    )
