"""Per-record view statistics: sharpness and cross-view color consistency.

Sharpness is the variance of a discrete Laplacian response on luminance
(flat images score 0; blur strictly lowers it). Consistency is the mean
pairwise total-variation distance between per-view foreground hue
histograms — 0 for identical views, 1 for disjoint hue content — with
foreground defined as not-near-white and empty-foreground views flagged
and pinned to maximum distance.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .images import foreground_mask, laplacian_variance, luminance, rgb_to_hue, to_float

HUE_BINS = 24
MAX_DISTANCE = 1.0

_PAIRS = tuple(itertools.combinations(range(4), 2))


def sharpness_metric(views) -> float:
    """Mean Laplacian variance of the views' luminance channels."""
    views = list(views)
    if not views:
        raise ParameterError("sharpness_metric needs at least one view")
    return float(np.mean([laplacian_variance(luminance(to_float(v))) for v in views]))


def hue_histogram(view, bins: int = HUE_BINS) -> np.ndarray | None:
    """Normalized foreground hue histogram, or None if the view has no foreground."""
    img = to_float(view)
    fg = foreground_mask(img)
    if not fg.any():
        return None
    counts, _ = np.histogram(rgb_to_hue(img)[fg], bins=bins, range=(0.0, 1.0))
    return counts / counts.sum()


def _tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    return float(0.5 * np.abs(p - q).sum())


@dataclass(frozen=True)
class ConsistencyReport:
    """Pairwise hue-histogram distances across the 4 views of one record."""

    pair_distances: tuple[float, ...]  # order: (0,1) (0,2) (0,3) (1,2) (1,3) (2,3)
    empty_views: tuple[int, ...]  # views with no foreground (pinned to max distance)

    @property
    def value(self) -> float:
        return float(np.mean(self.pair_distances))

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return _PAIRS


def consistency_report(views) -> ConsistencyReport:
    views = list(views)
    if len(views) != 4:
        raise ParameterError(f"consistency is defined over exactly 4 views, got {len(views)}")
    hists = [hue_histogram(v) for v in views]
    empty = tuple(i for i, h in enumerate(hists) if h is None)
    distances = tuple(
        MAX_DISTANCE if hists[i] is None or hists[j] is None else _tv_distance(hists[i], hists[j])
        for i, j in _PAIRS
    )
    return ConsistencyReport(pair_distances=distances, empty_views=empty)


def consistency_metric(views) -> float:
    """Mean pairwise foreground-hue-histogram distance; lower = more consistent."""
    return consistency_report(views).value
