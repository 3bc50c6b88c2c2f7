"""Multi-view records: the unit of data everything downstream consumes.

A record is four equally-sized square RGB views plus their 2×2 grid
composite, identified by a content hash of the view bytes. Records are
immutable; "updates" return new instances and recompute the id whenever
pixels change.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import numpy as np

from .errors import ParameterError, ShapeError
from .grids import assemble_grid
from .quality import QualityLabel
from .sources import DataSource


class PipelineStage(enum.Enum):
    """Last completed pipeline stage for a record (fixed order, no skipping)."""

    PENDING = "pending"
    T2I = "t2i"
    NVS = "nvs"
    ASSEMBLED = "assembled"
    FAILED = "failed"

    @classmethod
    def from_tag(cls, tag: str) -> "PipelineStage":
        for member in cls:
            if member.value == tag:
                return member
        raise ParameterError(f"unknown pipeline stage {tag!r}")


_STAGE_ORDER = (PipelineStage.PENDING, PipelineStage.T2I, PipelineStage.NVS, PipelineStage.ASSEMBLED)


def next_stage(current: PipelineStage, new: PipelineStage) -> PipelineStage:
    """Validate a stage transition; any stage may fall to FAILED, none may skip."""
    if new is PipelineStage.FAILED:
        return new
    if current is PipelineStage.FAILED:
        raise ParameterError("a failed record cannot advance stages")
    idx = _STAGE_ORDER.index(current)
    if idx + 1 >= len(_STAGE_ORDER) or _STAGE_ORDER[idx + 1] is not new:
        raise ParameterError(f"illegal stage transition {current.value} -> {new.value}")
    return new


def record_digest(views) -> str:
    """Content id: SHA-256 over the concatenated raw view bytes, in view order."""
    h = hashlib.sha256()
    for v in views:
        h.update(np.ascontiguousarray(v).tobytes())
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class MultiViewRecord:
    record_id: str
    source: DataSource
    views: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray] = field(repr=False)
    grid: np.ndarray = field(repr=False)
    prompt: str = ""
    caption_short: str | None = None
    caption_long: str | None = None
    quality: QualityLabel | None = None
    stage: PipelineStage = PipelineStage.ASSEMBLED
    provenance: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_views(
        cls,
        views,
        source: DataSource,
        prompt: str = "",
        provenance: Mapping[str, Any] | None = None,
        stage: PipelineStage = PipelineStage.ASSEMBLED,
    ) -> "MultiViewRecord":
        """Build a record from 4 uint8 views; grid and id are derived."""
        views = tuple(np.asarray(v) for v in views)
        for i, v in enumerate(views):
            if v.dtype != np.uint8:
                raise ShapeError(f"view {i}: records hold 8-bit RGB views, got dtype {v.dtype}")
        grid = assemble_grid(views)
        frozen = tuple(_freeze(v) for v in views)
        return cls(
            record_id=record_digest(frozen),
            source=source,
            views=frozen,  # type: ignore[arg-type]
            grid=_freeze(grid),
            prompt=prompt,
            stage=stage,
            provenance=dict(provenance or {}),
        )

    def verify_id(self) -> bool:
        return self.record_id == record_digest(self.views)

    def with_source(self, source: DataSource) -> "MultiViewRecord":
        return replace(self, source=source)

    def with_quality(self, quality: QualityLabel | None) -> "MultiViewRecord":
        return replace(self, quality=quality)

    def with_caption(self, mode: str, text: str) -> "MultiViewRecord":
        if mode == "short":
            return replace(self, caption_short=text)
        if mode == "long":
            return replace(self, caption_long=text)
        raise ParameterError(f"caption mode must be 'short' or 'long', got {mode!r}")

    def with_views(self, views) -> "MultiViewRecord":
        """Replace pixel content; recomputes grid and record_id."""
        fresh = MultiViewRecord.from_views(
            views, self.source, self.prompt, dict(self.provenance), self.stage
        )
        return replace(
            fresh,
            caption_short=self.caption_short,
            caption_long=self.caption_long,
            quality=self.quality,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MultiViewRecord):
            return NotImplemented
        return (
            self.record_id == other.record_id
            and self.source is other.source
            and self.prompt == other.prompt
            and self.caption_short == other.caption_short
            and self.caption_long == other.caption_long
            and self.quality == other.quality
            and self.stage is other.stage
            and dict(self.provenance) == dict(other.provenance)
            and all(np.array_equal(a, b) for a, b in zip(self.views, other.views))
            and np.array_equal(self.grid, other.grid)
        )

    def __hash__(self) -> int:
        return hash(self.record_id)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr
