"""The closed set of training-data source tags."""

from __future__ import annotations

import enum

from .errors import ParameterError


class DataSource(enum.Enum):
    """Where a multi-view record came from.

    The tag set is closed: manifests carrying an unknown tag are rejected
    at load time rather than coerced.
    """

    RENDERED_ASSET = "RenderedAsset"
    SYNTHETIC_NVS_A = "SyntheticNVS-A"
    SYNTHETIC_NVS_B = "SyntheticNVS-B"
    SINGLE_VIEW_2D = "SingleView2D"

    @property
    def tag(self) -> str:
        return self.value

    @classmethod
    def from_tag(cls, tag: str) -> "DataSource":
        for member in cls:
            if member.value == tag:
                return member
        known = ", ".join(m.value for m in cls)
        raise ParameterError(f"unknown data source tag {tag!r} (known: {known})")


ALL_SOURCES: tuple[DataSource, ...] = tuple(DataSource)
