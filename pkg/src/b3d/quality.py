"""The six-level ordinal quality scale.

Scores 0–5 map bijectively onto the label vocabulary below. Parsing is
deliberately forgiving about case, separators, and the historical
"boardline" spelling, because labels arrive as free text from remote
scorers; the canonical rendering is fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ParameterError, ScoringError

LABELS: tuple[str, ...] = (
    "poor",
    "relatively poor",
    "borderline",
    "relatively good",
    "good",
    "perfect",
)

_ALIASES = {"boardline": "borderline"}


def label_of(score: int) -> str:
    if not 0 <= int(score) <= 5:
        raise ParameterError(f"quality score must be in [0, 5], got {score}")
    return LABELS[int(score)]


def score_of(label: str) -> int:
    """Canonical score for a label string; accepts aliases, any case, -/_ separators."""
    norm = " ".join(str(label).strip().lower().replace("-", " ").replace("_", " ").split())
    norm = _ALIASES.get(norm, norm)
    try:
        return LABELS.index(norm)
    except ValueError:
        raise ScoringError(f"unrecognized quality label {label!r}") from None


def parse_label_text(text: str) -> int:
    """Find a quality label inside free-form scorer output.

    Longest labels are matched first so "relatively good" is never
    truncated to "good". Raises ScoringError when no label is present.
    """
    norm = " ".join(str(text).strip().lower().replace("-", " ").replace("_", " ").split())
    candidates = sorted(list(LABELS) + list(_ALIASES), key=len, reverse=True)
    for candidate in candidates:
        if candidate in norm:
            return score_of(candidate)
    raise ScoringError(f"no quality label found in response {text!r}")


@dataclass(frozen=True)
class QualityLabel:
    """An ordinal score with its canonical label and optional rationale."""

    score: int
    rationale: str = ""

    def __post_init__(self) -> None:
        if not 0 <= int(self.score) <= 5:
            raise ParameterError(f"quality score must be in [0, 5], got {self.score}")
        object.__setattr__(self, "score", int(self.score))

    @property
    def label(self) -> str:
        return label_of(self.score)

    @classmethod
    def from_label(cls, label: str, rationale: str = "") -> "QualityLabel":
        return cls(score=score_of(label), rationale=rationale)
