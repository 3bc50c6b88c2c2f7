"""Quality scoring, filtering, caption budgets, and dataset statistics.

Scoring comes in two interchangeable flavors that both produce the six-level
ordinal QualityLabel: a built-in heuristic (blur + cross-view consistency,
binned at fixed thresholds) and a remote scorer whose free-text answer is
parsed for one of the six labels. The heuristic is a stated proxy, not a
replica of learned quality judgment; its thresholds are fixed constants and
the confusion-matrix helper reports how any scorer lands on labeled data.

Caption budgets are counted in whitespace tokens deliberately — subword
counts would bind the artifact to one tokenizer family without changing the
behavior under test.
"""

from __future__ import annotations

import bisect
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import CaptionError, ParameterError, ScoringError
from .images import to_float
from .quality import QualityLabel, parse_label_text
from .records import MultiViewRecord
from .sources import ALL_SOURCES, DataSource
from .viewstats import consistency_report, sharpness_metric

log = logging.getLogger("b3d.curation")

# Laplacian-variance of a reference sharp render; sharp procedural views at
# 16-24 px measure >= 0.012 (10th percentile ~0.024), sigma>=1.5 blur <= 0.004,
# so 0.01 saturates every sharp view and leaves blurred ones far below.
DEFAULT_BLUR_REFERENCE = 0.01

# Lower edges of label bands 1..5 for the blended heuristic score; reaching a
# threshold enters its band.
QUALITY_THRESHOLDS = (0.3, 0.45, 0.6, 0.75, 0.9)

DEFAULT_WEIGHTS = {"blur": 0.5, "consistency": 0.5}

CAPTION_BUDGETS = {"short": 77, "long": 120}

_SENTENCE_RE = re.compile(r"[^.!?]*[.!?]+(?:\s+|$)|[^.!?]+$")


# ------------------------------------------------------------ component scores


def blur_score(view, reference: float = DEFAULT_BLUR_REFERENCE) -> float:
    """Sharpness in [0,1]: Laplacian variance normalized by `reference`, clipped."""
    if reference <= 0:
        raise ParameterError(f"blur reference must be positive, got {reference}")
    variance = sharpness_metric([view])
    return float(np.clip(variance / reference, 0.0, 1.0))


def view_consistency_score(views) -> float:
    """1 - mean pairwise hue-histogram distance; all-background views score 0."""
    report = consistency_report(views)
    if report.empty_views:
        log.warning(
            "views %s have no foreground; consistency pinned to 0",
            list(report.empty_views),
        )
        return 0.0
    return float(1.0 - min(report.value, 1.0))


def _check_weights(weights: Mapping[str, float]) -> dict[str, float]:
    if set(weights) != {"blur", "consistency"}:
        raise ParameterError(
            f"weights must have exactly the keys 'blur' and 'consistency', got {sorted(weights)}"
        )
    if any(w < 0 for w in weights.values()):
        raise ParameterError("weights must be non-negative")
    total = sum(weights.values())
    if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-9):
        raise ParameterError(f"weights must sum to 1, got {total}")
    return dict(weights)


def composite_quality(
    record: MultiViewRecord,
    weights: Mapping[str, float] | None = None,
    blur_reference: float = DEFAULT_BLUR_REFERENCE,
) -> QualityLabel:
    """Heuristic label: weighted blend of blur and consistency, binned 0-5."""
    weights = _check_weights(DEFAULT_WEIGHTS if weights is None else weights)
    blur = float(np.mean([blur_score(v, blur_reference) for v in record.views]))
    consistency = view_consistency_score(record.views)
    blended = weights["blur"] * blur + weights["consistency"] * consistency
    score = bisect.bisect_right(QUALITY_THRESHOLDS, blended)
    return QualityLabel(
        score,
        rationale=f"heuristic: blur {blur:.3f}, consistency {consistency:.3f}, blended {blended:.3f}",
    )


def remote_quality(client, record: MultiViewRecord) -> QualityLabel:
    """Ask a remote scorer for the record's grid; parse the six-label answer.

    Rendered-asset records use the asset prompt template, everything else the
    synthetic one. An answer without a recognizable label raises ScoringError
    and the record stays unscored.
    """
    family = "asset" if record.source is DataSource.RENDERED_ASSET else "synthetic"
    text = client.score(record.grid, family=family)
    score = parse_label_text(text)  # ScoringError if no label present
    return QualityLabel(score, rationale=str(text).strip())


def score_records(records, scorer, max_workers: int = 4) -> list[MultiViewRecord]:
    """Apply `scorer(record) -> QualityLabel` across records, bounded fan-out."""
    if max_workers < 1:
        raise ParameterError(f"max_workers must be >= 1, got {max_workers}")
    records = list(records)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        labels = list(pool.map(scorer, records))
    return [r.with_quality(label) for r, label in zip(records, labels)]


# ------------------------------------------------------------ filtering


@dataclass(frozen=True)
class FilterRule:
    """Per-source minimum score for keeping a record."""

    min_score: Mapping[DataSource, int] = field(
        default_factory=lambda: {
            DataSource.RENDERED_ASSET: 4,
            DataSource.SYNTHETIC_NVS_A: 4,
            DataSource.SYNTHETIC_NVS_B: 5,
            DataSource.SINGLE_VIEW_2D: 4,
        }
    )

    def __post_init__(self) -> None:
        missing = [s.tag for s in ALL_SOURCES if s not in self.min_score]
        if missing:
            raise ParameterError(f"filter rule must cover every source; missing {missing}")
        for source, score in self.min_score.items():
            if not isinstance(source, DataSource):
                raise ParameterError(f"filter rule keys must be DataSource, got {source!r}")
            if not 0 <= int(score) <= 5:
                raise ParameterError(
                    f"threshold for {source.tag} must be in [0, 5], got {score}"
                )
        object.__setattr__(self, "min_score", dict(self.min_score))

    def threshold(self, source: DataSource) -> int:
        return int(self.min_score[source])


def filter_records(records, rule: FilterRule | None = None):
    """Partition into (kept, rejected) by per-source score thresholds."""
    rule = rule if rule is not None else FilterRule()
    records = list(records)
    unscored = [r.record_id for r in records if r.quality is None]
    if unscored:
        raise ParameterError(
            f"{len(unscored)} record(s) unscored; score before filtering: {unscored}"
        )
    kept, rejected = [], []
    for record in records:
        target = kept if record.quality.score >= rule.threshold(record.source) else rejected
        target.append(record)
    return kept, rejected


# ------------------------------------------------------------ captions


def caption_token_count(text: str) -> int:
    return len(str(text).split())


def truncate_to_sentences(text: str, budget: int) -> tuple[str, bool]:
    """Longest prefix of whole sentences within `budget` whitespace tokens.

    Falls back to a hard token cut when even the first sentence is over
    budget. Returns (text, was_truncated).
    """
    if budget < 1:
        raise ParameterError(f"caption budget must be >= 1, got {budget}")
    text = str(text).strip()
    if caption_token_count(text) <= budget:
        return text, False
    kept: list[str] = []
    used = 0
    for sentence in _SENTENCE_RE.findall(text):
        n = caption_token_count(sentence)
        if used + n > budget:
            break
        kept.append(sentence.strip())
        used += n
    if kept:
        return " ".join(kept), True
    return " ".join(text.split()[:budget]), True


def caption_record(client, record: MultiViewRecord, mode: str) -> MultiViewRecord:
    """Fetch a caption for the record's grid and store it under `mode`'s field."""
    if mode not in CAPTION_BUDGETS:
        raise ParameterError(f"caption mode must be 'short' or 'long', got {mode!r}")
    text = client.caption(record.grid, mode=mode)
    if not str(text).strip():
        raise CaptionError(f"captioner returned an empty {mode} caption for {record.record_id[:12]}")
    budget = CAPTION_BUDGETS[mode]
    final, truncated = truncate_to_sentences(text, budget)
    if truncated:
        log.warning(
            "record %s: %s caption truncated from %d to %d tokens",
            record.record_id[:12], mode, caption_token_count(text), caption_token_count(final),
        )
    return record.with_caption(mode, final)


# ------------------------------------------------------------ statistics


def score_histogram(records) -> dict[str, list[int]]:
    """Per-source counts over scores 0-5; every known source gets a row."""
    hist = {source.tag: [0] * 6 for source in ALL_SOURCES}
    for record in records:
        if record.quality is None:
            raise ParameterError(f"record {record.record_id[:12]} is unscored")
        hist[record.source.tag][record.quality.score] += 1
    return hist


def merge_score_histograms(a: dict[str, list[int]], b: dict[str, list[int]]) -> dict[str, list[int]]:
    """Associative merge so histograms can be folded across workers."""
    out = {tag: list(row) for tag, row in a.items()}
    for tag, row in b.items():
        base = out.setdefault(tag, [0] * 6)
        for i, n in enumerate(row):
            base[i] += n
    return out


def score_histogram_table(hist: dict[str, list[int]]) -> str:
    lines = ["source\tscore0\tscore1\tscore2\tscore3\tscore4\tscore5\ttotal"]
    for tag in sorted(hist):
        row = hist[tag]
        lines.append("\t".join([tag, *map(str, row), str(sum(row))]))
    return "\n".join(lines) + "\n"


def caption_length_histogram(records, bin_width: int = 10) -> dict[str, dict[int, int]]:
    """Token-count histogram per caption field; keys are bin lower edges."""
    if bin_width < 1:
        raise ParameterError(f"bin_width must be >= 1, got {bin_width}")
    hist: dict[str, dict[int, int]] = {"short": {}, "long": {}}
    for record in records:
        for mode in ("short", "long"):
            text = record.caption_short if mode == "short" else record.caption_long
            if text is None:
                continue
            edge = (caption_token_count(text) // bin_width) * bin_width
            hist[mode][edge] = hist[mode].get(edge, 0) + 1
    return hist


def caption_length_table(hist: dict[str, dict[int, int]], bin_width: int = 10) -> str:
    lines = ["field\tbin_start\tbin_end\tcount"]
    for mode in ("short", "long"):
        for edge in sorted(hist.get(mode, {})):
            lines.append(f"{mode}\t{edge}\t{edge + bin_width - 1}\t{hist[mode][edge]}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ calibration


@dataclass(frozen=True)
class ConfusionMatrix:
    """HQ-vs-LQ agreement between a scorer and ground truth."""

    tp: int  # predicted HQ, truly HQ
    fp: int  # predicted HQ, truly LQ
    fn: int  # predicted LQ, truly HQ
    tn: int  # predicted LQ, truly LQ
    fp_rate: float
    fn_rate: float

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ParameterError("confusion counts must be non-negative")
        for stored, recomputed, name in (
            (self.fp_rate, _safe_rate(self.fp, self.fp + self.tn), "fp_rate"),
            (self.fn_rate, _safe_rate(self.fn, self.fn + self.tp), "fn_rate"),
        ):
            if abs(stored - recomputed) > 1e-12:
                raise ParameterError(f"{name} {stored} does not match counts ({recomputed})")

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "ConfusionMatrix":
        return cls(
            tp=tp, fp=fp, fn=fn, tn=tn,
            fp_rate=_safe_rate(fp, fp + tn),
            fn_rate=_safe_rate(fn, fn + tp),
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _safe_rate(num: int, denom: int) -> float:
    return float(num) / denom if denom else 0.0


def confusion_matrix(predicted_scores, ground_truth_hq, hq_threshold: int = 4) -> ConfusionMatrix:
    """Binarize predictions at `hq_threshold` and tally against binary truth."""
    predicted = list(predicted_scores)
    truth = list(ground_truth_hq)
    if len(predicted) != len(truth):
        raise ParameterError(
            f"prediction/truth length mismatch: {len(predicted)} vs {len(truth)}"
        )
    if not 0 <= hq_threshold <= 5:
        raise ParameterError(f"hq_threshold must be in [0, 5], got {hq_threshold}")
    tp = fp = fn = tn = 0
    for score, is_hq in zip(predicted, truth):
        pred_hq = int(score) >= hq_threshold
        if pred_hq and is_hq:
            tp += 1
        elif pred_hq:
            fp += 1
        elif is_hq:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix.from_counts(tp, fp, fn, tn)
