"""Per-source timestep sampling policy.

Each data source is restricted to a closed timestep range [t_min, t_max];
blurred/synthetic sources train only at large t (low-frequency structure)
while clean sources cover the full range and may carry a boost interval
that is sampled with extra probability. Draws are a two-component mixture:

    with probability boost_prob:  t ~ Uniform{boost_lo .. boost_hi}
    otherwise:                    t ~ Uniform{t_min .. t_max}

so every draw stays inside [t_min, t_max] (boost ranges must nest).
"""

from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

import numpy as np

from . import configdoc
from .errors import PolicyError
from .schedules import NoiseSchedule
from .sources import ALL_SOURCES, DataSource

DEFAULT_SYNTHETIC_T_MIN = 200
DEFAULT_SINGLE_VIEW_T_MAX = 50
DEFAULT_BOOST_RANGE = (50, 200)
DEFAULT_BOOST_PROB = 0.3


@dataclass(frozen=True)
class PolicyEntry:
    """Sampling rule for one data source."""

    t_min: int
    t_max: int
    boost_range: tuple[int, int] | None = None
    boost_prob: float = 0.0


@dataclass(frozen=True)
class TimestepPolicy:
    """Immutable map from DataSource to its sampling rule."""

    entries: Mapping[DataSource, PolicyEntry]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", MappingProxyType(dict(self.entries)))

    def entry(self, source: DataSource) -> PolicyEntry:
        try:
            return self.entries[source]
        except KeyError:
            raise PolicyError(f"policy has no entry for source {source.tag!r}") from None

    def __contains__(self, source: DataSource) -> bool:
        return source in self.entries


def default_policy(
    n_steps: int = 1000,
    synthetic_t_min: int = DEFAULT_SYNTHETIC_T_MIN,
    boost_prob: float = DEFAULT_BOOST_PROB,
) -> TimestepPolicy:
    """The default four-source policy.

    Clean rendered assets cover the full range with a boosted [50, 200]
    interval; both synthetic NVS sources are clamped to [synthetic_t_min,
    n_steps]; single-view stills train only on [0, 50].
    """
    return TimestepPolicy(
        {
            DataSource.RENDERED_ASSET: PolicyEntry(
                t_min=0,
                t_max=n_steps,
                boost_range=DEFAULT_BOOST_RANGE,
                boost_prob=boost_prob,
            ),
            DataSource.SYNTHETIC_NVS_A: PolicyEntry(t_min=synthetic_t_min, t_max=n_steps),
            DataSource.SYNTHETIC_NVS_B: PolicyEntry(t_min=synthetic_t_min, t_max=n_steps),
            DataSource.SINGLE_VIEW_2D: PolicyEntry(t_min=0, t_max=DEFAULT_SINGLE_VIEW_T_MAX),
        }
    )


def sample_timestep(policy: TimestepPolicy, source: DataSource, rng: np.random.Generator) -> int:
    """Draw one training timestep for ``source``; always in [t_min, t_max]."""
    entry = policy.entry(source)
    if entry.boost_range is not None and entry.boost_prob > 0.0 and rng.random() < entry.boost_prob:
        lo, hi = entry.boost_range
        return int(rng.integers(lo, hi + 1))
    return int(rng.integers(entry.t_min, entry.t_max + 1))


def sample_timesteps(
    policy: TimestepPolicy, source: DataSource, rng: np.random.Generator, n: int
) -> np.ndarray:
    """Vectorized :func:`sample_timestep`: ``n`` i.i.d. draws as an int array."""
    entry = policy.entry(source)
    base = rng.integers(entry.t_min, entry.t_max + 1, size=n)
    if entry.boost_range is not None and entry.boost_prob > 0.0:
        lo, hi = entry.boost_range
        boosted = rng.integers(lo, hi + 1, size=n)
        take = rng.random(n) < entry.boost_prob
        base = np.where(take, boosted, base)
    return base


@dataclass(frozen=True)
class PolicyValidation:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_policy(policy: TimestepPolicy, schedule: NoiseSchedule) -> PolicyValidation:
    """Check every entry against the schedule; violations are reported, not thrown."""
    problems: list[str] = []
    n = schedule.n_steps
    for source, entry in policy.entries.items():
        name = source.tag
        if entry.t_min == entry.t_max:
            problems.append(f"{name}: empty range [t_min={entry.t_min}, t_max={entry.t_max}]")
        elif not (0 <= entry.t_min < entry.t_max <= n):
            problems.append(
                f"{name}: range [{entry.t_min}, {entry.t_max}] violates 0 <= t_min < t_max <= {n}"
            )
        if not 0.0 <= entry.boost_prob <= 1.0:
            problems.append(f"{name}: boost_prob {entry.boost_prob} outside [0, 1]")
        if entry.boost_range is not None:
            lo, hi = entry.boost_range
            if lo > hi:
                problems.append(f"{name}: boost_range [{lo}, {hi}] is inverted")
            elif not (entry.t_min <= lo and hi <= entry.t_max):
                problems.append(
                    f"{name}: boost_range [{lo}, {hi}] outside [{entry.t_min}, {entry.t_max}]"
                )
    return PolicyValidation(tuple(problems))


def policy_to_config(policy: TimestepPolicy) -> dict[str, str]:
    """Serialize to the flat ``policy.<source>.<field>`` key set."""
    doc: dict[str, str] = {}
    for source in ALL_SOURCES:
        if source not in policy:
            continue
        entry = policy.entries[source]
        prefix = f"policy.{source.tag}"
        doc[f"{prefix}.t_min"] = str(entry.t_min)
        doc[f"{prefix}.t_max"] = str(entry.t_max)
        if entry.boost_range is not None:
            doc[f"{prefix}.boost_lo"] = str(entry.boost_range[0])
            doc[f"{prefix}.boost_hi"] = str(entry.boost_range[1])
            doc[f"{prefix}.boost_prob"] = configdoc.format_float(entry.boost_prob)
    return doc


def policy_from_config(doc: dict[str, str]) -> TimestepPolicy:
    """Parse ``policy.<source>.*`` keys; sources absent from the doc are absent."""
    entries: dict[DataSource, PolicyEntry] = {}
    for source in ALL_SOURCES:
        prefix = f"policy.{source.tag}"
        if f"{prefix}.t_min" not in doc and f"{prefix}.t_max" not in doc:
            continue
        t_min = configdoc.get_int(doc, f"{prefix}.t_min")
        t_max = configdoc.get_int(doc, f"{prefix}.t_max")
        boost_range = None
        boost_prob = 0.0
        if f"{prefix}.boost_lo" in doc or f"{prefix}.boost_hi" in doc:
            boost_range = (
                configdoc.get_int(doc, f"{prefix}.boost_lo"),
                configdoc.get_int(doc, f"{prefix}.boost_hi"),
            )
            boost_prob = configdoc.get_float(doc, f"{prefix}.boost_prob", 0.0)
        entries[source] = PolicyEntry(t_min, t_max, boost_range, boost_prob)
    return TimestepPolicy(entries)
