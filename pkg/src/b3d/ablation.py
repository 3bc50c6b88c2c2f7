"""Sweep over the synthetic-source timestep floor.

Clamping blurred/synthetic sources to large timesteps trades off two things:
sample sharpness (a low floor lets blurry data teach the model fine detail —
blurry detail) against conditioning fidelity (a high floor means synthetic
data only ever teaches coarse structure). The sweep trains one model per
(floor, seed) cell, generates grids from each, and scores sharpness,
cross-view consistency, and condition recovery, emitting a flat table plus
seed-averaged plot data.

A floor equal to the schedule length leaves the synthetic sources with an
empty training range; those sources are excluded from the run (and from the
source mixture, renormalized) rather than trained on a vacuous interval.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .denoiser import condition_of_record, condition_scene, n_conditions
from .errors import ConfigError, ParameterError, ShapeError
from .grids import assemble_grid, split_grid
from .policy import PolicyEntry, TimestepPolicy, default_policy
from .records import MultiViewRecord
from .render import degrade_views, render_toy_dataset, render_views, scene_to_provenance
from .seeds import spawn_rng
from .sources import DataSource
from .trainer import TrainConfig, TrainResult, generate_batch, train
from .viewstats import consistency_metric, sharpness_metric

log = logging.getLogger(__name__)

SYNTHETIC_SOURCES = (DataSource.SYNTHETIC_NVS_A, DataSource.SYNTHETIC_NVS_B)

SWEEP_COLUMNS = ("T", "seed", "sharpness", "consistency", "cond_accuracy", "final_loss")

DEFAULT_SEEDS = (0, 1, 2)


def policy_for_floor(
    t_floor: int, n_steps: int, base: TimestepPolicy | None = None
) -> tuple[TimestepPolicy, tuple[DataSource, ...]]:
    """Re-clamp the synthetic sources of ``base`` to [t_floor, n_steps].

    Returns the adjusted policy and the sources whose range became empty
    (floor == schedule length); those entries are dropped from the policy.
    """
    if not 0 <= t_floor <= n_steps:
        raise ParameterError(f"timestep floor must lie in [0, {n_steps}], got {t_floor}")
    base = base if base is not None else default_policy(n_steps)
    entries = dict(base.entries)
    excluded = []
    for src in SYNTHETIC_SOURCES:
        if src not in entries:
            continue
        if t_floor == n_steps:
            del entries[src]
            excluded.append(src)
        else:
            entries[src] = PolicyEntry(t_min=t_floor, t_max=n_steps)
    if excluded:
        log.info(
            "floor %d empties the synthetic timestep range; excluding %s from training",
            t_floor,
            ", ".join(s.tag for s in excluded),
        )
    return TimestepPolicy(entries), tuple(excluded)


def _mix_without(source_mix, excluded) -> dict:
    mix = {src: p for src, p in dict(source_mix).items() if src not in excluded}
    total = sum(mix.values())
    if total <= 0:
        raise ConfigError(
            "excluding the empty-range sources leaves no training data "
            f"(mixture was entirely {', '.join(s.tag for s in excluded)})"
        )
    return {src: p / total for src, p in mix.items()}


def blurred_mixture_dataset(
    n_scenes: int, view_size: int = 16, blur_sigma: float = 1.5, seed: int = 0
):
    """The sweep's canonical input: clean renders plus a blurred twin set.

    The clean records train as rendered assets; the same scenes, with 3 of 4
    views Gaussian-blurred, stand in for synthetic novel-view data whose
    artifacts the timestep floor is meant to fence off.
    """
    clean = render_toy_dataset(n_scenes, view_size=view_size, rng=spawn_rng(seed, "mixture"))
    blurred = [
        degrade_views(
            record, blur_sigma=blur_sigma, n_blurred=3, rng=spawn_rng(seed, "mixture-blur", i)
        )
        for i, record in enumerate(clean)
    ]
    return {
        DataSource.RENDERED_ASSET: clean,
        DataSource.SYNTHETIC_NVS_A: blurred,
    }


def disjoint_condition_dataset(
    n_hue_bins: int = 2, view_size: int = 8, blur_sigma: float = 1.5, seed: int = 0
):
    """A mixture whose sources cover disjoint condition sets.

    Even condition indices get clean rendered-asset records; odd indices get
    fully-blurred synthetic records of scenes the clean source never shows —
    mirroring why synthetic data exists at all (coverage the clean set
    lacks). Each condition has exactly one deterministic target, so sweep
    differences trace to the timestep floor rather than to intra-condition
    ambiguity: at a low floor the blurred conditions memorize their blur,
    while a high floor confines them to coarse structure and leaves fine
    detail to what the clean conditions taught.
    """
    clean, blurred = [], []
    for cond in range(n_conditions(n_hue_bins)):
        scene = condition_scene(cond, n_hue_bins)
        record = MultiViewRecord.from_views(
            render_views(scene, view_size),
            source=DataSource.RENDERED_ASSET,
            provenance={"tick": cond, **scene_to_provenance(scene)},
        )
        if cond % 2 == 0:
            clean.append(record)
        else:
            blurred.append(
                degrade_views(
                    record,
                    blur_sigma=blur_sigma,
                    n_blurred=4,
                    rng=spawn_rng(seed, "disjoint-blur", cond),
                )
            )
    return {
        DataSource.RENDERED_ASSET: clean,
        DataSource.SYNTHETIC_NVS_A: blurred,
    }


# ------------------------------------------------------- condition recovery


def condition_centroids(n_hue_bins: int, view_size: int) -> np.ndarray:
    """Reference grid per condition index, float [0, 1]; the classifier basis."""
    grids = []
    for cond in range(n_conditions(n_hue_bins)):
        views = render_views(condition_scene(cond, n_hue_bins), view_size)
        grids.append(np.asarray(assemble_grid(views), dtype=np.float64) / 255.0)
    return np.stack(grids)


def classify_condition(grid: np.ndarray, centroids: np.ndarray) -> int:
    """Nearest-centroid condition index by mean squared pixel error."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.shape != centroids.shape[1:]:
        raise ShapeError(
            f"grid shape {grid.shape} does not match centroid shape {centroids.shape[1:]}"
        )
    errors = np.mean((centroids - grid[None]) ** 2, axis=(1, 2, 3))
    return int(np.argmin(errors))  # ties resolve to the lowest index


def condition_recovery_accuracy(samples, conds, centroids: np.ndarray) -> float:
    """Fraction of generated grids whose nearest centroid is their condition."""
    samples = np.asarray(samples, dtype=np.float64)
    conds = np.asarray(conds, dtype=np.int64)
    if samples.ndim != 4 or samples.shape[0] != conds.shape[0]:
        raise ShapeError(
            f"need one condition per sample, got {samples.shape} samples and {conds.shape} conds"
        )
    hits = [classify_condition(g, centroids) == int(c) for g, c in zip(samples, conds)]
    return float(np.mean(hits))


# ------------------------------------------------------------------- rows


@dataclass(frozen=True)
class SweepRow:
    t_floor: int
    seed: int
    sharpness: float
    consistency: float
    cond_accuracy: float
    final_loss: float

    def cells(self) -> tuple:
        return (
            self.t_floor,
            self.seed,
            self.sharpness,
            self.consistency,
            self.cond_accuracy,
            self.final_loss,
        )


@dataclass(frozen=True)
class SweepReport:
    rows: tuple[SweepRow, ...]

    def render(self) -> str:
        lines = ["\t".join(SWEEP_COLUMNS)]
        for row in self.rows:
            t, seed, *metrics = row.cells()
            lines.append("\t".join([str(t), str(seed)] + [f"{m:.6f}" for m in metrics]))
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "SweepReport":
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines or tuple(lines[0].split("\t")) != SWEEP_COLUMNS:
            raise ParameterError(
                f"sweep report must start with the header {'/'.join(SWEEP_COLUMNS)}"
            )
        rows = []
        for line in lines[1:]:
            cells = line.split("\t")
            if len(cells) != len(SWEEP_COLUMNS):
                raise ParameterError(f"sweep row has {len(cells)} cells, expected {len(SWEEP_COLUMNS)}")
            rows.append(
                SweepRow(
                    t_floor=int(cells[0]),
                    seed=int(cells[1]),
                    sharpness=float(cells[2]),
                    consistency=float(cells[3]),
                    cond_accuracy=float(cells[4]),
                    final_loss=float(cells[5]),
                )
            )
        return cls(rows=tuple(rows))

    def averaged_by_floor(self) -> dict[int, dict[str, float]]:
        """Seed-averaged metrics per floor — the plot-data view of the sweep."""
        grouped: dict[int, list[SweepRow]] = {}
        for row in self.rows:
            grouped.setdefault(row.t_floor, []).append(row)
        out = {}
        for t in sorted(grouped):
            rows = grouped[t]
            out[t] = {
                "sharpness": float(np.mean([r.sharpness for r in rows])),
                "consistency": float(np.mean([r.consistency for r in rows])),
                "cond_accuracy": float(np.mean([r.cond_accuracy for r in rows])),
                "final_loss": float(np.mean([r.final_loss for r in rows])),
                "n_seeds": float(len(rows)),
            }
        return out

    def render_plot_data(self) -> str:
        lines = ["T\tsharpness\tconsistency\tcond_accuracy\tfinal_loss"]
        for t, stats in self.averaged_by_floor().items():
            lines.append(
                "\t".join(
                    [str(t)]
                    + [
                        f"{stats[k]:.6f}"
                        for k in ("sharpness", "consistency", "cond_accuracy", "final_loss")
                    ]
                )
            )
        return "\n".join(lines) + "\n"


# ------------------------------------------------------------------- sweep


def _eval_conditions(dataset, active_sources, n_hue_bins: int) -> list[int]:
    conds = set()
    for src in active_sources:
        for record in dataset.get(src, []):
            conds.add(condition_of_record(record, n_hue_bins))
    return sorted(conds)


def evaluate_checkpoint(
    checkpoint,
    conds,
    centroids: np.ndarray,
    n_reverse_steps: int,
    rng: np.random.Generator,
) -> tuple[float, float, float]:
    """(sharpness, consistency, condition recovery) of generated grids."""
    conds = np.asarray(list(conds), dtype=np.int64)
    samples = generate_batch(checkpoint, conds, n_reverse_steps, rng)
    all_views = []
    consistencies = []
    for grid in samples:
        views = split_grid(grid)
        all_views.extend(views)
        consistencies.append(consistency_metric(views))
    return (
        float(sharpness_metric(all_views)),
        float(np.mean(consistencies)),
        condition_recovery_accuracy(samples, conds, centroids),
    )


def ablation_sweep(
    t_values,
    base_config: TrainConfig,
    dataset,
    seeds=DEFAULT_SEEDS,
    eval_samples_per_run: int = 8,
    n_reverse_steps: int = 40,
) -> SweepReport:
    """Train and evaluate one model per (timestep floor, seed) cell.

    ``dataset`` maps DataSource to record lists (as for ``train``); the
    evaluation conditions are the ones present in the dataset, repeated to
    fill ``eval_samples_per_run`` draws per run.
    """
    t_values = [int(t) for t in t_values]
    if not t_values:
        raise ParameterError("need at least one timestep floor to sweep")
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ParameterError("need at least one seed")
    if eval_samples_per_run < 1:
        raise ParameterError(f"eval_samples_per_run must be >= 1, got {eval_samples_per_run}")
    for t in t_values:
        if not 0 <= t <= base_config.n_steps:
            raise ParameterError(
                f"timestep floor must lie in [0, {base_config.n_steps}], got {t}"
            )

    centroids = condition_centroids(base_config.n_hue_bins, base_config.view_size)
    rows = []
    for t_floor in t_values:
        policy, excluded = policy_for_floor(
            t_floor, base_config.n_steps, base_config.policy
        )
        mix = _mix_without(base_config.source_mix, excluded)
        active = sorted(mix, key=lambda s: s.tag)
        conds = _eval_conditions(dataset, active, base_config.n_hue_bins)
        if not conds:
            raise ConfigError("dataset has no records for any active source")
        eval_conds = [conds[i % len(conds)] for i in range(eval_samples_per_run)]
        for seed in seeds:
            config = replace(base_config, seed=seed, policy=policy, source_mix=mix)
            result: TrainResult = train(config, dataset)
            sharpness, consistency, accuracy = evaluate_checkpoint(
                result,
                eval_conds,
                centroids,
                n_reverse_steps,
                spawn_rng(seed, "sweep-eval", t_floor),
            )
            rows.append(
                SweepRow(
                    t_floor=t_floor,
                    seed=seed,
                    sharpness=sharpness,
                    consistency=consistency,
                    cond_accuracy=accuracy,
                    final_loss=result.final_loss,
                )
            )
            log.info(
                "sweep cell floor=%d seed=%d: sharpness=%.5f consistency=%.4f accuracy=%.3f",
                t_floor,
                seed,
                sharpness,
                consistency,
                accuracy,
            )
    return SweepReport(rows=tuple(rows))
