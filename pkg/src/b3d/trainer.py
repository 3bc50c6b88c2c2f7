"""Policy-driven training loop for the toy denoiser, plus ancestral sampling.

The trainer mixes records from several sources according to configured
proportions, draws each sample's timestep from the per-source policy
(re-drawing the no-noise t=0), and runs plain SGD with momentum on the
hand-rolled gradients. Every (source, timestep) draw is logged so policy
obedience can be asserted over a whole run, and everything is seeded through
one root seed, so identical configs produce bitwise-identical results.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np

from .checkpoints import load_checkpoint
from .denoiser import (
    DenoiserParams,
    condition_of_record,
    denoiser_forward,
    init_params,
    loss_and_gradients,
    zeros_like_params,
)
from .errors import ConfigError, ParameterError
from .policy import TimestepPolicy, default_policy, sample_timestep, validate_policy
from .records import MultiViewRecord
from .schedules import NoiseSchedule, build_schedule, reverse_step, reverse_timesteps
from .seeds import spawn_rng
from .sources import ALL_SOURCES, DataSource

DEFAULT_MIX = MappingProxyType(
    {DataSource.RENDERED_ASSET: 0.5, DataSource.SYNTHETIC_NVS_A: 0.5}
)


@dataclass(frozen=True)
class TrainConfig:
    view_size: int = 16
    batch_size: int = 32
    learning_rate: float = 0.05
    total_steps: int = 1000
    seed: int = 0
    policy: TimestepPolicy | None = None  # None: default policy for n_steps
    source_mix: Mapping[DataSource, float] = field(default_factory=lambda: dict(DEFAULT_MIX))
    schedule_kind: str = "scaled-linear"
    n_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    hidden: tuple[int, ...] = (64,)
    temb_dim: int = 16
    cond_dim: int = 8
    n_hue_bins: int = 6
    momentum: float = 0.9

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.total_steps < 0:
            raise ConfigError(f"total_steps must be >= 0, got {self.total_steps}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        mix = dict(self.source_mix)
        for src, p in mix.items():
            if not isinstance(src, DataSource):
                raise ConfigError(f"source_mix keys must be DataSource members, got {src!r}")
            if p < 0:
                raise ConfigError(f"source_mix[{src.tag}] must be >= 0, got {p}")
        total = sum(mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"source_mix proportions must sum to 1 +- 1e-9, got {total!r}")
        object.__setattr__(self, "source_mix", MappingProxyType(mix))
        object.__setattr__(self, "hidden", tuple(self.hidden))

    def build_schedule(self) -> NoiseSchedule:
        return build_schedule(
            kind=self.schedule_kind,
            beta_start=self.beta_start,
            beta_end=self.beta_end,
            n_steps=self.n_steps,
        )

    def active_policy(self) -> TimestepPolicy:
        return self.policy if self.policy is not None else default_policy(self.n_steps)


@dataclass
class TrainResult:
    params: DenoiserParams
    schedule: NoiseSchedule
    config: TrainConfig
    loss_curve: np.ndarray  # per optimization step
    per_source_losses: dict[DataSource, list[tuple[int, float]]]
    timestep_log: tuple[tuple[DataSource, int], ...]  # every single draw

    @property
    def final_loss(self) -> float:
        if self.loss_curve.size == 0:
            return float("nan")
        tail = self.loss_curve[-min(50, self.loss_curve.size) :]
        return float(np.mean(tail))


def _validate_dataset(config: TrainConfig, dataset: Mapping[DataSource, list[MultiViewRecord]]):
    active = [(src, config.source_mix[src]) for src in ALL_SOURCES if config.source_mix.get(src, 0.0) > 0]
    if not active:
        raise ConfigError("source_mix assigns zero weight to every source")
    for src, _ in active:
        records = dataset.get(src)
        if not records:
            raise ConfigError(f"source_mix includes {src.tag} but the dataset has no records for it")
        for rec in records:
            shape = rec.views[0].shape
            if shape != (config.view_size, config.view_size, 3):
                raise ConfigError(
                    f"record {rec.record_id[:12]} ({src.tag}) has view shape {shape}, "
                    f"config expects {(config.view_size, config.view_size, 3)}"
                )
    return active


def _draw_positive(policy: TimestepPolicy, source: DataSource, rng: np.random.Generator) -> int:
    # t=0 adds no noise and has no epsilon target; re-draw (only the
    # single-view and full-range entries can even produce it).
    while True:
        t = sample_timestep(policy, source, rng)
        if t > 0:
            return t


def train(config: TrainConfig, dataset: Mapping[DataSource, list[MultiViewRecord]]) -> TrainResult:
    """SGD training over a source-partitioned dataset. Deterministic per seed."""
    schedule = config.build_schedule()
    policy = config.active_policy()
    report = validate_policy(policy, schedule)
    if not report.ok:
        raise ConfigError("policy is invalid for this schedule: " + "; ".join(report.violations))
    active = _validate_dataset(config, dataset)

    sources = [src for src, _ in active]
    probs = np.array([p for _, p in active], dtype=np.float64)
    probs = probs / probs.sum()

    # Pixels are trained in [-1, 1]: centered data keeps the input second
    # moment near isotropic, which plain SGD needs; sampling maps back.
    grids: dict[DataSource, np.ndarray] = {}
    conds: dict[DataSource, np.ndarray] = {}
    for src in sources:
        records = dataset[src]
        grids[src] = np.stack(
            [np.asarray(r.grid, dtype=np.float64) / 255.0 * 2.0 - 1.0 for r in records]
        )
        conds[src] = np.array([condition_of_record(r, config.n_hue_bins) for r in records])

    params = init_params(
        grid_hw=2 * config.view_size,
        hidden=config.hidden,
        temb_dim=config.temb_dim,
        cond_dim=config.cond_dim,
        n_hue_bins=config.n_hue_bins,
        rng=spawn_rng(config.seed, "init"),
    )
    velocity = zeros_like_params(params)
    rng = spawn_rng(config.seed, "train")

    sqrt_ab = np.sqrt(schedule.alpha_bars)
    sqrt_1m_ab = np.sqrt(1.0 - schedule.alpha_bars)

    loss_curve = np.zeros(config.total_steps)
    per_source: dict[DataSource, list[tuple[int, float]]] = {src: [] for src in sources}
    timestep_log: list[tuple[DataSource, int]] = []

    for step in range(config.total_steps):
        src_idx = rng.choice(len(sources), size=config.batch_size, p=probs)
        batch_sources = [sources[i] for i in src_idx]
        x0 = np.empty((config.batch_size, params.grid_hw, params.grid_hw, 3))
        cond = np.empty(config.batch_size, dtype=np.int64)
        t = np.empty(config.batch_size, dtype=np.int64)
        for i, src in enumerate(batch_sources):
            row = int(rng.integers(grids[src].shape[0]))
            x0[i] = grids[src][row]
            cond[i] = conds[src][row]
            t[i] = _draw_positive(policy, src, rng)
            timestep_log.append((src, int(t[i])))
        eps = rng.standard_normal(x0.shape)
        x_t = sqrt_ab[t, None, None, None] * x0 + sqrt_1m_ab[t, None, None, None] * eps

        loss, grads, per_sample = loss_and_gradients(params, x_t, t, cond, eps, return_per_sample=True)
        loss_curve[step] = loss
        for src in set(batch_sources):
            mask = np.array([s is src for s in batch_sources])
            per_source[src].append((step, float(per_sample[mask].mean())))

        for p_arr, g_arr, v_arr in zip(params.arrays(), grads.arrays(), velocity.arrays()):
            v_arr *= config.momentum
            v_arr -= config.learning_rate * g_arr
            p_arr += v_arr

    return TrainResult(
        params=params,
        schedule=schedule,
        config=config,
        loss_curve=loss_curve,
        per_source_losses=per_source,
        timestep_log=tuple(timestep_log),
    )


# --- sampling ----------------------------------------------------------------------


def _resolve_checkpoint(checkpoint) -> tuple[DenoiserParams, NoiseSchedule]:
    """Accept a TrainResult, a (params, schedule) pair, or a checkpoint path."""
    if isinstance(checkpoint, TrainResult):
        return checkpoint.params, checkpoint.schedule
    if isinstance(checkpoint, (str, os.PathLike)):
        params, schedule, _ = load_checkpoint(checkpoint)
        return params, schedule
    try:
        params, schedule = checkpoint
    except (TypeError, ValueError):
        raise ParameterError(
            "checkpoint must be a TrainResult, a (params, schedule) pair, or a file path"
        ) from None
    if not isinstance(params, DenoiserParams) or not isinstance(schedule, NoiseSchedule):
        raise ParameterError("checkpoint pair must be (DenoiserParams, NoiseSchedule)")
    return params, schedule


def generate_batch(
    checkpoint,
    cond,
    n_reverse_steps: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Ancestral sampling from unit noise over a strided timestep subsequence.

    Returns (batch, grid_hw, grid_hw, 3) clipped to [0, 1].
    """
    params, schedule = _resolve_checkpoint(checkpoint)
    cond = np.atleast_1d(np.asarray(cond, dtype=np.int64))
    if not 1 <= n_reverse_steps <= schedule.n_steps:
        raise ParameterError(
            f"n_reverse_steps must lie in [1, {schedule.n_steps}], got {n_reverse_steps}"
        )
    x = rng.standard_normal((cond.size, params.grid_hw, params.grid_hw, 3))
    for t in reverse_timesteps(schedule.n_steps, n_reverse_steps):
        eps_hat = denoiser_forward(params, x, np.full(cond.size, t), cond)
        x = reverse_step(x, eps_hat, int(t), schedule, rng)
    # Models are trained on [-1, 1] pixels; map back before clipping.
    return np.clip((x + 1.0) / 2.0, 0.0, 1.0)


def generate(checkpoint, cond: int, n_reverse_steps: int, rng: np.random.Generator) -> np.ndarray:
    """One sampled grid for one condition index."""
    return generate_batch(checkpoint, [int(cond)], n_reverse_steps, rng)[0]
