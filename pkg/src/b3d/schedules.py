"""DDPM noise schedules, the forward (noising) process, and the reverse step.

Forward process, reparameterized:

    x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps,   eps ~ N(0, I)

with abar_t = prod_{i=1..t} (1 - beta_i) and abar_0 = 1. Timesteps use the
closed convention t in {0..N}; t=0 is the identity (no noise).

Reverse step (ancestral sampling, sigma_t^2 = beta_t):

    x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)
              + sqrt(beta_t) * z,   z ~ N(0, I)

with no noise added at the terminal step t=1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, RangeError, ShapeError

SCHEDULE_KINDS = ("linear", "scaled-linear")

DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
DEFAULT_N_STEPS = 1000


@dataclass(frozen=True)
class NoiseSchedule:
    """An immutable beta schedule with precomputed cumulative products.

    ``betas[k]`` holds beta_{k+1} (length N); ``alpha_bars`` is indexed by t
    directly (length N+1, ``alpha_bars[0] == 1``). Use :meth:`beta` /
    :meth:`alpha_bar` for 1-based/0-based access by timestep.
    """

    kind: str
    n_steps: int
    beta_start: float
    beta_end: float
    betas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.betas.setflags(write=False)
        self.alpha_bars.setflags(write=False)

    def beta(self, t: int) -> float:
        """beta_t for t in 1..N."""
        if not 1 <= t <= self.n_steps:
            raise RangeError(f"t={t} outside [1, {self.n_steps}]")
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        """abar_t for t in 0..N."""
        if not 0 <= t <= self.n_steps:
            raise RangeError(f"t={t} outside [0, {self.n_steps}]")
        return float(self.alpha_bars[t])


def build_schedule(
    kind: str = "scaled-linear",
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
    n_steps: int = DEFAULT_N_STEPS,
) -> NoiseSchedule:
    """Construct a noise schedule.

    linear interpolates beta affinely between the endpoints; scaled-linear
    interpolates sqrt(beta) affinely and squares. Endpoints are pinned to
    beta_start/beta_end exactly for both kinds.
    """
    if kind not in SCHEDULE_KINDS:
        raise ParameterError(f"kind: unknown schedule kind {kind!r} (expected one of {SCHEDULE_KINDS})")
    if not isinstance(n_steps, (int, np.integer)) or n_steps < 1:
        raise ParameterError(f"n_steps: must be a positive integer, got {n_steps!r}")
    if not 0.0 < beta_start < 1.0:
        raise ParameterError(f"beta_start: must lie in (0, 1), got {beta_start!r}")
    if not 0.0 < beta_end < 1.0:
        raise ParameterError(f"beta_end: must lie in (0, 1), got {beta_end!r}")
    if not beta_start < beta_end:
        raise ParameterError(f"beta_start: must be < beta_end, got {beta_start!r} >= {beta_end!r}")

    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, n_steps, dtype=np.float64)
    else:
        betas = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), n_steps, dtype=np.float64) ** 2
        betas[0] = beta_start  # squaring a rounded sqrt can drift 1 ulp off the endpoint
        if n_steps > 1:
            betas[-1] = beta_end

    alpha_bars = np.empty(n_steps + 1, dtype=np.float64)
    alpha_bars[0] = 1.0
    np.cumprod(1.0 - betas, out=alpha_bars[1:])
    return NoiseSchedule(
        kind=kind,
        n_steps=int(n_steps),
        beta_start=float(beta_start),
        beta_end=float(beta_end),
        betas=betas,
        alpha_bars=alpha_bars,
    )


def forward_noise(x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps, elementwise."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if not 0 <= t <= schedule.n_steps:
        raise RangeError(f"t={t} outside [0, {schedule.n_steps}]")
    if x0.shape != eps.shape:
        raise ShapeError(f"eps shape {eps.shape} does not match x0 shape {x0.shape}")
    abar = schedule.alpha_bar(t)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def reverse_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """One ancestral step x_t -> x_{t-1}; deterministic (no noise) at t=1."""
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if not 1 <= t <= schedule.n_steps:
        raise RangeError(f"t={t} outside [1, {schedule.n_steps}] (nothing to denoise at t=0)")
    if x_t.shape != eps_hat.shape:
        raise ShapeError(f"eps_hat shape {eps_hat.shape} does not match x_t shape {x_t.shape}")
    beta = schedule.beta(t)
    abar_t = schedule.alpha_bar(t)
    alpha = 1.0 - beta
    mean = (x_t - beta / np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(alpha)
    if t == 1:
        return mean
    return mean + np.sqrt(beta) * rng.standard_normal(x_t.shape)


def reverse_timesteps(n_steps: int, n_reverse_steps: int) -> np.ndarray:
    """Evenly strided descending timestep subsequence from n_steps down to 1."""
    if not 1 <= n_reverse_steps <= n_steps:
        raise RangeError(f"n_reverse_steps={n_reverse_steps} outside [1, {n_steps}]")
    ts = np.unique(np.round(np.linspace(1, n_steps, n_reverse_steps)).astype(np.int64))
    return ts[::-1]


def schedule_to_config(schedule: NoiseSchedule) -> dict[str, str]:
    """Serialize to the flat config-document key set."""
    from . import configdoc

    return {
        "schedule.kind": schedule.kind,
        "schedule.beta_start": configdoc.format_float(schedule.beta_start),
        "schedule.beta_end": configdoc.format_float(schedule.beta_end),
        "schedule.n_steps": str(schedule.n_steps),
    }


def schedule_from_config(doc: dict[str, str]) -> NoiseSchedule:
    from . import configdoc

    return build_schedule(
        kind=configdoc.get_str(doc, "schedule.kind", "scaled-linear"),
        beta_start=configdoc.get_float(doc, "schedule.beta_start", DEFAULT_BETA_START),
        beta_end=configdoc.get_float(doc, "schedule.beta_end", DEFAULT_BETA_END),
        n_steps=configdoc.get_int(doc, "schedule.n_steps", DEFAULT_N_STEPS),
    )
