"""Tiny epsilon-prediction denoiser with hand-rolled backpropagation.

For pixel targets the ideal noise prediction is affine in the noisy input:
a per-timestep slope on the pixels minus a (timestep, condition)-dependent
offset. The net factors the same way. A tanh trunk over the sinusoidal
timestep embedding and a learned condition embedding (one row per
(shape-class, quantized-hue) pair) produces the offset; all pixel dependence
is linear — a static skip matrix inside the output head plus a per-channel
gate, itself a small tanh net on the timestep embedding, multiplying the raw
pixels. No static linear map can carry the t-varying slope, hence the gate.

Keeping the prediction exactly linear in the pixels matters for sampling:
the reverse chain applies the same contraction at any amplitude, so an
unlucky noise draw cannot push the iterate past a saturation knee where the
learned slope vanishes and the chain expands step over step. (An earlier
variant that fed pixels through the tanh trunk diverged exactly that way,
intermittently, hundreds of steps into ancestral sampling.)

Hidden activations are tanh — smooth everywhere, so central finite
differences verify the analytic gradients tightly — and both output paths
(dense head and gate) are zero-initialized, so an untrained model predicts
zero noise exactly. Everything is plain numpy; gradients are derived and
applied by hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError
from .render import SHAPE_CLASSES, ToyScene
from .schedules import NoiseSchedule, forward_noise
from .policy import TimestepPolicy, sample_timestep

DEFAULT_HUE_BINS = 6
DEFAULT_TEMB_DIM = 16
DEFAULT_COND_DIM = 8


# --- conditioning: discrete (shape_class, quantized hue) ------------------------


def n_conditions(n_hue_bins: int = DEFAULT_HUE_BINS) -> int:
    return len(SHAPE_CLASSES) * n_hue_bins


def condition_index(shape_class: str, hue: float, n_hue_bins: int = DEFAULT_HUE_BINS) -> int:
    if shape_class not in SHAPE_CLASSES:
        raise ParameterError(f"shape_class must be one of {SHAPE_CLASSES}, got {shape_class!r}")
    hue_bin = min(int((hue % 1.0) * n_hue_bins), n_hue_bins - 1)
    return SHAPE_CLASSES.index(shape_class) * n_hue_bins + hue_bin


def condition_of_record(record, n_hue_bins: int = DEFAULT_HUE_BINS) -> int:
    """Condition index from a record's scene provenance."""
    p = record.provenance
    try:
        return condition_index(p["shape_class"], float(p["hue"]), n_hue_bins)
    except KeyError as exc:
        raise ParameterError(
            f"record {record.record_id[:12]} lacks scene provenance needed for conditioning ({exc})"
        ) from None


def condition_scene(cond: int, n_hue_bins: int = DEFAULT_HUE_BINS, size: float = 0.7) -> ToyScene:
    """A representative scene for a condition index (bin-center hue)."""
    if not 0 <= cond < n_conditions(n_hue_bins):
        raise ParameterError(f"condition index {cond} out of range for {n_hue_bins} hue bins")
    shape = SHAPE_CLASSES[cond // n_hue_bins]
    hue = (cond % n_hue_bins + 0.5) / n_hue_bins
    return ToyScene(shape_class=shape, hue=hue, size=size)


# --- parameters ------------------------------------------------------------------


@dataclass
class DenoiserParams:
    """Weights for the denoiser.

    `weights[i]/biases[i]` is trunk layer i over [timestep embedding,
    condition embedding]; the last pair is the linear output head over
    [last hidden activation, flattened pixels]. The gate arrays form a small
    tanh net on the timestep embedding whose per-channel output multiplies
    the raw pixels into the prediction.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    gate_u: np.ndarray  # (temb_dim, gate_dim)
    gate_b1: np.ndarray  # (gate_dim,)
    gate_v: np.ndarray  # (gate_dim, x_dim)
    gate_b2: np.ndarray  # (x_dim,)
    cond_table: np.ndarray  # (n_cond, cond_dim)
    grid_hw: int
    temb_dim: int = DEFAULT_TEMB_DIM
    n_hue_bins: int = DEFAULT_HUE_BINS

    @property
    def x_dim(self) -> int:
        return self.grid_hw * self.grid_hw * 3

    @property
    def cond_dim(self) -> int:
        return self.cond_table.shape[1]

    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays())

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed, stable order."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        out.extend([self.gate_u, self.gate_b1, self.gate_v, self.gate_b2])
        out.append(self.cond_table)
        return out

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            gate_u=self.gate_u.copy(),
            gate_b1=self.gate_b1.copy(),
            gate_v=self.gate_v.copy(),
            gate_b2=self.gate_b2.copy(),
            cond_table=self.cond_table.copy(),
            grid_hw=self.grid_hw,
            temb_dim=self.temb_dim,
            n_hue_bins=self.n_hue_bins,
        )


def init_params(
    grid_hw: int,
    hidden: tuple[int, ...] = (64,),
    temb_dim: int = DEFAULT_TEMB_DIM,
    cond_dim: int = DEFAULT_COND_DIM,
    n_hue_bins: int = DEFAULT_HUE_BINS,
    gate_dim: int = 16,
    rng: np.random.Generator | None = None,
) -> DenoiserParams:
    """Xavier-scaled hidden layers, zero output layers, small condition table.

    Both output paths (the dense head and the pixel gate) start at zero, so
    a fresh model predicts zero noise for any input.
    """
    if temb_dim % 2 != 0:
        raise ParameterError(f"temb_dim must be even, got {temb_dim}")
    if grid_hw < 2:
        raise ParameterError(f"grid_hw must be >= 2, got {grid_hw}")
    if not hidden:
        raise ParameterError("at least one hidden layer is required")
    if gate_dim < 1:
        raise ParameterError(f"gate_dim must be >= 1, got {gate_dim}")
    rng = rng if rng is not None else np.random.default_rng(0)
    x_dim = grid_hw * grid_hw * 3
    dims = [temb_dim + cond_dim, *hidden]
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, 1.0, size=(d_in, d_out)) * math.sqrt(1.0 / d_in))
        biases.append(np.zeros(d_out))
    weights.append(np.zeros((hidden[-1] + x_dim, x_dim)))
    biases.append(np.zeros(x_dim))
    gate_u = rng.normal(0.0, 1.0, size=(temb_dim, gate_dim)) * math.sqrt(1.0 / temb_dim)
    cond_table = rng.normal(0.0, 0.1, size=(n_conditions(n_hue_bins), cond_dim))
    return DenoiserParams(
        weights=weights,
        biases=biases,
        gate_u=gate_u,
        gate_b1=np.zeros(gate_dim),
        gate_v=np.zeros((gate_dim, x_dim)),
        gate_b2=np.zeros(x_dim),
        cond_table=cond_table,
        grid_hw=grid_hw,
        temb_dim=temb_dim,
        n_hue_bins=n_hue_bins,
    )


def zeros_like_params(params: DenoiserParams) -> DenoiserParams:
    return DenoiserParams(
        weights=[np.zeros_like(w) for w in params.weights],
        biases=[np.zeros_like(b) for b in params.biases],
        gate_u=np.zeros_like(params.gate_u),
        gate_b1=np.zeros_like(params.gate_b1),
        gate_v=np.zeros_like(params.gate_v),
        gate_b2=np.zeros_like(params.gate_b2),
        cond_table=np.zeros_like(params.cond_table),
        grid_hw=params.grid_hw,
        temb_dim=params.temb_dim,
        n_hue_bins=params.n_hue_bins,
    )


def flatten_params(params: DenoiserParams) -> np.ndarray:
    return np.concatenate([a.reshape(-1) for a in params.arrays()])


def unflatten_params(vector: np.ndarray, template: DenoiserParams) -> DenoiserParams:
    out = zeros_like_params(template)
    offset = 0
    for a in out.arrays():
        a[...] = vector[offset : offset + a.size].reshape(a.shape)
        offset += a.size
    if offset != vector.size:
        raise ShapeError(f"parameter vector has {vector.size} entries, expected {offset}")
    return out


# --- forward / backward ------------------------------------------------------------


def sinusoidal_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Standard sin/cos positional features of the raw timestep."""
    if dim % 2 != 0:
        raise ParameterError(f"embedding dim must be even, got {dim}")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def _assemble_input(
    params: DenoiserParams, x_t: np.ndarray, t, cond
) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    x_t = np.asarray(x_t, dtype=np.float64)
    single = x_t.ndim == 3
    if single:
        x_t = x_t[None]
    expected = (params.grid_hw, params.grid_hw, 3)
    if x_t.ndim != 4 or x_t.shape[1:] != expected:
        raise ShapeError(f"x_t must have shape (batch,)+{expected}, got {x_t.shape}")
    batch = x_t.shape[0]
    t = np.broadcast_to(np.atleast_1d(np.asarray(t)), (batch,))
    cond = np.broadcast_to(np.atleast_1d(np.asarray(cond, dtype=np.int64)), (batch,))
    if cond.min() < 0 or cond.max() >= params.cond_table.shape[0]:
        raise ParameterError(
            f"condition indices must lie in [0, {params.cond_table.shape[0]}), got range "
            f"[{cond.min()}, {cond.max()}]"
        )
    x_flat = x_t.reshape(batch, -1)
    temb = sinusoidal_embedding(t, params.temb_dim)
    cemb = params.cond_table[cond]
    h0 = np.concatenate([temb, cemb], axis=1)
    return x_flat, h0, cond, single


def _forward_cached(params: DenoiserParams, x_flat: np.ndarray, h0: np.ndarray):
    temb = h0[:, : params.temb_dim]
    activations = [h0]
    a = h0
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        a = np.tanh(a @ w + b)
        activations.append(a)
    head_in = np.concatenate([a, x_flat], axis=1)  # pixel skip
    gate_h = np.tanh(temb @ params.gate_u + params.gate_b1)
    gamma = gate_h @ params.gate_v + params.gate_b2  # (batch, x_dim)
    out = head_in @ params.weights[-1] + params.biases[-1] + gamma * x_flat
    return out, activations, head_in, gate_h, gamma


def denoiser_forward(params: DenoiserParams, x_t: np.ndarray, t, cond) -> np.ndarray:
    """Predicted noise, shaped like x_t."""
    x_flat, h0, _, single = _assemble_input(params, x_t, t, cond)
    out = _forward_cached(params, x_flat, h0)[0]
    batch = h0.shape[0]
    eps_hat = out.reshape(batch, params.grid_hw, params.grid_hw, 3)
    return eps_hat[0] if single else eps_hat


def loss_and_gradients(
    params: DenoiserParams,
    x_t: np.ndarray,
    t,
    cond,
    eps_target: np.ndarray,
    return_per_sample: bool = False,
):
    """Mean-squared-error loss and its exact gradients (backprop by hand).

    The mean runs over every element of the batch, so each sample contributes
    linearly — duplicating a sample doubles its share of the gradient. With
    return_per_sample=True a third element holds each sample's own MSE.
    """
    x_flat, h0, cond_idx, single = _assemble_input(params, x_t, t, cond)
    eps_target = np.asarray(eps_target, dtype=np.float64)
    if single:
        eps_target = eps_target[None]
    batch = h0.shape[0]
    target = eps_target.reshape(batch, -1)
    if target.shape[1] != params.x_dim:
        raise ShapeError(f"eps_target has {target.shape[1]} elements per sample, expected {params.x_dim}")

    out, activations, head_in, gate_h, _ = _forward_cached(params, x_flat, h0)
    diff = out - target
    loss = float(np.mean(diff * diff))

    temb = h0[:, : params.temb_dim]

    grads = zeros_like_params(params)
    delta = (2.0 / diff.size) * diff  # d loss / d out
    grads.weights[-1][...] = head_in.T @ delta
    grads.biases[-1][...] = delta.sum(axis=0)

    # Pixel-gate branch: out includes gamma(t) * x, gamma = tanh(temb U + b1) V + b2.
    dgamma = delta * x_flat
    grads.gate_v[...] = gate_h.T @ dgamma
    grads.gate_b2[...] = dgamma.sum(axis=0)
    dz_gate = (dgamma @ params.gate_v.T) * (1.0 - gate_h * gate_h)
    grads.gate_u[...] = temb.T @ dz_gate
    grads.gate_b1[...] = dz_gate.sum(axis=0)

    # The pixel-skip slice of the head feeds no parameters upstream of it,
    # so only the hidden-activation slice backpropagates further.
    last_hidden = params.weights[-1].shape[0] - params.x_dim
    upstream = (delta @ params.weights[-1].T)[:, :last_hidden]
    for layer in range(len(params.weights) - 2, -1, -1):
        a = activations[layer + 1]
        dz = upstream * (1.0 - a * a)  # tanh'
        grads.weights[layer][...] = activations[layer].T @ dz
        grads.biases[layer][...] = dz.sum(axis=0)
        upstream = dz @ params.weights[layer].T
    # upstream is now d loss / d h0; the condition-embedding slice is its tail.
    dcemb = upstream[:, params.temb_dim :]
    np.add.at(grads.cond_table, cond_idx, dcemb)
    if return_per_sample:
        return loss, grads, np.mean(diff * diff, axis=1)
    return loss, grads


def denoiser_backward(
    params: DenoiserParams,
    batch,
    schedule: NoiseSchedule,
    policy: TimestepPolicy,
    rng: np.random.Generator | None = None,
) -> tuple[float, DenoiserParams]:
    """One training step's loss and gradients over a batch of records.

    Per record: draw t from the policy for its source (re-drawing the rare
    t=0, which adds no noise and has no target), draw eps, noise the grid,
    and backpropagate the epsilon-prediction MSE.
    """
    batch = list(batch)
    if not batch:
        raise ParameterError("denoiser_backward needs a non-empty batch")
    rng = rng if rng is not None else np.random.default_rng(0)
    x0 = np.stack([np.asarray(rec.grid, dtype=np.float64) / 255.0 for rec in batch])
    cond = np.array([condition_of_record(rec, params.n_hue_bins) for rec in batch])
    t = np.array([_draw_positive_timestep(policy, rec.source, rng) for rec in batch])
    eps = rng.standard_normal(x0.shape)
    x_t = np.stack([forward_noise(x0[i], int(t[i]), eps[i], schedule) for i in range(len(batch))])
    return loss_and_gradients(params, x_t, t, cond, eps)


def _draw_positive_timestep(policy: TimestepPolicy, source, rng: np.random.Generator) -> int:
    while True:
        t = sample_timestep(policy, source, rng)
        if t > 0:
            return t
