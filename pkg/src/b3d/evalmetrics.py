"""Evaluation metrics over embedding spaces: retrieval, similarity, Fréchet.

The metrics are pure functions over embedding matrices, so they work with any
embedder that maps images and texts into one shared space. The built-in toy
embedders (downsampled luminance+hue for images, hashed bag-of-words for
texts) exist to make evaluation runnable offline and deterministic; they
share a dimension so cross-modal cosines are defined, but they are not a
learned joint space — metric correctness is pinned by tests on controlled
vectors, not by the toy embedders' alignment.

Conventions fixed here because the metric definitions leave them open:
covariances use the unbiased (n-1) estimator; eigenvalues below 1e-10 are
clamped to zero before square roots; retrieval counts grid-level embeddings
(one vector per record), and similarity is reported x100.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import B3DError, ParameterError, ShapeError
from .images import block_mean_downsample, luminance, rgb_to_hue, to_float

EIGENVALUE_CLAMP = 1e-10

_TOY_PATCH = 8
_TOY_TEXT_BUCKETS = 128
TOY_DIM = 2 * _TOY_PATCH * _TOY_PATCH + 1  # lum + hue patches + bias = 129


@dataclass(frozen=True)
class Embedder:
    """A named pair of image/text encoders into one fixed-dimension space."""

    name: str
    dim: int
    embed_image: Callable[[np.ndarray], np.ndarray]
    embed_text: Callable[[str], np.ndarray]


def _toy_image_vector(image: np.ndarray) -> np.ndarray:
    img = to_float(image)
    lum = block_mean_downsample(luminance(img), _TOY_PATCH, _TOY_PATCH)
    hue = block_mean_downsample(rgb_to_hue(img), _TOY_PATCH, _TOY_PATCH)
    return np.concatenate([lum.ravel(), hue.ravel(), [1.0]])


def _toy_text_vector(text: str) -> np.ndarray:
    vec = np.zeros(_TOY_TEXT_BUCKETS + 1)
    for token in str(text).lower().split():
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=4).digest()
        vec[int.from_bytes(digest, "little") % _TOY_TEXT_BUCKETS] += 1.0
    vec[-1] = 1.0  # bias keeps even an empty bag normalizable
    return vec


def toy_embedder() -> Embedder:
    """The deterministic offline embedder (129-d; see module docstring)."""
    return Embedder(
        name="toy-lumhue-bow",
        dim=TOY_DIM,
        embed_image=_toy_image_vector,
        embed_text=_toy_text_vector,
    )


def embed(embedder: Embedder, items) -> np.ndarray:
    """Embed images (arrays) or texts (strings) into unit-norm rows."""
    items = list(items)
    if not items:
        raise ParameterError("embed needs at least one item")
    rows = []
    for i, item in enumerate(items):
        if isinstance(item, str):
            vec = embedder.embed_text(item)
        elif isinstance(item, np.ndarray):
            vec = embedder.embed_image(item)
        else:
            raise ParameterError(
                f"item {i}: embeddable items are images (arrays) or texts (str), got {type(item).__name__}"
            )
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.shape[0] != embedder.dim:
            raise B3DError(
                f"embedder {embedder.name} produced dimension {vec.shape[0]} for item {i}, expected {embedder.dim}"
            )
        if not np.all(np.isfinite(vec)):
            raise B3DError(f"embedder {embedder.name} produced non-finite values for item {i}")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise B3DError(f"embedder {embedder.name} produced a zero vector for item {i}")
        rows.append(vec / norm)
    return np.stack(rows)


# ------------------------------------------------------------ paired metrics


def _as_unit_rows(vectors, what: str) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ShapeError(f"{what} must be a non-empty 2-D matrix, got shape {arr.shape}")
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ParameterError(f"{what} contains a zero vector")
    return arr / norms


def _check_pairing(pairing, n_images: int, n_texts: int) -> np.ndarray:
    if pairing is None:
        if n_images != n_texts:
            raise ParameterError(
                f"without an explicit pairing, counts must match ({n_images} images vs {n_texts} texts)"
            )
        return np.arange(n_images)
    pairing = np.asarray(pairing, dtype=np.int64)
    if pairing.shape != (n_images,):
        raise ShapeError(f"pairing must have one entry per image, got shape {pairing.shape}")
    if pairing.min() < 0 or pairing.max() >= n_texts:
        raise ParameterError("pairing references a text index out of range")
    return pairing


def retrieval_precision(image_vecs, text_vecs, pairing=None) -> float:
    """Percent of images whose true text wins cosine top-1; ties count as misses."""
    images = _as_unit_rows(image_vecs, "image_vecs")
    texts = _as_unit_rows(text_vecs, "text_vecs")
    if images.shape[1] != texts.shape[1]:
        raise ShapeError(
            f"embedding dimensions differ: {images.shape[1]} vs {texts.shape[1]}"
        )
    pairing = _check_pairing(pairing, images.shape[0], texts.shape[0])
    sims = images @ texts.T
    true_sim = sims[np.arange(images.shape[0]), pairing]
    masked = sims.copy()
    masked[np.arange(images.shape[0]), pairing] = -np.inf
    best_other = masked.max(axis=1)
    hits = true_sim > best_other  # strict: a tie is a retrieval failure
    return float(100.0 * hits.mean())


def mean_similarity(image_vecs, text_vecs, pairing=None) -> float:
    """Mean cosine over true pairs, x100 (the scale benchmark tables use)."""
    images = _as_unit_rows(image_vecs, "image_vecs")
    texts = _as_unit_rows(text_vecs, "text_vecs")
    if images.shape[1] != texts.shape[1]:
        raise ShapeError(
            f"embedding dimensions differ: {images.shape[1]} vs {texts.shape[1]}"
        )
    pairing = _check_pairing(pairing, images.shape[0], texts.shape[0])
    cosines = np.einsum("ij,ij->i", images, texts[pairing])
    return float(100.0 * cosines.mean())


# ------------------------------------------------------------ Fréchet distance


@dataclass(frozen=True)
class GaussianMoments:
    """Sample mean and unbiased covariance of an embedding set."""

    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.shape[0], mean.shape[0]):
            raise ShapeError(
                f"moment shapes inconsistent: mean {mean.shape}, cov {cov.shape}"
            )
        if self.n < 2:
            raise ParameterError(f"moments need at least 2 samples, got {self.n}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ParameterError("moments must be finite")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12:
            raise ParameterError("covariance must be symmetric to 1e-12")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


def gaussian_moments(vectors) -> GaussianMoments:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"need a 2-D sample matrix, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise ParameterError(f"need at least 2 vectors for moments, got {arr.shape[0]}")
    mean = arr.mean(axis=0)
    centered = arr - mean
    cov = centered.T @ centered / (arr.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    return GaussianMoments(mean=mean, cov=cov, n=arr.shape[0])


def _sqrt_eigvals(sym: np.ndarray) -> np.ndarray:
    lam = np.linalg.eigvalsh(0.5 * (sym + sym.T))
    lam = np.where(lam < EIGENVALUE_CLAMP, 0.0, lam)
    return np.sqrt(lam)


def _sym_sqrt(sym: np.ndarray) -> np.ndarray:
    lam, vecs = np.linalg.eigh(0.5 * (sym + sym.T))
    lam = np.where(lam < EIGENVALUE_CLAMP, 0.0, lam)
    return (vecs * np.sqrt(lam)) @ vecs.T


def frechet_distance(a: GaussianMoments, b: GaussianMoments) -> float:
    """||mu_a - mu_b||^2 + tr(C_a + C_b - 2 (C_a C_b)^(1/2)), floored at 0.

    The cross term uses tr sqrt(C_a C_b) = tr sqrt(B^(1/2) C_a B^(1/2)),
    which keeps every eigendecomposition on a symmetric matrix.
    """
    if a.dim != b.dim:
        raise ShapeError(f"moment dimensions differ: {a.dim} vs {b.dim}")
    diff = a.mean - b.mean
    sqrt_b = _sym_sqrt(b.cov)
    inner = sqrt_b @ a.cov @ sqrt_b
    cross = float(_sqrt_eigvals(inner).sum())
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * cross)
    return max(value, 0.0)


# ------------------------------------------------------------ reports


@dataclass(frozen=True)
class EvalReport:
    """One evaluation run: the three metrics plus provenance and breakdowns."""

    embedder: str
    n_samples: int
    n_reference: int
    retrieval_precision: float
    mean_similarity: float
    frechet: float
    per_source: Mapping[str, Mapping[str, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.retrieval_precision <= 100.0:
            raise ParameterError(
                f"retrieval precision must be in [0, 100], got {self.retrieval_precision}"
            )
        if self.frechet < 0.0:
            raise ParameterError(f"frechet distance must be floored at 0, got {self.frechet}")
        object.__setattr__(
            self, "per_source", {k: dict(v) for k, v in dict(self.per_source).items()}
        )

    def to_json(self) -> str:
        doc = {
            "embedder": self.embedder,
            "n_samples": self.n_samples,
            "n_reference": self.n_reference,
            "retrieval_precision": self.retrieval_precision,
            "mean_similarity": self.mean_similarity,
            "frechet": self.frechet,
            "per_source": {k: dict(v) for k, v in self.per_source.items()},
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        doc = json.loads(text)
        return cls(
            embedder=doc["embedder"],
            n_samples=int(doc["n_samples"]),
            n_reference=int(doc["n_reference"]),
            retrieval_precision=float(doc["retrieval_precision"]),
            mean_similarity=float(doc["mean_similarity"]),
            frechet=float(doc["frechet"]),
            per_source=doc.get("per_source") or {},
        )

    def render_table(self) -> str:
        lines = [
            "metric\tvalue",
            f"embedder\t{self.embedder}",
            f"n_samples\t{self.n_samples}",
            f"n_reference\t{self.n_reference}",
            f"retrieval_precision\t{self.retrieval_precision:.4f}",
            f"mean_similarity\t{self.mean_similarity:.4f}",
            f"frechet\t{self.frechet:.6f}",
        ]
        for tag in sorted(self.per_source):
            stats = self.per_source[tag]
            for key in sorted(stats):
                lines.append(f"{tag}/{key}\t{stats[key]:.4f}")
        return "\n".join(lines) + "\n"


def eval_report(
    sample_images,
    reference_images,
    prompts,
    embedder: Embedder | None = None,
    sample_sources=None,
) -> EvalReport:
    """Score generated samples against prompts and a reference image set.

    `prompts[i]` is the text paired with `sample_images[i]`. Per-source
    breakdowns (count + mean similarity) appear when `sample_sources` gives a
    tag per sample; retrieval always runs over the full distractor set.
    """
    embedder = embedder if embedder is not None else toy_embedder()
    sample_images = list(sample_images)
    reference_images = list(reference_images)
    prompts = list(prompts)
    if len(prompts) != len(sample_images):
        raise ParameterError(
            f"need one prompt per sample: {len(sample_images)} samples vs {len(prompts)} prompts"
        )
    if len(sample_images) < 2 or len(reference_images) < 2:
        raise ParameterError("need at least 2 samples and 2 reference images for moments")
    image_vecs = embed(embedder, sample_images)
    text_vecs = embed(embedder, prompts)
    reference_vecs = embed(embedder, reference_images)

    per_source: dict[str, dict[str, float]] = {}
    if sample_sources is not None:
        sample_sources = [str(s) for s in sample_sources]
        if len(sample_sources) != len(sample_images):
            raise ParameterError("need one source tag per sample")
        cosines = 100.0 * np.einsum("ij,ij->i", image_vecs, text_vecs)
        for tag in sorted(set(sample_sources)):
            mask = np.array([s == tag for s in sample_sources])
            per_source[tag] = {
                "n": int(mask.sum()),
                "mean_similarity": float(cosines[mask].mean()),
            }

    return EvalReport(
        embedder=embedder.name,
        n_samples=len(sample_images),
        n_reference=len(reference_images),
        retrieval_precision=retrieval_precision(image_vecs, text_vecs),
        mean_similarity=mean_similarity(image_vecs, text_vecs),
        frechet=frechet_distance(
            gaussian_moments(image_vecs), gaussian_moments(reference_vecs)
        ),
        per_source=per_source,
    )


# ------------------------------------------------------------ benchmark tables


@dataclass(frozen=True)
class BenchmarkTable:
    """A model-by-metric table that renders and parses losslessly at 0.1 grain."""

    columns: tuple[str, ...]
    rows: tuple[tuple[str, tuple[float, ...]], ...]

    def __post_init__(self) -> None:
        for name, values in self.rows:
            if len(values) != len(self.columns):
                raise ShapeError(
                    f"row {name!r} has {len(values)} values for {len(self.columns)} columns"
                )
        object.__setattr__(self, "columns", tuple(str(c) for c in self.columns))
        object.__setattr__(
            self,
            "rows",
            tuple((str(n), tuple(float(v) for v in vs)) for n, vs in self.rows),
        )

    def render(self) -> str:
        lines = ["model\t" + "\t".join(self.columns)]
        for name, values in self.rows:
            lines.append(name + "\t" + "\t".join(f"{v:.1f}" for v in values))
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "BenchmarkTable":
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines or not lines[0].startswith("model\t"):
            raise ParameterError("benchmark table must start with a 'model' header row")
        columns = tuple(lines[0].split("\t")[1:])
        rows = []
        for line in lines[1:]:
            cells = line.split("\t")
            try:
                rows.append((cells[0], tuple(float(v) for v in cells[1:])))
            except ValueError:
                raise ParameterError(f"non-numeric metric cell in row {cells[0]!r}") from None
        return cls(columns=columns, rows=tuple(rows))
