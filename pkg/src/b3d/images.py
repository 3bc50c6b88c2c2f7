"""Small image utilities shared by the renderer, metrics, and storage.

Images are numpy arrays: uint8 H×W×3 at rest (records, files), float64 in
[0, 1] during computation. PNG is the one persistence format — lossless,
so blur experiments are never confounded by compression artifacts.
"""

from __future__ import annotations

import io
import logging

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ParameterError, ShapeError

log = logging.getLogger(__name__)

# Luminance weights (Rec. 601): perceptual gray for Laplacian statistics.
_LUMA = np.array([0.299, 0.587, 0.114])

# A pixel is "background" when every channel is at least this bright.
BACKGROUND_MIN = 235 / 255.0


def to_float(img: np.ndarray) -> np.ndarray:
    """uint8 [0,255] -> float64 [0,1]; float input passes through as float64."""
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """float [0,1] -> uint8 with round-half-even quantization."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.rint(arr * 255.0).astype(np.uint8)


def require_rgb(img: np.ndarray, what: str = "image") -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"{what}: expected H×W×3 array, got shape {img.shape}")
    return img


def luminance(img: np.ndarray) -> np.ndarray:
    """H×W float luminance from an RGB image (either dtype)."""
    return to_float(require_rgb(img)) @ _LUMA


def rgb_to_hue(img: np.ndarray) -> np.ndarray:
    """Per-pixel HSV hue in [0,1); achromatic pixels get hue 0."""
    rgb = to_float(require_rgb(img))
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    spread = mx - mn
    safe = np.where(spread > 0, spread, 1.0)
    hue = np.zeros_like(mx)
    is_r = (mx == r) & (spread > 0)
    is_g = (mx == g) & (spread > 0) & ~is_r
    is_b = (spread > 0) & ~is_r & ~is_g
    hue[is_r] = ((g - b)[is_r] / safe[is_r]) % 6.0
    hue[is_g] = (b - r)[is_g] / safe[is_g] + 2.0
    hue[is_b] = (r - g)[is_b] / safe[is_b] + 4.0
    return hue / 6.0


def foreground_mask(img: np.ndarray) -> np.ndarray:
    """True where a pixel is not near-white background."""
    return to_float(require_rgb(img)).min(axis=-1) < BACKGROUND_MIN


def laplacian_variance(gray: np.ndarray) -> float:
    """Variance of the 4-neighbour discrete Laplacian over the interior.

    Border rows/columns are excluded so the statistic reflects image
    content, not padding policy. Constant images score exactly 0.
    """
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim != 2 or gray.shape[0] < 3 or gray.shape[1] < 3:
        raise ShapeError(f"need a 2-D image at least 3×3, got shape {gray.shape}")
    core = gray[1:-1, 1:-1]
    lap = gray[:-2, 1:-1] + gray[2:, 1:-1] + gray[1:-1, :-2] + gray[1:-1, 2:] - 4.0 * core
    return float(lap.var())


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Per-channel Gaussian blur of a float RGB image; sigma=0 is the identity."""
    if sigma < 0:
        raise ParameterError(f"blur sigma must be non-negative, got {sigma}")
    rgb = to_float(require_rgb(img))
    if sigma == 0:
        return rgb
    out = np.empty_like(rgb)
    for c in range(3):
        ndimage.gaussian_filter(rgb[..., c], sigma=sigma, output=out[..., c], mode="nearest")
    return out


def block_mean_downsample(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Area-mean downsample of an H×W[×C] float image to out_h×out_w.

    Rows/columns are partitioned into near-equal contiguous blocks, so any
    input size is accepted (no divisibility requirement).
    """
    arr = np.asarray(img)
    arr = arr.astype(np.float64) / 255.0 if arr.dtype == np.uint8 else arr.astype(np.float64)
    h, w = arr.shape[:2]
    if h < out_h or w < out_w:
        raise ShapeError(f"cannot downsample {h}×{w} to {out_h}×{out_w}")
    row_edges = np.linspace(0, h, out_h + 1).astype(int)
    col_edges = np.linspace(0, w, out_w + 1).astype(int)
    out_shape = (out_h, out_w) + arr.shape[2:]
    out = np.empty(out_shape, dtype=np.float64)
    for i in range(out_h):
        for j in range(out_w):
            block = arr[row_edges[i]:row_edges[i + 1], col_edges[j]:col_edges[j + 1]]
            out[i, j] = block.mean(axis=(0, 1))
    return out


def encode_png(img: np.ndarray) -> bytes:
    """Lossless PNG bytes from a uint8 RGB array."""
    img = require_rgb(img)
    if img.dtype != np.uint8:
        raise ParameterError(f"PNG encoding expects uint8, got {img.dtype}")
    buf = io.BytesIO()
    Image.fromarray(img, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    """uint8 RGB array from encoded image bytes."""
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"))


def resize_rgb(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a uint8 RGB image to size×size."""
    img = require_rgb(img)
    pil = Image.fromarray(np.ascontiguousarray(img).astype(np.uint8), mode="RGB")
    return np.asarray(pil.resize((size, size), Image.BILINEAR))
