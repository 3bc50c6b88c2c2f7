"""Deterministic procedural multi-view renderer.

Renders one of four toy shapes (cube, sphere, cone, torus-approx) in a
chosen hue on a white background, orthographically, from four azimuths at a
fixed camera elevation. Lighting lives in the camera frame with no
horizontal component, which buys two exactness properties the tests lean on:

* rotationally symmetric shapes (sphere, cone, torus) render byte-identically
  at every azimuth;
* the cube's 180-degree view equals its 0-degree view mirrored horizontally,
  byte-exactly (trig for multiples of 90 degrees is table-exact).

Shading multiplies the base RGB by a scalar and antialiasing blends toward
white, both of which preserve channel differences — so every non-background
pixel keeps the scene hue up to uint8 quantization.
"""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError, ProtocolError
from .images import foreground_mask, gaussian_blur, rgb_to_hue, to_float, to_uint8
from .records import MultiViewRecord
from .seeds import spawn_rng
from .sources import DataSource

SHAPE_CLASSES = ("cube", "sphere", "cone", "torus-approx")
AZIMUTHS = (0, 90, 180, 270)

ELEVATION_DEG = 20.0
BASE_SATURATION = 0.8
BASE_VALUE = 0.95
AMBIENT = 0.35
DIFFUSE = 0.65
_SUPERSAMPLE = 2
# Camera-frame light; zero x-component keeps renders mirror-symmetric.
_LIGHT = np.array([0.0, 0.4, 0.8]) / np.linalg.norm([0.0, 0.4, 0.8])

MIN_VIEW_SIZE = 8

DEFAULT_BLUR_SIGMA = 1.5

_HUE_WORDS = (
    ("red", 0.0),
    ("orange", 0.08),
    ("yellow", 0.17),
    ("green", 0.33),
    ("teal", 0.45),
    ("cyan", 0.5),
    ("blue", 0.61),
    ("violet", 0.72),
    ("purple", 0.78),
    ("magenta", 0.85),
    ("pink", 0.92),
)

_SHAPE_WORDS = {
    "cube": "cube", "box": "cube", "block": "cube",
    "sphere": "sphere", "ball": "sphere", "orb": "sphere",
    "cone": "cone",
    "torus": "torus-approx", "ring": "torus-approx", "donut": "torus-approx",
}


@dataclass(frozen=True)
class ToyScene:
    shape_class: str
    hue: float
    size: float
    azimuths: tuple[int, int, int, int] = AZIMUTHS

    def __post_init__(self) -> None:
        if self.shape_class not in SHAPE_CLASSES:
            raise ParameterError(f"shape_class must be one of {SHAPE_CLASSES}, got {self.shape_class!r}")
        if not 0.0 <= self.hue < 1.0:
            raise ParameterError(f"hue must lie in [0, 1), got {self.hue}")
        if not 0.2 < self.size <= 0.9:
            raise ParameterError(f"size must lie in (0.2, 0.9], got {self.size}")
        if tuple(self.azimuths) != AZIMUTHS:
            raise ParameterError(f"azimuths are fixed at {AZIMUTHS}, got {self.azimuths}")


def _cos_sin_deg(angle: float) -> tuple[float, float]:
    a = angle % 360.0
    if a % 90.0 == 0.0:
        k = int(a // 90.0) % 4
        return ((1.0, 0.0, -1.0, 0.0)[k], (0.0, 1.0, 0.0, -1.0)[k])
    rad = math.radians(a)
    return math.cos(rad), math.sin(rad)


def _rot_y(angle: float) -> np.ndarray:
    c, s = _cos_sin_deg(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_x(angle: float) -> np.ndarray:
    c, s = _cos_sin_deg(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def base_rgb(hue: float) -> np.ndarray:
    """The unshaded object color for a hue."""
    return np.array(colorsys.hsv_to_rgb(hue % 1.0, BASE_SATURATION, BASE_VALUE))


def _pixel_axis(n: int) -> np.ndarray:
    # Symmetric about 0 exactly: axis[i] == -axis[n-1-i].
    return (np.arange(n) - (n - 1) / 2.0) * (2.0 / n)


def _shade_sphere(x, y, scene):
    r = scene.size
    rho2 = x * x + y * y
    mask = rho2 <= r * r
    z = np.sqrt(np.maximum(r * r - rho2, 0.0))
    ndotl = (y * _LIGHT[1] + z * _LIGHT[2]) / r
    shade = AMBIENT + DIFFUSE * np.maximum(ndotl, 0.0)
    return mask, shade


def _shade_cone(x, y, scene):
    hh = scene.size
    rb = 0.72 * scene.size
    span = np.clip((hh - y) / (2.0 * hh), 0.0, 1.0)
    halfwidth = rb * span
    mask = (np.abs(y) <= hh) & (np.abs(x) <= halfwidth)
    safe = np.where(halfwidth > 0, halfwidth, 1.0)
    u = np.where(halfwidth > 0, x / safe, 0.0)
    shade = AMBIENT + DIFFUSE * 0.85 * np.sqrt(np.maximum(1.0 - u * u, 0.0))
    return mask, shade


def _shade_torus(x, y, scene):
    outer = scene.size
    inner = 0.45 * scene.size
    rho = np.hypot(x, y)
    mask = (rho >= inner) & (rho <= outer)
    mid = (outer + inner) / 2.0
    tube = (outer - inner) / 2.0
    u = (rho - mid) / tube
    shade = AMBIENT + DIFFUSE * 0.9 * np.sqrt(np.maximum(1.0 - u * u, 0.0))
    return mask, shade


def _shade_cube(x, y, scene, azimuth):
    a = 0.55 * scene.size  # half edge
    rot = _rot_x(ELEVATION_DEG) @ _rot_y(azimuth)
    inv = rot.T
    # Orthographic rays along -z in camera space, pushed back to object space.
    origin_cam = np.stack([x, y, np.full_like(x, 4.0)], axis=-1)
    o = origin_cam @ inv.T
    d = inv @ np.array([0.0, 0.0, -1.0])
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_d = 1.0 / d
        t1 = (-a - o) * inv_d
        t2 = (a - o) * inv_d
    near = np.minimum(t1, t2)
    far = np.maximum(t1, t2)
    tmin = near.max(axis=-1)
    tmax = far.min(axis=-1)
    mask = (tmax >= tmin) & (tmax > 0.0)
    entry_axis = near.argmax(axis=-1)
    normal_obj = -np.sign(d)[entry_axis][..., None] * np.eye(3)[entry_axis]
    normal_cam = normal_obj @ rot.T
    ndotl = normal_cam @ _LIGHT
    shade = AMBIENT + DIFFUSE * np.maximum(ndotl, 0.0)
    return mask, shade


def render_view(scene: ToyScene, azimuth: float, view_size: int) -> np.ndarray:
    """One uint8 RGB view of the scene at the given azimuth."""
    if view_size < MIN_VIEW_SIZE:
        raise ParameterError(f"view_size must be >= {MIN_VIEW_SIZE}, got {view_size}")
    n = view_size * _SUPERSAMPLE
    axis = _pixel_axis(n)
    x = np.broadcast_to(axis, (n, n))
    y = np.broadcast_to(-axis[:, None], (n, n))  # row 0 is the top of the image

    if scene.shape_class == "sphere":
        mask, shade = _shade_sphere(x, y, scene)
    elif scene.shape_class == "cone":
        mask, shade = _shade_cone(x, y, scene)
    elif scene.shape_class == "torus-approx":
        mask, shade = _shade_torus(x, y, scene)
    else:
        mask, shade = _shade_cube(x, y, scene, azimuth)

    color = base_rgb(scene.hue)
    weight = mask * shade
    fine = weight[..., None] * color + (1.0 - mask)[..., None]
    s = _SUPERSAMPLE
    coarse = fine.reshape(view_size, s, view_size, s, 3).mean(axis=(1, 3))
    return to_uint8(coarse)


def render_views(scene: ToyScene, view_size: int) -> list[np.ndarray]:
    """All four azimuth views in order."""
    return [render_view(scene, az, view_size) for az in scene.azimuths]


# --- scenes from prompts and rngs ---------------------------------------------


def random_scene(rng: np.random.Generator) -> ToyScene:
    return ToyScene(
        shape_class=SHAPE_CLASSES[int(rng.integers(len(SHAPE_CLASSES)))],
        hue=float(rng.random()),
        size=float(0.9 - 0.7 * rng.random()),
    )


def hue_name(hue: float) -> str:
    """Nearest palette word for a hue (circular distance)."""
    best, best_d = _HUE_WORDS[0][0], 2.0
    for word, h in _HUE_WORDS:
        d = abs((hue - h + 0.5) % 1.0 - 0.5)
        if d < best_d:
            best, best_d = word, d
    return best


def describe_scene(scene: ToyScene) -> str:
    shape_word = {"torus-approx": "torus"}.get(scene.shape_class, scene.shape_class)
    size_word = "small" if scene.size < 0.45 else ("large" if scene.size > 0.7 else "medium")
    return f"a {size_word} {hue_name(scene.hue)} {shape_word} on a white background"


def scene_from_prompt(prompt: str, seed: int) -> ToyScene:
    """Deterministic scene for a prompt.

    Recognized shape/color words steer the scene; everything else (and any
    missing attribute) is filled from a hash of (prompt, seed).
    """
    rng = spawn_rng(seed, "scene", prompt)
    scene = random_scene(rng)
    shape = None
    hue = None
    for token in prompt.lower().replace(",", " ").replace(".", " ").split():
        if shape is None and token in _SHAPE_WORDS:
            shape = _SHAPE_WORDS[token]
        if hue is None:
            for word, h in _HUE_WORDS:
                if token == word:
                    hue = h
                    break
    return ToyScene(
        shape_class=shape if shape is not None else scene.shape_class,
        hue=hue if hue is not None else scene.hue,
        size=scene.size,
    )


def scene_to_provenance(scene: ToyScene) -> dict:
    return {"shape_class": scene.shape_class, "hue": scene.hue, "size": scene.size}


def scene_of_record(record: MultiViewRecord) -> ToyScene:
    """Rebuild the ToyScene stored in a record's provenance."""
    p = record.provenance
    try:
        return ToyScene(shape_class=p["shape_class"], hue=float(p["hue"]), size=float(p["size"]))
    except KeyError as exc:
        raise ParameterError(f"record {record.record_id[:12]} has no scene provenance ({exc})") from None


# --- datasets ------------------------------------------------------------------


def render_toy_dataset(n_scenes: int, view_size: int = 16, rng: np.random.Generator | None = None) -> list[MultiViewRecord]:
    """n_scenes sharp 4-view records, source=RenderedAsset, scene metadata attached."""
    if n_scenes < 1:
        raise ParameterError(f"n_scenes must be >= 1, got {n_scenes}")
    if view_size < MIN_VIEW_SIZE:
        raise ParameterError(f"view_size must be >= {MIN_VIEW_SIZE}, got {view_size}")
    rng = rng if rng is not None else np.random.default_rng(0)
    records = []
    for i in range(n_scenes):
        scene_seed = int(rng.integers(2**63))
        scene = random_scene(spawn_rng(scene_seed, "toy-scene"))
        provenance = {
            "generator": "procedural-renderer",
            "seed": scene_seed,
            "tick": i,
            **scene_to_provenance(scene),
        }
        records.append(
            MultiViewRecord.from_views(
                render_views(scene, view_size),
                source=DataSource.RENDERED_ASSET,
                prompt=describe_scene(scene),
                provenance=provenance,
            )
        )
    return records


def single_view_dataset(n_scenes: int, view_size: int = 16, rng: np.random.Generator | None = None) -> list[MultiViewRecord]:
    """Single-view analogue records: 4 copies of the azimuth-0 view."""
    if n_scenes < 1:
        raise ParameterError(f"n_scenes must be >= 1, got {n_scenes}")
    rng = rng if rng is not None else np.random.default_rng(0)
    records = []
    for i in range(n_scenes):
        scene_seed = int(rng.integers(2**63))
        scene = random_scene(spawn_rng(scene_seed, "toy-scene"))
        view = render_view(scene, 0, view_size)
        provenance = {
            "generator": "procedural-renderer",
            "seed": scene_seed,
            "tick": i,
            **scene_to_provenance(scene),
        }
        records.append(
            MultiViewRecord.from_views(
                [view, view, view, view],
                source=DataSource.SINGLE_VIEW_2D,
                prompt=describe_scene(scene),
                provenance=provenance,
            )
        )
    return records


def degrade_views(
    record: MultiViewRecord,
    blur_sigma: float = DEFAULT_BLUR_SIGMA,
    n_blurred: int = 3,
    rng: np.random.Generator | None = None,
) -> MultiViewRecord:
    """Gaussian-blur n_blurred randomly chosen views and retag as SyntheticNVS-A.

    The conditioning view (view 0) stays sharp unless all four are blurred.
    """
    if blur_sigma < 0:
        raise ParameterError(f"blur_sigma must be non-negative, got {blur_sigma}")
    if not 0 <= n_blurred <= 4:
        raise ParameterError(f"n_blurred must be in [0, 4], got {n_blurred}")
    rng = rng if rng is not None else np.random.default_rng(0)

    if n_blurred == 0 or blur_sigma == 0:
        return record.with_source(DataSource.SYNTHETIC_NVS_A)

    eligible = list(range(4)) if n_blurred == 4 else [1, 2, 3]
    chosen = sorted(int(i) for i in rng.choice(eligible, size=n_blurred, replace=False))
    views = [
        to_uint8(gaussian_blur(to_float(v), blur_sigma)) if i in chosen else v
        for i, v in enumerate(record.views)
    ]
    provenance = {**dict(record.provenance), "blur_sigma": blur_sigma, "blurred_views": chosen}
    degraded = MultiViewRecord.from_views(
        views, DataSource.SYNTHETIC_NVS_A, record.prompt, provenance, record.stage
    )
    return replace(
        degraded,
        caption_short=record.caption_short,
        caption_long=record.caption_long,
        quality=record.quality,
    )


# --- scene recovery from a rendered view ---------------------------------------


def scene_from_view(image: np.ndarray) -> ToyScene:
    """Best-effort inverse of render_view(scene, azimuth=0).

    Used by the stateless offline NVS path to re-derive the scene from a
    conditioning image: hue from the foreground hue median, size from the
    foreground extent, shape by candidate re-rendering.
    """
    img = np.asarray(image)
    fg = foreground_mask(img)
    if not fg.any():
        raise ProtocolError("conditioning image has no foreground; cannot infer a scene")
    hue = float(np.median(rgb_to_hue(img)[fg]))

    n = img.shape[0]
    axis = _pixel_axis(n)
    cols = np.broadcast_to(axis, (n, n))
    rows = np.broadcast_to(-axis[:, None], (n, n))
    half_w = float(np.abs(cols[fg]).max()) + 1.0 / n
    half_h = float(np.abs(rows[fg]).max()) + 1.0 / n

    size_guess = {
        "sphere": max(half_w, half_h),
        "cube": half_w / 0.55 / (2.0 ** 0.5),  # azimuth-0 cube spans up to a*sqrt2 with elevation
        "cone": half_h,
        "torus-approx": max(half_w, half_h),
    }
    target = to_float(img)
    best_scene, best_err = None, np.inf
    for shape in SHAPE_CLASSES:
        for scale in (0.92, 1.0, 1.08):
            size = float(np.clip(size_guess[shape] * scale, 0.2001, 0.9))
            candidate = ToyScene(shape_class=shape, hue=hue % 1.0, size=size)
            err = float(np.mean((to_float(render_view(candidate, 0, n)) - target) ** 2))
            if err < best_err:
                best_scene, best_err = candidate, err
    assert best_scene is not None
    return best_scene
