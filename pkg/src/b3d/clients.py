"""Generator and captioner clients: remote HTTP services plus offline twins.

The offline backends are first-class implementations built on the procedural
renderer, not test mocks — every acceptance path runs without network. The
remote clients speak a small JSON-over-POST protocol:

    POST {base}/t2i     {"kind": "t2i", "prompt": ..., "seed": ..., "n_views": 1}
    POST {base}/nvs     {"kind": "nvs", "image": <b64 PNG>, "seed": ..., "n_views": 4}
        -> {"images": [<b64 PNG>, ...], "generator_id": ..., "latency_ms": ...}

    POST {base}/caption {"grid": <b64 PNG>, "mode": ..., "prompt_template_id": ...}
        -> {"caption": ...}
    POST {base}/score   {"grid": <b64 PNG>, "prompt_template_id": ...}
        -> {"text": ...}   (free text containing one of the six quality labels)

Endpoints come from B3D_T2I_URL / B3D_NVS_URL / B3D_CAPTIONER_URL and the
request timeout from B3D_HTTP_TIMEOUT_MS. Transient failures (connection
errors, timeouts, 5xx) are retried three times with exponential backoff.
"""

from __future__ import annotations

import base64
import logging
import os
import time
from dataclasses import dataclass, field

import httpx
import numpy as np

from .errors import ConfigError, ProtocolError, RemoteServiceError
from .images import decode_png, encode_png, resize_rgb
from .render import render_views, scene_from_prompt, scene_from_view

try:  # importlib.resources.files is the supported accessor on >= 3.9
    from importlib.resources import files as _resource_files
except ImportError:  # pragma: no cover
    _resource_files = None

log = logging.getLogger("b3d.clients")

ENV_T2I_URL = "B3D_T2I_URL"
ENV_NVS_URL = "B3D_NVS_URL"
ENV_CAPTIONER_URL = "B3D_CAPTIONER_URL"
ENV_TIMEOUT_MS = "B3D_HTTP_TIMEOUT_MS"

DEFAULT_TIMEOUT_MS = 30_000
RETRY_ATTEMPTS = 3
RETRY_BASE_DELAY = 0.25  # seconds; doubles per attempt


def load_template(template_id: str) -> str:
    """Text of a shipped prompt template (see the templates/ data directory)."""
    resource = _resource_files("b3d").joinpath("templates", f"{template_id}.txt")
    try:
        return resource.read_text(encoding="utf-8").rstrip("\n")
    except (FileNotFoundError, ModuleNotFoundError):
        raise ConfigError(f"no prompt template named {template_id!r}") from None


CAPTION_TEMPLATE_IDS = {"short": "caption-short-1", "long": "caption-long-1"}
SCORE_TEMPLATE_IDS = {"synthetic": "quality-synthetic", "asset": "quality-asset"}


@dataclass(frozen=True)
class GeneratorRequest:
    """One generation call: text-to-image or image-to-views."""

    kind: str  # "t2i" | "nvs"
    seed: int
    prompt: str = ""
    image_b64: str = ""
    n_views: int = 1

    def __post_init__(self) -> None:
        if self.kind not in ("t2i", "nvs"):
            raise ConfigError(f"request kind must be 't2i' or 'nvs', got {self.kind!r}")
        if self.kind == "nvs" and not self.image_b64:
            raise ConfigError("nvs requests need a conditioning image")

    def to_payload(self) -> dict:
        payload = {"kind": self.kind, "seed": self.seed, "n_views": self.n_views}
        if self.kind == "t2i":
            payload["prompt"] = self.prompt
        else:
            payload["image"] = self.image_b64
        return payload


@dataclass
class GeneratorResponse:
    images: list[bytes]
    generator_id: str = ""
    latency_ms: float = 0.0

    def expect_count(self, n: int, what: str) -> None:
        if len(self.images) != n:
            raise ProtocolError(
                f"{what}: backend returned {len(self.images)} image(s), expected {n}"
            )


def _env_timeout_s() -> float:
    raw = os.environ.get(ENV_TIMEOUT_MS, "")
    if not raw:
        return DEFAULT_TIMEOUT_MS / 1000.0
    try:
        return max(1, int(raw)) / 1000.0
    except ValueError:
        raise ConfigError(f"{ENV_TIMEOUT_MS} must be an integer, got {raw!r}") from None


class _HttpBase:
    """Shared POST-with-retries plumbing."""

    def __init__(self, base_url: str, timeout_s: float | None = None, transport=None, sleeper=time.sleep):
        if not base_url:
            raise ConfigError("client needs a base URL (argument or environment)")
        self._base = base_url.rstrip("/")
        self._sleep = sleeper
        self._client = httpx.Client(
            timeout=timeout_s if timeout_s is not None else _env_timeout_s(),
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self._base}{path}"
        last_error: Exception | None = None
        for attempt in range(RETRY_ATTEMPTS):
            if attempt:
                self._sleep(RETRY_BASE_DELAY * 2 ** (attempt - 1))
            try:
                response = self._client.post(url, json=payload)
            except httpx.TransportError as exc:
                last_error = exc
                continue
            if 500 <= response.status_code < 600:
                last_error = RemoteServiceError(
                    f"{url} answered {response.status_code}"
                )
                continue
            if response.status_code != 200:
                raise RemoteServiceError(
                    f"{url} answered {response.status_code}: {response.text[:200]}"
                )
            try:
                return response.json()
            except ValueError:
                raise ProtocolError(f"{url} returned non-JSON body") from None
        raise RemoteServiceError(
            f"{url} failed after {RETRY_ATTEMPTS} attempts: {last_error}"
        )


def _decode_image_payloads(doc: dict, url_hint: str) -> GeneratorResponse:
    images = doc.get("images")
    if not isinstance(images, list):
        raise ProtocolError(f"{url_hint}: response lacks an 'images' list")
    decoded = []
    for i, item in enumerate(images):
        try:
            decoded.append(base64.b64decode(item, validate=True))
        except Exception:
            raise ProtocolError(f"{url_hint}: image {i} is not valid base64") from None
    return GeneratorResponse(
        images=decoded,
        generator_id=str(doc.get("generator_id", "")),
        latency_ms=float(doc.get("latency_ms", 0.0)),
    )


def _fit_size(img: np.ndarray, expect_size: int | None, what: str) -> np.ndarray:
    if expect_size is not None and img.shape[:2] != (expect_size, expect_size):
        log.warning(
            "%s: backend image is %dx%d, resizing to %dx%d",
            what, img.shape[0], img.shape[1], expect_size, expect_size,
        )
        img = resize_rgb(img, expect_size)
    return img


class HttpGeneratorClient(_HttpBase):
    """Remote text-to-image / novel-view-synthesis services."""

    def __init__(
        self,
        t2i_url: str | None = None,
        nvs_url: str | None = None,
        timeout_s: float | None = None,
        transport=None,
        sleeper=time.sleep,
    ):
        t2i_url = t2i_url or os.environ.get(ENV_T2I_URL, "")
        self._nvs_base = (nvs_url or os.environ.get(ENV_NVS_URL, "") or t2i_url).rstrip("/")
        super().__init__(t2i_url, timeout_s=timeout_s, transport=transport, sleeper=sleeper)

    def t2i(self, prompt: str, seed: int, expect_size: int | None = None) -> np.ndarray:
        request = GeneratorRequest(kind="t2i", seed=seed, prompt=prompt, n_views=1)
        doc = self._post("/t2i", request.to_payload())
        response = _decode_image_payloads(doc, "t2i")
        response.expect_count(1, "t2i")
        return _fit_size(decode_png(response.images[0]), expect_size, "t2i")

    def nvs(
        self, image: np.ndarray, seed: int, n_views: int = 4, expect_size: int | None = None
    ) -> list[np.ndarray]:
        request = GeneratorRequest(
            kind="nvs",
            seed=seed,
            image_b64=base64.b64encode(encode_png(image)).decode("ascii"),
            n_views=n_views,
        )
        # The NVS endpoint may live on a different host than /t2i.
        base, self._base = self._base, self._nvs_base
        try:
            doc = self._post("/nvs", request.to_payload())
        finally:
            self._base = base
        response = _decode_image_payloads(doc, "nvs")
        response.expect_count(n_views, "nvs")
        return [_fit_size(decode_png(b), expect_size, "nvs") for b in response.images]


@dataclass
class OfflineGeneratorClient:
    """Deterministic procedural backend with the same call surface.

    t2i derives a scene from the prompt words (seed fills unstated fields)
    and renders its front view; nvs recovers the scene from the conditioning
    view and re-renders all four azimuths, sharp. Degradation that emulates
    NVS blur is applied by the pipeline on the assembled record, where the
    source retag belongs.
    """

    view_size: int = 16
    generator_id: str = "procedural-offline"

    def t2i(self, prompt: str, seed: int, expect_size: int | None = None) -> np.ndarray:
        scene = scene_from_prompt(prompt, seed)
        view = render_views(scene, self.view_size)[0]
        return _fit_size(view, expect_size, "t2i")

    def nvs(
        self, image: np.ndarray, seed: int, n_views: int = 4, expect_size: int | None = None
    ) -> list[np.ndarray]:
        if n_views != 4:
            raise ProtocolError(f"offline nvs renders exactly 4 views, got n_views={n_views}")
        scene = scene_from_view(image)
        return [_fit_size(v, expect_size, "nvs") for v in render_views(scene, self.view_size)]


class HttpCaptionerClient(_HttpBase):
    """Remote captioner/scorer sharing one endpoint."""

    def __init__(self, base_url: str | None = None, timeout_s: float | None = None,
                 transport=None, sleeper=time.sleep):
        super().__init__(
            base_url or os.environ.get(ENV_CAPTIONER_URL, ""),
            timeout_s=timeout_s, transport=transport, sleeper=sleeper,
        )

    def caption(self, grid: np.ndarray, mode: str) -> str:
        if mode not in CAPTION_TEMPLATE_IDS:
            raise ConfigError(f"caption mode must be 'short' or 'long', got {mode!r}")
        doc = self._post("/caption", {
            "grid": base64.b64encode(encode_png(grid)).decode("ascii"),
            "mode": mode,
            "prompt_template_id": CAPTION_TEMPLATE_IDS[mode],
        })
        if "caption" not in doc:
            raise ProtocolError("captioner response lacks a 'caption' field")
        return str(doc["caption"])

    def score(self, grid: np.ndarray, family: str = "synthetic") -> str:
        if family not in SCORE_TEMPLATE_IDS:
            raise ConfigError(f"score family must be one of {sorted(SCORE_TEMPLATE_IDS)}, got {family!r}")
        doc = self._post("/score", {
            "grid": base64.b64encode(encode_png(grid)).decode("ascii"),
            "prompt_template_id": SCORE_TEMPLATE_IDS[family],
        })
        if "text" not in doc:
            raise ProtocolError("scorer response lacks a 'text' field")
        return str(doc["text"])


@dataclass
class OfflineCaptionerClient:
    """Caption text derived from the recovered scene; deterministic."""

    long_suffix: str = (
        "The object is shown from four azimuths at ninety-degree spacing, "
        "rendered object-centric on a plain white background with soft "
        "diffuse shading and consistent colors across all views."
    )

    def caption(self, grid: np.ndarray, mode: str) -> str:
        from .grids import split_grid
        from .render import describe_scene

        if mode not in CAPTION_TEMPLATE_IDS:
            raise ConfigError(f"caption mode must be 'short' or 'long', got {mode!r}")
        scene = scene_from_view(split_grid(grid)[0])
        base = describe_scene(scene)
        if mode == "short":
            return base
        return f"{base}. {self.long_suffix}"
