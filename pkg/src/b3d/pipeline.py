"""Staged, resumable generation pipeline: prompts -> t2i -> nvs -> grid -> disk.

Each prompt flows through a fixed stage order. Stage pools are bounded thread
pools connected by bounded queues (backpressure instead of unbounded buffers),
and all manifest mutation happens on the single writer side, which is also the
only place the manifest file is saved.

Determinism contract: the per-record seed is derived from (global seed, prompt
index) alone, so outputs never depend on worker scheduling. Combined with the
manifest's (prompt_index, record_id) ordering and atomic whole-file saves, a
partial run plus a resume produces byte-identical artifacts to one
uninterrupted run.

Failure policy: a record that fails any stage is quarantined as a manifest
entry at the failed stage with the error text; the run keeps going. Only
storage errors abort the run — if the output directory is broken there is
nothing useful left to do.
"""

from __future__ import annotations

import logging
import os
import queue
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clients import OfflineGeneratorClient
from .errors import B3DError, ConfigError, ParameterError
from .manifest import (
    DatasetManifest,
    ManifestEntry,
    entry_for_record,
    load_manifest,
    save_manifest,
)
from .records import MultiViewRecord, PipelineStage
from .render import degrade_views, scene_from_view, scene_to_provenance
from .seeds import derive_seed, spawn_rng
from .sources import DataSource
from .storage import SIDECAR_NAME, write_record_files

log = logging.getLogger("b3d.pipeline")

MANIFEST_NAME = "manifest.jsonl"
RECORDS_DIRNAME = "records"

_STOP = object()


def load_prompt_bank(path) -> list[str]:
    """One prompt per line, UTF-8; blank lines skipped, exact duplicates dropped
    (first occurrence wins)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"prompt bank {path} does not exist")
    raw = path.read_bytes()
    prompts: list[str] = []
    seen: set[str] = set()
    for lineno, line in enumerate(raw.split(b"\n"), start=1):
        try:
            text = line.decode("utf-8").strip()
        except UnicodeDecodeError:
            raise ConfigError(f"prompt bank {path}: invalid UTF-8 on line {lineno}") from None
        if not text or text in seen:
            continue
        seen.add(text)
        prompts.append(text)
    if not prompts:
        raise ConfigError(f"prompt bank {path} contains no prompts")
    return prompts


def t2i_generate(client, prompt: str, seed: int, expect_size: int | None = None) -> np.ndarray:
    """One text-to-image call; retry/backoff lives inside the client."""
    return client.t2i(prompt, seed, expect_size=expect_size)


def nvs_generate(
    client, image: np.ndarray, seed: int, n_views: int = 4, expect_size: int | None = None
) -> list[np.ndarray]:
    """One novel-view call conditioned on `image`."""
    return client.nvs(image, seed, n_views=n_views, expect_size=expect_size)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything run_pipeline needs; validated on construction.

    `prompt_bank` is a path to a prompt file, or an in-memory sequence of
    prompts (same blank/duplicate handling). `generator` is any object with
    the generator client call surface; None selects the offline procedural
    backend. `degrade_sigma > 0` blurs views of each assembled record and
    retags it as the lower-fidelity synthetic source.
    """

    prompt_bank: object
    out_dir: object
    view_size: int = 16
    seed: int = 0
    n_workers: int = 2
    queue_size: int = 8
    target_count: int | None = None
    source: DataSource = DataSource.SYNTHETIC_NVS_B
    degrade_sigma: float = 0.0
    degrade_n: int = 3
    checkpoint_every: int = 1
    generator: object = None

    def __post_init__(self) -> None:
        if self.view_size < 2 or self.view_size % 2:
            raise ConfigError(f"view_size must be even and >= 2, got {self.view_size}")
        if self.n_workers < 1:
            raise ConfigError(f"n_workers must be >= 1, got {self.n_workers}")
        if self.queue_size < 1:
            raise ConfigError(f"queue_size must be >= 1, got {self.queue_size}")
        if self.target_count is not None and self.target_count < 1:
            raise ConfigError(f"target_count must be >= 1, got {self.target_count}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if self.degrade_sigma < 0:
            raise ConfigError(f"degrade_sigma must be >= 0, got {self.degrade_sigma}")
        if not 0 <= self.degrade_n <= 4:
            raise ConfigError(f"degrade_n must be in [0, 4], got {self.degrade_n}")
        if not isinstance(self.source, DataSource):
            raise ConfigError(f"source must be a DataSource, got {self.source!r}")

    def resolve_prompts(self) -> list[str]:
        bank = self.prompt_bank
        if isinstance(bank, (str, os.PathLike)):
            prompts = load_prompt_bank(bank)
        else:
            prompts, seen = [], set()
            for text in bank:
                text = str(text).strip()
                if text and text not in seen:
                    seen.add(text)
                    prompts.append(text)
            if not prompts:
                raise ConfigError("prompt bank sequence contains no prompts")
        if self.target_count is not None:
            prompts = prompts[: self.target_count]
        return prompts


def _record_seed(config: PipelineConfig, prompt_index: int) -> int:
    return derive_seed(config.seed, "record", prompt_index)


def _build_record(generator, config: PipelineConfig, prompt_index: int, prompt: str,
                  front: np.ndarray, views: list[np.ndarray], seed: int) -> MultiViewRecord:
    # Scene parameters recovered from the conditioning image make the record
    # trainable (conditioning needs shape/hue). For the offline backend this
    # is exactly the scene the views were rendered from; for remote backends
    # it is best-effort image analysis.
    scene = scene_from_view(front)
    provenance = {
        **scene_to_provenance(scene),
        "generator": getattr(generator, "generator_id", type(generator).__name__),
        "seed": seed,
        "tick": prompt_index,
    }
    record = MultiViewRecord.from_views(views, config.source, prompt, provenance)
    if config.degrade_sigma > 0 and config.degrade_n > 0:
        record = degrade_views(
            record,
            blur_sigma=config.degrade_sigma,
            n_blurred=config.degrade_n,
            rng=spawn_rng(config.seed, "degrade", prompt_index),
        )
    return record


def _failed_entry(config: PipelineConfig, prompt_index: int, prompt: str, error: str) -> ManifestEntry:
    return ManifestEntry(
        record_id=f"failed-{prompt_index:06d}",
        source=config.source,
        stage=PipelineStage.FAILED,
        prompt_index=prompt_index,
        prompt=prompt,
        error=error,
        tick=prompt_index,
    )


def record_paths(record: MultiViewRecord) -> tuple[str, ...]:
    """Manifest-relative paths for a persisted record's files."""
    base = f"{RECORDS_DIRNAME}/{record.record_id}"
    return tuple(f"{base}/view{i}.png" for i in range(4)) + (f"{base}/{SIDECAR_NAME}",)


def record_dir_for_entry(root, entry: ManifestEntry) -> Path:
    if not entry.paths:
        raise ParameterError(f"entry {entry.record_id} has no stored files")
    return (Path(root) / entry.paths[0]).parent


def run_pipeline(config: PipelineConfig) -> DatasetManifest:
    """Drive every pending prompt through t2i -> nvs -> assemble -> persist."""
    prompts = config.resolve_prompts()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records_dir = out_dir / RECORDS_DIRNAME
    manifest_path = out_dir / MANIFEST_NAME

    if manifest_path.exists():
        manifest = load_manifest(manifest_path)
        log.info("resuming from %s (%d entries)", manifest_path, len(manifest.entries))
    else:
        manifest = DatasetManifest()
    done = manifest.completed_prompt_indices()
    todo = [(i, p) for i, p in enumerate(prompts) if i not in done]
    if not todo:
        save_manifest(manifest, manifest_path)
        return manifest

    generator = config.generator if config.generator is not None else OfflineGeneratorClient(
        view_size=config.view_size
    )

    t2i_q: queue.Queue = queue.Queue(maxsize=config.queue_size)
    nvs_q: queue.Queue = queue.Queue(maxsize=config.queue_size)
    done_q: queue.Queue = queue.Queue(maxsize=config.queue_size)
    stop = threading.Event()

    def feed() -> None:
        for item in todo:
            if stop.is_set():
                break
            t2i_q.put(item)
        t2i_q.put(_STOP)

    def t2i_worker() -> None:
        while True:
            item = t2i_q.get()
            if item is _STOP:
                t2i_q.put(_STOP)  # release sibling workers
                return
            index, prompt = item
            if stop.is_set():
                continue
            seed = _record_seed(config, index)
            try:
                front = t2i_generate(generator, prompt, seed, expect_size=config.view_size)
            except Exception as exc:
                done_q.put(("fail", index, prompt, f"t2i: {exc}"))
                continue
            nvs_q.put(("img", index, prompt, front, seed))

    def nvs_worker() -> None:
        while True:
            item = nvs_q.get()
            if item is _STOP:
                nvs_q.put(_STOP)
                return
            _, index, prompt, front, seed = item
            if stop.is_set():
                continue
            try:
                views = nvs_generate(generator, front, seed, n_views=4, expect_size=config.view_size)
                record = _build_record(generator, config, index, prompt, front, views, seed)
            except Exception as exc:
                done_q.put(("fail", index, prompt, f"nvs: {exc}"))
                continue
            done_q.put(("record", index, record))

    def close_stages() -> None:
        for t in t2i_threads:
            t.join()
        nvs_q.put(_STOP)
        for t in nvs_threads:
            t.join()
        done_q.put(_STOP)

    feeder = threading.Thread(target=feed, name="b3d-feeder", daemon=True)
    t2i_threads = [
        threading.Thread(target=t2i_worker, name=f"b3d-t2i-{k}", daemon=True)
        for k in range(config.n_workers)
    ]
    nvs_threads = [
        threading.Thread(target=nvs_worker, name=f"b3d-nvs-{k}", daemon=True)
        for k in range(config.n_workers)
    ]
    closer = threading.Thread(target=close_stages, name="b3d-closer", daemon=True)
    for t in (feeder, *t2i_threads, *nvs_threads, closer):
        t.start()

    storage_failure: B3DError | None = None
    since_checkpoint = 0
    try:
        while True:
            item = done_q.get()
            if item is _STOP:
                break
            if stop.is_set():
                continue  # aborting: drain without recording
            if item[0] == "record":
                _, index, record = item
                try:
                    write_record_files(record, records_dir / record.record_id)
                except OSError as exc:
                    storage_failure = B3DError(
                        f"storage failure under {records_dir}: {exc}"
                    )
                    stop.set()
                    continue
                entry = entry_for_record(record, index, paths=record_paths(record))
            else:
                _, index, prompt, error = item
                log.warning("prompt %d quarantined: %s", index, error)
                entry = _failed_entry(config, index, prompt, error)
            manifest.add(entry)
            since_checkpoint += 1
            if since_checkpoint >= config.checkpoint_every:
                save_manifest(manifest, manifest_path)
                since_checkpoint = 0
    except KeyboardInterrupt:
        stop.set()
        save_manifest(manifest, manifest_path)
        log.warning("interrupted; manifest checkpointed at %d entries", len(manifest.entries))
        raise
    finally:
        stop.set()
        closer.join(timeout=30)

    save_manifest(manifest, manifest_path)
    if storage_failure is not None:
        raise storage_failure
    return manifest
