"""Record shards: lossless on-disk persistence with per-file checksums.

A shard is a directory holding one subdirectory per record (named by the
record id) with the four views as PNG files plus one JSON sidecar carrying
everything else — source, stage, prompt, captions, quality, provenance, and
the SHA-256 of each encoded view file. An index file lists the records in
write order so reads reproduce the original sequence.

PNG is mandatory here: blur statistics drive curation, and a lossy format
would smear its own artifacts into them.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from .errors import IntegrityError, ParameterError
from .images import decode_png, encode_png
from .quality import QualityLabel
from .records import MultiViewRecord, PipelineStage
from .sources import DataSource

INDEX_NAME = "shard-index.json"
SIDECAR_NAME = "record.json"
SHARD_VERSION = 1


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _quality_to_json(quality: QualityLabel | None):
    if quality is None:
        return None
    return {"score": quality.score, "rationale": quality.rationale}


def _quality_from_json(data) -> QualityLabel | None:
    if data is None:
        return None
    return QualityLabel(score=int(data["score"]), rationale=data.get("rationale") or "")


def write_record_files(record: MultiViewRecord, record_dir: Path) -> dict:
    """Persist one record under `record_dir`; returns its sidecar document."""
    record_dir.mkdir(parents=True, exist_ok=True)
    view_entries = []
    for i, view in enumerate(record.views):
        name = f"view{i}.png"
        payload = encode_png(view)
        (record_dir / name).write_bytes(payload)
        view_entries.append({"file": name, "sha256": _sha256(payload)})
    sidecar = {
        "record_id": record.record_id,
        "source": record.source.tag,
        "stage": record.stage.value,
        "prompt": record.prompt,
        "caption_short": record.caption_short,
        "caption_long": record.caption_long,
        "quality": _quality_to_json(record.quality),
        "provenance": dict(record.provenance),
        "views": view_entries,
    }
    tmp = record_dir / (SIDECAR_NAME + ".tmp")
    tmp.write_text(json.dumps(sidecar, sort_keys=True, indent=1), encoding="utf-8")
    os.replace(tmp, record_dir / SIDECAR_NAME)
    return sidecar


def read_record_files(record_dir: Path) -> MultiViewRecord:
    """Load one record, verifying checksums and the content id."""
    record_dir = Path(record_dir)
    sidecar_path = record_dir / SIDECAR_NAME
    if not sidecar_path.is_file():
        raise IntegrityError(f"record directory {record_dir} has no sidecar")
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    record_id = sidecar["record_id"]
    views = []
    for entry in sidecar["views"]:
        payload = (record_dir / entry["file"]).read_bytes()
        if _sha256(payload) != entry["sha256"]:
            raise IntegrityError(
                f"record {record_id}: checksum mismatch on {entry['file']}"
            )
        views.append(decode_png(payload))
    record = MultiViewRecord.from_views(
        views,
        DataSource.from_tag(sidecar["source"]),
        prompt=sidecar.get("prompt", ""),
        provenance=sidecar.get("provenance") or {},
        stage=PipelineStage.from_tag(sidecar["stage"]),
    )
    if record.record_id != record_id:
        raise IntegrityError(
            f"record {record_id}: view bytes hash to {record.record_id[:12]}..., id mismatch"
        )
    if sidecar.get("caption_short") is not None:
        record = record.with_caption("short", sidecar["caption_short"])
    if sidecar.get("caption_long") is not None:
        record = record.with_caption("long", sidecar["caption_long"])
    quality = _quality_from_json(sidecar.get("quality"))
    if quality is not None:
        record = record.with_quality(quality)
    return record


def write_shard(records, shard_dir) -> dict:
    """Write records into `shard_dir`; returns the shard index document."""
    records = list(records)
    if not records:
        raise ParameterError("write_shard needs at least one record")
    shard_dir = Path(shard_dir)
    shard_dir.mkdir(parents=True, exist_ok=True)
    order = []
    for record in records:
        write_record_files(record, shard_dir / record.record_id)
        order.append(record.record_id)
    index = {"version": SHARD_VERSION, "records": order}
    tmp = shard_dir / (INDEX_NAME + ".tmp")
    tmp.write_text(json.dumps(index, indent=1), encoding="utf-8")
    os.replace(tmp, shard_dir / INDEX_NAME)
    return index


def read_shard(shard_dir) -> list[MultiViewRecord]:
    """Load every record in a shard, in its index order."""
    shard_dir = Path(shard_dir)
    index_path = shard_dir / INDEX_NAME
    if not index_path.is_file():
        raise IntegrityError(f"{shard_dir} is not a shard (no {INDEX_NAME})")
    index = json.loads(index_path.read_text(encoding="utf-8"))
    if index.get("version") != SHARD_VERSION:
        raise IntegrityError(
            f"shard {shard_dir}: unsupported version {index.get('version')!r}"
        )
    return [read_record_files(shard_dir / record_id) for record_id in index["records"]]
