"""On-disk record shards: round trips, checksums, and index integrity."""

import json

import numpy as np
import pytest

from b3d.errors import IntegrityError, ParameterError
from b3d.quality import QualityLabel
from b3d.records import MultiViewRecord, PipelineStage
from b3d.render import render_toy_dataset
from b3d.sources import DataSource
from b3d.storage import (
    INDEX_NAME,
    SIDECAR_NAME,
    read_record_files,
    read_shard,
    write_record_files,
    write_shard,
)


def _records(n, view_size=8, seed=0):
    return render_toy_dataset(n, view_size=view_size, rng=np.random.default_rng(seed))


def _decorated_record():
    record = _records(1, seed=5)[0]
    record = record.with_caption("short", "a small blue cube on a white background")
    record = record.with_caption("long", "a small blue cube, rendered from four azimuths")
    return record.with_quality(QualityLabel(4, "sharp and consistent"))


def test_record_round_trip_preserves_everything(tmp_path):
    record = _decorated_record()
    write_record_files(record, tmp_path / "rec")
    loaded = read_record_files(tmp_path / "rec")
    assert loaded == record
    # images byte-for-byte, not merely visually close
    for a, b in zip(loaded.views, record.views):
        assert np.array_equal(a, b)


def test_round_trip_of_100_records(tmp_path):
    records = _records(100)
    write_shard(records, tmp_path / "shard")
    loaded = read_shard(tmp_path / "shard")
    assert loaded == records


def test_shard_preserves_write_order(tmp_path):
    records = _records(12, seed=3)
    write_shard(records, tmp_path / "shard")
    loaded = read_shard(tmp_path / "shard")
    assert [r.record_id for r in loaded] == [r.record_id for r in records]


def test_tampered_image_byte_raises_integrity_error(tmp_path):
    record = _records(1)[0]
    write_record_files(record, tmp_path / "rec")
    target = tmp_path / "rec" / "view2.png"
    blob = bytearray(target.read_bytes())
    blob[-1] ^= 0xFF
    target.write_bytes(bytes(blob))
    with pytest.raises(IntegrityError) as err:
        read_record_files(tmp_path / "rec")
    assert record.record_id in str(err.value)


def test_tampered_record_id_detected(tmp_path):
    record = _records(1)[0]
    write_record_files(record, tmp_path / "rec")
    sidecar_path = tmp_path / "rec" / SIDECAR_NAME
    doc = json.loads(sidecar_path.read_text())
    doc["record_id"] = "0" * 64
    sidecar_path.write_text(json.dumps(doc))
    with pytest.raises(IntegrityError, match="mismatch"):
        read_record_files(tmp_path / "rec")


def test_missing_sidecar(tmp_path):
    (tmp_path / "rec").mkdir()
    with pytest.raises(IntegrityError, match="sidecar"):
        read_record_files(tmp_path / "rec")


def test_empty_slice_rejected(tmp_path):
    with pytest.raises(ParameterError):
        write_shard([], tmp_path / "shard")


def test_read_shard_requires_index(tmp_path):
    (tmp_path / "shard").mkdir()
    with pytest.raises(IntegrityError, match=INDEX_NAME):
        read_shard(tmp_path / "shard")


def test_read_shard_rejects_unknown_version(tmp_path):
    records = _records(2)
    write_shard(records, tmp_path / "shard")
    index_path = tmp_path / "shard" / INDEX_NAME
    doc = json.loads(index_path.read_text())
    doc["version"] = 99
    index_path.write_text(json.dumps(doc))
    with pytest.raises(IntegrityError, match="version"):
        read_shard(tmp_path / "shard")


def test_unset_quality_and_captions_stay_unset(tmp_path):
    record = _records(1, seed=9)[0]
    assert record.quality is None
    write_record_files(record, tmp_path / "rec")
    loaded = read_record_files(tmp_path / "rec")
    assert loaded.quality is None
    assert loaded.caption_short is None and loaded.caption_long is None


def test_stage_and_source_round_trip(tmp_path):
    record = _records(1, seed=2)[0]
    record = record.with_source(DataSource.SINGLE_VIEW_2D)
    write_record_files(record, tmp_path / "rec")
    loaded = read_record_files(tmp_path / "rec")
    assert loaded.source is DataSource.SINGLE_VIEW_2D
    assert loaded.stage is PipelineStage.ASSEMBLED
