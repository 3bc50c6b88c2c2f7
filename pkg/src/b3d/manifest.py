"""Dataset manifest: one header line plus one JSON line per record.

The manifest is the pipeline's source of truth for what has been produced.
Entries are kept sorted by prompt index so a resumed run writes exactly the
bytes an uninterrupted run would have written; saves are atomic
(temp file + rename) so a crash never leaves a half-written manifest.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError, IntegrityError, ParameterError
from .records import MultiViewRecord, PipelineStage
from .sources import DataSource

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class ManifestEntry:
    """One produced (or failed) record, as recorded in the manifest."""

    record_id: str
    source: DataSource
    stage: PipelineStage
    prompt_index: int
    prompt: str = ""
    paths: tuple[str, ...] = ()  # relative to the manifest's directory
    quality_score: int | None = None
    caption_short: str | None = None
    caption_long: str | None = None
    error: str | None = None
    tick: int | None = None

    def to_json(self) -> str:
        doc = {
            "record_id": self.record_id,
            "source": self.source.tag,
            "stage": self.stage.value,
            "prompt_index": self.prompt_index,
            "prompt": self.prompt,
            "paths": list(self.paths),
            "quality_score": self.quality_score,
            "caption_short": self.caption_short,
            "caption_long": self.caption_long,
            "error": self.error,
            "tick": self.tick,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "ManifestEntry":
        doc = json.loads(line)
        return cls(
            record_id=doc["record_id"],
            source=DataSource.from_tag(doc["source"]),
            stage=PipelineStage.from_tag(doc["stage"]),
            prompt_index=int(doc["prompt_index"]),
            prompt=doc.get("prompt", ""),
            paths=tuple(doc.get("paths") or ()),
            quality_score=doc.get("quality_score"),
            caption_short=doc.get("caption_short"),
            caption_long=doc.get("caption_long"),
            error=doc.get("error"),
            tick=doc.get("tick"),
        )


def entry_for_record(
    record: MultiViewRecord, prompt_index: int, paths=(), error: str | None = None
) -> ManifestEntry:
    return ManifestEntry(
        record_id=record.record_id,
        source=record.source,
        stage=record.stage,
        prompt_index=prompt_index,
        prompt=record.prompt,
        paths=tuple(paths),
        quality_score=None if record.quality is None else record.quality.score,
        caption_short=record.caption_short,
        caption_long=record.caption_long,
        error=error,
        tick=record.provenance.get("tick"),
    )


@dataclass
class DatasetManifest:
    """Ordered collection of manifest entries plus derived counts."""

    version: int = MANIFEST_VERSION
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._check_unique()

    def _check_unique(self) -> None:
        seen: set[str] = set()
        for e in self.entries:
            if e.record_id in seen:
                raise IntegrityError(f"duplicate record_id in manifest: {e.record_id}")
            seen.add(e.record_id)

    def counts(self) -> dict[tuple[str, str], int]:
        """Tally per (source tag, stage tag)."""
        out: dict[tuple[str, str], int] = {}
        for e in self.entries:
            key = (e.source.tag, e.stage.value)
            out[key] = out.get(key, 0) + 1
        return out

    def completed_prompt_indices(self) -> set[int]:
        """Prompt indices that need no further work (done or quarantined)."""
        return {
            e.prompt_index
            for e in self.entries
            if e.stage in (PipelineStage.ASSEMBLED, PipelineStage.FAILED)
        }

    def add(self, entry: ManifestEntry) -> None:
        if any(e.record_id == entry.record_id for e in self.entries):
            raise IntegrityError(f"duplicate record_id in manifest: {entry.record_id}")
        self.entries.append(entry)
        # Stable output order regardless of worker completion order.
        self.entries.sort(key=lambda e: (e.prompt_index, e.record_id))

    def replace_entry(self, entry: ManifestEntry) -> None:
        for i, e in enumerate(self.entries):
            if e.record_id == entry.record_id:
                self.entries[i] = entry
                return
        raise ParameterError(f"no manifest entry with record_id {entry.record_id}")


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Atomic write: header line, then one entry per line."""
    path = Path(path)
    header = {
        "version": manifest.version,
        "n_records": len(manifest.entries),
        "counts": {f"{src}/{stage}": n for (src, stage), n in sorted(manifest.counts().items())},
    }
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    lines.extend(e.to_json() for e in manifest.entries)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def load_manifest(path, strict: bool = False) -> DatasetManifest:
    """Parse and verify a manifest file.

    With strict=True every referenced file must exist (relative to the
    manifest's own directory) and the stored counts must match a recount.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"manifest file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise IntegrityError(f"manifest {path} is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"manifest {path}: unparseable header ({exc})") from None
    if header.get("version") != MANIFEST_VERSION:
        raise IntegrityError(f"manifest {path}: unsupported version {header.get('version')!r}")
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            entries.append(ManifestEntry.from_json(line))
        except (json.JSONDecodeError, KeyError) as exc:
            raise IntegrityError(f"manifest {path} line {lineno}: {exc}") from None
    manifest = DatasetManifest(version=MANIFEST_VERSION, entries=entries)
    if header.get("n_records") != len(entries):
        raise IntegrityError(
            f"manifest {path}: header says {header.get('n_records')} records, found {len(entries)}"
        )
    stored = header.get("counts", {})
    recomputed = {f"{src}/{stage}": n for (src, stage), n in manifest.counts().items()}
    if stored != recomputed:
        raise IntegrityError(f"manifest {path}: stored counts disagree with recount")
    if strict:
        root = path.parent
        for e in entries:
            for rel in e.paths:
                if not (root / rel).is_file():
                    raise IntegrityError(
                        f"manifest {path}: record {e.record_id} references missing file {rel}"
                    )
    return manifest
