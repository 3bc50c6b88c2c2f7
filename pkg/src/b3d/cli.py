"""Command-line surface for the multi-view bootstrap toolkit.

Five subcommands mirror the workflow: ``generate`` synthesizes a dataset
directory, ``curate`` scores/filters/captions an existing one, ``train``
fits the toy denoiser, ``sweep`` runs the timestep-floor ablation, and
``eval`` compares a sample set against a reference set.

The shared flags (``--config``, ``--seed``, ``--jobs``, ``--offline``,
``--out``) are accepted by every subcommand. ``--config`` points at a flat
``dotted.key = value`` document; explicit flags override config values,
which override built-in defaults. All randomness in a run derives from the
single ``--seed``.

Exit codes are stable: 0 success, 2 configuration error, 3 invalid
parameter or data, 4 remote service failure, 5 integrity violation.
Interrupts checkpoint progress and exit 130; anything else is a bug and
surfaces as a traceback.
"""

from __future__ import annotations

import functools
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import click
import numpy as np

from . import configdoc
from .ablation import (
    DEFAULT_SEEDS,
    ablation_sweep,
    blurred_mixture_dataset,
    disjoint_condition_dataset,
)
from .checkpoints import save_checkpoint
from .clients import (
    HttpCaptionerClient,
    HttpGeneratorClient,
    OfflineCaptionerClient,
    OfflineGeneratorClient,
)
from .curation import (
    FilterRule,
    caption_length_histogram,
    caption_length_table,
    caption_record,
    composite_quality,
    filter_records,
    remote_quality,
    score_histogram,
    score_histogram_table,
    score_records,
)
from .errors import B3DError, ConfigError, ParameterError
from .evalmetrics import eval_report, toy_embedder
from .manifest import DatasetManifest, entry_for_record, load_manifest, save_manifest
from .pipeline import MANIFEST_NAME, PipelineConfig, record_dir_for_entry, run_pipeline
from .policy import policy_from_config, validate_policy
from .records import MultiViewRecord, PipelineStage
from .sources import DataSource
from .storage import read_record_files, write_record_files
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

EMBEDDERS = {"toy": toy_embedder}

# Filenames a run directory is expected to contain; documented in --help so
# downstream tooling can rely on the layout staying put.
CHECKPOINT_NAME = "model.ckpt"
LOSS_CURVE_NAME = "loss_curve.tsv"
PER_SOURCE_LOSS_NAME = "per_source_loss.tsv"
SWEEP_REPORT_NAME = "sweep_report.tsv"
SWEEP_PLOT_NAME = "sweep_plot.tsv"
EVAL_REPORT_JSON = "eval_report.json"
EVAL_REPORT_TABLE = "eval_report.tsv"
CURATION_DIR = "curation"
SCORE_HIST_NAME = "score_histogram.tsv"
CAPTION_HIST_NAME = "caption_lengths.tsv"
KEPT_IDS_NAME = "kept_ids.txt"
REJECTED_IDS_NAME = "rejected_ids.txt"


# ------------------------------------------------------------ run config


def _default_jobs() -> int:
    return os.cpu_count() or 1


@dataclass(frozen=True)
class RunConfig:
    """Fully validated settings for one CLI invocation.

    Construction validates everything transitively — the training config
    (which checks its own fields), the timestep policy against the noise
    schedule it will run under, the filter rule, endpoint URLs — so a bad
    config fails before any work starts rather than mid-run.
    """

    seed: int = 0
    jobs: int = field(default_factory=_default_jobs)
    offline: bool = True
    out_dir: Path | None = None
    # generation
    view_size: int = 16
    count: int | None = None
    source: DataSource = DataSource.SYNTHETIC_NVS_B
    degrade_sigma: float = 0.0
    degrade_n: int = 3
    queue_size: int = 8
    checkpoint_every: int = 1
    # training / sweeping
    train: TrainConfig = field(default_factory=TrainConfig)
    # curation
    rule: FilterRule = field(default_factory=FilterRule)
    # remote endpoints (used only with --remote)
    t2i_url: str = ""
    nvs_url: str = ""
    captioner_url: str = ""
    # evaluation
    embedder: str = "toy"

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.embedder not in EMBEDDERS:
            raise ConfigError(
                f"unknown embedder {self.embedder!r} (known: {sorted(EMBEDDERS)})"
            )
        for label, url in (("t2i", self.t2i_url), ("nvs", self.nvs_url),
                           ("captioner", self.captioner_url)):
            if url and not url.startswith(("http://", "https://")):
                raise ConfigError(f"{label} URL must be http(s), got {url!r}")
        # The policy is validated against the exact schedule training will
        # build, so range errors surface here and not at step 0.
        report = validate_policy(self.train.active_policy(), self.train.build_schedule())
        if not report.ok:
            raise ConfigError(
                f"timestep policy invalid: {'; '.join(report.violations)}"
            )

    @classmethod
    def from_doc(
        cls,
        doc: dict[str, str],
        *,
        seed: int | None = None,
        jobs: int | None = None,
        offline: bool | None = None,
        out_dir: str | os.PathLike | None = None,
    ) -> "RunConfig":
        """Build from a parsed config document plus explicit flag overrides.

        Flags win over document keys; document keys win over defaults.
        Unknown ``policy.*`` and ``filter.*`` sub-keys are rejected by
        their parsers; other unknown keys are ignored so one document can
        serve several subcommands.
        """

        def _int(key: str, fallback: int) -> int:
            return configdoc.get_int(doc, key, fallback)

        def _float(key: str, fallback: float) -> float:
            return configdoc.get_float(doc, key, fallback)

        def _str(key: str, fallback: str) -> str:
            return configdoc.get_str(doc, key, fallback)

        seed_v = seed if seed is not None else _int("run.seed", 0)
        jobs_v = jobs if jobs is not None else _int("run.jobs", _default_jobs())
        if offline is not None:
            offline_v = offline
        else:
            offline_v = configdoc.get_bool(doc, "run.offline", True)
        out_v: Path | None
        if out_dir is not None:
            out_v = Path(out_dir)
        else:
            raw_out = _str("run.out", "")
            out_v = Path(raw_out) if raw_out else None

        source_tag = _str("generate.source", DataSource.SYNTHETIC_NVS_B.tag)
        try:
            source = DataSource.from_tag(source_tag)
        except ParameterError as exc:
            raise ConfigError(f"generate.source: {exc}") from None

        count_raw = _int("generate.count", 0)
        hidden_raw = _str("train.hidden", "")
        if hidden_raw:
            try:
                hidden = tuple(int(part) for part in hidden_raw.split(","))
            except ValueError:
                raise ConfigError(
                    f"train.hidden must be comma-separated integers, got {hidden_raw!r}"
                ) from None
        else:
            hidden = TrainConfig.__dataclass_fields__["hidden"].default

        policy = None
        if any(k.startswith("policy.") for k in doc):
            policy = policy_from_config(doc)

        min_score = dict(FilterRule().min_score)
        for key in configdoc.subtree(doc, "filter.min_score"):
            short = key[len("filter.min_score."):]
            try:
                src = DataSource.from_tag(short)
            except ParameterError as exc:
                raise ConfigError(f"filter.min_score: {exc}") from None
            min_score[src] = configdoc.get_int(doc, key)
        try:
            rule = FilterRule(min_score)
        except ParameterError as exc:
            raise ConfigError(f"filter rule invalid: {exc}") from None

        train_cfg = TrainConfig(
            view_size=_int("train.view_size", 16),
            batch_size=_int("train.batch_size", 32),
            learning_rate=_float("train.learning_rate", 0.05),
            total_steps=_int("train.total_steps", 1000),
            seed=seed_v,
            policy=policy,
            schedule_kind=_str("train.schedule", "scaled-linear"),
            n_steps=_int("train.n_steps", 1000),
            beta_start=_float("train.beta_start", 1e-4),
            beta_end=_float("train.beta_end", 0.02),
            hidden=hidden,
            temb_dim=_int("train.temb_dim", 16),
            cond_dim=_int("train.cond_dim", 8),
            n_hue_bins=_int("train.n_hue_bins", 6),
            momentum=_float("train.momentum", 0.9),
        )

        return cls(
            seed=seed_v,
            jobs=jobs_v,
            offline=offline_v,
            out_dir=out_v,
            view_size=_int("generate.view_size", 16),
            count=count_raw or None,
            source=source,
            degrade_sigma=_float("generate.degrade_sigma", 0.0),
            degrade_n=_int("generate.degrade_n", 3),
            queue_size=_int("generate.queue_size", 8),
            checkpoint_every=_int("generate.checkpoint_every", 1),
            train=train_cfg,
            rule=rule,
            t2i_url=_str("remote.t2i_url", ""),
            nvs_url=_str("remote.nvs_url", ""),
            captioner_url=_str("remote.captioner_url", ""),
            embedder=_str("eval.embedder", "toy"),
        )


# ------------------------------------------------------------ plumbing


def _build_runconfig(ctx_params: dict) -> RunConfig:
    doc: dict[str, str] = {}
    if ctx_params.get("config_path"):
        doc = configdoc.load_path(ctx_params["config_path"])
    return RunConfig.from_doc(
        doc,
        seed=ctx_params.get("seed"),
        jobs=ctx_params.get("jobs"),
        offline=ctx_params.get("offline"),
        out_dir=ctx_params.get("out_dir"),
    )


def _require_out(rc: RunConfig) -> Path:
    if rc.out_dir is None:
        raise ConfigError("an output directory is required: pass --out or set run.out")
    rc.out_dir.mkdir(parents=True, exist_ok=True)
    return rc.out_dir


def _handled(fn):
    """Map domain errors to their stable exit codes; let bugs raise."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except B3DError as exc:
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(exc.exit_code) from exc
        except KeyboardInterrupt:
            click.echo("interrupted; progress checkpointed", err=True)
            raise SystemExit(130) from None

    return wrapper


def _global_options(fn):
    """The flag set every subcommand shares."""
    options = [
        click.option(
            "--config", "config_path", type=click.Path(path_type=Path),
            default=None, help="Flat dotted.key = value settings file.",
        ),
        click.option("--seed", type=int, default=None,
                      help="Root seed; every random draw derives from it."),
        click.option("--jobs", type=int, default=None,
                      help="Worker threads (default: logical cores)."),
        click.option("--offline/--remote", "offline", default=None,
                      help="Procedural backends (default) or HTTP services."),
        click.option("--out", "out_dir", type=click.Path(path_type=Path),
                      default=None, help="Output directory for this run."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _load_records(
    data_dir: Path, *, stages: tuple[PipelineStage, ...] = (PipelineStage.ASSEMBLED,)
) -> tuple[DatasetManifest, list[MultiViewRecord], list]:
    """Read a dataset directory back into records (digest-checked).

    Returns the manifest, the loaded records, and the matching manifest
    entries (same order). Entries at other stages are left alone.
    """
    manifest_path = Path(data_dir) / MANIFEST_NAME
    if not manifest_path.is_file():
        raise ConfigError(f"no manifest at {manifest_path}")
    manifest = load_manifest(manifest_path, strict=True)
    records: list[MultiViewRecord] = []
    entries = []
    for entry in manifest.entries:
        if entry.stage not in stages:
            continue
        record = read_record_files(record_dir_for_entry(data_dir, entry))
        records.append(record)
        entries.append(entry)
    return manifest, records, entries


def _dataset_by_source(records) -> dict[DataSource, list[MultiViewRecord]]:
    grouped: dict[DataSource, list[MultiViewRecord]] = {}
    for record in records:
        grouped.setdefault(record.source, []).append(record)
    return grouped


def _parse_int_list(text: str, what: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.split(",") if part.strip() != "")
    except ValueError:
        raise ParameterError(f"{what} must be comma-separated integers, got {text!r}") from None
    if not values:
        raise ParameterError(f"{what} must name at least one value")
    return values


def _format_curve(curve: np.ndarray) -> str:
    lines = ["step\tloss"]
    for step, loss in enumerate(curve):
        lines.append(f"{step}\t{float(loss):.17g}")
    return "\n".join(lines) + "\n"


def _format_per_source(per_source: dict) -> str:
    lines = ["source\tstep\tloss"]
    for source in sorted(per_source, key=lambda s: s.tag):
        for step, loss in per_source[source]:
            lines.append(f"{source.tag}\t{step}\t{float(loss):.17g}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ commands


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def main() -> None:
    """Desk-scale multi-view data bootstrap: generate, curate, train, eval."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@main.command("generate")
@_global_options
@click.option("--prompts", "prompt_bank", type=click.Path(path_type=Path),
              required=True, help="Prompt bank file, one prompt per line.")
@click.option("--count", type=int, default=None,
              help="Stop after this many records (default: whole bank).")
@click.option("--source", "source_tag", type=str, default=None,
              help="Source tag to stamp on produced records.")
@click.option("--degrade-sigma", type=float, default=None,
              help="Blur sigma applied to a subset of views (0 = off).")
@_handled
def cmd_generate(config_path, seed, jobs, offline, out_dir, prompt_bank,
                 count, source_tag, degrade_sigma) -> None:
    """Synthesize a multi-view dataset directory from a prompt bank."""
    rc = _build_runconfig(locals())
    out = _require_out(rc)

    manifest_path = out / MANIFEST_NAME
    already = 0
    if manifest_path.is_file():
        already = len(load_manifest(manifest_path).completed_prompt_indices())

    source = rc.source if source_tag is None else DataSource.from_tag(source_tag)
    generator = None
    if not rc.offline:
        generator = HttpGeneratorClient(rc.t2i_url or None, rc.nvs_url or None)
    config = PipelineConfig(
        prompt_bank=prompt_bank,
        out_dir=out,
        view_size=rc.view_size,
        seed=rc.seed,
        n_workers=rc.jobs,
        queue_size=rc.queue_size,
        target_count=count if count is not None else rc.count,
        source=source,
        degrade_sigma=rc.degrade_sigma if degrade_sigma is None else degrade_sigma,
        degrade_n=rc.degrade_n,
        checkpoint_every=rc.checkpoint_every,
        generator=generator,
    )
    manifest = run_pipeline(config)

    done = len(manifest.completed_prompt_indices())
    click.echo(f"generated {max(done - already, 0)} new record(s); "
               f"{already} already complete")
    for (tag, stage), n in sorted(manifest.counts().items()):
        click.echo(f"  {tag}/{stage}\t{n}")
    click.echo(f"manifest: {manifest_path}")


@main.command("curate")
@_global_options
@click.option("--data", "data_dir", type=click.Path(path_type=Path), required=True,
              help="Dataset directory produced by `generate`.")
@click.option("--score", "do_score", is_flag=True, help="Score record quality 0-5.")
@click.option("--filter", "do_filter", is_flag=True,
              help="Partition records by per-source score thresholds.")
@click.option("--caption", "do_caption", is_flag=True,
              help="Attach short and long captions to each record.")
@click.option("--stats", "do_stats", is_flag=True,
              help="Write score and caption-length histogram tables.")
@_handled
def cmd_curate(config_path, seed, jobs, offline, out_dir, data_dir,
               do_score, do_filter, do_caption, do_stats) -> None:
    """Score, filter, caption, and summarize an existing dataset."""
    rc = _build_runconfig(locals())
    if not (do_score or do_filter or do_caption or do_stats):
        raise ConfigError("nothing to do: pass at least one of "
                          "--score/--filter/--caption/--stats")

    data_dir = Path(data_dir)
    manifest, records, entries = _load_records(data_dir)
    if not records:
        raise ParameterError(f"no assembled records under {data_dir}")
    curation_dir = data_dir / CURATION_DIR

    dirty = False
    if do_score:
        if rc.offline:
            scorer = composite_quality
        else:
            scorer_client = HttpCaptionerClient(rc.captioner_url or None)
            scorer = functools.partial(remote_quality, scorer_client)
        records = score_records(records, scorer, max_workers=rc.jobs)
        dirty = True
        click.echo(f"scored {len(records)} record(s)")

    if do_caption:
        captioner = OfflineCaptionerClient() if rc.offline \
            else HttpCaptionerClient(rc.captioner_url or None)
        captioned = []
        for record in records:
            record = caption_record(captioner, record, "short")
            record = caption_record(captioner, record, "long")
            captioned.append(record)
        records = captioned
        dirty = True
        click.echo(f"captioned {len(records)} record(s)")

    if dirty:
        # Persist updated sidecars and manifest entries so later invocations
        # (and --filter without --score) see the scores and captions.
        for entry, record in zip(entries, records):
            write_record_files(record, record_dir_for_entry(data_dir, entry))
            manifest.replace_entry(
                entry_for_record(record, entry.prompt_index,
                                 paths=entry.paths, error=entry.error)
            )
        save_manifest(manifest, data_dir / MANIFEST_NAME)

    if do_filter:
        kept, rejected = filter_records(records, rc.rule)
        by_source: dict[str, list[int]] = {}
        for record in kept:
            by_source.setdefault(record.source.tag, [0, 0])[0] += 1
        for record in rejected:
            by_source.setdefault(record.source.tag, [0, 0])[1] += 1
        for tag in sorted(by_source):
            k, r = by_source[tag]
            click.echo(f"  {tag}\tkept {k}\trejected {r}")
        click.echo(f"kept {len(kept)} rejected {len(rejected)}")
        curation_dir.mkdir(parents=True, exist_ok=True)
        (curation_dir / KEPT_IDS_NAME).write_text(
            "".join(f"{r.record_id}\n" for r in kept), encoding="utf-8")
        (curation_dir / REJECTED_IDS_NAME).write_text(
            "".join(f"{r.record_id}\n" for r in rejected), encoding="utf-8")

    if do_stats:
        curation_dir.mkdir(parents=True, exist_ok=True)
        score_path = curation_dir / SCORE_HIST_NAME
        score_path.write_text(score_histogram_table(score_histogram(records)),
                              encoding="utf-8")
        caption_path = curation_dir / CAPTION_HIST_NAME
        caption_path.write_text(
            caption_length_table(caption_length_histogram(records)), encoding="utf-8")
        click.echo(f"stats: {score_path} {caption_path}")


@main.command("train")
@_global_options
@click.option("--data", "data_dir", type=click.Path(path_type=Path), default=None,
              help="Train on a generated dataset directory.")
@click.option("--toy-scenes", type=int, default=12, show_default=True,
              help="Without --data: scenes in the procedural mixture.")
@click.option("--steps", type=int, default=None, help="Override train.total_steps.")
@_handled
def cmd_train(config_path, seed, jobs, offline, out_dir, data_dir,
              toy_scenes, steps) -> None:
    """Fit the toy denoiser and write checkpoint + loss curves."""
    rc = _build_runconfig(locals())
    out = _require_out(rc)
    config = rc.train
    if steps is not None:
        config = replace(config, total_steps=steps)

    if data_dir is not None:
        _, records, _ = _load_records(Path(data_dir))
        dataset = _dataset_by_source(records)
        if not dataset:
            raise ParameterError(f"no assembled records under {data_dir}")
    else:
        dataset = blurred_mixture_dataset(
            n_scenes=toy_scenes, view_size=config.view_size, seed=rc.seed)
    # Weight the mix uniformly over whatever sources the data actually has;
    # the default 50/50 mix only fits the two-source toy mixture.
    mix = {src: 1.0 / len(dataset) for src in dataset}
    config = replace(config, source_mix=mix)

    result = train(config, dataset)

    ckpt_path = out / CHECKPOINT_NAME
    save_checkpoint(ckpt_path, result.params, result.schedule,
                    extra_meta={"final_loss": result.final_loss,
                                "total_steps": config.total_steps,
                                "seed": config.seed})
    (out / LOSS_CURVE_NAME).write_text(_format_curve(result.loss_curve),
                                       encoding="utf-8")
    (out / PER_SOURCE_LOSS_NAME).write_text(
        _format_per_source(result.per_source_losses), encoding="utf-8")
    click.echo(f"final loss {result.final_loss:.6f} after {config.total_steps} steps")
    click.echo(f"checkpoint: {ckpt_path}")


@main.command("sweep")
@_global_options
@click.option("--T", "t_list", type=str, required=True,
              help="Comma-separated synthetic timestep floors, e.g. 0,200,600.")
@click.option("--seeds", "seeds_text", type=str, default=None,
              help="Comma-separated training seeds (default 0,1,2).")
@click.option("--data", "data_dir", type=click.Path(path_type=Path), default=None,
              help="Sweep over a generated dataset instead of the toy mixture.")
@click.option("--scenes", type=int, default=2, show_default=True,
              help="Without --data: hue bins in the procedural mixture.")
@click.option("--eval-samples", type=int, default=8, show_default=True,
              help="Samples drawn per trained model for the metrics.")
@click.option("--reverse-steps", type=int, default=40, show_default=True,
              help="Reverse-chain steps when sampling for evaluation.")
@_handled
def cmd_sweep(config_path, seed, jobs, offline, out_dir, t_list, seeds_text,
              data_dir, scenes, eval_samples, reverse_steps) -> None:
    """Ablate the synthetic-source timestep floor across seeds."""
    rc = _build_runconfig(locals())
    out = _require_out(rc)
    t_values = _parse_int_list(t_list, "--T")
    seeds = _parse_int_list(seeds_text, "--seeds") if seeds_text else DEFAULT_SEEDS

    if data_dir is not None:
        _, records, _ = _load_records(Path(data_dir))
        dataset = _dataset_by_source(records)
        if not dataset:
            raise ParameterError(f"no assembled records under {data_dir}")
    else:
        dataset = disjoint_condition_dataset(
            n_hue_bins=scenes, view_size=rc.train.view_size, seed=rc.seed)

    report = ablation_sweep(
        t_values, rc.train, dataset, seeds=seeds,
        eval_samples_per_run=eval_samples, n_reverse_steps=reverse_steps)

    report_path = out / SWEEP_REPORT_NAME
    report_path.write_text(report.render(), encoding="utf-8")
    (out / SWEEP_PLOT_NAME).write_text(report.render_plot_data(), encoding="utf-8")
    for t_floor, row in sorted(report.averaged_by_floor().items()):
        click.echo(f"  T={t_floor}\tsharpness {row['sharpness']:.6f}\t"
                   f"consistency {row['consistency']:.6f}\t"
                   f"cond_accuracy {row['cond_accuracy']:.3f}")
    click.echo(f"report: {report_path}")


@main.command("eval")
@_global_options
@click.option("--samples", "samples_dir", type=click.Path(path_type=Path),
              required=True, help="Dataset directory holding the generated samples.")
@click.option("--reference", "reference_dir", type=click.Path(path_type=Path),
              required=True, help="Dataset directory holding the reference set.")
@click.option("--embedder", "embedder_name", type=click.Choice(sorted(EMBEDDERS)),
              default=None, help="Embedding model (default from config, else toy).")
@_handled
def cmd_eval(config_path, seed, jobs, offline, out_dir, samples_dir,
             reference_dir, embedder_name) -> None:
    """Score a sample set against a reference set; write a report."""
    rc = _build_runconfig(locals())
    out = rc.out_dir if rc.out_dir is not None else Path(samples_dir)
    out.mkdir(parents=True, exist_ok=True)

    _, sample_records, _ = _load_records(Path(samples_dir))
    _, reference_records, _ = _load_records(Path(reference_dir))
    if not sample_records:
        raise ParameterError(f"no assembled records under {samples_dir}")
    if not reference_records:
        raise ParameterError(f"no assembled records under {reference_dir}")

    name = embedder_name if embedder_name is not None else rc.embedder
    embedder = EMBEDDERS[name]()
    report = eval_report(
        sample_images=[r.grid for r in sample_records],
        reference_images=[r.grid for r in reference_records],
        prompts=[r.prompt for r in sample_records],
        embedder=embedder,
        sample_sources=[r.source.tag for r in sample_records],
    )

    json_path = out / EVAL_REPORT_JSON
    json_path.write_text(report.to_json(), encoding="utf-8")
    (out / EVAL_REPORT_TABLE).write_text(report.render_table(), encoding="utf-8")
    click.echo(report.render_table().rstrip("\n"))
    click.echo(f"report: {json_path}")


if __name__ == "__main__":
    main()
