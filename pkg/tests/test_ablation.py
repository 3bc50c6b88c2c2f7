"""Timestep-floor sweep: policy re-clamping, nearest-centroid condition
recovery, report serialization, and the end-to-end sweep loop."""

import numpy as np
import pytest

from b3d.ablation import (
    SWEEP_COLUMNS,
    SweepReport,
    SweepRow,
    ablation_sweep,
    blurred_mixture_dataset,
    classify_condition,
    condition_centroids,
    condition_recovery_accuracy,
    evaluate_checkpoint,
    policy_for_floor,
)
from b3d.denoiser import n_conditions
from b3d.errors import ConfigError, ParameterError, ShapeError
from b3d.policy import PolicyEntry, TimestepPolicy, default_policy, validate_policy
from b3d.schedules import build_schedule
from b3d.sources import DataSource
from b3d.trainer import TrainConfig, train
from b3d.viewstats import sharpness_metric

RA = DataSource.RENDERED_ASSET
NVS_A = DataSource.SYNTHETIC_NVS_A
NVS_B = DataSource.SYNTHETIC_NVS_B
SV2D = DataSource.SINGLE_VIEW_2D


def _sweep_config(**overrides):
    base = dict(
        view_size=8,
        batch_size=4,
        learning_rate=0.1,
        total_steps=20,
        seed=0,
        hidden=(6,),
        n_steps=400,
    )
    base.update(overrides)
    return TrainConfig(**base)


# ------------------------------------------------------------ policy clamps


def test_floor_reclamps_both_synthetic_sources():
    policy, excluded = policy_for_floor(300, 1000)
    assert excluded == ()
    for src in (NVS_A, NVS_B):
        entry = policy.entry(src)
        assert (entry.t_min, entry.t_max) == (300, 1000)
    # non-synthetic entries are untouched relative to the default
    assert policy.entry(RA) == default_policy(1000).entry(RA)
    assert policy.entry(SV2D) == default_policy(1000).entry(SV2D)


def test_floor_zero_opens_the_full_range():
    policy, excluded = policy_for_floor(0, 400)
    assert excluded == ()
    assert policy.entry(NVS_A) == PolicyEntry(t_min=0, t_max=400)
    assert validate_policy(policy, build_schedule(n_steps=400)).ok


def test_floor_at_schedule_length_excludes_synthetics(caplog):
    with caplog.at_level("INFO", logger="b3d.ablation"):
        policy, excluded = policy_for_floor(1000, 1000)
    assert set(excluded) == {NVS_A, NVS_B}
    assert NVS_A not in policy and NVS_B not in policy
    assert RA in policy and SV2D in policy
    assert "excluding" in caplog.text
    assert validate_policy(policy, build_schedule(n_steps=1000)).ok


def test_floor_out_of_range_rejected():
    with pytest.raises(ParameterError, match="\\[0, 400\\]"):
        policy_for_floor(401, 400)
    with pytest.raises(ParameterError, match="\\[0, 400\\]"):
        policy_for_floor(-1, 400)


def test_floor_respects_custom_base_policy():
    base = TimestepPolicy({RA: PolicyEntry(0, 400), NVS_A: PolicyEntry(100, 400)})
    policy, excluded = policy_for_floor(250, 400, base)
    assert excluded == ()
    assert policy.entry(NVS_A) == PolicyEntry(250, 400)
    assert NVS_B not in policy  # absent sources stay absent
    assert policy.entry(RA) == PolicyEntry(0, 400)


def test_clamped_policy_fences_training_draws():
    dataset = blurred_mixture_dataset(2, view_size=8, blur_sigma=1.0, seed=0)
    policy, _ = policy_for_floor(300, 400)
    result = train(_sweep_config(total_steps=30, policy=policy), dataset)
    nvs_draws = [t for src, t in result.timestep_log if src is NVS_A]
    assert nvs_draws, "the mixture should have produced synthetic draws"
    assert min(nvs_draws) >= 300


# ------------------------------------------------------------ mixture dataset


def test_mixture_dataset_pairs_clean_and_blurred():
    dataset = blurred_mixture_dataset(3, view_size=8, blur_sigma=1.5, seed=4)
    clean, blurred = dataset[RA], dataset[NVS_A]
    assert len(clean) == len(blurred) == 3
    for c, b in zip(clean, blurred):
        assert c.source is RA
        assert b.source is NVS_A
        assert b.provenance["blur_sigma"] == 1.5
        # same underlying scene
        assert b.provenance["shape_class"] == c.provenance["shape_class"]
        assert b.provenance["hue"] == c.provenance["hue"]
        assert sharpness_metric(c.views) > sharpness_metric(b.views)


def test_mixture_dataset_deterministic():
    a = blurred_mixture_dataset(2, view_size=8, seed=9)
    b = blurred_mixture_dataset(2, view_size=8, seed=9)
    for src in (RA, NVS_A):
        for ra, rb in zip(a[src], b[src]):
            assert np.array_equal(ra.grid, rb.grid)


def test_disjoint_dataset_splits_conditions_between_sources():
    from b3d.ablation import disjoint_condition_dataset
    from b3d.denoiser import condition_of_record

    dataset = disjoint_condition_dataset(n_hue_bins=2, view_size=8)
    clean_conds = sorted(condition_of_record(r, 2) for r in dataset[RA])
    blur_conds = sorted(condition_of_record(r, 2) for r in dataset[NVS_A])
    assert clean_conds == [0, 2, 4, 6]
    assert blur_conds == [1, 3, 5, 7]
    for record in dataset[RA]:
        assert record.source is RA
        assert "blur_sigma" not in record.provenance
    for record in dataset[NVS_A]:
        assert record.source is NVS_A
        assert record.provenance["blur_sigma"] == 1.5
        assert tuple(record.provenance["blurred_views"]) == (0, 1, 2, 3)


def test_disjoint_dataset_blurred_records_are_softer():
    from b3d.ablation import disjoint_condition_dataset

    dataset = disjoint_condition_dataset(n_hue_bins=2, view_size=8)
    clean_sharp = min(sharpness_metric(r.views) for r in dataset[RA])
    blur_sharp = max(sharpness_metric(r.views) for r in dataset[NVS_A])
    assert blur_sharp < clean_sharp


def test_disjoint_dataset_deterministic():
    from b3d.ablation import disjoint_condition_dataset

    a = disjoint_condition_dataset(seed=3)
    b = disjoint_condition_dataset(seed=3)
    for src in (RA, NVS_A):
        for ra, rb in zip(a[src], b[src]):
            assert np.array_equal(ra.grid, rb.grid)


# ------------------------------------------------------ condition recovery


def test_centroids_cover_every_condition():
    centroids = condition_centroids(n_hue_bins=6, view_size=8)
    assert centroids.shape == (n_conditions(6), 16, 16, 3)
    assert centroids.min() >= 0.0 and centroids.max() <= 1.0


def test_each_centroid_classifies_as_itself():
    centroids = condition_centroids(n_hue_bins=6, view_size=8)
    for cond in range(centroids.shape[0]):
        assert classify_condition(centroids[cond], centroids) == cond


def test_classification_survives_small_noise():
    centroids = condition_centroids(n_hue_bins=6, view_size=8)
    rng = np.random.default_rng(0)
    for cond in (0, 7, 23):
        noisy = np.clip(centroids[cond] + rng.normal(0, 0.02, centroids[cond].shape), 0, 1)
        assert classify_condition(noisy, centroids) == cond


def test_classify_rejects_shape_mismatch():
    centroids = condition_centroids(n_hue_bins=6, view_size=8)
    with pytest.raises(ShapeError, match="does not match"):
        classify_condition(np.zeros((8, 8, 3)), centroids)


def test_recovery_accuracy_on_permuted_centroids():
    centroids = condition_centroids(n_hue_bins=6, view_size=8)
    perm = np.array([5, 0, 17, 9])
    assert condition_recovery_accuracy(centroids[perm], perm, centroids) == 1.0
    # mislabel half of them
    wrong = np.array([5, 0, 1, 2])
    assert condition_recovery_accuracy(centroids[perm], wrong, centroids) == 0.5


def test_recovery_accuracy_length_mismatch():
    centroids = condition_centroids(n_hue_bins=6, view_size=8)
    with pytest.raises(ShapeError, match="one condition per sample"):
        condition_recovery_accuracy(centroids[:3], [0, 1], centroids)


# ------------------------------------------------------------ report format


def _toy_rows():
    return (
        SweepRow(0, 0, 0.010, 0.20, 0.50, 1.00),
        SweepRow(0, 1, 0.020, 0.40, 0.70, 2.00),
        SweepRow(600, 0, 0.030, 0.10, 0.90, 0.50),
        SweepRow(600, 1, 0.050, 0.30, 0.80, 1.50),
    )


def test_report_render_parse_round_trip():
    report = SweepReport(rows=_toy_rows())
    text = report.render()
    assert text.splitlines()[0] == "\t".join(SWEEP_COLUMNS)
    parsed = SweepReport.parse(text)
    assert parsed == report
    assert parsed.render() == text


def test_report_parse_rejects_wrong_header():
    with pytest.raises(ParameterError, match="header"):
        SweepReport.parse("T\tseed\tsharpness\n0\t0\t0.1\n")


def test_report_parse_rejects_ragged_row():
    good = SweepReport(rows=_toy_rows()).render()
    bad = good + "600\t2\t0.1\n"
    with pytest.raises(ParameterError, match="cells"):
        SweepReport.parse(bad)


def test_seed_averaging_hand_computed():
    report = SweepReport(rows=_toy_rows())
    avg = report.averaged_by_floor()
    assert sorted(avg) == [0, 600]
    assert avg[0]["sharpness"] == pytest.approx(0.015)
    assert avg[0]["consistency"] == pytest.approx(0.30)
    assert avg[0]["cond_accuracy"] == pytest.approx(0.60)
    assert avg[0]["final_loss"] == pytest.approx(1.50)
    assert avg[0]["n_seeds"] == 2
    assert avg[600]["sharpness"] == pytest.approx(0.040)


def test_plot_data_is_seed_averaged():
    text = SweepReport(rows=_toy_rows()).render_plot_data()
    lines = text.splitlines()
    assert lines[0] == "T\tsharpness\tconsistency\tcond_accuracy\tfinal_loss"
    assert lines[1].startswith("0\t0.015000\t0.300000\t0.600000")
    assert lines[2].startswith("600\t0.040000")


# ------------------------------------------------------------ end-to-end sweep


def test_sweep_produces_one_row_per_cell():
    dataset = blurred_mixture_dataset(2, view_size=8, blur_sigma=1.0, seed=1)
    report = ablation_sweep(
        [0, 200],
        _sweep_config(),
        dataset,
        seeds=(0, 1),
        eval_samples_per_run=4,
        n_reverse_steps=8,
    )
    assert len(report.rows) == 4  # |T| x |seeds|
    assert [(r.t_floor, r.seed) for r in report.rows] == [(0, 0), (0, 1), (200, 0), (200, 1)]
    for row in report.rows:
        assert np.isfinite(row.final_loss) and row.final_loss > 0
        assert row.sharpness >= 0.0
        assert 0.0 <= row.consistency <= 1.0
        assert 0.0 <= row.cond_accuracy <= 1.0


def test_sweep_is_deterministic():
    dataset = blurred_mixture_dataset(2, view_size=8, blur_sigma=1.0, seed=1)
    kwargs = dict(seeds=(3,), eval_samples_per_run=2, n_reverse_steps=6)
    a = ablation_sweep([100], _sweep_config(), dataset, **kwargs)
    b = ablation_sweep([100], _sweep_config(), dataset, **kwargs)
    assert a.render() == b.render()


def test_sweep_floor_at_schedule_length_runs_without_synthetics(caplog):
    dataset = blurred_mixture_dataset(2, view_size=8, blur_sigma=1.0, seed=1)
    with caplog.at_level("INFO", logger="b3d.ablation"):
        report = ablation_sweep(
            [400],
            _sweep_config(),
            dataset,
            seeds=(0,),
            eval_samples_per_run=2,
            n_reverse_steps=6,
        )
    assert len(report.rows) == 1
    assert "excluding" in caplog.text


def test_sweep_rejects_floor_beyond_schedule():
    dataset = blurred_mixture_dataset(2, view_size=8, seed=1)
    with pytest.raises(ParameterError, match="\\[0, 400\\]"):
        ablation_sweep([500], _sweep_config(), dataset, seeds=(0,))


def test_sweep_rejects_empty_inputs():
    dataset = blurred_mixture_dataset(2, view_size=8, seed=1)
    with pytest.raises(ParameterError, match="at least one timestep floor"):
        ablation_sweep([], _sweep_config(), dataset)
    with pytest.raises(ParameterError, match="at least one seed"):
        ablation_sweep([0], _sweep_config(), dataset, seeds=())
    with pytest.raises(ParameterError, match="eval_samples_per_run"):
        ablation_sweep([0], _sweep_config(), dataset, seeds=(0,), eval_samples_per_run=0)


def test_sweep_all_synthetic_mix_cannot_survive_exclusion():
    dataset = blurred_mixture_dataset(2, view_size=8, seed=1)
    config = _sweep_config(source_mix={NVS_A: 1.0})
    with pytest.raises(ConfigError, match="no training data"):
        ablation_sweep([400], config, dataset, seeds=(0,))


def test_evaluate_checkpoint_returns_three_bounded_metrics():
    dataset = blurred_mixture_dataset(2, view_size=8, blur_sigma=1.0, seed=1)
    result = train(_sweep_config(total_steps=10), dataset)
    centroids = condition_centroids(6, 8)
    sharpness, consistency, accuracy = evaluate_checkpoint(
        result, [0, 5], centroids, 6, np.random.default_rng(0)
    )
    assert sharpness >= 0.0
    assert 0.0 <= consistency <= 1.0
    assert accuracy in (0.0, 0.5, 1.0)
