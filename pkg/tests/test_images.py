"""Image primitives, grid assembly, quality labels, and record plumbing."""

import colorsys

import numpy as np
import pytest

from b3d.errors import ParameterError, ScoringError, ShapeError
from b3d.grids import assemble_grid, split_grid
from b3d.images import (
    BACKGROUND_MIN,
    block_mean_downsample,
    decode_png,
    encode_png,
    foreground_mask,
    gaussian_blur,
    laplacian_variance,
    luminance,
    rgb_to_hue,
    to_float,
    to_uint8,
)
from b3d.quality import LABELS, QualityLabel, label_of, parse_label_text, score_of
from b3d.records import MultiViewRecord, PipelineStage, next_stage, record_digest
from b3d.sources import DataSource


def _laplacian_variance_loops(img):
    """Independent oracle: explicit double loop over interior pixels."""
    h, w = img.shape
    vals = []
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            vals.append(
                img[i - 1, j] + img[i + 1, j] + img[i, j - 1] + img[i, j + 1] - 4 * img[i, j]
            )
    vals = np.array(vals)
    return float(np.mean((vals - vals.mean()) ** 2))


class TestImagePrimitives:
    def test_laplacian_variance_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        img = rng.random((9, 13))
        assert laplacian_variance(img) == pytest.approx(_laplacian_variance_loops(img), rel=1e-12)

    def test_laplacian_variance_flat_is_zero(self):
        assert laplacian_variance(np.full((16, 16), 0.37)) == 0.0

    def test_laplacian_variance_offset_invariant(self):
        rng = np.random.default_rng(8)
        img = rng.random((12, 12))
        assert laplacian_variance(img + 0.25) == pytest.approx(laplacian_variance(img), abs=1e-12)

    def test_laplacian_variance_needs_3x3(self):
        with pytest.raises(ShapeError):
            laplacian_variance(np.zeros((2, 5)))

    def test_blur_reduces_checkerboard_sharpness(self):
        board = np.indices((16, 16)).sum(axis=0) % 2
        board = board.astype(np.float64)
        blurred = gaussian_blur(np.stack([board] * 3, axis=-1), 1.0)[..., 0]
        assert laplacian_variance(blurred) < laplacian_variance(board)

    def test_hue_matches_colorsys_oracle(self):
        rng = np.random.default_rng(11)
        img = rng.integers(0, 256, size=(6, 5, 3), dtype=np.uint8)
        got = rgb_to_hue(img)
        for i in range(6):
            for j in range(5):
                r, g, b = (img[i, j] / 255.0).tolist()
                expected = colorsys.rgb_to_hsv(r, g, b)[0]
                assert got[i, j] == pytest.approx(expected, abs=1e-12)

    def test_foreground_threshold_boundary(self):
        img = np.full((4, 4, 3), 255, dtype=np.uint8)
        img[0, 0] = (234, 255, 255)  # one channel below the near-white cutoff
        img[1, 1] = (235, 255, 255)  # exactly at the cutoff: background
        mask = foreground_mask(img)
        assert mask[0, 0] and not mask[1, 1]
        assert mask.sum() == 1
        assert BACKGROUND_MIN == pytest.approx(235 / 255)

    def test_uint8_float_round_trip(self):
        rng = np.random.default_rng(3)
        img = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        assert np.array_equal(to_uint8(to_float(img)), img)

    def test_block_mean_downsample_oracle(self):
        rng = np.random.default_rng(5)
        img = rng.random((8, 8))
        out = block_mean_downsample(img, 4, 4)
        for i in range(4):
            for j in range(4):
                assert out[i, j] == pytest.approx(img[2 * i : 2 * i + 2, 2 * j : 2 * j + 2].mean())

    def test_block_mean_preserves_global_mean_on_even_split(self):
        rng = np.random.default_rng(6)
        img = rng.random((16, 16))
        assert block_mean_downsample(img, 4, 4).mean() == pytest.approx(img.mean())

    def test_png_round_trip_lossless(self):
        rng = np.random.default_rng(9)
        img = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
        assert np.array_equal(decode_png(encode_png(img)), img)

    def test_luminance_weights(self):
        img = np.zeros((2, 2, 3))
        img[..., 0] = 1.0
        assert luminance(img)[0, 0] == pytest.approx(0.299)


class TestGrids:
    def test_assemble_positions_and_split_round_trip(self):
        views = [np.full((4, 4, 3), 10 * (i + 1), dtype=np.uint8) for i in range(4)]
        grid = assemble_grid(views)
        assert grid.shape == (8, 8, 3)
        assert grid[0, 0, 0] == 10 and grid[0, 7, 0] == 20
        assert grid[7, 0, 0] == 30 and grid[7, 7, 0] == 40
        back = split_grid(grid)
        assert all(np.array_equal(a, b) for a, b in zip(back, views))

    def test_assemble_rejects_wrong_count_and_shapes(self):
        square = np.zeros((4, 4, 3), dtype=np.uint8)
        with pytest.raises(ShapeError):
            assemble_grid([square] * 3)
        with pytest.raises(ShapeError):
            assemble_grid([square, square, square, np.zeros((4, 6, 3), dtype=np.uint8)])

    def test_split_rejects_odd_dims(self):
        with pytest.raises(ShapeError):
            split_grid(np.zeros((7, 8, 3), dtype=np.uint8))


class TestQualityLabels:
    @pytest.mark.parametrize("score,label", list(enumerate(LABELS)))
    def test_round_trip(self, score, label):
        assert label_of(score) == label
        assert score_of(label) == score

    def test_boardline_alias(self):
        assert score_of("boardline") == 2

    def test_parse_prefers_longest_match(self):
        assert parse_label_text("the grid is relatively good overall") == 3
        assert parse_label_text("quality: good") == 4
        assert parse_label_text("this is relatively poor work") == 1

    def test_parse_alias_in_text(self):
        assert parse_label_text("score: boardline case") == 2

    def test_unknown_label_raises(self):
        with pytest.raises(ScoringError):
            score_of("excellent")
        with pytest.raises(ScoringError):
            parse_label_text("no rating words here")

    def test_quality_label_object(self):
        q = QualityLabel(score=4, rationale="crisp")
        assert q.label == "good"
        assert QualityLabel.from_label("perfect").score == 5
        with pytest.raises(ParameterError):
            QualityLabel(score=6)


class TestRecords:
    def _views(self, seed=0):
        rng = np.random.default_rng(seed)
        return [rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8) for _ in range(4)]

    def test_id_is_content_hash_and_verifies(self):
        views = self._views()
        rec = MultiViewRecord.from_views(views, DataSource.RENDERED_ASSET)
        assert rec.record_id == record_digest(views)
        assert rec.verify_id()

    def test_same_pixels_same_id_regardless_of_metadata(self):
        views = self._views()
        a = MultiViewRecord.from_views(views, DataSource.RENDERED_ASSET, prompt="x")
        b = MultiViewRecord.from_views(views, DataSource.SINGLE_VIEW_2D, prompt="y")
        assert a.record_id == b.record_id

    def test_with_views_recomputes_id_and_keeps_captions(self):
        rec = MultiViewRecord.from_views(self._views(), DataSource.RENDERED_ASSET)
        rec = rec.with_caption("short", "a cube")
        new_views = self._views(seed=1)
        out = rec.with_views(new_views)
        assert out.record_id != rec.record_id
        assert out.record_id == record_digest(new_views)
        assert out.caption_short == "a cube"

    def test_single_pixel_flip_changes_id(self):
        views = self._views()
        rec = MultiViewRecord.from_views(views, DataSource.RENDERED_ASSET)
        flipped = [v.copy() for v in views]
        flipped[2][3, 3, 1] ^= 1
        assert MultiViewRecord.from_views(flipped, DataSource.RENDERED_ASSET).record_id != rec.record_id

    def test_views_are_read_only(self):
        rec = MultiViewRecord.from_views(self._views(), DataSource.RENDERED_ASSET)
        with pytest.raises(ValueError):
            rec.views[0][0, 0, 0] = 1

    def test_rejects_non_uint8(self):
        with pytest.raises(ShapeError):
            MultiViewRecord.from_views([np.zeros((4, 4, 3))] * 4, DataSource.RENDERED_ASSET)

    def test_grid_matches_assembled_views(self):
        views = self._views()
        rec = MultiViewRecord.from_views(views, DataSource.RENDERED_ASSET)
        assert np.array_equal(rec.grid, assemble_grid(views))

    def test_stage_transitions(self):
        assert next_stage(PipelineStage.PENDING, PipelineStage.T2I) is PipelineStage.T2I
        assert next_stage(PipelineStage.NVS, PipelineStage.FAILED) is PipelineStage.FAILED
        with pytest.raises(ParameterError):
            next_stage(PipelineStage.PENDING, PipelineStage.NVS)
        with pytest.raises(ParameterError):
            next_stage(PipelineStage.FAILED, PipelineStage.T2I)
        with pytest.raises(ParameterError):
            next_stage(PipelineStage.ASSEMBLED, PipelineStage.PENDING)

    def test_equality_covers_pixels_and_metadata(self):
        views = self._views()
        a = MultiViewRecord.from_views(views, DataSource.RENDERED_ASSET, prompt="p")
        b = MultiViewRecord.from_views([v.copy() for v in views], DataSource.RENDERED_ASSET, prompt="p")
        assert a == b
        assert a != b.with_caption("short", "different")
