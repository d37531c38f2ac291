import itertools
import logging
import math

import numpy as np
import pytest
from scipy.stats import chisquare

from panorama_iqa.core.imageio import (
    ErpImage,
    SaliencyMap,
    bilinear_sample,
    load_image,
)
from panorama_iqa.core.sampling import (
    TangentViewport,
    extract_viewport,
    image_key,
    image_rng,
    mean_shift_filter,
    region_count,
    region_scores,
    sample_image,
    select_regions,
    selection_size,
)
from panorama_iqa.core.selectors import TopKSelector, UniformSelector, WeightedSelector
from panorama_iqa.core.sphere import SphericalPoint, TangentPlane, erp_to_sphere
from panorama_iqa.exceptions import DomainError, EmptyGridError
from panorama_iqa.settings import SamplerConfig, SamplingMode, ViewportMode

from .conftest import write_image


class TestMeanShift:
    def test_zero_iterations_is_identity(self, rng):
        saliency = SaliencyMap(rng.random((8, 16)))
        assert mean_shift_filter(saliency, 2, 0) is saliency

    def test_constant_map_stays_constant(self):
        saliency = SaliencyMap(np.full((16, 32), 0.4))
        raw = mean_shift_filter(saliency, 3, 2, normalize=False)
        np.testing.assert_allclose(raw.data, 0.4)
        np.testing.assert_allclose(mean_shift_filter(saliency, 3, 2).data, 1.0)

    def test_spike_spreads_over_unit_disc(self):
        data = np.zeros((9, 9))
        data[4, 4] = 1.0
        smoothed = mean_shift_filter(SaliencyMap(data), 1, 1, normalize=False).data
        np.testing.assert_allclose(smoothed[3:6, 3:6], 1 / 9)
        outside = smoothed.copy()
        outside[3:6, 3:6] = 0.0
        assert np.all(outside == 0.0)
        assert smoothed[4, 4] == smoothed.max()

    def test_interior_mass_is_preserved(self, rng):
        data = np.zeros((32, 64))
        data[10:21] = rng.random((11, 64))
        smoothed = mean_shift_filter(SaliencyMap(data), 3, 2, normalize=False).data
        assert smoothed.sum() == pytest.approx(data.sum(), rel=1e-9)
        assert np.all(smoothed >= 0.0)

    def test_normalized_peak_is_one(self, rng):
        smoothed = mean_shift_filter(SaliencyMap(rng.random((16, 32))), 2, 3)
        assert smoothed.data.max() == pytest.approx(1.0)

    def test_bad_bandwidth(self):
        with pytest.raises(DomainError):
            mean_shift_filter(SaliencyMap(np.ones((4, 8))), 0.5, 1)


class TestRegionScores:
    def test_region_count_formula(self):
        assert region_count(32, 32, 16, 16) == 4
        assert region_count(40, 80, 16, 8) == 40
        assert region_count(8, 16, 16, 8) == 0
        assert len(region_scores(SaliencyMap(np.ones((32, 32))), 16, 16)) == 4

    def test_region_centers(self):
        grid = region_scores(SaliencyMap(np.ones((32, 32))), 16, 16)
        np.testing.assert_array_equal(grid.center_rows, [7.5, 7.5, 23.5, 23.5])
        np.testing.assert_array_equal(grid.center_cols, [7.5, 23.5, 7.5, 23.5])
        center = grid.center(3)
        assert center == erp_to_sphere(23.5, 23.5, 32, 32)

    def test_uniform_map_scores_equal(self):
        grid = region_scores(SaliencyMap(np.full((40, 80), 0.3)), 16, 8)
        np.testing.assert_allclose(grid.means, 0.3)

    def test_salient_half_scores_higher(self):
        data = np.zeros((64, 128))
        data[:, :64] = 1.0
        grid = region_scores(SaliencyMap(data), 16, 16)
        left = grid.means[grid.lefts <= 48]
        right = grid.means[(grid.lefts >= 64) & (grid.lefts <= 112)]
        assert left.min() > right.max()

    def test_columns_wrap(self):
        data = np.zeros((16, 40))
        data[:, :8] = 1.0
        grid = region_scores(SaliencyMap(data), 16, 16)
        np.testing.assert_array_equal(grid.lefts, [0, 16, 32])
        np.testing.assert_allclose(grid.means, [0.5, 0.0, 0.5])
        assert grid.center_cols[2] == pytest.approx(39.5)

    def test_region_taller_than_map(self):
        with pytest.raises(EmptyGridError):
            region_scores(SaliencyMap(np.ones((8, 16))), 16, 8)


class TestSelection:
    @pytest.mark.parametrize(
        "n,fraction,k", [(40, 0.1, 4), (128, 0.1, 13), (5, 0.1, 1), (10, 0.25, 3)]
    )
    def test_selection_size(self, n, fraction, k):
        assert selection_size(n, fraction) == k

    @pytest.mark.parametrize("fraction", [0.0, 1.5])
    def test_selection_size_rejects_fraction(self, fraction):
        with pytest.raises(DomainError):
            selection_size(10, fraction)

    @pytest.mark.parametrize("mode", list(SamplingMode))
    def test_full_fraction_takes_every_region(self, rng, mode):
        grid = region_scores(SaliencyMap(rng.random((32, 64))), 16, 8)
        selected = select_regions(grid, 1.0, mode, seed=3)
        assert sorted(selected) == list(range(len(grid)))

    def test_selection_is_distinct(self, rng):
        for cls in (WeightedSelector, UniformSelector, TopKSelector):
            chosen = cls(rng.random(30), rng).select(10)
            assert len(set(chosen)) == 10

    def test_weighted_first_pick_is_proportional(self):
        selector = WeightedSelector(np.array([9.0, 1.0]), np.random.default_rng(0))
        picks = [selector.select(1)[0] for _ in range(10000)]
        assert picks.count(0) / len(picks) == pytest.approx(0.9, abs=0.02)

    def test_equal_weights_give_uniform_subsets(self):
        selector = WeightedSelector(np.ones(10), np.random.default_rng(1))
        subsets = list(itertools.combinations(range(10), 3))
        counts = dict.fromkeys(subsets, 0)
        for _ in range(10000):
            counts[tuple(sorted(selector.select(3)))] += 1
        assert chisquare(list(counts.values())).pvalue > 0.01

    def test_inclusion_grows_with_weight(self):
        weights = np.array([1.0, 2.0, 3.0, 4.0])
        selector = WeightedSelector(weights, np.random.default_rng(2))
        counts = np.zeros(4)
        for _ in range(10000):
            counts[selector.select(2)] += 1
        assert np.all(np.diff(counts) > 0)

    def test_zero_weight_regions_come_last(self):
        weights = np.array([0.0, 0.0, 5.0, 0.0])
        selector = WeightedSelector(weights, np.random.default_rng(4))
        for _ in range(50):
            assert selector.select(1) == [2]
            assert selector.select(3)[0] == 2

    def test_topk_breaks_ties_by_grid_order(self):
        weights = np.array([1.0, 3.0, 3.0, 2.0])
        selector = TopKSelector(weights, np.random.default_rng(0))
        assert selector.select(2) == [1, 2]
        assert selector.select(3) == [1, 2, 3]

    def test_topk_picks_highest_means(self, rng):
        grid = region_scores(SaliencyMap(rng.random((64, 128))), 16, 8)
        selected = select_regions(grid, 0.1, SamplingMode.TOPK)
        threshold = np.sort(grid.means)[::-1][len(selected) - 1]
        assert np.all(grid.means[selected] >= threshold)

    def test_all_zero_grid_falls_back_to_uniform(self, caplog):
        grid = region_scores(SaliencyMap(np.zeros((32, 64))), 16, 8)
        with caplog.at_level(logging.WARNING, logger="panorama_iqa"):
            selected = select_regions(
                grid, 0.25, SamplingMode.SALIENCY_WEIGHTED, seed=0
            )
        assert len(selected) == selection_size(len(grid), 0.25)
        assert "uniformly" in caplog.text

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            UniformSelector(np.ones(3), np.random.default_rng(0)).select(4)

    def test_empty_weights(self):
        with pytest.raises(EmptyGridError):
            WeightedSelector(np.array([]), np.random.default_rng(0))


def vertical_gradient(height, width):
    column = (np.arange(height) / (height - 1))[:, np.newaxis, np.newaxis]
    return ErpImage(np.broadcast_to(column, (height, width, 3)).copy())


class TestViewports:
    @pytest.mark.parametrize("mode", list(ViewportMode))
    def test_constant_image_gives_constant_viewport(self, mode):
        image = ErpImage(np.full((32, 64, 3), 0.25))
        viewport = extract_viewport(image, SphericalPoint(0.6, 2.0), 1.0, 8, mode)
        assert viewport.pixels.shape == (8, 8, 3)
        np.testing.assert_allclose(viewport.pixels, 0.25)

    def test_center_pixel_matches_erp_sample(self, random_image):
        center = SphericalPoint(0.3, -0.8)
        viewport = extract_viewport(random_image, center, 0.9, 5)
        row = (0.5 - center.lat / math.pi) * 32 - 0.5
        col = (center.lon / (2 * math.pi) + 0.5) * 64 - 0.5
        np.testing.assert_allclose(
            viewport.pixels[2, 2], bilinear_sample(random_image, row, col), atol=1e-12
        )

    def test_tangent_matches_crop_at_equator(self):
        image = vertical_gradient(128, 256)
        center = erp_to_sphere(63.5, 127.5, 128, 256)
        fov = 2 * math.atan(math.pi / 16)
        tangent = extract_viewport(image, center, fov, 16, ViewportMode.TANGENT)
        crop = extract_viewport(image, center, fov, 16, ViewportMode.ERP_CROP)
        assert np.abs(tangent.pixels - crop.pixels).max() < 0.005

    def test_tangent_differs_from_crop_near_pole(self):
        image = vertical_gradient(128, 256)
        center = SphericalPoint(1.3, 0.0)
        fov = 2 * math.atan(math.pi / 16)
        tangent = extract_viewport(image, center, fov, 16, ViewportMode.TANGENT)
        crop = extract_viewport(image, center, fov, 16, ViewportMode.ERP_CROP)
        assert np.abs(tangent.pixels - crop.pixels).max() > 0.01

    def test_longitude_rotation_consistency(self, random_image):
        shift = 5
        rotated = ErpImage(np.roll(random_image.data, shift, axis=1))
        center = SphericalPoint(0.3, 0.2)
        moved = SphericalPoint(0.3, 0.2 + shift * 2 * math.pi / 64)
        original = extract_viewport(random_image, center, 1.0, 8)
        shifted = extract_viewport(rotated, moved, 1.0, 8)
        np.testing.assert_allclose(shifted.pixels, original.pixels, atol=1e-6)

    def test_viewport_is_read_only(self, random_image):
        viewport = extract_viewport(random_image, SphericalPoint(0.0, 0.0), 1.0, 4)
        with pytest.raises(ValueError):
            viewport.pixels[0, 0, 0] = 1.0

    def test_viewport_invariants(self):
        center = SphericalPoint(0.0, 0.0)
        plane = TangentPlane(center, 1.0, 4)
        with pytest.raises(DomainError):
            TangentViewport(np.zeros((3, 3, 3)), center, plane)
        with pytest.raises(DomainError):
            TangentViewport(np.zeros((4, 4, 3)), SphericalPoint(0.1, 0.0), plane)


@pytest.fixture
def forty_region_config():
    return SamplerConfig(region_size=16, stride=8, resolution=8, fraction=0.1)


class TestSampleImage:
    def test_viewport_count(self, rng, forty_region_config):
        image = ErpImage(rng.random((40, 80, 3)))
        viewports = sample_image(image, None, forty_region_config, seed=0)
        assert len(viewports) == 4
        assert all(v.pixels.shape == (8, 8, 3) for v in viewports)
        assert len({v.region_index for v in viewports}) == 4

    def test_deterministic_for_a_seed(self, rng, forty_region_config):
        image = ErpImage(rng.random((40, 80, 3)))
        first = sample_image(image, None, forty_region_config, source_index=2, seed=11)
        second = sample_image(image, None, forty_region_config, source_index=2, seed=11)
        assert [v.center for v in first] == [v.center for v in second]
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.pixels, b.pixels)
            assert a.source_index == 2

    def test_image_streams_are_keyed(self):
        a = image_rng(0, "a.ppm").random(4)
        assert np.array_equal(a, image_rng(0, "a.ppm").random(4))
        assert not np.array_equal(a, image_rng(0, "b.ppm").random(4))
        assert not np.array_equal(a, image_rng(0, "a.ppm", epoch=1).random(4))

    def test_image_key_follows_content_not_path(self, tmp_path, rng):
        data = rng.random((8, 16, 3))
        first = load_image(write_image(tmp_path / "a.ppm", data))
        copy = load_image(write_image(tmp_path / "b.ppm", data))
        other = ErpImage(np.roll(first.data, 1, axis=1))
        assert image_key(first) == image_key(copy)
        assert image_key(first) != image_key(other)

    def test_smaller_saliency_is_upscaled(self, rng, forty_region_config):
        image = ErpImage(rng.random((40, 80, 3)))
        saliency = SaliencyMap(rng.random((20, 40)))
        assert len(sample_image(image, saliency, forty_region_config)) == 4

    def test_image_shorter_than_region(self, rng):
        image = ErpImage(rng.random((8, 16, 3)))
        with pytest.raises(EmptyGridError):
            sample_image(image, None, SamplerConfig(resolution=8))
