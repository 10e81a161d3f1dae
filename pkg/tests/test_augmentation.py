import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stenokit.annotations import InstanceAnnotation
from stenokit.augmentation import (
    AugmentationError,
    AugmentationParams,
    RasterImage,
    TransformSpec,
    augment_sample,
    build_homography,
    gray_to_rgb,
    hsv_jitter,
    read_image,
    sample_transform,
    warp_image,
    write_image,
)
from stenokit.geometry import Homography, apply_homography, compose, polygon_area, rasterize


def random_rgb(rng, w=32, h=24):
    return RasterImage.from_array(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))


def ann(poly, id=1):
    return InstanceAnnotation(id, 1, 1, (tuple(float(c) for c in np.ravel(poly)),))


class TestParams:
    def test_table_defaults(self):
        p = AugmentationParams()
        assert (p.p_vflip, p.p_hflip, p.translate, p.rotation, p.scale) == (0.5, 0.5, 0.3, 30.0, 0.5)
        assert (p.shear, p.perspective, p.hue, p.saturation, p.value) == (5.0, 0.001, 0.015, 0.7, 0.4)

    @pytest.mark.parametrize("kw", [{"p_hflip": 1.5}, {"p_vflip": -0.1}, {"rotation": -1.0}, {"min_instance_area": -2}])
    def test_invalid(self, kw):
        with pytest.raises(AugmentationError):
            AugmentationParams(**kw)


class TestSample:
    def test_zero_ranges_give_identity(self):
        s = sample_transform(AugmentationParams.none(), 7, 64, 48)
        assert s.h == Homography.identity()
        assert (s.vflip, s.hflip, s.hue_shift, s.sat_gain, s.val_gain) == (False, False, 0.0, 1.0, 1.0)

    def test_deterministic(self):
        a = sample_transform(AugmentationParams(), 99, 64, 64)
        b = sample_transform(AugmentationParams(), 99, 64, 64)
        assert a == b
        assert a != sample_transform(AugmentationParams(), 100, 64, 64)

    def test_h_invertible(self, rng):
        for seed in rng.integers(0, 2**31, 50):
            s = sample_transform(AugmentationParams(), int(seed), 128, 96)
            np.testing.assert_allclose(compose(s.h, s.h.inverse()).m, np.eye(3), atol=1e-9)

    def test_rotation_statistics(self):
        angles = np.array([sample_transform(AugmentationParams(), s, 64, 64).angle for s in range(2000)])
        assert angles.min() >= -30 and angles.max() <= 30
        # uniform(-30, 30) has sd 30/sqrt(3); standard error of the mean is sd/sqrt(n)
        assert abs(angles.mean()) < 3 * (30 / np.sqrt(3)) / np.sqrt(len(angles))


class TestBuildHomography:
    def test_neutral_is_identity(self):
        assert build_homography(64, 64) == Homography.identity()

    def test_hflip(self, rng):
        h = build_homography(50, 40, hflip=True)
        pts = rng.uniform(0, 50, (20, 2))
        np.testing.assert_allclose(apply_homography(pts, h), np.c_[50 - pts[:, 0], pts[:, 1]], atol=1e-12)

    def test_vflip(self):
        h = build_homography(50, 40, vflip=True)
        np.testing.assert_array_equal(apply_homography([(3.0, 5.0)], h), [[3.0, 35.0]])

    def test_rotation_inverse_round_trip(self, rng):
        h = build_homography(64, 64, angle=30.0)
        pts = rng.uniform(0, 64, (20, 2))
        back = apply_homography(apply_homography(pts, h), h.inverse())
        np.testing.assert_allclose(back, pts, atol=1e-6)

    def test_rotation_about_center(self):
        h = build_homography(64, 64, angle=90.0)
        np.testing.assert_allclose(apply_homography([(32.0, 32.0)], h), [[32.0, 32.0]], atol=1e-12)

    def test_translation_offset(self):
        h = build_homography(64, 64, tx=5.0, ty=-3.0)
        np.testing.assert_allclose(apply_homography([(1.0, 1.0)], h), [[6.0, -2.0]], atol=1e-12)


class TestAugmentSample:
    def test_identity_bit_exact(self, rng):
        img = random_rgb(rng)
        a = ann([(1.5, 2.0), (10.25, 3.0), (7.0, 9.75)])
        out, labels = augment_sample(img, [a], TransformSpec.identity())
        assert out == img
        np.testing.assert_allclose(labels[0].segmentation[0], a.segmentation[0], atol=1e-9)

    def test_identity_nearest_bit_exact(self, rng):
        img = random_rgb(rng)
        out, _ = augment_sample(img, [], TransformSpec.identity(), interpolation="nearest")
        assert out == img

    def test_needs_rgb(self):
        with pytest.raises(AugmentationError):
            augment_sample(RasterImage.from_array(np.zeros((4, 4), np.uint8)), [], TransformSpec.identity())

    def test_hflip_left_edge_goes_right(self):
        img = RasterImage.from_array(np.zeros((20, 30, 3), np.uint8))
        a = ann([(0, 5), (4, 5), (4, 12), (0, 12)])
        spec = TransformSpec(False, True, build_homography(30, 20, hflip=True))
        _, labels = augment_sample(img, [a], spec)
        poly = labels[0].polygons[0]
        assert poly[:, 0].max() == 30.0 and poly[:, 0].min() == 26.0
        assert polygon_area(poly) == pytest.approx(a.area, rel=1e-6)

    def test_off_canvas_dropped(self):
        img = RasterImage.from_array(np.zeros((20, 30, 3), np.uint8))
        inside = ann([(20, 5), (25, 5), (25, 10)], id=1)
        near_left = ann([(1, 1), (6, 1), (6, 6), (1, 6)], id=2)
        spec = TransformSpec(False, False, build_homography(30, 20, tx=-10.0))
        _, labels = augment_sample(img, [inside, near_left], spec)
        assert [x.id for x in labels] == [1]

    def test_small_remnant_dropped(self):
        img = RasterImage.from_array(np.zeros((20, 30, 3), np.uint8))
        # after a 9.5 px shift only a 0.5 x 5 sliver (area 2.5) stays on the canvas
        a = ann([(0, 0), (10, 0), (10, 5), (0, 5)])
        spec = TransformSpec(False, False, build_homography(30, 20, tx=-9.5))
        _, labels = augment_sample(img, [a], spec, min_instance_area=4.0)
        assert labels == []
        _, labels = augment_sample(img, [a], spec, min_instance_area=2.0)
        assert labels[0].area == pytest.approx(2.5)

    def test_black_fill(self):
        img = RasterImage.from_array(np.full((10, 10, 3), 200, np.uint8))
        out, _ = augment_sample(img, [], TransformSpec(False, False, build_homography(10, 10, tx=5.0)), interpolation="nearest")
        assert (out.samples[:, :5] == 0).all() and (out.samples[:, 5:] == 200).all()

    def test_hsv_applied_after_warp(self, rng):
        img = random_rgb(rng)
        spec = TransformSpec(False, False, Homography.identity(), val_gain=0.0)
        out, _ = augment_sample(img, [], spec)
        assert not out.samples.any()

    def test_flip_involution(self, rng):
        img = random_rgb(rng, 33, 21)
        flip = TransformSpec(False, True, build_homography(33, 21, hflip=True))
        a = ann(rng.uniform(0, [33, 21], (6, 2)))
        for interp in ("nearest", "bilinear"):
            once, l1 = augment_sample(img, [a], flip, min_instance_area=0.0, interpolation=interp)
            twice, l2 = augment_sample(once, l1, flip, min_instance_area=0.0, interpolation=interp)
            diff = np.abs(twice.samples.astype(int) - img.samples.astype(int)).max()
            assert diff == 0 if interp == "nearest" else diff <= 1
            np.testing.assert_allclose(l2[0].segmentation[0], a.segmentation[0], atol=1e-9)

    def test_composed_flip_exact(self, rng):
        h = build_homography(64, 48, hflip=True)
        pts = rng.uniform(0, 64, (50, 2))
        assert np.array_equal(apply_homography(pts, compose(h, h)), pts)

    def test_label_image_consistency(self, rng):
        size = 128
        for trial in range(10):
            poly = np.array([(40, 40), (90, 35), (95, 85), (60, 100), (35, 80)], float) + rng.uniform(-5, 5, (5, 2))
            mask = rasterize([poly], size, size).bits
            img = RasterImage.from_array(np.repeat(mask[:, :, None] * np.uint8(255), 3, axis=2))
            h = build_homography(
                size, size, angle=rng.uniform(-30, 30), scale=rng.uniform(0.7, 1.3),
                shear_x=rng.uniform(-5, 5), shear_y=rng.uniform(-5, 5),
                tx=rng.uniform(-10, 10), ty=rng.uniform(-10, 10), hflip=bool(trial % 2),
            )
            out, labels = augment_sample(img, [ann(poly)], TransformSpec(False, False, h), interpolation="nearest")
            warped = out.samples[:, :, 0] > 127
            label_mask = rasterize(labels[0].polygons, size, size).bits
            assert (warped == label_mask).mean() >= 0.95

    def test_deterministic_outputs(self, rng):
        img = random_rgb(rng)
        a = ann([(3, 3), (20, 4), (12, 18)])
        spec = sample_transform(AugmentationParams(), 5, img.width, img.height)
        o1, l1 = augment_sample(img, [a], spec)
        o2, l2 = augment_sample(img, [a], sample_transform(AugmentationParams(), 5, img.width, img.height))
        assert o1 == o2 and l1 == l2

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_area_bound(self, seed):
        rng = np.random.default_rng(seed)
        img = RasterImage.from_array(np.zeros((40, 40, 3), np.uint8))
        anns = [ann(rng.uniform(0, 40, (int(rng.integers(3, 7)), 2)), id=i + 1) for i in range(4)]
        spec = sample_transform(AugmentationParams(), seed, 40, 40)
        for min_area in (0.0, 4.0, 50.0):
            _, labels = augment_sample(img, anns, spec, min_instance_area=min_area)
            assert all(x.area >= min_area for x in labels)


class TestGrayToRgb:
    def test_small(self):
        g = RasterImage.from_array(np.array([[0, 85], [170, 255]], np.uint8))
        out = gray_to_rgb(g)
        assert out.channels == 3
        assert out.samples.tolist() == [[[0] * 3, [85] * 3], [[170] * 3, [255] * 3]]

    def test_channel_mean_and_histogram(self, rng):
        g = RasterImage.from_array(rng.integers(0, 256, (17, 13), dtype=np.uint8))
        out = gray_to_rgb(g)
        assert np.array_equal(out.samples.astype(int).sum(axis=2), 3 * g.samples[:, :, 0].astype(int))
        for c in range(3):
            assert np.array_equal(np.bincount(out.samples[:, :, c].ravel(), minlength=256),
                                  np.bincount(g.samples.ravel(), minlength=256))

    def test_rejects_rgb(self, rng):
        with pytest.raises(AugmentationError):
            gray_to_rgb(random_rgb(rng))


class TestHsv:
    def test_neutral(self, rng):
        img = random_rgb(rng, 64, 64)
        out = hsv_jitter(img, 0.0, 1.0, 1.0)
        assert np.abs(out.samples.astype(int) - img.samples.astype(int)).max() <= 1

    def test_value_zero_black(self, rng):
        assert not hsv_jitter(random_rgb(rng), 0.01, 1.3, 0.0).samples.any()

    def test_saturation_zero_gray(self, rng):
        img = random_rgb(rng)
        out = hsv_jitter(img, 0.0, 0.0, 1.0).samples.astype(int)
        assert (out.max(axis=2) - out.min(axis=2)).max() <= 1
        # desaturating keeps V, which is the per-pixel channel maximum
        assert np.abs(out[:, :, 0] - img.samples.max(axis=2).astype(int)).max() <= 1

    def test_full_hue_turn_is_neutral(self, rng):
        img = random_rgb(rng)
        a = hsv_jitter(img, 1.0, 1.0, 1.0)
        assert np.abs(a.samples.astype(int) - img.samples.astype(int)).max() <= 1

    def test_pure_red_to_green(self):
        img = RasterImage.from_array(np.array([[[255, 0, 0]]], np.uint8))
        assert hsv_jitter(img, 1 / 3, 1.0, 1.0).samples.tolist() == [[[0, 255, 0]]]

    def test_needs_rgb(self):
        with pytest.raises(AugmentationError):
            hsv_jitter(RasterImage.from_array(np.zeros((2, 2), np.uint8)), 0, 1, 1)


class TestRasterImage:
    def test_size_mismatch(self):
        with pytest.raises(AugmentationError):
            RasterImage(3, 3, 3, np.zeros(10, np.uint8))

    def test_png_round_trip(self, rng, tmp_path):
        for img in (random_rgb(rng), RasterImage.from_array(rng.integers(0, 256, (9, 7), dtype=np.uint8))):
            write_image(img, tmp_path / "x.png")
            assert read_image(tmp_path / "x.png") == img

    def test_warp_out_size(self, rng):
        img = random_rgb(rng, 20, 10)
        out = warp_image(img, Homography.scaling(2.0), (40, 20), "nearest")
        assert (out.width, out.height) == (40, 20)
        assert np.array_equal(out.samples[::2, ::2], img.samples)
