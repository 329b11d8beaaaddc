import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skelattack.image_core import (SetValue, Toggle, apply_perturbation,
                                   binarize, load_png, psnr, save_png)


def img(rows):
    return np.array(rows, dtype=np.uint8)


small_images = st.integers(1, 12).flatmap(
    lambda h: st.integers(1, 12).flatmap(
        lambda w: st.lists(st.integers(0, 255), min_size=h * w, max_size=h * w)
        .map(lambda vals: np.array(vals, dtype=np.uint8).reshape(h, w))))


class TestBinarize:
    def test_all_white_has_no_ink(self):
        assert binarize(np.full((4, 5), 255, np.uint8), 128).sum() == 0

    def test_all_black_is_all_ink(self):
        assert binarize(np.zeros((4, 5), np.uint8), 128).sum() == 20

    def test_rule_is_strictly_below_threshold(self):
        mask = binarize(img([[0, 200, 10]]), 128)
        assert mask.tolist() == [[True, False, True]]

    def test_threshold_boundary(self):
        assert not binarize(img([[128]]), 128)[0, 0]
        assert binarize(img([[127]]), 128)[0, 0]

    def test_threshold_out_of_range(self):
        with pytest.raises(ValueError):
            binarize(img([[0]]), 256)

    @settings(max_examples=50)
    @given(small_images, st.integers(0, 255), st.integers(0, 255))
    def test_monotone_in_threshold(self, image, t1, t2):
        lo, hi = sorted((t1, t2))
        assert not (binarize(image, lo) & ~binarize(image, hi)).any()


class TestApplyPerturbation:
    def test_empty_coords_is_identity(self):
        x = img([[1, 2], [3, 4]])
        out = apply_perturbation(x, [])
        assert (out == x).all()
        assert out is not x

    def test_toggle(self):
        out = apply_perturbation(img([[0, 255]]), [(0, 0), (1, 0)])
        assert out.tolist() == [[255, 0]]

    def test_exactly_k_pixels_differ(self):
        rng = np.random.default_rng(5)
        x = (rng.integers(0, 2, size=(50, 300)) * 255).astype(np.uint8)
        flat = rng.choice(50 * 300, size=20, replace=False)
        coords = np.stack([flat % 300, flat // 300], axis=1)
        out = apply_perturbation(x, coords)
        assert int((out != x).sum()) == 20

    def test_duplicates_applied_once(self):
        out = apply_perturbation(img([[10]]), [(0, 0), (0, 0), (0, 0)])
        assert out[0, 0] == 245

    def test_set_value(self):
        out = apply_perturbation(img([[7, 7]]), [(1, 0)], SetValue(99))
        assert out.tolist() == [[7, 99]]

    def test_out_of_bounds_rejected(self):
        with pytest.raises(ValueError):
            apply_perturbation(img([[1]]), [(1, 0)])
        with pytest.raises(ValueError):
            apply_perturbation(img([[1]]), [(0, -1)])

    def test_input_not_mutated(self):
        x = img([[10, 20]])
        apply_perturbation(x, [(0, 0)])
        assert x.tolist() == [[10, 20]]

    @settings(max_examples=50)
    @given(small_images, st.data())
    def test_toggle_twice_is_identity(self, image, data):
        h, w = image.shape
        coords = data.draw(st.lists(
            st.tuples(st.integers(0, w - 1), st.integers(0, h - 1)),
            max_size=10).map(lambda c: list(set(c))))
        once = apply_perturbation(image, coords, Toggle())
        twice = apply_perturbation(once, coords, Toggle())
        assert (twice == image).all()


class TestPsnr:
    def test_identical_is_infinite(self):
        x = img([[3, 4], [5, 6]])
        assert psnr(x, x.copy()) == math.inf

    def test_full_range_single_pixel(self):
        assert psnr(img([[0]]), img([[255]])) == pytest.approx(0.0, abs=1e-12)

    def test_twenty_toggles_closed_form(self):
        x = np.zeros((50, 300), np.uint8)
        flat = np.random.default_rng(1).choice(50 * 300, size=20, replace=False)
        coords = np.stack([flat % 300, flat // 300], axis=1)
        value = psnr(x, apply_perturbation(x, coords))
        assert value == pytest.approx(10 * math.log10(15000 / 20), abs=1e-9)
        assert value == pytest.approx(28.751, abs=5e-4)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2), np.uint8), np.zeros((2, 3), np.uint8))

    @settings(max_examples=50)
    @given(small_images, small_images)
    def test_symmetric(self, a, b):
        if a.shape != b.shape:
            b = np.resize(b, a.shape).astype(np.uint8)
        assert psnr(a, b) == psnr(b, a)

    @settings(max_examples=40)
    @given(st.integers(2, 40), st.integers(2, 40), st.data())
    def test_binary_toggle_closed_form(self, h, w, data):
        k = data.draw(st.integers(1, h * w))
        x = (np.random.default_rng(0).integers(0, 2, size=(h, w)) * 255).astype(np.uint8)
        flat = np.random.default_rng(k).choice(h * w, size=k, replace=False)
        coords = np.stack([flat % w, flat // w], axis=1)
        assert psnr(x, apply_perturbation(x, coords)) == pytest.approx(
            10 * math.log10(h * w / k), abs=1e-9)


class TestPngIo:
    def test_round_trip(self, tmp_path):
        x = np.random.default_rng(2).integers(0, 256, size=(20, 30)).astype(np.uint8)
        save_png(x, tmp_path / "x.png")
        assert (load_png(tmp_path / "x.png") == x).all()

    def test_rgb_converted_by_luma(self, tmp_path):
        from PIL import Image

        rgb = np.zeros((2, 2, 3), np.uint8)
        rgb[..., 0] = 255  # pure red
        Image.fromarray(rgb, "RGB").save(tmp_path / "c.png")
        out = load_png(tmp_path / "c.png")
        assert out.shape == (2, 2)
        assert abs(int(out[0, 0]) - 76) <= 1  # BT.601: 0.299 * 255
