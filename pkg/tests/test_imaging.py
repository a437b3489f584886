"""Pixel-level primitives: grayscale, resize, convolution, blur, masks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeforge import imaging


def checker(h, w, a=0, b=255):
    img = np.full((h, w), a, dtype=np.uint8)
    img[(np.indices((h, w)).sum(axis=0) % 2) == 1] = b
    return img


class TestGrayscale:
    def test_white_stays_white(self):
        img = np.full((4, 4, 3), 255, dtype=np.uint8)
        assert (imaging.to_grayscale(img) == 255).all()

    def test_pure_red_weight(self):
        img = np.zeros((2, 2, 3), dtype=np.uint8)
        img[..., 0] = 255
        # round(0.299 * 255) = 76
        assert (imaging.to_grayscale(img) == 76).all()

    def test_pure_green_and_blue_weights(self):
        for ch, want in ((1, 150), (2, 29)):  # round(.587*255), round(.114*255)
            img = np.zeros((2, 2, 3), dtype=np.uint8)
            img[..., ch] = 255
            assert (imaging.to_grayscale(img) == want).all()

    def test_gray_passthrough_is_copy(self):
        img = checker(5, 5)
        out = imaging.to_grayscale(img)
        assert (out == img).all()
        out[0, 0] = 7
        assert img[0, 0] != 7

    def test_rejects_float_input(self):
        with pytest.raises(ValueError):
            imaging.to_grayscale(np.zeros((3, 3), dtype=np.float64))

    def test_rejects_bad_channel_count(self):
        with pytest.raises(ValueError):
            imaging.to_grayscale(np.zeros((3, 3, 4), dtype=np.uint8))


class TestResize:
    def test_identity_is_exact(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(17, 23), dtype=np.uint8)
        assert (imaging.resize(img, 23, 17) == img).all()

    def test_constant_upscale_stays_constant(self):
        img = np.full((2, 2), 81, dtype=np.uint8)
        out = imaging.resize(img, 4, 4)
        assert out.shape == (4, 4)
        assert (out == 81).all()

    def test_channels_preserved(self):
        img = np.zeros((8, 8, 3), dtype=np.uint8)
        img[..., 1] = 200
        out = imaging.resize(img, 5, 11)
        assert out.shape == (11, 5, 3)
        assert (out[..., 0] == 0).all() and (out[..., 1] == 200).all()

    def test_value_range_bounded_by_input(self):
        rng = np.random.default_rng(1)
        img = rng.integers(40, 200, size=(9, 9), dtype=np.uint8)
        out = imaging.resize(img, 30, 30)
        assert out.min() >= 40 and out.max() <= 199

    def test_rejects_non_positive_target(self):
        img = np.zeros((4, 4), dtype=np.uint8)
        with pytest.raises(ValueError):
            imaging.resize(img, 0, 4)
        with pytest.raises(ValueError):
            imaging.resize(img, 4, -1)


class TestConvolve:
    def test_identity_kernel(self):
        img = checker(6, 7)
        kernel = np.zeros((3, 3))
        kernel[1, 1] = 1.0
        out = imaging.convolve(img, kernel)
        assert np.array_equal(out, img.astype(np.float64))

    def test_zero_sum_kernel_on_constant_is_zero(self):
        img = np.full((5, 5), 137, dtype=np.uint8)
        kernel = np.array([[-1.0, 0.0, 1.0]] * 3)
        assert np.all(imaging.convolve(img, kernel) == 0.0)

    def test_horizontal_step_response(self):
        # Vertical edge 0 | 255 under a horizontal difference kernel: the two
        # columns flanking the step see the full 3 * 255 swing.
        img = np.zeros((5, 8), dtype=np.uint8)
        img[:, 4:] = 255
        kernel = np.array([[-1.0, 0.0, 1.0]] * 3)
        out = imaging.convolve(img, kernel)
        assert np.all(out[:, 3] == 765.0)
        assert np.all(out[:, 4] == 765.0)
        assert np.all(out[:, :3] == 0.0) and np.all(out[:, 5:] == 0.0)

    def test_replicated_border_keeps_constant_rows(self):
        img = np.zeros((4, 6), dtype=np.uint8)
        img[2:, :] = 100
        kernel = np.full((3, 3), 1.0 / 9.0)
        out = imaging.convolve(img, kernel)
        assert np.allclose(out[0], 0.0)
        assert np.allclose(out[3], 100.0)

    def test_rejects_even_or_non_square_kernel(self):
        img = np.zeros((4, 4), dtype=np.uint8)
        with pytest.raises(ValueError):
            imaging.convolve(img, np.ones((2, 2)))
        with pytest.raises(ValueError):
            imaging.convolve(img, np.ones((3, 5)))

    def test_rejects_color_input(self):
        with pytest.raises(ValueError):
            imaging.convolve(np.zeros((4, 4, 3), dtype=np.uint8), np.ones((3, 3)))


class TestGaussian:
    def test_kernel_normalized_and_symmetric(self):
        for sigma in (0.5, 1.0, 1.4, 2.3):
            k = imaging.gaussian_kernel_1d(sigma)
            assert k.ndim == 1 and len(k) % 2 == 1
            assert len(k) == 2 * int(np.ceil(3 * sigma)) + 1
            assert abs(k.sum() - 1.0) < 1e-12
            assert np.allclose(k, k[::-1])

    def test_rejects_non_positive_sigma(self):
        with pytest.raises(ValueError):
            imaging.gaussian_kernel_1d(0.0)

    def test_constant_image_unchanged(self):
        img = np.full((7, 9), 201, dtype=np.uint8)
        assert (imaging.gaussian_blur(img, 1.4) == 201).all()

    def test_impulse_mass_preserved(self):
        img = np.zeros((21, 21), dtype=np.uint8)
        img[10, 10] = 255
        out = imaging.gaussian_blur_float(img.astype(np.float64), 1.0)
        assert abs(out.sum() - 255.0) < 1e-9
        assert out[10, 10] < 255.0
        assert out[10, 10] == out.max()

    def test_separable_matches_dense_kernel(self):
        # Oracle: one full 2-D convolution with the outer-product kernel.
        rng = np.random.default_rng(5)
        img = rng.integers(0, 256, size=(16, 16), dtype=np.uint8).astype(np.float64)
        for sigma in (0.7, 1.0, 1.5):
            k1 = imaging.gaussian_kernel_1d(sigma)
            dense = np.outer(k1, k1)
            want = imaging.convolve(np.clip(img, 0, 255).astype(np.uint8), dense)
            got = imaging.gaussian_blur_float(img, sigma)
            assert np.allclose(got, want, atol=1e-9)


def dilate_oracle(mask, radius):
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            y0, y1 = max(0, y - radius), min(h, y + radius + 1)
            x0, x1 = max(0, x - radius), min(w, x + radius + 1)
            out[y, x] = mask[y0:y1, x0:x1].any()
    return out


class TestMasks:
    def test_as_mask_requires_binary(self):
        assert imaging.as_mask(np.zeros((3, 3), dtype=bool)).dtype == np.bool_
        ok = np.array([[0, 1], [1, 0]], dtype=np.uint8)
        assert imaging.as_mask(ok).dtype == np.bool_
        with pytest.raises(ValueError):
            imaging.as_mask(np.array([[0, 7]], dtype=np.uint8))

    def test_dilate_single_pixel(self):
        mask = np.zeros((7, 7), dtype=bool)
        mask[3, 3] = True
        out = imaging.dilate(mask, 1)
        assert out.sum() == 9
        assert out[2:5, 2:5].all()

    def test_dilate_matches_bruteforce(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            mask = rng.random((12, 14)) < 0.15
            for radius in (1, 2):
                got = imaging.dilate(mask, radius)
                assert np.array_equal(got, dilate_oracle(mask, radius))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_dilate_composition(self, seed):
        mask = np.random.default_rng(seed).random((10, 10)) < 0.2
        twice = imaging.dilate(imaging.dilate(mask, 1), 1)
        assert np.array_equal(twice, imaging.dilate(mask, 2))

    def test_dilate_is_extensive_and_monotone(self):
        rng = np.random.default_rng(3)
        a = rng.random((9, 9)) < 0.3
        b = a | (rng.random((9, 9)) < 0.2)
        da, db = imaging.dilate(a, 1), imaging.dilate(b, 1)
        assert (a <= da).all()
        assert (da <= db).all()

    def test_mask_image_round_trip(self):
        rng = np.random.default_rng(4)
        mask = rng.random((8, 8)) < 0.5
        img = imaging.mask_to_image(mask)
        assert set(np.unique(img)) <= {0, 255}
        assert np.array_equal(imaging.image_to_mask(img), mask)


class TestPngIO:
    def test_gray_round_trip(self, tmp_path):
        img = checker(11, 13, a=3, b=250)
        path = tmp_path / "sub" / "g.png"
        imaging.write_png(path, img)
        assert np.array_equal(imaging.read_png(path), img)

    def test_rgb_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        img = rng.integers(0, 256, size=(9, 6, 3), dtype=np.uint8)
        path = tmp_path / "c.png"
        imaging.write_png(path, img)
        assert np.array_equal(imaging.read_png(path), img)

    def test_write_is_deterministic(self, tmp_path):
        img = checker(16, 16)
        imaging.write_png(tmp_path / "a.png", img)
        imaging.write_png(tmp_path / "b.png", img)
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
