import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eigenfeatures.errors import ConfigError, ShapeMismatchError
from eigenfeatures.gradients import (
    FORWARD_X,
    METHODS,
    PREWITT_X,
    PREWITT_Y,
    SOBEL_X,
    SOBEL_Y,
    GradientPair,
    gradient,
    gradient_forward,
    gradient_magnitude,
    gradient_module,
    gradient_prewitt,
    gradient_sobel,
    mask_convolve,
    mean_gradient_module,
    mean_intensity,
    total_variation,
)
from eigenfeatures.images import GrayImage

images = arrays(np.float64, st.tuples(st.integers(2, 10), st.integers(2, 10)),
                elements=st.floats(0, 255, allow_nan=False)).map(GrayImage)


def naive_convolve(p, z, boundary):
    """Quadruple loop straight from C(x,y) = sum_{s,t} Z(s,t) Y(x-s, y-t)."""
    h, w = p.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for t in (-1, 0, 1):
                for s in (-1, 0, 1):
                    yy, xx = y - t, x - s
                    if boundary == "replicate":
                        yy, xx = min(max(yy, 0), h - 1), min(max(xx, 0), w - 1)
                        v = p[yy, xx]
                    else:
                        v = p[yy, xx] if 0 <= yy < h and 0 <= xx < w else 0.0
                    acc += z[t + 1, s + 1] * v
            out[y, x] = acc
    return out


class TestMaskConvolve:
    def test_zero_mask(self, rng):
        img = GrayImage(rng.uniform(0, 255, (5, 6)))
        assert np.all(mask_convolve(img, np.zeros((3, 3))).pixels == 0)

    def test_constant_image_sobel(self):
        out = mask_convolve(GrayImage(np.full((6, 6), 77.0)), SOBEL_X)
        assert np.all(out.pixels == 0)

    def test_step_centre(self, step_image):
        assert mask_convolve(step_image, SOBEL_X).pixels[1, 1] == 1020.0
        assert mask_convolve(step_image, PREWITT_X).pixels[1, 1] == 765.0

    @pytest.mark.parametrize("mask", [SOBEL_X, SOBEL_Y, PREWITT_X, PREWITT_Y, FORWARD_X],
                             ids=["sobel_x", "sobel_y", "prewitt_x", "prewitt_y", "forward_x"])
    @pytest.mark.parametrize("boundary", ["replicate", "zero"])
    def test_matches_loop_oracle(self, rng, mask, boundary):
        for _ in range(5):
            p = rng.uniform(0, 255, (16, 16))
            got = mask_convolve(GrayImage(p), mask, boundary).pixels
            np.testing.assert_allclose(got, naive_convolve(p, mask, boundary), rtol=0, atol=1e-12)

    def test_random_masks(self, rng):
        for _ in range(10):
            p, z = rng.normal(size=(7, 9)), rng.normal(size=(3, 3))
            np.testing.assert_allclose(mask_convolve(GrayImage(p), z).pixels,
                                       naive_convolve(p, z, "replicate"), atol=1e-12)

    def test_one_pixel(self):
        assert mask_convolve(GrayImage([[4.0]]), SOBEL_X).shape == (1, 1)

    def test_bad_mask_and_boundary(self):
        with pytest.raises(ConfigError):
            mask_convolve(GrayImage([[1.0]]), np.ones((2, 2)))
        with pytest.raises(ConfigError):
            mask_convolve(GrayImage([[1.0]]), SOBEL_X, boundary="wrap")


class TestForward:
    def test_row_example(self):
        gx, _ = gradient_forward(GrayImage([[1, 3, 6], [1, 3, 6]]))
        np.testing.assert_array_equal(gx.pixels[0], [2, 3, 3])

    def test_ramp(self):
        img = GrayImage(np.tile(np.arange(6.0), (4, 1)))
        gx, gy = gradient_forward(img)
        assert np.all(gx.pixels == 1) and np.all(gy.pixels == 0)

    def test_too_small(self):
        with pytest.raises(ShapeMismatchError):
            gradient_forward(GrayImage([[1.0, 2.0]]))


class TestMaskGradients:
    @pytest.mark.parametrize("a,b", [(1.0, 0.0), (2.0, -3.0), (-0.5, 1.5)])
    def test_affine_interiors(self, a, b):
        # Y = a*x + b*y: the central difference spans two pixels, so the interior
        # responses are 2*(1+2+1)*(a, b) for Sobel and 2*(1+1+1)*(a, b) for Prewitt
        yy, xx = np.mgrid[0:7, 0:8].astype(float)
        img = GrayImage(a * xx + b * yy)
        sx, sy = gradient_sobel(img)
        px, py = gradient_prewitt(img)
        np.testing.assert_allclose(sx.pixels[1:-1, 1:-1], 8 * a, atol=1e-12)
        np.testing.assert_allclose(sy.pixels[1:-1, 1:-1], 8 * b, atol=1e-12)
        np.testing.assert_allclose(px.pixels[1:-1, 1:-1], 6 * a, atol=1e-12)
        np.testing.assert_allclose(py.pixels[1:-1, 1:-1], 6 * b, atol=1e-12)

    def test_step(self, step_image):
        assert gradient_sobel(step_image).gx.pixels[1, 1] == 1020.0
        assert gradient_prewitt(step_image).gx.pixels[1, 1] == 765.0

    @pytest.mark.parametrize("method", METHODS)
    def test_constant_gives_zero(self, method):
        gx, gy = gradient(GrayImage(np.full((5, 5), 200.0)), method)
        assert not np.any(gx.pixels) and not np.any(gy.pixels)
        assert total_variation(GrayImage(np.full((5, 5), 200.0)), method) == 0.0

    def test_same_size(self, rng):
        img = GrayImage(rng.uniform(0, 255, (5, 9)))
        for method in METHODS:
            pair = gradient(img, method)
            assert pair.gx.shape == pair.gy.shape == img.shape

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            gradient(GrayImage(np.zeros((3, 3))), "scharr")


class TestMagnitude:
    def test_pythagorean(self):
        out = gradient_magnitude(GradientPair(GrayImage([[3.0]]), GrayImage([[4.0]])))
        assert out.pixels[0, 0] == 5.0

    def test_zero_and_diagonal(self):
        z = GrayImage(np.zeros((2, 2)))
        assert not np.any(gradient_magnitude(GradientPair(z, z)).pixels)
        one = GrayImage(np.ones((2, 3)))
        np.testing.assert_allclose(gradient_magnitude(GradientPair(one, one)).pixels, np.sqrt(2))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            gradient_magnitude(GradientPair(GrayImage(np.zeros((2, 2))), GrayImage(np.zeros((2, 3)))))

    @settings(max_examples=40, deadline=None)
    @given(img=images, method=st.sampled_from(METHODS))
    def test_non_negative(self, img, method):
        assert np.all(gradient_module(img, method).pixels >= 0)


class TestStatistics:
    def test_tv_small_oracle(self):
        img = GrayImage([[0.0, 1.0], [0.0, 1.0]])
        p = img.pixels
        total = 0.0
        for i in range(2):
            for j in range(2):
                fx = p[i, 1] - p[i, 0]  # the last column repeats the previous difference
                fy = p[1, j] - p[0, j]
                total += np.sqrt(fx * fx + fy * fy)
        assert total_variation(img, "forward") == pytest.approx(total, abs=1e-15)

    @settings(max_examples=40, deadline=None)
    @given(img=images, c=st.floats(0.01, 50.0), method=st.sampled_from(METHODS))
    def test_homogeneous(self, img, c, method):
        scaled = GrayImage(img.pixels * c)
        assert total_variation(scaled, method) == pytest.approx(c * total_variation(img, method),
                                                                rel=1e-10, abs=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(img=images)
    def test_forward_zero_iff_constant(self, img):
        tv = total_variation(img, "forward")
        assert (tv == 0.0) == (np.ptp(img.pixels) == 0.0)

    def test_mean_is_tv_over_pixels(self, rng):
        img = GrayImage(rng.uniform(0, 255, (9, 11)))
        for method in METHODS:
            assert mean_gradient_module(img, method) == total_variation(img, method) / 99

    def test_tiling_leaves_mean_nearly_unchanged(self, rng):
        tile = rng.uniform(0, 255, (12, 12))
        tile[:, -1] = tile[:, 0]
        tile[-1, :] = tile[0, :]
        small = GrayImage(tile)
        big = GrayImage(np.tile(tile, (2, 2)))
        for method in METHODS:
            a, b = mean_gradient_module(small, method), mean_gradient_module(big, method)
            assert abs(a - b) / a < 4 / 12

    def test_mean_intensity(self):
        assert mean_intensity(GrayImage([[0.0, 255.0]])) == 127.5
        assert mean_intensity(GrayImage(np.full((3, 3), 9.0))) == 9.0
        board = (np.indices((6, 6)).sum(axis=0) % 2) * 255.0
        assert mean_intensity(GrayImage(board)) == 127.5
