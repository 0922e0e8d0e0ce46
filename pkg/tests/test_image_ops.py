import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpgmnet.errors import ConfigError, NumericalError, ShapeError
from gpgmnet.image_ops import FilterConfig, bicubic_resize, box_filter, guided_filter


def naive_box(plane, r):
    h, w = plane.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    acc += plane[min(max(i + di, 0), h - 1), min(max(j + dj, 0), w - 1)]
            out[i, j] = acc / (2 * r + 1) ** 2
    return out


class TestBoxFilter:
    def test_constant(self):
        assert np.allclose(box_filter(np.full((6, 7), 0.3), 2), 0.3)

    def test_impulse(self):
        p = np.zeros((5, 5))
        p[2, 2] = 1
        out = box_filter(p, 1)
        assert np.allclose(out[1:4, 1:4], 1 / 9)
        assert out[0, 0] == 0

    @pytest.mark.parametrize("r", [1, 2, 5])
    def test_matches_loops(self, r):
        p = np.random.default_rng(r).uniform(size=(9, 13))
        assert np.max(np.abs(box_filter(p, r) - naive_box(p, r))) < 1e-6

    def test_errors(self):
        with pytest.raises(ShapeError):
            box_filter(np.zeros((0, 4)), 1)
        with pytest.raises(ConfigError):
            box_filter(np.zeros((4, 4)), 0)


class TestGuidedFilter:
    def test_constant(self):
        x = np.full((1, 3, 12, 12), 0.7)
        assert np.allclose(guided_filter(x), x)

    def test_large_eps_gives_box_mean(self):
        # a -> 0, so the output is the window mean of the per-window means
        x = np.random.default_rng(0).uniform(size=(1, 1, 16, 16))
        out = guided_filter(x, FilterConfig(radius=2, eps=1e6))
        assert np.max(np.abs(out - box_filter(box_filter(x, 2), 2))) < 1e-3

    def test_keeps_edges_and_smooths_noise(self):
        rng = np.random.default_rng(0)
        edge = np.zeros((64, 64))
        edge[:, 32:] = 1.0
        out = guided_filter(edge[None, None])[0, 0]
        assert out[:, 33].mean() - out[:, 30].mean() >= 0.9
        noise = 0.5 + 0.1 * rng.standard_normal((64, 64))
        smoothed = guided_filter(noise[None, None])[0, 0]
        # attenuation measured in noise power
        assert noise.var() / smoothed[8:-8, 8:-8].var() >= 3

    def test_commutes_with_shift(self):
        x = np.random.default_rng(1).uniform(size=(1, 2, 20, 20))
        assert np.max(np.abs(guided_filter(x + 0.25) - (guided_filter(x) + 0.25))) < 1e-5

    def test_commutes_with_scale_when_eps_scales(self):
        # the regularizer is in squared intensity units, so eps must scale with a^2
        x = np.random.default_rng(2).uniform(size=(1, 1, 20, 20))
        a, b = 3.0, -0.5
        lhs = guided_filter(a * x + b, FilterConfig(eps=0.01 * a * a))
        assert np.max(np.abs(lhs - (a * guided_filter(x) + b))) < 1e-5

    def test_shape_and_dtype(self):
        x = np.zeros((2, 3, 7, 5), np.float32)
        out = guided_filter(x)
        assert out.shape == x.shape and out.dtype == np.float32

    def test_bad_config_and_input(self):
        with pytest.raises(ConfigError):
            FilterConfig(radius=0)
        with pytest.raises(ConfigError):
            FilterConfig(eps=0)
        with pytest.raises(NumericalError):
            guided_filter(np.full((1, 1, 4, 4), np.nan))


class TestBicubic:
    def test_identity_bit_exact(self):
        x = np.random.default_rng(0).uniform(size=(1, 3, 5, 6)).astype(np.float32)
        assert np.array_equal(bicubic_resize(x, 1), x)

    @pytest.mark.parametrize("scale", [0.25, 0.5, 2, 3, 4])
    def test_constant_preserved(self, scale):
        out = bicubic_resize(np.full((1, 1, 8, 8), 0.42), scale)
        assert out.shape == (1, 1, int(8 * scale), int(8 * scale))
        assert np.max(np.abs(out - 0.42)) < 1e-6

    def test_reproduces_linear_ramp(self):
        row = np.tile(np.arange(8.0), (8, 1))
        out = bicubic_resize(row, 2)
        centers = (np.arange(16) + 0.5) / 2 - 0.5
        # away from the replicated borders the ramp is reproduced exactly
        assert np.max(np.abs(out[4, 4:-4] - centers[4:-4])) < 1e-6

    def test_smooth_down_up_roundtrip(self):
        yy, xx = np.mgrid[0:32, 0:32] / 32.0
        img = 0.5 + 0.2 * np.sin(2 * np.pi * xx) * np.cos(2 * np.pi * yy)
        back = bicubic_resize(bicubic_resize(img, 4), 0.25)
        assert np.sqrt(np.mean((back - img) ** 2)) < 1e-2

    def test_errors(self):
        with pytest.raises(ConfigError):
            bicubic_resize(np.zeros((4, 4)), 0)
        with pytest.raises(ConfigError):
            bicubic_resize(np.zeros((4, 4)), "x")
        with pytest.raises(ShapeError):
            bicubic_resize(np.zeros((2, 2)), 0.25)


@settings(max_examples=25, deadline=None)
@given(h=st.integers(2, 12), w=st.integers(2, 12), c=st.floats(-2, 2), scale=st.sampled_from([2, 3, 4, 0.5]))
def test_bicubic_constant_property(h, w, c, scale):
    if int(h * scale) < 1 or int(w * scale) < 1:
        return
    out = bicubic_resize(np.full((h, w), c), scale)
    assert np.allclose(out, c, atol=1e-6)
