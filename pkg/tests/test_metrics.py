import math

import numpy as np
import pytest

from efrlfn.losses import sobel_map
from efrlfn.metrics import (
    PSNR_CAP_DB,
    SsimParams,
    luma,
    pearson,
    psnr,
    si,
    ssim,
    ti,
    video_si_ti,
)
from efrlfn.tensor import Tensor


def rand(shape, seed=0):
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=shape)


class TestPsnr:
    def test_identical_images_hit_cap(self):
        img = rand((3, 8, 8), seed=1)
        assert psnr(img, img) == PSNR_CAP_DB
        assert math.isinf(PSNR_CAP_DB)

    def test_uniform_one_lsb_error(self):
        a = np.full((3, 16, 16), 0.5)
        b = a + 1.0 / 255.0
        assert psnr(a, b) == pytest.approx(20.0 * math.log10(255.0), abs=1e-3)

    def test_matches_straight_line_recomputation(self):
        a = rand((3, 10, 12), seed=2)
        b = rand((3, 10, 12), seed=3)
        mse = float(np.mean((a - b) ** 2))
        assert psnr(a, b) == pytest.approx(10.0 * math.log10(1.0 / mse), rel=1e-12)

    def test_monotone_on_noise_ladder(self):
        base = rand((3, 12, 12), seed=4)
        rng = np.random.default_rng(5)
        noise = rng.normal(size=base.shape)
        values = [
            psnr(base, np.clip(base + amp * noise, 0.0, 1.0))
            for amp in (0.01, 0.02, 0.04, 0.08, 0.16)
        ]
        assert all(x > y for x, y in zip(values, values[1:]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))

    def test_bad_peak_rejected(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 4)), peak=0.0)


class TestSsim:
    def test_self_similarity_is_one(self):
        img = rand((3, 16, 16), seed=6)
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-9)

    def test_constant_pair_closed_form(self):
        a = np.zeros((1, 12, 12))
        b = np.full((1, 12, 12), 0.5)
        c1 = (0.01 * 1.0) ** 2
        assert ssim(a, b) == pytest.approx(c1 / (0.25 + c1), abs=1e-7)
        assert ssim(a, b) == pytest.approx(3.9984e-4, abs=1e-7)

    def test_symmetry(self):
        a = rand((3, 14, 14), seed=7)
        b = rand((3, 14, 14), seed=8)
        assert ssim(a, b) == pytest.approx(ssim(b, a), rel=1e-12)

    def test_bounded_by_one(self):
        for seed in range(5):
            a = rand((1, 12, 12), seed=seed)
            b = rand((1, 12, 12), seed=seed + 100)
            assert abs(ssim(a, b)) <= 1.0

    def test_window_smaller_images_rejected(self):
        with pytest.raises(ValueError, match="window"):
            ssim(np.zeros((1, 8, 8)), np.zeros((1, 8, 8)))

    def test_window_normalized(self):
        g = SsimParams().window()
        assert g.size == 11
        assert g.sum() == pytest.approx(1.0, rel=1e-12)

    def test_even_window_rejected(self):
        with pytest.raises(ValueError):
            SsimParams(window_size=10)


class TestSiTi:
    def test_constant_frame_zero_si(self):
        assert si(np.full((1, 8, 8), 0.3)) == 0.0

    def test_identical_frames_zero_ti(self):
        frame = rand((3, 8, 8), seed=9)
        assert ti(frame, frame) == 0.0

    def test_ramp_si_matches_sobel_composition(self):
        # Oracle: the library's own sobel maps, cropped to full support,
        # composed with a population-std computation.
        h = w = 9
        ramp = np.tile(np.linspace(0.0, 1.0, w), (h, 1))[None]
        got = si(ramp)

        gx, gy = sobel_map(Tensor(luma(ramp)[None, None]))
        inner = (0, 0, slice(1, -1), slice(1, -1))
        mag = np.sqrt(gx.data[inner] ** 2 + gy.data[inner] ** 2)
        assert got == pytest.approx(float(np.std(mag)), rel=1e-9)

    def test_si_offset_invariant(self):
        frame = rand((3, 9, 9), seed=10) * 0.5
        assert si(frame + 0.25) == pytest.approx(si(frame), rel=1e-9)

    def test_ti_offset_invariant(self):
        a = rand((3, 8, 8), seed=11) * 0.5
        b = rand((3, 8, 8), seed=12) * 0.5
        assert ti(a + 0.2, b + 0.2) == pytest.approx(ti(a, b), rel=1e-9)

    def test_video_aggregation_is_max(self):
        frames = [np.full((1, 8, 8), 0.5)]
        busy = rand((1, 8, 8), seed=13)
        frames.append(busy)
        frames.append(np.full((1, 8, 8), 0.5))
        si_v, ti_v = video_si_ti(frames)
        assert si_v == pytest.approx(si(busy))
        assert ti_v == pytest.approx(max(ti(frames[0], busy), ti(busy, frames[2])))

    def test_tiny_frame_rejected(self):
        with pytest.raises(ValueError):
            si(np.zeros((1, 2, 5)))


class TestPearson:
    def test_perfect_positive(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        assert pearson(x, 2 * x + 1) == pytest.approx(1.0, abs=1e-12)

    def test_perfect_negative(self):
        x = np.array([0.5, 1.5, -2.0, 3.0])
        assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-12)

    def test_five_point_hand_computation(self):
        # x = 1..5, y = [2,1,4,3,7]: sum dx*dy = 12, sum dx^2 = 10,
        # sum dy^2 = 21.2, so r = 12 / sqrt(212).
        x = [1.0, 2.0, 3.0, 4.0, 5.0]
        y = [2.0, 1.0, 4.0, 3.0, 7.0]
        assert pearson(x, y) == pytest.approx(12.0 / math.sqrt(212.0), rel=1e-12)

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError, match="variance"):
            pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            pearson([1.0, 2.0], [1.0, 2.0, 3.0])
