import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from refcolor import localfeat as lf
from refcolor.imagecore import GrayImage
from refcolor.superpixel import from_labels, segment


def _texture(seed, h=30, w=36):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    return np.clip(0.5 + 0.3 * np.sin(xx / 3.0 + yy / 5.0) + rng.normal(0, 0.05, (h, w)), 0, 1)


def _clamped(I, y, x):
    h, w = I.shape
    return I[min(max(y, 0), h - 1), min(max(x, 0), w - 1)]


def _box(I, y0, y1, x0, x1):
    return sum(_clamped(I, y, x) for y in range(y0, y1) for x in range(x0, x1))


def brute_surf(I, y, x, s=lf.SURF_SCALE):
    """Extended upright SURF at one pixel, written out from the descriptor definition."""
    sub, half = 5 * s, 10 * s
    desc = []
    for u in range(4):
        for v in range(4):
            acc = np.zeros(8)
            for r in range(y - half + u * sub, y - half + (u + 1) * sub):
                for c in range(x - half + v * sub, x - half + (v + 1) * sub):
                    dx = _box(I, r - s, r + s, c, c + s) - _box(I, r - s, r + s, c - s, c)
                    dy = _box(I, r, r + s, c - s, c + s) - _box(I, r - s, r, c - s, c + s)
                    k = 0 if dy < 0 else 2
                    acc[k] += dx
                    acc[k + 1] += abs(dx)
                    k = 4 if dx < 0 else 6
                    acc[k] += dy
                    acc[k + 1] += abs(dy)
            desc.extend(acc)
    desc = np.array(desc)
    n = np.linalg.norm(desc)
    return desc / n if n > 1e-12 else desc * 0


def test_intensity_and_std_match_brute_force():
    I = _texture(0)
    sp = segment(GrayImage(I * 100), 40)
    feats = lf.extract_all(GrayImage(I * 100), sp)
    std_map = ndimage.generic_filter(I, np.std, size=5, mode="nearest")
    assert np.allclose(lf.local_std(I), std_map, atol=1e-12)
    for k in range(sp.count):
        m = sp.labels == k
        assert abs(feats.intensity[k] - I[m].mean()) < 1e-12
        assert abs(feats.std[k] - std_map[m].mean()) < 1e-12


def test_gabor_fft_matches_direct_convolution():
    I = _texture(1, 24, 28)
    planes = lf.gabor_planes(I)
    kern = lf.gabor_kernels()
    for i in range(0, lf.GABOR_DIM, 3):
        re = ndimage.convolve(I, kern[i].real, mode="nearest")
        im = ndimage.convolve(I, kern[i].imag, mode="nearest")
        # float32 transforms: compare against the response scale
        assert np.abs(planes[i] - np.hypot(re, im)).max() < 1e-5 * max(1.0, np.abs(I).max())


def test_gabor_bank_layout_and_flat_response():
    kern = lf.gabor_kernels()
    assert len(kern) == lf.GABOR_DIM == 40
    for k in kern:
        assert abs(k.sum()) < 1e-12
    assert np.abs(lf.gabor_planes(np.full((20, 20), 0.3))).max() < 1e-6


def test_gabor_orientation_selectivity():
    yy, xx = np.mgrid[0:48, 0:48]
    vertical_bars = 0.5 + 0.4 * np.sin(2 * np.pi * xx / 8.0)
    r = lf.gabor_planes(vertical_bars)[:, 24, 24]
    scale8 = r[2 * lf.GABOR_ORIENTATIONS : 3 * lf.GABOR_ORIENTATIONS]
    # orientation 0 has its carrier along x, across vertical bars
    assert np.argmax(scale8) == 0


@settings(max_examples=5)
@given(st.integers(0, 1000))
def test_surf_matches_brute_force_at_sampled_pixels(seed):
    I = _texture(seed, 26, 30)
    planes = lf.surf_planes(I)
    rng = np.random.default_rng(seed)
    for y, x in zip(rng.integers(0, 26, 3), rng.integers(0, 30, 3)):
        assert np.allclose(planes[:, y, x], brute_surf(I, y, x), atol=1e-10)


def test_surf_is_unit_length_or_zero():
    I = _texture(3)
    n = np.linalg.norm(lf.surf_planes(I), axis=0)
    assert np.allclose(n, 1.0)
    assert np.all(lf.surf_planes(np.full((30, 30), 0.7)) == 0)


def test_surf_sees_gradient_sign():
    ramp = np.tile(np.linspace(0, 1, 40), (40, 1))
    up, down = lf.surf_planes(ramp)[:, 20, 20], lf.surf_planes(ramp[:, ::-1])[:, 20, 20]
    assert np.allclose(up, -np.where(np.arange(128) % 8 % 2 == 0, down, -down))
    # a sign-blind descriptor would not tell the two ramps apart
    assert np.linalg.norm(up - down) > 0.5


def test_feature_set_shapes_and_validation():
    img = GrayImage(_texture(4) * 100)
    sp = segment(img, 50)
    f = lf.extract_all(img, sp)
    assert f.count == sp.count
    assert f.gabor.shape == (sp.count, 40) and f.surf.shape == (sp.count, 128)
    g = f.groups()
    assert [x.shape[1] for x in g] == [1, 1, 128, 40]
    assert f.subset([0, 2]).count == 2 and f.entry(1).count == 1
    with pytest.raises(ValueError):
        lf.extract_all(img, from_labels(np.zeros((3, 3), int)))
    with pytest.raises(ValueError):
        lf.LocalFeatureSet(np.zeros(2), np.zeros(2), np.zeros((2, 40)), np.zeros((3, 128)))
