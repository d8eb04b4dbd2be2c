import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from skimage.feature import graycomatrix, graycoprops

from refcolor import globalfeat as gf
from refcolor.imagecore import GrayImage

STEP = {0: (0, 1), 45: (-1, 1), 90: (-1, 0), 135: (-1, -1)}  # (row, col) offset of the partner pixel
# skimage measures angles with rows pointing down: its matrix at the mirrored
# angle, transposed, counts the same pairs
SKIMAGE = {0: (0, False), 45: (135, True), 90: (90, True), 135: (45, True)}


def skimage_glcm(grid, d, normed=False):
    angle, flip = SKIMAGE[d]
    P = graycomatrix(grid.astype(np.uint8), [1], [np.deg2rad(angle)], levels=8, normed=normed)
    return P.transpose(1, 0, 2, 3) if flip else P


def brute_glcm(grid, direction, levels):
    dy, dx = STEP[direction]
    h, w = grid.shape
    P = np.zeros((levels, levels), dtype=np.int64)
    for y in range(h):
        for x in range(w):
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w:
                P[grid[y, x], grid[yy, xx]] += 1
    return P


def hand_features(P):
    P = P / P.sum()
    n = P.shape[0]
    asm = con = ent = mi = mj = 0.0
    for i in range(n):
        for j in range(n):
            asm += P[i, j] ** 2
            con += (i - j) ** 2 * P[i, j]
            mi += i * P[i, j]
            mj += j * P[i, j]
            if P[i, j] > 0:
                ent -= P[i, j] * np.log(P[i, j])
    si = np.sqrt(sum((i - mi) ** 2 * P[i, j] for i in range(n) for j in range(n)))
    sj = np.sqrt(sum((j - mj) ** 2 * P[i, j] for i in range(n) for j in range(n)))
    cor = sum((i - mi) * (j - mj) * P[i, j] for i in range(n) for j in range(n)) / (si * sj) if si * sj > 0 else 0.0
    return np.array([asm, con, cor, ent])


grids = arrays(np.int64, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.integers(0, 7))


@given(grids, st.sampled_from([0, 45, 90, 135]))
def test_glcm_equals_brute_force(grid, d):
    assert np.array_equal(gf.glcm(grid, d, 8).counts, brute_glcm(grid, d, 8))


@given(arrays(np.int64, (9, 11), elements=st.integers(0, 7)), st.sampled_from([0, 45, 90, 135]))
def test_glcm_matches_skimage(grid, d):
    ref = skimage_glcm(grid, d)[:, :, 0, 0]
    assert np.array_equal(gf.glcm(grid, d, 8).counts, ref)


@given(arrays(np.int64, (9, 11), elements=st.integers(0, 7)), st.sampled_from([0, 45, 90, 135]))
def test_features_match_hand_formulas_and_skimage(grid, d):
    g = gf.glcm(grid, d, 8)
    f = gf.glcm_features(g).as_array()
    assert np.allclose(f, hand_features(g.counts), rtol=0, atol=1e-12)
    sk = skimage_glcm(grid, d, normed=True)
    assert abs(f[0] - graycoprops(sk, "ASM")[0, 0]) < 1e-12
    assert abs(f[1] - graycoprops(sk, "contrast")[0, 0]) < 1e-12
    if f[2] != 0.0:
        assert abs(f[2] - graycoprops(sk, "correlation")[0, 0]) < 1e-10


@given(arrays(np.int64, (8, 8), elements=st.integers(0, 7)))
def test_feature_ranges(grid):
    for d in gf.DIRECTIONS:
        asm, con, cor, ent = gf.glcm_features(gf.glcm(grid, d, 8)).as_array()
        assert 0 < asm <= 1 and 0 <= con <= 49 and -1 - 1e-12 <= cor <= 1 + 1e-12
        assert 0 <= ent <= np.log(64) + 1e-12


def test_glcm_total_counts_pairs_inside_the_grid():
    g = np.zeros((5, 7), dtype=np.int64)
    assert gf.glcm(g, 0).total == 5 * 6
    assert gf.glcm(g, 90).total == 4 * 7
    assert gf.glcm(g, 45).total == 4 * 6 == gf.glcm(g, 135).total


def test_quantize_bins_luminance_evenly():
    L = np.array([[0.0, 12.4, 12.5, 99.9, 100.0, 55.0]])
    assert gf.quantize(GrayImage(L), 8).tolist() == [[0, 0, 1, 7, 7, 4]]
    with pytest.raises(ValueError):
        gf.quantize(L, 1)


def test_global_feature_averages_directions():
    rng = np.random.default_rng(2)
    img = GrayImage(rng.uniform(0, 100, (20, 30)))
    grid = gf.quantize(img)
    want = np.mean([hand_features(brute_glcm(grid, d, 8)) for d in STEP], axis=0)
    assert np.allclose(gf.global_feature(img).as_array(), want, atol=1e-12)


def test_constant_image_has_unit_asm_and_zero_contrast():
    f = gf.global_feature(GrayImage(np.full((6, 6), 30.0)))
    assert f.as_array().tolist() == [1.0, 0.0, 0.0, 0.0]


def test_single_pixel_image_is_degenerate():
    with pytest.raises(gf.DegenerateImageError):
        gf.global_feature(GrayImage(np.zeros((1, 1))))
    # a single row still has horizontal pairs
    assert gf.global_feature(GrayImage(np.zeros((1, 4)))).asm == 1.0


def test_scaling_maps_training_range_to_unit_interval():
    X = np.array([[1, 2, 3, 4], [3, 2, 5, 8.0]])
    s = gf.FeatureScaling.fit(X)
    out = s.apply(X)
    assert np.allclose(out[:, [0, 2, 3]], [[0, 0, 0], [1, 1, 1]])
    assert np.all(out[:, 1] == 0)
