"""Per-superpixel local descriptors: intensity, 5x5 std, Gabor bank, dense SURF.

All descriptors read the luminance channel only, scaled to [0, 1]. Borders are
clamped to the edge for every window and convolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
from numpy.lib.stride_tricks import sliding_window_view

from .imagecore import GrayImage
from .superpixel import SuperpixelMap

GABOR_WAVELENGTHS = (2.0, 4.0, 8.0, 16.0, 32.0)
GABOR_ORIENTATIONS = 8
GABOR_SIGMA_RATIO = 0.56
GABOR_ASPECT = 0.5
GABOR_DIM = len(GABOR_WAVELENGTHS) * GABOR_ORIENTATIONS

SURF_SCALE = 2
SURF_DIM = 128


@dataclass(frozen=True, eq=False)
class LocalFeatureSet:
    """Descriptors of every superpixel, rows indexed by superpixel id."""

    intensity: np.ndarray  # (K,)
    std: np.ndarray  # (K,)
    gabor: np.ndarray  # (K, 40), scale-major / orientation-minor
    surf: np.ndarray  # (K, 128)

    def __post_init__(self):
        k = len(self.intensity)
        if self.std.shape != (k,) or self.gabor.shape != (k, GABOR_DIM) or self.surf.shape != (k, SURF_DIM):
            raise ValueError("inconsistent local feature shapes")

    @property
    def count(self) -> int:
        return len(self.intensity)

    def entry(self, i: int) -> "LocalFeatureSet":
        s = slice(i, i + 1)
        return LocalFeatureSet(self.intensity[s], self.std[s], self.gabor[s], self.surf[s])

    def subset(self, idx) -> "LocalFeatureSet":
        idx = np.asarray(idx, dtype=np.intp)
        return LocalFeatureSet(self.intensity[idx], self.std[idx], self.gabor[idx], self.surf[idx])

    def groups(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Scale-stabilised feature blocks in weight order (intensity, std, surf, gabor).

        Vector features are divided by sqrt(dim) so the four distances share a scale.
        """
        return (
            self.intensity[:, None],
            self.std[:, None],
            self.surf / math.sqrt(SURF_DIM),
            self.gabor / math.sqrt(GABOR_DIM),
        )


def _mean_planes(sp: SuperpixelMap, planes: np.ndarray) -> np.ndarray:
    """Average (D, H, W) per-pixel planes over every superpixel -> (K, D)."""
    flat = sp.labels.ravel()
    n = sp.sizes().astype(np.float64)
    out = np.empty((sp.count, planes.shape[0]))
    for d, plane in enumerate(planes.reshape(planes.shape[0], -1)):
        out[:, d] = np.bincount(flat, weights=plane, minlength=sp.count)
    return out / n[:, None]


def _unit(img: GrayImage) -> np.ndarray:
    return np.asarray(img.L, dtype=np.float64) / 100.0


def intensity_feature(img: GrayImage, sp: SuperpixelMap) -> np.ndarray:
    return sp.mean_over(_unit(img))


def local_std(I: np.ndarray, size: int = 5) -> np.ndarray:
    """Population std over a size x size edge-clamped window around every pixel."""
    r = size // 2
    win = sliding_window_view(np.pad(I, r, mode="edge"), (size, size))
    return win.std(axis=(-2, -1))


def std_feature(img: GrayImage, sp: SuperpixelMap) -> np.ndarray:
    return sp.mean_over(local_std(_unit(img)))


@lru_cache(maxsize=8)
def gabor_kernels() -> tuple[np.ndarray, ...]:
    """Complex zero-mean kernels, ordered scale-major, orientation-minor."""
    out = []
    for lam in GABOR_WAVELENGTHS:
        sigma = GABOR_SIGMA_RATIO * lam
        half = int(math.ceil(3.0 * sigma / GABOR_ASPECT))
        y, x = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
        for o in range(GABOR_ORIENTATIONS):
            th = o * math.pi / GABOR_ORIENTATIONS
            xr = x * math.cos(th) + y * math.sin(th)
            yr = -x * math.sin(th) + y * math.cos(th)
            env = np.exp(-(xr**2 + (GABOR_ASPECT * yr) ** 2) / (2.0 * sigma**2))
            carrier = np.exp(2j * math.pi * xr / lam)
            # remove the DC response so flat patches give exactly nothing
            dc = (env * carrier).sum() / env.sum()
            out.append(env * (carrier - dc) / env.sum())
    return tuple(out)


@lru_cache(maxsize=32)
def _kernel_spectra(scale: int, shape: tuple[int, int]) -> np.ndarray:
    """FFTs of one scale's kernels, centred on the origin of a periodic grid of ``shape``."""
    kerns = gabor_kernels()[scale * GABOR_ORIENTATIONS : (scale + 1) * GABOR_ORIENTATIONS]
    half = kerns[0].shape[0] // 2
    buf = np.zeros((GABOR_ORIENTATIONS,) + shape, dtype=np.complex128)
    buf[:, : 2 * half + 1, : 2 * half + 1] = kerns
    buf = np.roll(buf, (-half, -half), axis=(1, 2))
    return sfft.fft2(buf, axes=(1, 2)).astype(np.complex64)


def gabor_planes(I: np.ndarray) -> np.ndarray:
    """Per-pixel response magnitudes, shape (40, H, W)."""
    h, w = I.shape
    out = np.empty((GABOR_DIM, h, w))
    for sc in range(len(GABOR_WAVELENGTHS)):
        # each scale gets just enough edge padding that the periodic wrap of the
        # FFT never reaches the cropped centre
        pad = gabor_kernels()[sc * GABOR_ORIENTATIONS].shape[0] // 2
        padded = np.pad(I, pad, mode="edge").astype(np.float32)
        shape = (sfft.next_fast_len(h + 2 * pad), sfft.next_fast_len(w + 2 * pad))
        spec = sfft.fft2(padded, s=shape)
        kern = _kernel_spectra(sc, shape)
        for o in range(GABOR_ORIENTATIONS):
            r = sfft.ifft2(spec * kern[o])[pad : pad + h, pad : pad + w]
            out[sc * GABOR_ORIENTATIONS + o] = np.abs(r)
    return out


def gabor_responses(I: np.ndarray) -> np.ndarray:
    """As :func:`gabor_planes`, laid out (H, W, 40)."""
    return np.moveaxis(gabor_planes(I), 0, -1)


def gabor_feature(img: GrayImage, sp: SuperpixelMap) -> np.ndarray:
    return _mean_planes(sp, gabor_planes(_unit(img)))


def _box_sum(P: np.ndarray, y0: int, x0: int, bh: int, bw: int, h: int, w: int) -> np.ndarray:
    """Sum over the bh x bw box whose top-left corner is (y0 + y, x0 + x), for every (y, x)."""
    out = np.zeros((h, w))
    for dy in range(bh):
        for dx in range(bw):
            out += P[y0 + dy : y0 + dy + h, x0 + dx : x0 + dx + w]
    return out


def haar_responses(I: np.ndarray, s: int = SURF_SCALE) -> tuple[np.ndarray, np.ndarray]:
    """Haar wavelet responses of side 2s at every pixel (x: right minus left, y: down minus up)."""
    h, w = I.shape
    P = np.pad(I, s, mode="edge")
    left = _box_sum(P, 0, 0, 2 * s, s, h, w)
    right = _box_sum(P, 0, s, 2 * s, s, h, w)
    up = _box_sum(P, 0, 0, s, 2 * s, h, w)
    down = _box_sum(P, s, 0, s, 2 * s, h, w)
    return right - left, down - up


def _integral(a: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    np.cumsum(np.cumsum(a, axis=0), axis=1, out=out[1:, 1:])
    return out


def surf_planes(I: np.ndarray, s: int = SURF_SCALE) -> np.ndarray:
    """Dense upright extended-SURF descriptors, unit length per pixel, shape (128, H, W).

    A 20s window around each pixel is split into 4x4 subregions (row-major);
    each subregion contributes sums of dx and |dx| split by the sign of dy, and
    of dy and |dy| split by the sign of dx.
    """
    h, w = I.shape
    sub = 5 * s
    half = 2 * sub
    dx, dy = haar_responses(np.pad(I, half, mode="edge"), s)
    neg_y, neg_x = dy < 0, dx < 0
    maps = [
        np.where(neg_y, dx, 0.0),
        np.where(neg_y, np.abs(dx), 0.0),
        np.where(neg_y, 0.0, dx),
        np.where(neg_y, 0.0, np.abs(dx)),
        np.where(neg_x, dy, 0.0),
        np.where(neg_x, np.abs(dy), 0.0),
        np.where(neg_x, 0.0, dy),
        np.where(neg_x, 0.0, np.abs(dy)),
    ]
    desc = np.empty((16, 8, h, w))
    for c, m in enumerate(maps):
        ii = _integral(m)
        # box sums of side `sub` anchored at every padded position
        box = ii[sub:, sub:] - ii[:-sub, sub:] - ii[sub:, :-sub] + ii[:-sub, :-sub]
        for u in range(4):
            for v in range(4):
                desc[u * 4 + v, c] = box[u * sub : u * sub + h, v * sub : v * sub + w]
    desc = desc.reshape(SURF_DIM, h, w)
    # running sums leave ~1e-13 residue where every response is exactly 0; an
    # integer count of nonzero responses in the window identifies those pixels
    nz = _integral(((dx != 0) | (dy != 0)).astype(np.int64)).astype(np.int64)
    w2 = 2 * half
    flat = (nz[w2 : w2 + h, w2 : w2 + w] - nz[:h, w2 : w2 + w] - nz[w2 : w2 + h, :w] + nz[:h, :w]) == 0
    desc[:, flat] = 0.0
    norm = np.sqrt(np.einsum("kij,kij->ij", desc, desc))
    desc /= np.where(norm > 0, norm, 1.0)
    return desc


def surf_descriptors(I: np.ndarray, s: int = SURF_SCALE) -> np.ndarray:
    """As :func:`surf_planes`, laid out (H, W, 128)."""
    return np.moveaxis(surf_planes(I, s), 0, -1)


def surf_feature(img: GrayImage, sp: SuperpixelMap) -> np.ndarray:
    return _mean_planes(sp, surf_planes(_unit(img)))


def extract_all(img: GrayImage, sp: SuperpixelMap) -> LocalFeatureSet:
    if img.L.shape != sp.shape:
        raise ValueError(f"superpixel map {sp.shape} does not match image {img.L.shape}")
    I = _unit(img)
    return LocalFeatureSet(
        intensity=sp.mean_over(I),
        std=sp.mean_over(local_std(I)),
        gabor=_mean_planes(sp, gabor_planes(I)),
        surf=_mean_planes(sp, surf_planes(I)),
    )
