"""GLCM texture signature (ASM, contrast, correlation, entropy) of a whole image."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import GrayImage

# (dx, dy) pixel offsets; y grows downwards so 45 degrees is up-right
DIRECTIONS = {0: (1, 0), 45: (1, -1), 90: (0, -1), 135: (-1, -1)}


class DegenerateImageError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Glcm:
    levels: int
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def degenerate(self) -> bool:
        """True when the direction admits no pixel pair at all."""
        return self.total == 0

    @property
    def normalized(self) -> np.ndarray:
        t = self.counts.sum()
        if t == 0:
            return np.zeros_like(self.counts, dtype=np.float64)
        return self.counts / t


@dataclass(frozen=True)
class GlobalFeature:
    asm: float
    con: float
    corrln: float
    ent: float

    def as_array(self) -> np.ndarray:
        return np.array([self.asm, self.con, self.corrln, self.ent])

    @classmethod
    def from_array(cls, v) -> "GlobalFeature":
        v = [float(x) for x in v]
        if len(v) != 4:
            raise ValueError("a global feature has exactly 4 components")
        return cls(*v)


def quantize(img: GrayImage | np.ndarray, levels: int = 8) -> np.ndarray:
    """Map L in [0, 100] to integer gray levels ``0..levels-1``."""
    if levels < 2:
        raise ValueError("levels must be >= 2")
    L = img.L if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    q = np.floor(L / 100.0 * levels).astype(np.int64)
    return np.clip(q, 0, levels - 1)


def glcm(grid: np.ndarray, direction: int, levels: int = 8, distance: int = 1) -> Glcm:
    """Co-occurrence counts of ordered pairs (p, p + offset) for one direction."""
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.size == 0:
        raise ValueError("grid must be a non-empty 2-D array")
    dx, dy = DIRECTIONS[direction]
    dx, dy = dx * distance, dy * distance
    h, w = grid.shape
    # source rows/cols whose offset partner stays inside the grid
    y0, y1 = max(0, -dy), min(h, h - dy)
    x0, x1 = max(0, -dx), min(w, w - dx)
    if y1 <= y0 or x1 <= x0:
        return Glcm(levels, np.zeros((levels, levels), dtype=np.int64))
    src = grid[y0:y1, x0:x1]
    dst = grid[y0 + dy : y1 + dy, x0 + dx : x1 + dx]
    counts = np.bincount((src * levels + dst).ravel(), minlength=levels * levels)
    return Glcm(levels, counts.reshape(levels, levels).astype(np.int64))


def glcm_features(g: Glcm | np.ndarray) -> GlobalFeature:
    P = g.normalized if isinstance(g, Glcm) else np.asarray(g, dtype=np.float64)
    n = P.shape[0]
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    asm = float(np.sum(P * P))
    con = float(np.sum((i - j) ** 2 * P))
    px, py = P.sum(axis=1), P.sum(axis=0)
    lv = np.arange(n)
    mx, my = float(lv @ px), float(lv @ py)
    sx = np.sqrt(max(float((lv - mx) ** 2 @ px), 0.0))
    sy = np.sqrt(max(float((lv - my) ** 2 @ py), 0.0))
    if sx == 0.0 or sy == 0.0:
        corr = 0.0
    else:
        corr = float((np.sum(i * j * P) - mx * my) / (sx * sy))
    nz = P[P > 0]
    ent = float(-np.sum(nz * np.log(nz)))
    return GlobalFeature(asm, con, corr, ent)


def global_feature(img: GrayImage, levels: int = 8) -> GlobalFeature:
    """Mean of the four GLCM statistics over the 0/45/90/135 degree matrices."""
    grid = quantize(img, levels)
    feats = []
    for d in DIRECTIONS:
        g = glcm(grid, d, levels)
        if not g.degenerate:
            feats.append(glcm_features(g).as_array())
    if not feats:
        raise DegenerateImageError(f"image of shape {grid.shape} has no pixel pair in any direction")
    return GlobalFeature.from_array(np.mean(feats, axis=0))


@dataclass(frozen=True)
class FeatureScaling:
    """Per-component min-max map fitted on the training corpus."""

    lo: tuple
    hi: tuple

    @classmethod
    def fit(cls, feats) -> "FeatureScaling":
        X = np.array([f.as_array() if isinstance(f, GlobalFeature) else f for f in feats], dtype=np.float64)
        return cls(tuple(X.min(axis=0).tolist()), tuple(X.max(axis=0).tolist()))

    @classmethod
    def identity(cls) -> "FeatureScaling":
        return cls((0.0,) * 4, (1.0,) * 4)

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        lo, hi = np.array(self.lo), np.array(self.hi)
        span = hi - lo
        # constant components carry no information; map them to 0
        span = np.where(span > 0, span, np.inf)
        return (X - lo) / span
