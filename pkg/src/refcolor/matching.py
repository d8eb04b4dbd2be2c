"""Weighted nearest-neighbour superpixel matching and chroma seed transfer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .imagecore import LabImage
from .localfeat import LocalFeatureSet
from .superpixel import SuperpixelMap

FEATURE_NAMES = ("intensity", "std", "surf", "gabor")
SIMPLEX_TOL = 1e-6


class WeightError(ValueError):
    pass


@dataclass(frozen=True)
class WeightVector:
    """Nonnegative feature weights summing to one, ordered (intensity, std, surf, gabor)."""

    w: tuple

    def __post_init__(self):
        w = tuple(float(x) for x in self.w)
        if len(w) != 4:
            raise WeightError(f"expected 4 weights, got {len(w)}")
        if not all(np.isfinite(w)) or min(w) < 0:
            raise WeightError(f"weights must be finite and nonnegative: {w}")
        if abs(sum(w) - 1.0) > SIMPLEX_TOL:
            raise WeightError(f"weights must sum to 1 (got {sum(w):.9f})")
        object.__setattr__(self, "w", w)

    @classmethod
    def uniform(cls) -> "WeightVector":
        return cls((0.25,) * 4)

    def as_array(self) -> np.ndarray:
        return np.array(self.w)


def _weights(W) -> np.ndarray:
    return W.as_array() if isinstance(W, WeightVector) else np.asarray(W, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ChromaSeeds:
    """One chroma seed per target superpixel, placed at its central pixel."""

    centers: np.ndarray  # (K, 2) as (x, y)
    ab: np.ndarray  # (K, 2)
    source: np.ndarray  # (K,) matched reference id

    @property
    def count(self) -> int:
        return len(self.ab)

    def with_ab(self, ab: np.ndarray) -> "ChromaSeeds":
        return ChromaSeeds(self.centers, np.asarray(ab, dtype=np.float64), self.source)


def feature_distances(t: LocalFeatureSet, r: LocalFeatureSet) -> np.ndarray:
    """Per-feature distance matrices, shape (4, |t|, |r|), in weight order."""
    return np.stack([cdist(a, b) for a, b in zip(t.groups(), r.groups())])


def combine(W, D: np.ndarray) -> np.ndarray:
    """Weighted sum of per-feature distance matrices (fixed left-to-right order)."""
    w = _weights(W)
    G = w[0] * D[0]
    for k in range(1, 4):
        G = G + w[k] * D[k]
    return G


def feature_distance(W, t: LocalFeatureSet, r: LocalFeatureSet) -> float:
    """G for one target entry against one reference entry."""
    return float(combine(W, feature_distances(t, r))[0, 0])


def match(W, targets: LocalFeatureSet, refs: LocalFeatureSet, D: np.ndarray | None = None) -> np.ndarray:
    """Best reference id per target superpixel; ties go to the lowest id."""
    if refs.count < 1:
        raise ValueError("reference has no superpixels")
    if D is None:
        D = feature_distances(targets, refs)
    return np.argmin(combine(W, D), axis=1)


def reference_chroma(ref: LabImage, sp: SuperpixelMap) -> np.ndarray:
    """(a, b) at every reference superpixel's central pixel, shape (K, 2)."""
    x, y = sp.centers[:, 0], sp.centers[:, 1]
    return np.stack([ref.a[y, x], ref.b[y, x]], axis=1)


def transfer(mapping, ref: LabImage, ref_sp: SuperpixelMap, target_sp: SuperpixelMap) -> ChromaSeeds:
    mapping = np.asarray(mapping, dtype=np.int64)
    if mapping.shape != (target_sp.count,):
        raise ValueError(f"mapping covers {mapping.size} of {target_sp.count} target superpixels")
    ab = reference_chroma(ref, ref_sp)[mapping]
    return ChromaSeeds(target_sp.centers.copy(), ab, mapping)


def splat(seeds: ChromaSeeds, sp: SuperpixelMap) -> np.ndarray:
    """Colour-transferring image: each superpixel painted with its seed, shape (H, W, 2)."""
    return seeds.ab[sp.labels]
