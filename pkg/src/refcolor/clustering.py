"""Affinity propagation over global features and nearest-centre assignment."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .globalfeat import FeatureScaling, GlobalFeature

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ClusterModel:
    """Cluster exemplars (raw feature space) plus the scaling used for distances.

    ``centers`` is (K, 4); ``assignments`` maps every training item to a cluster id;
    ``exemplars`` are the training indices whose features the centres copy.
    """

    centers: np.ndarray
    assignments: np.ndarray
    scaling: FeatureScaling
    exemplars: np.ndarray
    converged: bool = True
    n_iter: int = 0

    @property
    def count(self) -> int:
        return len(self.centers)

    def sample_counts(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.count)


def _as_matrix(points) -> np.ndarray:
    return np.array([p.as_array() if isinstance(p, GlobalFeature) else p for p in points], dtype=np.float64)


def similarity_matrix(X: np.ndarray) -> np.ndarray:
    """Negative squared Euclidean distances."""
    diff = X[:, None, :] - X[None, :, :]
    return -np.einsum("ijk,ijk->ij", diff, diff)


def median_preference(S: np.ndarray) -> float:
    n = S.shape[0]
    if n < 2:
        return 0.0
    return float(np.median(S[~np.eye(n, dtype=bool)]))


def affinity_propagation(
    points,
    preference: float | None = None,
    damping: float = 0.9,
    max_iter: int = 1000,
    convergence_window: int = 50,
    scaling: FeatureScaling | None = None,
) -> ClusterModel:
    """Cluster points by affinity propagation on scaled features.

    ``scaling`` defaults to a min-max map fitted on ``points``. ``preference``
    defaults to the median off-diagonal similarity.
    """
    raw = _as_matrix(points)
    if raw.ndim != 2 or raw.shape[0] < 1:
        raise ValueError("need at least one point")
    if not 0.5 <= damping < 1.0:
        raise ValueError("damping must lie in [0.5, 1)")
    scaling = scaling or FeatureScaling.fit(raw)
    X = scaling.apply(raw)
    n = X.shape[0]
    if n == 1 or np.all(X == X[0]):
        # every message is tied; one cluster is the only sensible answer
        return ClusterModel(raw[:1].copy(), np.zeros(n, dtype=np.int64), scaling, np.zeros(1, dtype=np.int64))

    S = similarity_matrix(X)
    pref = median_preference(S) if preference is None else float(preference)
    np.fill_diagonal(S, pref)

    R = np.zeros((n, n))
    A = np.zeros((n, n))
    rows = np.arange(n)
    last = None
    stable = 0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        AS = A + S
        first = AS.argmax(axis=1)
        y1 = AS[rows, first]
        AS[rows, first] = -np.inf
        y2 = AS.max(axis=1)
        Rn = S - y1[:, None]
        Rn[rows, first] = S[rows, first] - y2
        R = damping * R + (1.0 - damping) * Rn

        Rp = np.maximum(R, 0.0)
        Rp[rows, rows] = R[rows, rows]
        An = Rp.sum(axis=0)[None, :] - Rp
        dA = An[rows, rows].copy()
        An = np.minimum(An, 0.0)
        An[rows, rows] = dA
        A = damping * A + (1.0 - damping) * An

        E = (A[rows, rows] + R[rows, rows]) > 0
        if last is not None and np.array_equal(E, last):
            stable += 1
        else:
            stable = 0
        last = E
        if stable >= convergence_window - 1 and E.any():
            converged = True
            break
    if not converged:
        log.warning("affinity propagation did not converge in %d iterations", max_iter)

    ex = np.flatnonzero(last)
    if ex.size == 0:
        # no point claims itself: fall back to the single most central point
        ex = np.array([int(np.argmax(S.sum(axis=0)))])
    ex = _dedupe(ex, X)
    labels = _assign_to(S, ex)
    # refine every exemplar to the member that best represents its cluster
    refined = []
    for k in range(ex.size):
        m = np.flatnonzero(labels == k)
        refined.append(m[np.argmax(S[np.ix_(m, m)].sum(axis=0))])
    ex = _dedupe(np.array(sorted(set(refined))), X)
    labels = _assign_to(S, ex)
    return ClusterModel(raw[ex].copy(), labels, scaling, ex, converged, it)


def _dedupe(ex: np.ndarray, X: np.ndarray) -> np.ndarray:
    keep = []
    for e in sorted(ex.tolist()):
        if not any(np.array_equal(X[e], X[k]) for k in keep):
            keep.append(e)
    return np.array(keep, dtype=np.int64)


def _assign_to(S: np.ndarray, ex: np.ndarray) -> np.ndarray:
    labels = np.argmax(S[:, ex], axis=1)
    labels[ex] = np.arange(ex.size)
    return labels.astype(np.int64)


def assign(f: GlobalFeature | np.ndarray, model: ClusterModel) -> int:
    """Id of the nearest centre in the model's scaled space (ties -> lowest id)."""
    if model.count < 1:
        raise ValueError("empty cluster model")
    x = model.scaling.apply(f.as_array() if isinstance(f, GlobalFeature) else f)
    c = model.scaling.apply(model.centers)
    d = np.sum((c - x) ** 2, axis=1)
    return int(np.argmin(d))
