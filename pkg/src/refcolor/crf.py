"""Spatial-consistency refinement of chroma seeds.

Every superpixel j owns an intensity-grown neighbourhood N*(j). The posterior
combines a unary term pulling each colour towards its transferred seed with
pairwise terms pulling each member of N*(j) towards the mean colour of N*(j).
Inference is iterated conditional modes over a small candidate set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .matching import ChromaSeeds
from .superpixel import SuperpixelMap

DELTA1 = 0.04
DELTA2 = 0.015


@dataclass(frozen=True, eq=False)
class NeighborhoodSets:
    """``sets[j]`` is the sorted-by-insertion id array N*(j); the anchor is never a member."""

    sets: list

    @property
    def count(self) -> int:
        return len(self.sets)

    def containing(self) -> list[list[int]]:
        """For every i, the anchors j with i in N*(j), ascending."""
        rev: list[list[int]] = [[] for _ in self.sets]
        for j, s in enumerate(self.sets):
            for i in s:
                rev[int(i)].append(j)
        return rev


def build_neighborhoods(
    adjacency,
    intensities,
    stds,
    delta1: float = DELTA1,
    delta2: float = DELTA2,
    max_size: int = 15,
    max_reps: int = 3,
) -> NeighborhoodSets:
    """Grow N*(j) breadth-first over the adjacency graph.

    Round 1 takes the adjacent superpixels of j; every later round takes the
    adjacent superpixels of the previous round's additions. A candidate joins
    only if its intensity and std are within (delta1, delta2) of the anchor's.
    Candidates are taken in ascending id until ``max_size`` is reached.
    ``adjacency`` is a SuperpixelMap or a list of neighbour-id arrays.
    """
    adj = adjacency.adjacency() if isinstance(adjacency, SuperpixelMap) else adjacency
    l = np.asarray(intensities, dtype=np.float64)
    s = np.asarray(stds, dtype=np.float64)
    k = len(adj)
    sets = []
    for j in range(k):
        members: list[int] = []
        seen = {j}
        frontier = [j]
        for _ in range(max_reps):
            if len(members) >= max_size or not frontier:
                break
            cand = sorted({int(n) for f in frontier for n in adj[f]} - seen)
            seen.update(cand)
            added = []
            for c in cand:
                if abs(l[c] - l[j]) <= delta1 and abs(s[c] - s[j]) <= delta2:
                    added.append(c)
                    if len(members) + len(added) >= max_size:
                        break
            members.extend(added)
            frontier = added
        sets.append(np.array(members, dtype=np.int64))
    return NeighborhoodSets(sets)


def unary(seed_chroma, candidate_chroma, gamma: float) -> float:
    return float(np.exp(-gamma * np.linalg.norm(np.subtract(seed_chroma, candidate_chroma))))


def pairwise(c_i, neighborhood_mean, in_set: bool, eta: float) -> float:
    if not in_set or neighborhood_mean is None:
        return 1.0
    return float(np.exp(-eta * np.linalg.norm(np.subtract(c_i, neighborhood_mean))))


def log_posterior(C: np.ndarray, C_hat: np.ndarray, n: NeighborhoodSets, gamma: float, eta: float) -> float:
    """log P(C | C_hat) + log Z."""
    C = np.asarray(C, dtype=np.float64)
    total = -gamma * float(np.linalg.norm(C - C_hat, axis=1).sum())
    for s in n.sets:
        if len(s):
            m = C[s].mean(axis=0)
            total -= eta * float(np.linalg.norm(C[s] - m, axis=1).sum())
    return total


def _csr(lists) -> tuple[np.ndarray, np.ndarray]:
    ptr = np.zeros(len(lists) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(x) for x in lists])
    idx = np.concatenate([np.asarray(x, dtype=np.int64) for x in lists]) if ptr[-1] else np.zeros(0, np.int64)
    return ptr, idx


@njit(cache=True)
def _candidate_score(i, c, C, C_hat, set_ptr, set_idx, rev_ptr, rev_idx, gamma, eta):
    """Log-posterior terms depending on C[i] when C[i] is replaced by ``c``."""
    da = c[0] - C_hat[i, 0]
    db = c[1] - C_hat[i, 1]
    score = -gamma * np.sqrt(da * da + db * db)
    for q in range(rev_ptr[i], rev_ptr[i + 1]):
        j = rev_idx[q]
        lo, hi = set_ptr[j], set_ptr[j + 1]
        ma = 0.0
        mb = 0.0
        for p in range(lo, hi):
            m = set_idx[p]
            if m == i:
                ma += c[0]
                mb += c[1]
            else:
                ma += C[m, 0]
                mb += C[m, 1]
        ma /= hi - lo
        mb /= hi - lo
        d = 0.0
        for p in range(lo, hi):
            m = set_idx[p]
            if m == i:
                va, vb = c[0], c[1]
            else:
                va, vb = C[m, 0], C[m, 1]
            d += np.sqrt((va - ma) ** 2 + (vb - mb) ** 2)
        score -= eta * d
    return score


@njit(cache=True)
def _icm(C, C_hat, set_ptr, set_idx, rev_ptr, rev_idx, gamma, eta, max_sweeps, margin):
    k = C.shape[0]
    cand = np.empty((3, 2))
    sweeps = 0
    for _ in range(max_sweeps):
        sweeps += 1
        changed = False
        for i in range(k):
            cand[0, 0], cand[0, 1] = C[i, 0], C[i, 1]
            cand[1, 0], cand[1, 1] = C_hat[i, 0], C_hat[i, 1]
            nc = 2
            lo, hi = set_ptr[i], set_ptr[i + 1]
            if hi > lo:
                ma = 0.0
                mb = 0.0
                for p in range(lo, hi):
                    ma += C[set_idx[p], 0]
                    mb += C[set_idx[p], 1]
                cand[2, 0], cand[2, 1] = ma / (hi - lo), mb / (hi - lo)
                nc = 3
            best = 0
            best_score = _candidate_score(i, cand[0], C, C_hat, set_ptr, set_idx, rev_ptr, rev_idx, gamma, eta)
            for c in range(1, nc):
                if cand[c, 0] == C[i, 0] and cand[c, 1] == C[i, 1]:
                    continue
                sc = _candidate_score(i, cand[c], C, C_hat, set_ptr, set_idx, rev_ptr, rev_idx, gamma, eta)
                # the margin stops round-off from flipping between equal-score colours
                if sc > best_score + margin:
                    best = c
                    best_score = sc
            if best:
                C[i, 0], C[i, 1] = cand[best, 0], cand[best, 1]
                changed = True
        if not changed:
            break
    return sweeps


def refine(
    seeds: ChromaSeeds,
    n: NeighborhoodSets,
    gamma: float = 1.0,
    eta: float = 2.0,
    max_sweeps: int = 20,
) -> ChromaSeeds:
    """ICM on the seed colours.

    Each superpixel chooses among {its current colour, its transferred seed,
    the current mean of N*(i)} by the exact change in the log-posterior (its
    unary term plus every pairwise factor whose neighbourhood contains it).
    Keeping the current colour as a candidate makes every update non-decreasing
    in the posterior. Ties keep the current colour, then prefer the seed.
    Superpixels are visited in ascending id.
    """
    if gamma < 0 or eta < 0:
        raise ValueError("gamma and eta must be nonnegative")
    C_hat = np.ascontiguousarray(seeds.ab, dtype=np.float64)
    C = C_hat.copy()
    k = len(C)
    if n.count != k:
        raise ValueError(f"{n.count} neighbourhoods for {k} seeds")
    if eta == 0 or k == 0:
        return seeds.with_ab(C)
    set_ptr, set_idx = _csr(n.sets)
    rev_ptr, rev_idx = _csr(n.containing())
    margin = 1e-12 * (1.0 + float(np.abs(C_hat).max()))
    _icm(C, C_hat, set_ptr, set_idx, rev_ptr, rev_idx, float(gamma), float(eta), int(max_sweeps), margin)
    return seeds.with_ab(C)
