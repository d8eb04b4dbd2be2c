"""SLIC-style superpixels on the luminance channel.

Grid-seeded k-means on (L, y, x), a fixed number of iterations, then a
connectivity pass that folds stray fragments (and anything smaller than a
quarter of the target size) into their largest adjacent region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from skimage.measure import label as connected_label

from .imagecore import GrayImage


@dataclass(frozen=True, eq=False)
class SuperpixelMap:
    """Full-cover partition of an image into 4-connected superpixels.

    ``labels`` is an (H, W) int array with ids ``0..count-1``; ``centers`` holds
    the central pixel of every superpixel as (x, y); ``members`` lists each
    superpixel's flat (row-major) pixel indices in ascending order.
    """

    labels: np.ndarray
    count: int
    centers: np.ndarray
    members: list = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.count)

    def center_indices(self) -> np.ndarray:
        """Flat row-major index of every central pixel."""
        return self.centers[:, 1] * self.labels.shape[1] + self.centers[:, 0]

    def adjacency(self) -> list[np.ndarray]:
        """Sorted ids of the 4-adjacent superpixels of every superpixel."""
        lab = self.labels
        pairs = [
            np.stack([lab[:, :-1].ravel(), lab[:, 1:].ravel()], axis=1),
            np.stack([lab[:-1, :].ravel(), lab[1:, :].ravel()], axis=1),
        ]
        p = _unique_pairs(np.concatenate(pairs), self.count)
        split = np.searchsorted(p[:, 0], np.arange(self.count + 1))
        return [p[split[k] : split[k + 1], 1] for k in range(self.count)]

    def mean_over(self, values: np.ndarray) -> np.ndarray:
        """Average a per-pixel array (H, W) or (H, W, D) over every superpixel."""
        flat = self.labels.ravel()
        n = self.sizes().astype(np.float64)
        v = values.reshape(flat.size, -1)
        out = np.empty((self.count, v.shape[1]))
        for d in range(v.shape[1]):
            out[:, d] = np.bincount(flat, weights=v[:, d], minlength=self.count)
        out /= n[:, None]
        return out[:, 0] if values.ndim == 2 else out


def _unique_pairs(p: np.ndarray, n: int) -> np.ndarray:
    """Distinct unordered pairs of different ids, returned in both orientations, sorted."""
    p = p[p[:, 0] != p[:, 1]]
    code = np.unique(np.concatenate([p[:, 0] * n + p[:, 1], p[:, 1] * n + p[:, 0]]))
    return np.stack(np.divmod(code, n), axis=1)


def from_labels(labels: np.ndarray) -> SuperpixelMap:
    """Build a map from an arbitrary label image (ids must be 0..K-1, all used)."""
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if labels.ndim != 2 or labels.size == 0:
        raise ValueError("labels must be a non-empty 2-D array")
    count = int(labels.max()) + 1
    flat = labels.ravel()
    if labels.min() < 0 or np.bincount(flat, minlength=count).min() == 0:
        raise ValueError("labels must use every id in 0..count-1")
    order = np.argsort(flat, kind="stable")
    split = np.searchsorted(flat[order], np.arange(count + 1))
    members = [order[split[k] : split[k + 1]] for k in range(count)]
    centers = _central_pixels(labels, count)
    labels.setflags(write=False)
    return SuperpixelMap(labels, count, centers, members)


def _central_pixels(labels: np.ndarray, count: int) -> np.ndarray:
    h, w = labels.shape
    flat = labels.ravel()
    ys, xs = np.divmod(np.arange(flat.size), w)
    n = np.bincount(flat, minlength=count).astype(np.float64)
    cy = np.bincount(flat, weights=ys, minlength=count) / n
    cx = np.bincount(flat, weights=xs, minlength=count) / n
    d2 = (ys - cy[flat]) ** 2 + (xs - cx[flat]) ** 2
    # nearest member to the centroid; ties go to the smallest row-major index
    order = np.lexsort((np.arange(flat.size), d2, flat))
    first = order[np.searchsorted(flat[order], np.arange(count))]
    return np.stack([xs[first], ys[first]], axis=1)


def central_pixel(sp: SuperpixelMap, sid: int) -> tuple[int, int]:
    if not 0 <= sid < sp.count:
        raise IndexError(f"superpixel id {sid} out of range [0, {sp.count})")
    x, y = sp.centers[sid]
    return int(x), int(y)


def _seed_grid(h: int, w: int, target_size: int):
    step = math.sqrt(target_size)
    ny = max(1, int(round(h / step)))
    nx = max(1, int(round(w / step)))
    return ny, nx, h / ny, w / nx


def segment(
    img: GrayImage,
    target_size: int = 100,
    compactness: float = 10.0,
    n_iter: int = 10,
) -> SuperpixelMap:
    """Partition ``img`` into superpixels of roughly ``target_size`` pixels."""
    if target_size < 1:
        raise ValueError("target_size must be >= 1")
    L = np.asarray(img.L, dtype=np.float64)
    if L.ndim != 2 or 0 in L.shape:
        raise ValueError(f"degenerate image of shape {L.shape}")
    h, w = L.shape
    ny, nx, cell_h, cell_w = _seed_grid(h, w, target_size)
    k = ny * nx
    spatial = (compactness / math.sqrt(cell_h * cell_w)) ** 2

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
    Lf = L.astype(np.float32)
    gy = np.minimum((ys / cell_h).astype(np.int64), ny - 1)
    gx = np.minimum((xs / cell_w).astype(np.int64), nx - 1)
    seed_cell = gy * nx + gx

    # seeds at the cell centres carrying the cell's mean intensity; slot k is a
    # sentinel centre that no pixel can ever prefer
    cnt = np.bincount(seed_cell.ravel(), minlength=k)
    c_l = np.empty(k + 1, dtype=np.float32)
    c_y = np.zeros(k + 1, dtype=np.float32)
    c_x = np.zeros(k + 1, dtype=np.float32)
    c_l[:k] = np.bincount(seed_cell.ravel(), weights=L.ravel(), minlength=k) / cnt
    c_l[k] = 1e15
    c_y[:k] = ((np.arange(k) // nx) + 0.5) * cell_h - 0.5
    c_x[:k] = ((np.arange(k) % nx) + 0.5) * cell_w - 0.5

    # candidate centres: the 3x3 block of seed cells around each pixel's own cell,
    # visited in ascending id so the strict "<" keeps the lowest id on ties
    cand = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            cy_, cx_ = gy + dy, gx + dx
            ok = (cy_ >= 0) & (cy_ < ny) & (cx_ >= 0) & (cx_ < nx)
            cand.append(np.where(ok, cy_ * nx + cx_, k))

    spatial = np.float32(spatial)
    labels = seed_cell
    for _ in range(n_iter):
        best = np.full((h, w), np.inf, dtype=np.float32)
        labels = np.zeros((h, w), dtype=np.int64)
        for idx in cand:
            d = Lf - c_l[idx]
            d *= d
            t = ys - c_y[idx]
            t *= t
            t *= spatial
            d += t
            t = xs - c_x[idx]
            t *= t
            t *= spatial
            d += t
            better = d < best
            best[better] = d[better]
            labels[better] = idx[better]
        flat = labels.ravel()
        n = np.bincount(flat, minlength=k)
        live = np.flatnonzero(n > 0)
        c_l[live] = np.bincount(flat, weights=L.ravel(), minlength=k)[live] / n[live]
        c_y[live] = np.bincount(flat, weights=ys.ravel(), minlength=k)[live] / n[live]
        c_x[live] = np.bincount(flat, weights=xs.ravel(), minlength=k)[live] / n[live]

    return from_labels(_enforce_connectivity(labels, max(1, target_size // 4)))


def _enforce_connectivity(labels: np.ndarray, min_size: int) -> np.ndarray:
    comp = connected_label(labels + 1, connectivity=1, background=0) - 1
    nc = int(comp.max()) + 1
    flat = comp.ravel()
    size = np.bincount(flat, minlength=nc)
    owner = np.zeros(nc, dtype=np.int64)
    owner[flat] = labels.ravel()

    # the largest fragment of each cluster survives; ties -> lowest component id
    order = np.lexsort((np.arange(nc), -size, owner))
    keep = np.zeros(nc, dtype=bool)
    keep[order[np.r_[True, owner[order][1:] != owner[order][:-1]]]] = True
    doomed = ~keep | (size < min_size)
    if nc == 1 or not doomed.any():
        return _relabel(comp)

    pairs = np.concatenate(
        [
            np.stack([comp[:, :-1].ravel(), comp[:, 1:].ravel()], axis=1),
            np.stack([comp[:-1, :].ravel(), comp[1:, :].ravel()], axis=1),
        ]
    )
    pairs = _unique_pairs(pairs, nc)
    adj: dict[int, set] = {i: set() for i in range(nc)}
    for a, b in pairs.tolist():
        adj[a].add(b)

    size = size.astype(np.int64)
    parent = np.arange(nc)
    alive = np.ones(nc, dtype=bool)
    queue = sorted(np.flatnonzero(doomed).tolist(), key=lambda c: (size[c], c))
    for c in queue:
        if not alive[c] or not adj[c]:
            continue
        if keep[c] and size[c] >= min_size:
            continue
        # absorb into the largest neighbour (ties -> lowest id)
        tgt = min(adj[c], key=lambda n: (-size[n], n))
        parent[c] = tgt
        alive[c] = False
        size[tgt] += size[c]
        for n in adj[c]:
            adj[n].discard(c)
            if n != tgt:
                adj[n].add(tgt)
                adj[tgt].add(n)
        adj[c] = set()

    root = np.arange(nc)
    for c in range(nc):
        r = c
        while parent[r] != r:
            r = parent[r]
        root[c] = r
    return _relabel(root[comp])


def _relabel(lab: np.ndarray) -> np.ndarray:
    """Renumber ids 0..K-1 in order of first appearance (row-major)."""
    flat = lab.ravel()
    _, first = np.unique(flat, return_index=True)
    uniq = flat[np.sort(first)]
    lut = np.empty(int(flat.max()) + 1, dtype=np.int64)
    lut[uniq] = np.arange(uniq.size)
    return lut[lab]


def label_image(sp: SuperpixelMap, seed: int = 0) -> np.ndarray:
    """Random-colour RGB rendering of the label map (debug output)."""
    rng = np.random.default_rng(seed)
    palette = rng.integers(0, 256, size=(sp.count, 3), dtype=np.uint8)
    return palette[sp.labels]
