"""Propagate seed chroma to every pixel along intensity-similar neighbours.

Every free pixel's chroma is required to equal the weighted average of its
8-neighbours (weights from luminance similarity), with seed pixels held at
their seed values. The resulting sparse system is solved per chroma channel.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .imagecore import GrayImage, LabImage
from .matching import ChromaSeeds

SIGMA2_MIN = 1e-6
OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]  # (dy, dx)


class SpreadError(RuntimeError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (final relative residual {residual:.3e})")
        self.residual = residual


def _shifted(a: np.ndarray, dy: int, dx: int, fill=0.0):
    """Value of the (dy, dx) neighbour of every pixel, and whether it exists."""
    h, w = a.shape
    out = np.full_like(a, fill)
    ok = np.zeros((h, w), dtype=bool)
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    yt = slice(max(0, dy), min(h, h + dy))
    xt = slice(max(0, dx), min(w, w + dx))
    out[ys, xs] = a[yt, xt]
    ok[ys, xs] = True
    return out, ok


def build_weights(gray: GrayImage, sigma2_min: float = SIGMA2_MIN) -> np.ndarray:
    """Normalised neighbour weights, shape (8, H, W) in ``OFFSETS`` order (0 off-image)."""
    l = np.asarray(gray.L, dtype=np.float64) / 100.0
    if min(l.shape) < 2:
        raise ValueError(f"image must be at least 2x2, got {l.shape}")
    nb, ok = zip(*(_shifted(l, dy, dx) for dy, dx in OFFSETS))
    nb, ok = np.array(nb), np.array(ok)
    # variance over the neighbourhood together with the pixel itself
    cnt = ok.sum(axis=0) + 1.0
    mean = (nb.sum(axis=0) + l) / cnt
    var = (((nb - mean) ** 2 * ok).sum(axis=0) + (l - mean) ** 2) / cnt
    var = np.maximum(var, sigma2_min)
    w = np.exp(-((nb - l) ** 2) / (2.0 * var)) * ok
    return w / w.sum(axis=0)


def weight_matrix(weights: np.ndarray) -> sparse.csr_matrix:
    _, h, w = weights.shape
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, vals = [], [], []
    for k, (dy, dx) in enumerate(OFFSETS):
        nbr, ok = _shifted(idx, dy, dx, fill=-1)
        rows.append(idx[ok])
        cols.append(nbr[ok])
        vals.append(weights[k][ok])
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(h * w, h * w)
    )


@dataclass(frozen=True, eq=False)
class SpreadProblem:
    gray: GrayImage
    seed_index: np.ndarray  # flat pixel indices, unique
    seed_ab: np.ndarray  # (S, 2)
    weights: np.ndarray  # (8, H, W)

    @classmethod
    def build(cls, gray: GrayImage, seeds: ChromaSeeds | tuple) -> "SpreadProblem":
        """``seeds`` is ChromaSeeds or a ((S, 2) xy-coordinates, (S, 2) ab) pair."""
        if isinstance(seeds, ChromaSeeds):
            xy, ab = seeds.centers, seeds.ab
        else:
            xy, ab = seeds
        xy = np.asarray(xy, dtype=np.int64).reshape(-1, 2)
        ab = np.asarray(ab, dtype=np.float64).reshape(-1, 2)
        h, w = gray.shape
        if len(xy) < 1:
            raise ValueError("need at least one seed")
        if np.any((xy[:, 0] < 0) | (xy[:, 0] >= w) | (xy[:, 1] < 0) | (xy[:, 1] >= h)):
            raise ValueError("seed outside the image")
        flat = xy[:, 1] * w + xy[:, 0]
        uniq, first = np.unique(flat, return_index=True)
        if len(uniq) != len(flat):
            # a pixel seeded twice must agree with itself
            for u in uniq:
                if len(np.unique(ab[flat == u], axis=0)) > 1:
                    raise ValueError(f"conflicting seeds at pixel {int(u)}")
        return cls(gray, uniq, ab[first], build_weights(gray))

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.gray.L.size, dtype=bool)
        m[self.seed_index] = True
        return m.reshape(self.gray.shape)


def _system(p: SpreadProblem, order: np.ndarray | None = None):
    """Free-pixel system A x = rhs, unknowns numbered along ``order`` (default row-major).

    Returns (A, rhs, idx) where ``idx[k]`` is the flat pixel index of unknown k.
    """
    h, w = p.gray.shape
    free = ~p.mask.ravel()
    idx = np.flatnonzero(free) if order is None else order[free[order]]
    n = idx.size
    rank = np.full(h * w, -1)
    rank[idx] = np.arange(n)
    seed_val = np.zeros((h * w, 2))
    seed_val[p.seed_index] = p.seed_ab
    pix = np.arange(h * w).reshape(h, w)
    rows, cols, vals = [np.arange(n)], [np.arange(n)], [np.ones(n)]
    rhs = np.zeros((n, 2))
    for k, (dy, dx) in enumerate(OFFSETS):
        nbr, ok = _shifted(pix, dy, dx, fill=-1)
        src, dst, wk = pix[ok], nbr[ok], p.weights[k][ok]
        keep = rank[src] >= 0
        src, dst, wk = rank[src[keep]], dst[keep], wk[keep]
        to_free = rank[dst] >= 0
        rows.append(src[to_free])
        cols.append(rank[dst[to_free]])
        vals.append(-wk[to_free])
        # seeded neighbours move to the right-hand side
        np.add.at(rhs, src[~to_free], wk[~to_free, None] * seed_val[dst[~to_free]])
    A = sparse.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return A, rhs, idx


@lru_cache(maxsize=8)
def nested_dissection(h: int, w: int, leaf: int = 4) -> np.ndarray:
    """Fill-reducing elimination order of the pixels of an h x w grid.

    A full row (or column) separates an 8-connected grid, so each block is
    split by its middle line, both halves are ordered recursively, and the
    separator is eliminated last.
    """
    out: list = []

    def rec(y0, y1, x0, x1):
        if y1 <= y0 or x1 <= x0:
            return
        if (y1 - y0) * (x1 - x0) <= leaf * leaf:
            out.append((np.arange(y0, y1)[:, None] * w + np.arange(x0, x1)[None, :]).ravel())
        elif y1 - y0 >= x1 - x0:
            m = (y0 + y1) // 2
            rec(y0, m, x0, x1)
            rec(m + 1, y1, x0, x1)
            out.append(m * w + np.arange(x0, x1))
        else:
            m = (x0 + x1) // 2
            rec(y0, y1, x0, m)
            rec(y0, y1, m + 1, x1)
            out.append(np.arange(y0, y1) * w + m)

    rec(0, h, 0, w)
    order = np.concatenate(out)
    order.setflags(write=False)
    return order


def _cgnr(A, b, tol, max_iter):
    At = A.T.tocsr()
    x, info = spla.cg(At @ A, At @ b, rtol=tol * 1e-2, maxiter=max_iter)
    return x


def spread_ab(p: SpreadProblem, solver: str = "direct", tol: float = 1e-8, max_iter: int | None = None) -> np.ndarray:
    """Solved chroma, shape (H, W, 2)."""
    h, w = p.gray.shape
    out = np.empty((h * w, 2))
    out[p.seed_index] = p.seed_ab
    if p.seed_index.size == h * w:
        return out.reshape(h, w, 2)
    if solver == "direct":
        A, rhs, idx = _system(p, nested_dissection(h, w))
        X = spla.splu(A, permc_spec="NATURAL").solve(rhs)
    elif solver == "cg":
        A, rhs, idx = _system(p)
        X = np.stack([_cgnr(A, rhs[:, c], tol, max_iter or 10 * A.shape[0]) for c in range(2)], axis=1)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    res = np.linalg.norm(A @ X - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if not np.all(np.isfinite(X)) or res > tol:
        raise SpreadError("spreading solve did not reach tolerance", float(res))
    out[idx] = X
    return out.reshape(h, w, 2)


def spread(p: SpreadProblem, solver: str = "direct", tol: float = 1e-8) -> LabImage:
    ab = spread_ab(p, solver, tol)
    return LabImage(p.gray.L, ab[..., 0], ab[..., 1])


def energy(p: SpreadProblem, ab: np.ndarray, free_only: bool = True) -> float:
    """Sum over pixels of |C(i) - sum_j w_ij C(j)|^2 (free pixels only by default)."""
    W = weight_matrix(p.weights)
    C = np.asarray(ab, dtype=np.float64).reshape(-1, 2)
    r = C - W @ C
    if free_only:
        r = r[~p.mask.ravel()]
    return float(np.sum(r * r))


def splat_nearest(p: SpreadProblem) -> np.ndarray:
    """Baseline: every pixel takes the chroma of its nearest seed, shape (H, W, 2)."""
    h, w = p.gray.shape
    sy, sx = np.divmod(p.seed_index, w)
    tree = cKDTree(np.stack([sy, sx], axis=1))
    ys, xs = np.mgrid[0:h, 0:w]
    _, nearest = tree.query(np.stack([ys.ravel(), xs.ravel()], axis=1))
    return p.seed_ab[nearest].reshape(h, w, 2)
