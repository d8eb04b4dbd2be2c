"""Colour-difference metrics, seed-matching metrics, random-weight baselines and
per-feature weight ablation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import LabImage
from .matching import FEATURE_NAMES, WeightVector, combine

JND = 2.3
THETA = 3.0 * np.pi


def delta_e2000(lab1, lab2) -> np.ndarray:
    """CIEDE2000 difference (kL = kC = kH = 1) between (..., 3) Lab arrays."""
    lab1 = np.asarray(lab1, dtype=np.float64)
    lab2 = np.asarray(lab2, dtype=np.float64)
    L1, a1, b1 = lab1[..., 0], lab1[..., 1], lab1[..., 2]
    L2, a2, b2 = lab2[..., 0], lab2[..., 1], lab2[..., 2]

    C1 = np.hypot(a1, b1)
    C2 = np.hypot(a2, b2)
    Cbar7 = ((C1 + C2) / 2.0) ** 7
    G = 0.5 * (1.0 - np.sqrt(Cbar7 / (Cbar7 + 25.0**7)))
    a1p = (1.0 + G) * a1
    a2p = (1.0 + G) * a2
    C1p = np.hypot(a1p, b1)
    C2p = np.hypot(a2p, b2)
    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0
    chroma0 = (C1p * C2p) == 0

    dLp = L2 - L1
    dCp = C2p - C1p
    dh = h2p - h1p
    dh = np.where(dh > 180.0, dh - 360.0, np.where(dh < -180.0, dh + 360.0, dh))
    dh = np.where(chroma0, 0.0, dh)
    dHp = 2.0 * np.sqrt(C1p * C2p) * np.sin(np.radians(dh) / 2.0)

    Lbp = (L1 + L2) / 2.0
    Cbp = (C1p + C2p) / 2.0
    hsum = h1p + h2p
    hbar = np.where(
        np.abs(h1p - h2p) <= 180.0, hsum / 2.0, np.where(hsum < 360.0, (hsum + 360.0) / 2.0, (hsum - 360.0) / 2.0)
    )
    hbar = np.where(chroma0, hsum, hbar)

    T = (
        1.0
        - 0.17 * np.cos(np.radians(hbar - 30.0))
        + 0.24 * np.cos(np.radians(2.0 * hbar))
        + 0.32 * np.cos(np.radians(3.0 * hbar + 6.0))
        - 0.20 * np.cos(np.radians(4.0 * hbar - 63.0))
    )
    dtheta = 30.0 * np.exp(-(((hbar - 275.0) / 25.0) ** 2))
    Cbp7 = Cbp**7
    RC = 2.0 * np.sqrt(Cbp7 / (Cbp7 + 25.0**7))
    SL = 1.0 + 0.015 * (Lbp - 50.0) ** 2 / np.sqrt(20.0 + (Lbp - 50.0) ** 2)
    SC = 1.0 + 0.045 * Cbp
    SH = 1.0 + 0.015 * Cbp * T
    RT = -np.sin(np.radians(2.0 * dtheta)) * RC

    tL, tC, tH = dLp / SL, dCp / SC, dHp / SH
    return np.sqrt(np.maximum(tL**2 + tC**2 + tH**2 + RT * tC * tH, 0.0))


def _stack(img: LabImage) -> np.ndarray:
    return np.stack([img.L, img.a, img.b], axis=-1)


def pixel_error_map(colorized: LabImage, gt: LabImage) -> np.ndarray:
    if colorized.shape != gt.shape:
        raise ValueError(f"size mismatch: {colorized.shape} vs {gt.shape}")
    return delta_e2000(_stack(colorized), _stack(gt))


def pixel_error_rate(colorized: LabImage, gt: LabImage, T: float = JND) -> float:
    """Fraction of pixels whose CIEDE2000 difference strictly exceeds T."""
    return float(np.mean(pixel_error_map(colorized, gt) > T))


def mean_error_curve(pairs, thresholds) -> np.ndarray:
    """Mean error rate over (colorized, gt) pairs at each threshold."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one pair")
    T = np.asarray(thresholds, dtype=np.float64)
    maps = [pixel_error_map(c, g).ravel() for c, g in pairs]
    return np.array([np.mean([np.mean(m > t) for m in maps]) for t in T])


def matching_metrics(seed_ab, gt_ab, theta: float = THETA) -> tuple[float, float]:
    """(M, A_j): mean seed chroma error and fraction of seeds with error > theta."""
    e = np.linalg.norm(np.asarray(seed_ab, dtype=np.float64) - np.asarray(gt_ab, dtype=np.float64), axis=1)
    return float(e.mean()), float(np.mean(e > theta))


def set_metrics(per_image) -> tuple[float, float]:
    """(avgE, A) from a list of per-image (M, A_j)."""
    per_image = np.asarray(list(per_image), dtype=np.float64).reshape(-1, 2)
    return float(per_image[:, 0].mean()), float(per_image[:, 1].mean())


def random_weights(k: int = 20, seed: int = 0) -> list[WeightVector]:
    rng = np.random.default_rng(seed)
    return [WeightVector(tuple((w / w.sum()).tolist())) for w in rng.dirichlet(np.ones(4), size=k)]


@dataclass(frozen=True)
class ScatterRow:
    label: str
    weights: tuple
    avgE: float
    A: float


def random_weight_baseline(items, learned, k: int = 20, seed: int = 0, theta: float = THETA) -> list[ScatterRow]:
    """Seed-level (avgE, A) for k random simplex weights and for the learned weights.

    ``items`` are objects with ``D``, ``ref_ab`` and ``gt_ab`` (trainer.PairData);
    ``learned`` is one WeightVector or one per item. The learned row comes last.
    """
    items = list(items)
    if not items:
        raise ValueError("need at least one test pair")
    if isinstance(learned, WeightVector):
        learned = [learned] * len(items)

    def score(ws):
        per = []
        for pd, W in zip(items, ws):
            idx = np.argmin(combine(W, pd.D), axis=1)
            per.append(matching_metrics(pd.ref_ab[idx], pd.gt_ab, theta))
        return set_metrics(per)

    rows = []
    for n, W in enumerate(random_weights(k, seed)):
        rows.append(ScatterRow(f"random_{n + 1}", W.w, *score([W] * len(items))))
    uniq = {W.w for W in learned}
    label_w = learned[0].w if len(uniq) == 1 else tuple([float("nan")] * 4)
    rows.append(ScatterRow("learned", label_w, *score(learned)))
    return rows


def weight_perturbation(W: WeightVector, i: int, step: float = 0.1) -> list[WeightVector]:
    """Vectors with component i set to 0, step, ..., 1 and the rest rescaled to keep the sum at 1."""
    w = W.as_array()
    n = int(round(1.0 / step))
    out = []
    for g in range(n + 1):
        wi = g / n
        if w[i] >= 1.0:
            rest = np.full(4, (1.0 - wi) / 3.0)
        else:
            rest = w * (1.0 - wi) / (1.0 - w[i])
        rest[i] = wi
        rest = np.clip(rest, 0.0, None)
        out.append(WeightVector(tuple((rest / rest.sum()).tolist())))
    return out


@dataclass(frozen=True)
class AblationRow:
    feature: str
    w_star: float
    ratio: float
    wins: int
    n: int
    cluster: int | None = None


def ablation_ratio(items, T: float = JND, step: float = 0.1, by_cluster: bool = False) -> list[AblationRow]:
    """Win ratio of the learned weights against perturbed weights, per feature and grid value.

    ``items`` expose ``weights`` (the learned WeightVector), ``cluster`` and
    ``error_rate(W, T)``. A win is a strictly lower error rate for the learned
    weights; ties count as losses.
    """
    items = list(items)
    if not items:
        raise ValueError("need at least one test image")
    base = [it.error_rate(it.weights, T) for it in items]
    grid_n = int(round(1.0 / step)) + 1
    wins = np.zeros((4, grid_n, len(items)), dtype=bool)
    for n, it in enumerate(items):
        for i in range(4):
            for g, Ws in enumerate(weight_perturbation(it.weights, i, step)):
                wins[i, g, n] = base[n] < it.error_rate(Ws, T)
    rows = []
    groups = [(None, np.arange(len(items)))]
    if by_cluster:
        cl = np.array([it.cluster for it in items])
        groups += [(int(c), np.flatnonzero(cl == c)) for c in np.unique(cl)]
    for c, members in groups:
        for i, name in enumerate(FEATURE_NAMES):
            for g in range(grid_n):
                k = int(wins[i, g, members].sum())
                rows.append(AblationRow(name, round(g * step, 10), k / len(members), k, len(members), c))
    return rows
