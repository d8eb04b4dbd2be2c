"""Learning per-cluster matching weights, and ColorModel persistence.

The transfer error is piecewise constant in W (matching is an argmin), so the
optimiser works on a softmin relaxation and candidate solutions are ranked by
the true (hard) error.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import clustering, globalfeat, localfeat, matching, superpixel
from .imagecore import GrayImage, LabImage, read_image, rgb_to_lab
from .matching import WeightVector

log = logging.getLogger(__name__)

MODEL_VERSION = 1
_RESIDUAL_EPS = 1e-12


class TrainingError(RuntimeError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    target_size: int = 100
    levels: int = 8
    tau: float = 0.05
    tau_stages: int = 3  # tau, tau * tau_decay, ... each warm-started from the last
    tau_decay: float = 0.1
    logit_floor: float = -4.0
    n_starts: int = 8
    max_iter: int = 200
    fd_step: float = 1e-4
    rel_tol: float = 1e-8
    seed: int = 0
    preference: float | None = None
    threads: int = 1


@dataclass(frozen=True, eq=False)
class TrainingPair:
    gray: GrayImage
    ground_truth: LabImage
    reference: LabImage
    cluster: int = 0

    @classmethod
    def from_images(cls, ground_truth: LabImage, reference: LabImage, cluster: int = 0) -> "TrainingPair":
        return cls(ground_truth.gray(), ground_truth, reference, cluster)


@dataclass(frozen=True, eq=False)
class Featurized:
    """A segmented image and its local descriptors."""

    sp: superpixel.SuperpixelMap
    feats: localfeat.LocalFeatureSet


def featurize(gray: GrayImage, target_size: int = 100) -> Featurized:
    sp = superpixel.segment(gray, target_size)
    return Featurized(sp, localfeat.extract_all(gray, sp))


@dataclass(frozen=True, eq=False)
class PairData:
    """Everything the error functions need: per-feature distances and chroma at the centres."""

    D: np.ndarray  # (4, |T|, |R|)
    ref_ab: np.ndarray  # (|R|, 2)
    gt_ab: np.ndarray  # (|T|, 2)

    @classmethod
    def build(cls, target: Featurized, reference: Featurized, ref_lab: LabImage, gt: LabImage) -> "PairData":
        D = matching.feature_distances(target.feats, reference.feats)
        return cls(D, matching.reference_chroma(ref_lab, reference.sp), matching.reference_chroma(gt, target.sp))

    @classmethod
    def from_pair(cls, pair: TrainingPair, target_size: int = 100) -> "PairData":
        t = featurize(pair.gray, target_size)
        r = featurize(pair.reference.gray(), target_size)
        return cls.build(t, r, pair.reference, pair.ground_truth)


def hard_error(pd: PairData, W) -> float:
    """Summed chroma distance between matched reference seeds and the ground truth."""
    idx = np.argmin(matching.combine(W, pd.D), axis=1)
    return float(np.linalg.norm(pd.ref_ab[idx] - pd.gt_ab, axis=1).sum())


def _soft_chroma(pd: PairData, W, tau: float) -> np.ndarray:
    z = -matching.combine(W, pd.D) / tau
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p @ pd.ref_ab


def soft_error(pd: PairData, W, tau: float = 0.05) -> float:
    """Hard error with the argmin replaced by a softmin at temperature ``tau``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return float(np.linalg.norm(_soft_chroma(pd, W, tau) - pd.gt_ab, axis=1).sum())


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z))
    return e / e.sum()


def _residuals(z: np.ndarray, data: list[PairData], tau: float) -> np.ndarray:
    # r_i^2 = sqrt(|e_i|^2 + eps), so the squared residual norm is the soft error
    W = softmax(z)
    out = []
    for pd in data:
        e = _soft_chroma(pd, W, tau) - pd.gt_ab
        out.append((np.einsum("ij,ij->i", e, e) + _RESIDUAL_EPS) ** 0.25)
    return np.concatenate(out)


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    n_iter: int
    converged: bool


def levenberg_marquardt(
    fun,
    x0,
    max_iter: int = 200,
    fd_step: float = 1e-4,
    rel_tol: float = 1e-8,
    lam0: float = 1e-3,
) -> LMResult:
    """Minimise ``sum(fun(x)**2)`` with a central-difference Jacobian.

    Damping follows Marquardt's scaled rule (JtJ + lam * diag(JtJ)) with a small
    identity floor so flat directions stay solvable.
    """
    x = np.array(x0, dtype=np.float64)
    r = fun(x)
    cost = float(r @ r)
    if not np.isfinite(cost):
        return LMResult(x, cost, 0, False)
    lam = lam0
    n = x.size
    for it in range(1, max_iter + 1):
        J = np.empty((r.size, n))
        for k in range(n):
            d = np.zeros(n)
            d[k] = fd_step
            J[:, k] = (fun(x + d) - fun(x - d)) / (2.0 * fd_step)
        A = J.T @ J
        g = J.T @ r
        if not np.any(g):
            return LMResult(x, cost, it, True)
        accepted = False
        while lam < 1e16:
            M = A + lam * (np.diag(np.diag(A)) + 1e-9 * np.eye(n))
            try:
                step = np.linalg.solve(M, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            r_new = fun(x + step)
            c_new = float(r_new @ r_new)
            if np.isfinite(c_new) and c_new < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no descent direction left at any damping: a (local) minimum
            return LMResult(x, cost, it, True)
        rel = (cost - c_new) / max(cost, 1e-300)
        x, r, cost = x + step, r_new, c_new
        lam = max(lam / 10.0, 1e-12)
        if rel < rel_tol:
            return LMResult(x, cost, it, True)
    return LMResult(x, cost, max_iter, False)


@dataclass(frozen=True)
class StartReport:
    init: tuple
    weights: tuple
    soft: float  # surrogate cost at the temperature of the kept stage
    hard: float
    converged: bool
    tau: float = math.nan


def train_weights(data: list[PairData], cfg: TrainConfig = TrainConfig(), rng=None) -> tuple[WeightVector, list]:
    """Learn one WeightVector for the pairs of one cluster.

    Every random start runs LM on the softmin surrogate at a falling sequence
    of temperatures, and keeps the stage with the lowest hard error. The start
    with the lowest hard error wins (ties: lower surrogate cost, then lower
    start index). Returns the chosen weights and a per-start report.
    """
    if not data:
        raise ValueError("need at least one training pair")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    starts = rng.dirichlet(np.ones(4), size=cfg.n_starts)
    taus = [cfg.tau * cfg.tau_decay**k for k in range(max(1, cfg.tau_stages))]
    reports = []
    for w0 in starts:
        z = np.log(w0)
        best = StartReport(tuple(w0), tuple(w0), math.inf, math.inf, False)
        for tau in taus:
            # re-centre and floor the logits so a saturated softmax can move again
            z = np.maximum(z - z.max(), cfg.logit_floor)
            res = levenberg_marquardt(lambda x: _residuals(x, data, tau), z, cfg.max_iter, cfg.fd_step, cfg.rel_tol)
            W = softmax(res.x)
            if not np.all(np.isfinite(W)):
                break
            z = res.x
            hard = sum(hard_error(pd, W) for pd in data)
            if hard < best.hard:
                best = StartReport(tuple(w0), tuple(W), res.cost, hard, res.converged, tau)
        reports.append(best)
    finite = [i for i, r in enumerate(reports) if math.isfinite(r.hard)]
    if not finite:
        raise TrainingError(f"every start diverged; best initial weights {tuple(starts[0])}")
    best = min(finite, key=lambda i: (reports[i].hard, reports[i].soft, i))
    return WeightVector(_to_simplex(reports[best].weights)), reports


def _to_simplex(w) -> tuple:
    w = np.clip(np.asarray(w, dtype=np.float64), 0.0, None)
    return tuple((w / w.sum()).tolist())


@dataclass(frozen=True, eq=False)
class ColorModel:
    """Cluster centres with one learned weight vector each, plus preprocessing metadata."""

    centers: np.ndarray  # (K, 4) raw global features
    scaling: globalfeat.FeatureScaling
    weights: tuple  # of WeightVector
    sample_counts: tuple
    target_size: int = 100
    levels: int = 8
    version: int = MODEL_VERSION
    reports: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if len(self.weights) != len(self.centers) or len(self.sample_counts) != len(self.centers):
            raise ModelFormatError("one weight vector and one sample count per cluster required")
        if len(self.centers) < 1:
            raise ModelFormatError("model has no clusters")

    @property
    def count(self) -> int:
        return len(self.centers)

    def cluster_model(self) -> clustering.ClusterModel:
        k = self.count
        return clustering.ClusterModel(
            np.asarray(self.centers), np.zeros(0, dtype=np.int64), self.scaling, np.arange(k)
        )

    def assign(self, f: globalfeat.GlobalFeature) -> int:
        return clustering.assign(f, self.cluster_model())

    def weights_for(self, gray: GrayImage) -> tuple[int, WeightVector]:
        k = self.assign(globalfeat.global_feature(gray, self.levels))
        return k, self.weights[k]

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "glcm": {"levels": self.levels, "scaling": {"lo": list(self.scaling.lo), "hi": list(self.scaling.hi)}},
            "superpixel": {"target_size": self.target_size},
            "clusters": [
                {"center": [float(v) for v in c], "weights": list(w.w), "sample_count": int(n)}
                for c, w, n in zip(self.centers, self.weights, self.sample_counts)
            ],
            "feature_norm": {"gabor_dim": localfeat.GABOR_DIM, "surf_dim": localfeat.SURF_DIM},
        }

    def __eq__(self, other):
        return isinstance(other, ColorModel) and self.to_dict() == other.to_dict()


def save_model(m: ColorModel, path) -> None:
    Path(path).write_text(json.dumps(m.to_dict(), indent=2) + "\n", encoding="utf-8")


def model_from_dict(d: dict) -> ColorModel:
    try:
        if d["version"] != MODEL_VERSION:
            raise ModelFormatError(f"unsupported model version {d['version']!r} (expected {MODEL_VERSION})")
        fn = d["feature_norm"]
        if fn["gabor_dim"] != localfeat.GABOR_DIM or fn["surf_dim"] != localfeat.SURF_DIM:
            raise ModelFormatError(f"feature dimensions {fn} do not match this build")
        sc = d["glcm"]["scaling"]
        scaling = globalfeat.FeatureScaling(tuple(map(float, sc["lo"])), tuple(map(float, sc["hi"])))
        if len(scaling.lo) != 4 or len(scaling.hi) != 4:
            raise ModelFormatError("scaling must have 4 components")
        centers, weights, counts = [], [], []
        for i, c in enumerate(d["clusters"]):
            if len(c["center"]) != 4:
                raise ModelFormatError(f"cluster {i}: center must have 4 components")
            try:
                weights.append(WeightVector(tuple(c["weights"])))
            except matching.WeightError as exc:
                raise ModelFormatError(f"cluster {i}: {exc}") from exc
            centers.append([float(v) for v in c["center"]])
            counts.append(int(c["sample_count"]))
        return ColorModel(
            np.array(centers, dtype=np.float64).reshape(-1, 4),
            scaling,
            tuple(weights),
            tuple(counts),
            target_size=int(d["superpixel"]["target_size"]),
            levels=int(d["glcm"]["levels"]),
        )
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model: {exc!r}") from exc


def load_model(path) -> ColorModel:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise ModelFormatError(f"{path}: top level must be an object")
    return model_from_dict(d)


def read_manifest(path) -> list[tuple[Path, Path]]:
    """Parse a JSON-lines manifest of {ground_truth, reference} records (paths relative to the file)."""
    base = Path(path).parent
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            gt = rec.get("ground_truth", rec.get("ground_truth_path"))
            ref = rec.get("reference", rec.get("reference_path"))
        except (json.JSONDecodeError, AttributeError) as exc:
            raise ValueError(f"{path}:{n}: bad manifest record ({exc})") from exc
        if gt is None or ref is None:
            raise ValueError(f"{path}:{n}: record needs 'ground_truth' and 'reference'")
        out.append((base / gt, base / ref))
    return out


def load_pairs(entries, skip_bad: bool = True) -> list[TrainingPair]:
    pairs = []
    for gt_path, ref_path in entries:
        try:
            gt = rgb_to_lab(read_image(gt_path))
            ref = rgb_to_lab(read_image(ref_path))
        except (OSError, ValueError) as exc:
            if not skip_bad:
                raise
            log.warning("skipping pair (%s, %s): %s", gt_path, ref_path, exc)
            continue
        pairs.append(TrainingPair.from_images(gt, ref))
    return pairs


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as ex:
        return list(ex.map(fn, items))


def train_model(pairs: list[TrainingPair], cfg: TrainConfig = TrainConfig()) -> ColorModel:
    """Cluster the ground truths by global texture and learn weights per cluster."""
    if not pairs:
        raise ValueError("empty training set")
    feats = _map(lambda p: globalfeat.global_feature(p.gray, cfg.levels), pairs, cfg.threads)
    cm = clustering.affinity_propagation(feats, preference=cfg.preference)
    data = _map(lambda p: PairData.from_pair(p, cfg.target_size), pairs, cfg.threads)

    def fit(k):
        members = np.flatnonzero(cm.assignments == k)
        if members.size == 0:
            log.warning("cluster %d has no training pairs; using uniform weights", k)
            return WeightVector.uniform(), []
        rng = np.random.default_rng([cfg.seed, k])
        return train_weights([data[i] for i in members], cfg, rng)

    fitted = _map(fit, range(cm.count), cfg.threads)
    return ColorModel(
        cm.centers,
        cm.scaling,
        tuple(w for w, _ in fitted),
        tuple(int(n) for n in cm.sample_counts()),
        target_size=cfg.target_size,
        levels=cfg.levels,
        reports=[r for _, r in fitted],
    )
