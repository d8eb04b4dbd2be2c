"""End-to-end colorization: match -> transfer -> refine -> spread."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import crf, evaluation, matching, spreader
from .imagecore import GrayImage, LabImage
from .matching import ChromaSeeds, WeightVector
from .trainer import ColorModel, Featurized, featurize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ColorizeConfig:
    target_size: int = 100
    delta1: float = crf.DELTA1
    delta2: float = crf.DELTA2
    gamma: float = 1.0
    eta: float = 2.0
    max_size: int = 15
    max_reps: int = 3
    max_sweeps: int = 20
    solver: str = "direct"
    tol: float = 1e-8


@dataclass(frozen=True, eq=False)
class ColorizeResult:
    lab: LabImage
    raw_seeds: ChromaSeeds
    seeds: ChromaSeeds
    target: Featurized
    weights: WeightVector
    cluster: int | None = None
    timings: dict = field(default_factory=dict)


def seeds_for(W, target: Featurized, reference: Featurized, ref_lab: LabImage, D=None) -> ChromaSeeds:
    mapping = matching.match(W, target.feats, reference.feats, D)
    return matching.transfer(mapping, ref_lab, reference.sp, target.sp)


def refine_seeds(seeds: ChromaSeeds, target: Featurized, cfg: ColorizeConfig, nsets=None) -> ChromaSeeds:
    if nsets is None:
        nsets = neighborhoods(target, cfg)
    return crf.refine(seeds, nsets, cfg.gamma, cfg.eta, cfg.max_sweeps)


def neighborhoods(target: Featurized, cfg: ColorizeConfig) -> crf.NeighborhoodSets:
    return crf.build_neighborhoods(
        target.sp, target.feats.intensity, target.feats.std, cfg.delta1, cfg.delta2, cfg.max_size, cfg.max_reps
    )


def spread_seeds(gray: GrayImage, seeds: ChromaSeeds, cfg: ColorizeConfig) -> LabImage:
    return spreader.spread(spreader.SpreadProblem.build(gray, seeds), cfg.solver, cfg.tol)


def colorize(
    gray: GrayImage,
    ref_lab: LabImage,
    weights: WeightVector | ColorModel,
    cfg: ColorizeConfig = ColorizeConfig(),
    target: Featurized | None = None,
    reference: Featurized | None = None,
) -> ColorizeResult:
    """Colorize ``gray`` from ``ref_lab`` with fixed weights or a model's cluster weights."""
    t = {}
    t0 = time.perf_counter()
    cluster = None
    if isinstance(weights, ColorModel):
        cluster, W = weights.weights_for(gray)
        target_size = weights.target_size
    else:
        W, target_size = weights, cfg.target_size
    t["assign"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    if target is None:
        target = featurize(gray, target_size)
    if reference is None:
        reference = featurize(ref_lab.gray(), target_size)
    t["features"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    raw = seeds_for(W, target, reference, ref_lab)
    t["match"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    seeds = refine_seeds(raw, target, cfg)
    t["refine"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    lab = spread_seeds(gray, seeds, cfg)
    t["spread"] = time.perf_counter() - t0
    log.debug("colorize timings %s", t)
    return ColorizeResult(lab, raw, seeds, target, W, cluster, t)


class PreparedPair:
    """A (ground truth, reference) test pair featurized once and colorized under many weights.

    Exposes ``D``, ``ref_ab`` and ``gt_ab`` like trainer.PairData, plus the
    ``weights`` / ``cluster`` / ``error_rate`` interface of the ablation.
    Colorizations are cached by their superpixel mapping, since the mapping
    fixes everything downstream.
    """

    def __init__(
        self,
        gt: LabImage,
        ref_lab: LabImage,
        weights: WeightVector | ColorModel,
        cfg: ColorizeConfig = ColorizeConfig(),
        name: str = "",
    ):
        self.name = name
        self.gt = gt
        self.ref_lab = ref_lab
        self.gray = gt.gray()
        self.cfg = cfg
        if isinstance(weights, ColorModel):
            self.cluster, self.weights = weights.weights_for(self.gray)
            target_size = weights.target_size
        else:
            self.cluster, self.weights, target_size = None, weights, cfg.target_size
        self.target = featurize(self.gray, target_size)
        self.reference = featurize(ref_lab.gray(), target_size)
        self.D = matching.feature_distances(self.target.feats, self.reference.feats)
        self.ref_ab = matching.reference_chroma(ref_lab, self.reference.sp)
        self.gt_ab = matching.reference_chroma(gt, self.target.sp)
        self.nsets = neighborhoods(self.target, cfg)
        self._cache: dict = {}

    def run(self, W) -> tuple[ChromaSeeds, ChromaSeeds, LabImage, np.ndarray]:
        """(raw seeds, refined seeds, colorized image, per-pixel CIEDE2000 map) under W."""
        mapping = matching.match(W, self.target.feats, self.reference.feats, self.D)
        key = mapping.tobytes()
        if key not in self._cache:
            raw = matching.transfer(mapping, self.ref_lab, self.reference.sp, self.target.sp)
            seeds = refine_seeds(raw, self.target, self.cfg, self.nsets)
            lab = spread_seeds(self.gray, seeds, self.cfg)
            self._cache[key] = (raw, seeds, lab, evaluation.pixel_error_map(lab, self.gt))
        return self._cache[key]

    def error_rate(self, W, T: float = evaluation.JND) -> float:
        return float(np.mean(self.run(W)[3] > T))
