"""Command-line entry point: train, colorize, evaluate, ablate.

Exit codes: 0 success, 1 runtime failure, 2 input or usage error. Failures
are reported on stderr as ``refcolor: <stage>: <message>``.

CSV outputs (comma separated, one header row):

  evaluate/per_image.csv  index, ground_truth, reference, status, cluster,
                          M, A_j, error_rate   (seed metrics before refinement;
                          error_rate is the fraction of pixels with
                          CIEDE2000 > jnd; failed pairs leave the numbers empty)
  evaluate/curve.csv      threshold, mean_error_rate
  evaluate/baseline.csv   label, w_intensity, w_std, w_surf, w_gabor, avgE, A
                          (20 random simplex weights, then the learned row,
                          whose weights are empty when clusters differ)
  ablate                  cluster, feature, w_star, ratio, wins, n
                          (cluster "all" covers every test image)
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__, config, evaluation, globalfeat, pipeline, trainer
from .imagecore import RgbImage, lab_to_rgb, read_image, rgb_to_lab, to_gray, with_chroma, write_png
from .matching import FEATURE_NAMES, splat
from .superpixel import label_image

log = logging.getLogger("refcolor")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2
CURVE_THRESHOLDS = np.round(np.arange(0.0, 30.0 + 1e-9, 0.5), 1)


class StageError(Exception):
    def __init__(self, stage: str, msg: str, code: int = EXIT_RUNTIME):
        super().__init__(msg)
        self.stage = stage
        self.code = code


@contextmanager
def stage(name: str, code: int = EXIT_RUNTIME):
    """Re-raise any failure inside the block as a StageError for ``name``."""
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, f"{type(exc).__name__}: {exc}", code) from exc


def _fmt(x) -> str:
    return "" if x is None or x != x else f"{x:.6f}"


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _map(fn, items, threads: int):
    """Apply fn in a worker pool; results come back in input order."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as ex:
        return list(ex.map(fn, items))


def _manifest(path) -> list:
    with stage("manifest", EXIT_INPUT):
        entries = trainer.read_manifest(path)
    if not entries:
        raise StageError("manifest", f"{path}: manifest has no records", EXIT_INPUT)
    return entries


def _model(path) -> trainer.ColorModel:
    with stage("model-load", EXIT_INPUT):
        return trainer.load_model(path)


def training_report(model: trainer.ColorModel) -> str:
    """Per-cluster sample counts and learned weights, one row per cluster."""
    head = ["cluster", "samples"] + [f"w_{n}" for n in FEATURE_NAMES] + ["sum"]
    lines = ["  ".join(f"{h:>11}" for h in head)]
    for k, (W, n) in enumerate(zip(model.weights, model.sample_counts)):
        cells = [f"{k:>11d}", f"{n:>11d}"] + [f"{w:>11.4f}" for w in W.w] + [f"{sum(W.w):>11.4f}"]
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"


def cmd_train(args, cfg: config.Config) -> int:
    entries = _manifest(args.manifest)
    pairs = trainer.load_pairs(entries, skip_bad=True)
    if not pairs:
        raise StageError("load", "no readable training pair in the manifest", EXIT_INPUT)
    with stage("train"):
        model = trainer.train_model(pairs, cfg.train_config())
    with stage("write"):
        trainer.save_model(model, args.out)
    sys.stdout.write(training_report(model))
    return EXIT_OK


def _dump_path(out: Path, suffix: str) -> Path:
    return out.with_name(f"{out.stem}_{suffix}.png")


def cmd_colorize(args, cfg: config.Config) -> int:
    out = Path(args.out)
    with stage("read-input", EXIT_INPUT):
        gray = to_gray(read_image(args.gray))
        ref = rgb_to_lab(read_image(args.ref))
    model = _model(args.model)
    ccfg = cfg.colorize_config()
    with stage("global-feature"):
        f = globalfeat.global_feature(gray, model.levels)
    with stage("assign"):
        k = model.assign(f)
        W = model.weights[k]
    with stage("features"):
        target = trainer.featurize(gray, model.target_size)
        reference = trainer.featurize(ref.gray(), model.target_size)
    with stage("match"):
        raw = pipeline.seeds_for(W, target, reference, ref)
    with stage("refine"):
        seeds = pipeline.refine_seeds(raw, target, ccfg)
    with stage("spread"):
        lab = pipeline.spread_seeds(gray, seeds, ccfg)
    with stage("encode"):
        write_png(lab_to_rgb(lab), out)
        if args.dump_seeds or cfg.dump_seeds:
            for name, s in (("seeds", raw), ("refined", seeds)):
                ab = splat(s, target.sp)
                write_png(lab_to_rgb(with_chroma(gray, ab[..., 0], ab[..., 1])), _dump_path(out, name))
        if args.dump_superpixels or cfg.dump_superpixels:
            write_png(RgbImage(label_image(target.sp, cfg.seed)), _dump_path(out, "superpixels"))
    log.info("cluster %d, weights %s", k, W.w)
    return EXIT_OK


def _prepare(entries, model, cfg: config.Config):
    """PreparedPair per manifest entry, or the error message of the entry that failed."""
    ccfg = cfg.colorize_config()

    def one(entry):
        gt_path, ref_path = entry
        try:
            gt = rgb_to_lab(read_image(gt_path))
            ref = rgb_to_lab(read_image(ref_path))
            return pipeline.PreparedPair(gt, ref, model, ccfg, name=str(gt_path))
        except Exception as exc:
            return f"{type(exc).__name__}: {exc}"

    return _map(one, entries, cfg.threads)


def cmd_evaluate(args, cfg: config.Config) -> int:
    entries = _manifest(args.manifest)
    model = _model(args.model)
    out_dir = Path(args.out_dir)
    with stage("output", EXIT_INPUT):
        out_dir.mkdir(parents=True, exist_ok=True)
    prepared = _prepare(entries, model, cfg)

    def run(item):
        if isinstance(item, str):
            return item
        try:
            raw, _, lab, E = item.run(item.weights)
            M, Aj = evaluation.matching_metrics(raw.ab, item.gt_ab, cfg.theta)
            return item, lab, M, Aj, float(np.mean(E > cfg.jnd))
        except Exception as exc:
            return f"{type(exc).__name__}: {exc}"

    results = _map(run, prepared, cfg.threads)
    rows, ok = [], []
    for n, ((gt_path, ref_path), r) in enumerate(zip(entries, results)):
        if isinstance(r, str):
            log.warning("pair %d failed: %s", n, r)
            rows.append([n, str(gt_path), str(ref_path), f"error: {r}", "", "", "", ""])
        else:
            item, _, M, Aj, err = r
            rows.append([n, str(gt_path), str(ref_path), "ok", item.cluster, _fmt(M), _fmt(Aj), _fmt(err)])
            ok.append(r)
    _write_csv(
        out_dir / "per_image.csv",
        ["index", "ground_truth", "reference", "status", "cluster", "M", "A_j", "error_rate"],
        rows,
    )
    if not ok:
        raise StageError("evaluate", "every pair failed")

    curve = evaluation.mean_error_curve([(lab, item.gt) for item, lab, *_ in ok], CURVE_THRESHOLDS)
    _write_csv(out_dir / "curve.csv", ["threshold", "mean_error_rate"], [[f"{t:.1f}", _fmt(c)] for t, c in zip(CURVE_THRESHOLDS, curve)])

    items = [r[0] for r in ok]
    scatter = evaluation.random_weight_baseline(items, [it.weights for it in items], k=20, seed=cfg.seed, theta=cfg.theta)
    _write_csv(
        out_dir / "baseline.csv",
        ["label"] + [f"w_{n}" for n in FEATURE_NAMES] + ["avgE", "A"],
        [[s.label] + [_fmt(w) for w in s.weights] + [_fmt(s.avgE), _fmt(s.A)] for s in scatter],
    )

    avgE, A = evaluation.set_metrics([(M, Aj) for _, _, M, Aj, _ in ok])
    jnd_rate = float(np.mean([e for *_, e in ok]))
    learned = scatter[-1]
    beaten = sum(s.avgE > learned.avgE and s.A > learned.A for s in scatter[:-1])
    summary = [
        f"pairs: {len(entries)} ({len(ok)} ok, {len(entries) - len(ok)} failed)",
        f"average seed error avgE: {avgE:.6f}",
        f"average bad-seed rate A (theta={cfg.theta:.6f}): {A:.6f}",
        f"mean pixel error rate at T={cfg.jnd:g}: {jnd_rate:.6f}",
        f"random weights strictly dominated by the learned weights: {beaten}/{len(scatter) - 1}",
    ]
    summary += [f"failed pair {n}: {r}" for n, r in enumerate(results) if isinstance(r, str)]
    (out_dir / "summary.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
    sys.stdout.write("\n".join(summary[:5]) + "\n")
    return EXIT_OK


def cmd_ablate(args, cfg: config.Config) -> int:
    entries = _manifest(args.manifest)
    model = _model(args.model)
    prepared = _prepare(entries, model, cfg)
    for n, r in enumerate(prepared):
        if isinstance(r, str):
            log.warning("pair %d failed: %s", n, r)
    items = [r for r in prepared if not isinstance(r, str)]
    if not items:
        raise StageError("ablate", "every pair failed")
    with stage("ablate"):
        rows = evaluation.ablation_ratio(items, T=cfg.jnd, by_cluster=args.by_cluster)
    _write_csv(
        args.out,
        ["cluster", "feature", "w_star", "ratio", "wins", "n"],
        [["all" if r.cluster is None else r.cluster, r.feature, f"{r.w_star:.1f}", _fmt(r.ratio), r.wins, r.n] for r in rows],
    )
    return EXIT_OK


def _knobs() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("configuration (flags override the config file)")
    g.add_argument("--config", help="TOML file with top-level keys or a [refcolor] table")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int)
    g.add_argument("--target-size", type=int, help="superpixel size in pixels (default 100)")
    g.add_argument("--levels", type=int, help="GLCM gray levels (default 8)")
    g.add_argument("--delta1", type=float, help="neighbourhood intensity tolerance (default 0.04)")
    g.add_argument("--delta2", type=float, help="neighbourhood std tolerance (default 0.015)")
    g.add_argument("--gamma", type=float, help="seed fidelity weight (default 1)")
    g.add_argument("--eta", type=float, help="neighbourhood consistency weight (default 2)")
    g.add_argument("--tau", type=float, help="training softmin temperature (default 0.05)")
    g.add_argument("--theta", type=float, help="bad-seed chroma threshold (default 3*pi)")
    g.add_argument("--jnd", type=float, help="pixel error threshold (default 2.3)")
    g.add_argument("--preference", type=float, help="clustering preference (default: median similarity)")
    g.add_argument("--solver", choices=("direct", "cg"))
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    knobs = _knobs()
    p = argparse.ArgumentParser(
        prog="refcolor",
        description="Reference-based colorization with learned feature weights.",
        epilog=__doc__.split("\n", 2)[2],
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[knobs], help="cluster a training manifest and learn weights")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True, help="model JSON path")
    t.set_defaults(fn=cmd_train)

    c = sub.add_parser("colorize", parents=[knobs], help="colorize one grayscale image from a reference")
    c.add_argument("--gray", required=True)
    c.add_argument("--ref", required=True)
    c.add_argument("--model", required=True)
    c.add_argument("--out", required=True, help="output PNG")
    c.add_argument("--dump-seeds", action="store_true", help="also write <out>_seeds.png and <out>_refined.png")
    c.add_argument("--dump-superpixels", action="store_true", help="also write <out>_superpixels.png")
    c.set_defaults(fn=cmd_colorize)

    e = sub.add_parser("evaluate", parents=[knobs], help="error curves and random-weight baseline on a test manifest")
    e.add_argument("--manifest", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--out-dir", required=True)
    e.set_defaults(fn=cmd_evaluate)

    a = sub.add_parser("ablate", parents=[knobs], help="win ratio of the learned weights under perturbed weights")
    a.add_argument("--manifest", required=True)
    a.add_argument("--model", required=True)
    a.add_argument("--out", required=True, help="CSV path")
    a.add_argument("--by-cluster", action="store_true", help="add per-cluster rows")
    a.set_defaults(fn=cmd_ablate)
    return p


_OVERRIDES = ("seed", "threads", "target_size", "levels", "delta1", "delta2", "gamma", "eta", "tau", "theta", "jnd", "preference", "solver")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="refcolor: %(levelname)s: %(message)s"
    )
    try:
        with stage("config", EXIT_INPUT):
            cfg = config.load(args.config, {k: getattr(args, k) for k in _OVERRIDES})
        return args.fn(args, cfg)
    except StageError as exc:
        print(f"refcolor: {exc.stage}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
