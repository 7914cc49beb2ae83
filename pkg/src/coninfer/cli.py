"""Command-line pipeline: infer, eval, synth, ablate.

Tiles are processed in consecutive batches; the mixture is re-initialized
for every batch (no state is carried across batches). Exit codes: 0 on
success, 1 for input/validation errors, 2 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import consensus, gmm, segmap, synth, tensorio
from .exceptions import EngineError, ManifestError
from .prior import PriorConfig, TextPrototypes, encode_prior, validate_prob_rows

logger = logging.getLogger("coninfer")

MODES = ("joint", "decoupled", "prior-only")


def _batches(items, size):
    return [items[i : i + size] for i in range(0, len(items), size)]


def _load_prototypes(manifest: tensorio.TileManifest) -> TextPrototypes | None:
    if manifest.prototypes_path is None:
        return None
    vectors = tensorio.load_array(manifest.prototypes_path)
    return TextPrototypes(vectors, manifest.prototype_owners, manifest.num_classes)


def _batch_priors(manifest, batch, prototypes, prior_cfg) -> np.ndarray:
    rows = []
    for tile in batch:
        if tile.priors_path is not None:
            P = tensorio.load_array(tile.priors_path).astype(np.float64)
            validate_prob_rows(P)
        elif tile.vlm_features_path is not None and prototypes is not None:
            V = tensorio.load_array(tile.vlm_features_path).astype(np.float64)
            P = encode_prior(V, prototypes, prior_cfg)
        else:
            raise ManifestError(
                f"tile {tile.id!r} has no priors_path and no "
                "vlm_features_path + prototypes to derive a prior from"
            )
        rows.append(P)
    return np.concatenate(rows, axis=0)


def _batch_features(batch) -> np.ndarray:
    return np.concatenate(
        [tensorio.load_array(t.features_path).astype(np.float64) for t in batch], axis=0
    )


def _process_batch(manifest, batch, mode, gcfg, scfg, prototypes, prior_cfg, out_dir):
    P = _batch_priors(manifest, batch, prototypes, prior_cfg)
    trace = None
    if mode == "prior-only":
        Z = P
    else:
        X = _batch_features(batch)
        solve = consensus.run if mode == "joint" else consensus.run_decoupled
        result = solve(X, P, gcfg, scfg)
        Z, trace = result.consensus, result.trace
    rows, cols = manifest.patch_grid
    grid = segmap.PatchGrid(rows, cols, manifest.patch_px, n_tiles=len(batch))
    masks = segmap.assemble_masks(Z, grid)
    for tile, mask in zip(batch, masks):
        tensorio.write_mask(out_dir / f"{tile.id}.pgm", mask)
    return trace


def run_inference(manifest, out_dir, mode, gcfg, scfg, prior_cfg, batch_size, threads=1):
    """Batch the tiles, calibrate each batch, write one PGM per tile."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prototypes = _load_prototypes(manifest)
    batches = _batches(list(manifest.tiles), batch_size)

    def work(indexed):
        i, batch = indexed
        try:
            return _process_batch(
                manifest, batch, mode, gcfg, scfg, prototypes, prior_cfg, out_dir
            )
        except EngineError as exc:
            raise type(exc)(
                f"batch {i} (tiles {batch[0].id}..{batch[-1].id}): {exc}"
            ) from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            traces = list(pool.map(work, enumerate(batches)))
    else:
        traces = [work(ib) for ib in enumerate(batches)]
    return traces


def _write_trace_csv(path, traces):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["batch", "iteration", "objective", "max_z_delta"])
        for b, trace in enumerate(traces):
            if trace is None:
                continue
            for i, (j, dz) in enumerate(zip(trace.objective, trace.max_z_delta)):
                writer.writerow([b, i, repr(j), repr(dz)])


def _evaluate_predictions(manifest, pred_dir, ignore_label=None):
    pred_dir = Path(pred_dir)
    cm = np.zeros((manifest.num_classes, manifest.num_classes), dtype=np.int64)
    for tile in manifest.tiles:
        if tile.gt_path is None:
            raise ManifestError(f"tile {tile.id!r} has no gt_path; cannot evaluate")
        gt = tensorio.load_array(tile.gt_path)
        pred = tensorio.read_mask(pred_dir / f"{tile.id}.pgm")
        cm += segmap.accumulate_confusion(pred, gt, manifest.num_classes, ignore_label)
    return cm


def cmd_infer(args) -> int:
    manifest = tensorio.load_manifest(args.manifest)
    gcfg = gmm.GmmConfig(
        cov_mode=args.cov_mode,
        reg_eps=args.reg_eps,
        l2_normalize=args.l2_normalize_features,
    )
    scfg = consensus.SolverConfig(iters=args.iters)
    prior_cfg = PriorConfig(tau=args.tau, synonym_mode=args.synonym_mode)
    traces = run_inference(
        manifest, args.out, args.mode, gcfg, scfg, prior_cfg,
        batch_size=args.batch_size, threads=args.threads,
    )
    if args.trace:
        _write_trace_csv(args.trace, traces)
    logger.info("wrote %d masks to %s", len(manifest.tiles), args.out)
    return 0


def cmd_eval(args) -> int:
    manifest = tensorio.load_manifest(args.manifest)
    cm = _evaluate_predictions(manifest, args.pred_dir, args.ignore_label)
    report = segmap.evaluation_report(cm, manifest.class_names)
    Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    print(f"miou {report['miou']:.6f}")
    return 0


def cmd_synth(args) -> int:
    spec = synth.SynthSpec(
        n_clusters=args.k,
        dim=args.dim,
        n_per_cluster=args.n_per_cluster,
        center_spread=args.center_spread,
        cluster_cov=args.cluster_cov,
        prior_noise=args.prior_noise,
        prior_flip=args.prior_flip,
        seed=args.seed,
    )
    scene = synth.generate(spec)
    manifest_path = synth.export_scene(
        scene, args.out, args.grid_rows, args.grid_cols, args.patch_px,
        scene_id=args.scene_id,
    )
    print(manifest_path)
    return 0


def cmd_ablate(args) -> int:
    manifest = tensorio.load_manifest(args.manifest)
    gcfg = gmm.GmmConfig(
        cov_mode=args.cov_mode,
        reg_eps=args.reg_eps,
        l2_normalize=args.l2_normalize_features,
    )
    scfg = consensus.SolverConfig(iters=args.iters)
    prior_cfg = PriorConfig(tau=args.tau, synonym_mode=args.synonym_mode)
    out = Path(args.out)
    results = {}
    for mode in ("prior-only", "decoupled", "joint"):
        mode_dir = out / mode
        run_inference(
            manifest, mode_dir, mode, gcfg, scfg, prior_cfg,
            batch_size=args.batch_size, threads=args.threads,
        )
        cm = _evaluate_predictions(manifest, mode_dir, args.ignore_label)
        results[mode] = segmap.evaluation_report(cm, manifest.class_names)
    if args.report:
        Path(args.report).write_text(json.dumps(results, indent=2) + "\n")
    for mode in ("prior-only", "decoupled", "joint"):
        print(f"{mode}\t{results[mode]['miou']:.6f}")
    return 0


def _add_solver_flags(p):
    p.add_argument("--batch-size", type=int, default=50, help="tiles per batch")
    p.add_argument("--iters", type=int, default=10, help="alternating iterations")
    p.add_argument("--tau", type=float, default=0.01, help="softmax temperature for derived priors")
    p.add_argument("--synonym-mode", choices=("max", "mean"), default="max")
    p.add_argument("--cov-mode", choices=("full", "diag"), default="full")
    p.add_argument("--reg-eps", type=float, default=None,
                   help="covariance ridge (default: 1e-6 x mean feature variance)")
    p.add_argument("--l2-normalize-features", action="store_true")
    p.add_argument("--threads", type=int, default=1, help="worker threads over batches")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coninfer",
        description="Context-aware calibration of per-patch class probabilities",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="calibrate a scene and write class-index masks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="directory for per-tile PGM masks")
    p.add_argument("--mode", choices=MODES, default="joint")
    p.add_argument("--trace", default=None, help="write per-batch objective trace CSV")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predicted masks against manifest ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--report", required=True, help="output JSON report path")
    p.add_argument("--ignore-label", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a seeded synthetic scene")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=4, help="clusters / classes")
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--n-per-cluster", type=int, default=500)
    p.add_argument("--center-spread", type=float, default=6.0)
    p.add_argument("--cluster-cov", type=float, default=1.0)
    p.add_argument("--prior-noise", type=float, default=0.0)
    p.add_argument("--prior-flip", type=float, default=0.0)
    p.add_argument("--grid-rows", type=int, default=10)
    p.add_argument("--grid-cols", type=int, default=10)
    p.add_argument("--patch-px", type=int, default=4)
    p.add_argument("--scene-id", default="synthetic")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ablate", help="compare prior-only, decoupled and joint modes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="parent directory; one subdir per mode")
    p.add_argument("--report", default=None, help="optional JSON report path")
    p.add_argument("--ignore-label", type=int, default=None)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("CONINFER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
