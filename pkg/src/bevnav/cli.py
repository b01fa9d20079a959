"""Command-line entry point: ``python3 -m bevnav <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

log = logging.getLogger("bevnav")


class CommandError(RuntimeError):
    """Runtime failure reported to the user with exit code 1."""


def _positive_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _load_cfg(args):
    from .config import load_config

    try:
        return load_config(args.config, args.set)
    except (ValueError, TypeError, OSError) as e:
        raise CommandError(f"bad config: {e}") from None


def _records(manifest, split=None, limit=None):
    from .scenegen import read_manifest

    recs = read_manifest(manifest)
    if split and split != "all":
        recs = [r for r in recs if r["split"] == split]
    if limit:
        recs = recs[:limit]
    return recs


def _find(manifest, sample_id):
    for r in _records(manifest):
        if r["id"] == sample_id:
            return r
    raise CommandError(f"unknown sample id {sample_id!r}")


# subcommands -----------------------------------------------------------------


def cmd_gen(args):
    from .scenegen import generate_dataset

    cfg = _load_cfg(args)
    summary = generate_dataset(cfg.dataset_config(), args.count, Path(args.out) / "manifest.jsonl", args.seed, cfg.spec)
    print(f"wrote {summary['count']} samples to {Path(args.out) / 'manifest.jsonl'}")
    print("splits: " + ", ".join(f"{k}={v}" for k, v in summary["splits"].items()))
    print(f"occluded fraction: {summary['occluded_fraction']:.3f} (target {cfg.occlusion_target})")
    return 0


def cmd_render(args):
    from .scene import Scene
    from .sensor import CameraRig, intrinsics_from_fov, render_views, write_depth, write_ppm

    if args.scene:
        scene = Scene.load(args.scene)
    else:
        rec = _find(args.manifest, args.id)
        scene = Scene.load(Path(args.manifest).parent / rec["scene_file"])
    rig = CameraRig()
    intr = intrinsics_from_fov(args.resolution, args.resolution, 90.0)
    depths, colors = render_views(scene, rig, intr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for v in range(4):
        write_ppm(out / f"view{v}.ppm", colors[v])
        write_depth(out / f"view{v}.depth", depths[v], v, rig.max_range)
    print(f"wrote 4 views to {out}")
    return 0


def cmd_train(args):
    from .net.data import load_items
    from .net.model import BeaconNet
    from .net.train import TrainingDiverged, save_checkpoint, train, write_curve

    cfg = _load_cfg(args)
    mcfg = cfg.model_config()
    sched = cfg.schedule_config()
    if args.stage:
        sched = type(sched)(**{**sched.__dict__, "stages": (args.stage,)})
    recs = _records(args.manifest, "train", args.limit)
    if not recs:
        raise CommandError("manifest has no training samples")
    t0 = time.time()
    items = load_items(recs, Path(args.manifest).parent, mcfg)
    log.info("loaded %d items in %.1fs", len(items), time.time() - t0)
    model = BeaconNet(mcfg, cfg.seed)

    def report(step, stage, loss):
        if step % 50 == 0:
            log.info("step %d stage %d loss %.5f", step, stage, loss)

    try:
        curve = train(model, items, sched, report)
    except TrainingDiverged as e:
        raise CommandError(str(e)) from None
    stage = max(sched.stages)
    save_checkpoint(args.out, model, stage)
    curve_path = Path(args.curve) if args.curve else Path(str(args.out) + ".loss.csv")
    write_curve(curve_path, curve)
    for s in sorted(set(st for _, st, _ in curve)):
        last = [l for _, st, l in curve if st == s][-10:]
        print(f"stage {s} final loss {np.mean(last):.5f} (mean of last {len(last)} steps)")
    print(f"wrote checkpoint {args.out} (stage {stage}) and loss curve {curve_path}")
    return 0


def _predictions(args, recs, root, spec, travs):
    from .evaluation import read_predictions, random_free_prediction

    mode = args.predict
    if mode == "oracle":
        return {r["id"]: tuple(r["target"]) for r in recs}
    if mode == "random":
        rng = np.random.default_rng(args.seed)
        return {r["id"]: random_free_prediction(travs[r["id"]], rng) for r in recs}
    if mode == "file":
        if not args.predictions:
            raise CommandError("--predict file needs --predictions")
        return read_predictions(args.predictions)
    if not args.checkpoint:
        raise CommandError("--predict model needs --checkpoint")
    from .net.data import make_item
    from .net.train import load_checkpoint, predict_points

    model, _ = load_checkpoint(args.checkpoint)
    if model.cfg.spec != spec:
        raise CommandError("checkpoint grid does not match the evaluation grid")
    return predict_points(model, [make_item(r, root, model.cfg) for r in recs])


def cmd_eval(args):
    from .evaluation import PredictionError, evaluate_manifest, load_travs, write_predictions

    cfg = _load_cfg(args)
    spec = cfg.spec
    recs = _records(args.manifest, args.split, args.limit)
    if not recs:
        raise CommandError(f"no samples in split {args.split!r}")
    root = Path(args.manifest).parent
    travs = load_travs(recs, root, spec)
    preds = _predictions(args, recs, root, spec, travs)
    try:
        report = evaluate_manifest(recs, preds, root, spec, travs)
    except PredictionError as e:
        raise CommandError(str(e)) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write(out)
    if args.predict != "file":
        write_predictions(out.with_suffix(".predictions.jsonl"), preds)
    print(report.table(), end="")
    return 0


def cmd_viz(args):
    from .evaluation import argmax_target
    from .geodesy import target_region, traversability_from_scene
    from .net.data import observe
    from .net.train import load_checkpoint
    from .scene import Scene
    from .viz import overlay, save_image

    rec = _find(args.manifest, args.id)
    model, _ = load_checkpoint(args.checkpoint)
    scene = Scene.load(Path(args.manifest).parent / rec["scene_file"])
    spec = model.cfg.spec
    trav = traversability_from_scene(scene, spec)
    score = np.asarray(model.predict(observe(scene, rec["instruction"], model.cfg)).data).reshape(spec.shape)
    cell, _ = argmax_target(score, spec)
    region = target_region(trav, tuple(rec["target"])).mask
    img = overlay(trav, score, region, cell, args.threshold, args.upscale)
    save_image(args.out, img)
    print(f"wrote {img.shape[1]}x{img.shape[0]} overlay to {args.out}")
    return 0


def cmd_check_grad(args):
    from .net.gradcheck import SMALL_CONFIG, check_gradients

    t0 = time.time()
    results = check_gradients(SMALL_CONFIG, per_block=args.per_block, eps=args.eps, seed=args.seed, tol=args.tol)
    ok = True
    for r in results:
        status = "PASS" if r.passed(args.tol) else "FAIL"
        ok &= r.passed(args.tol)
        print(f"{r.block:6s} checked {r.checked:4d}  max rel err {r.max_rel_err:.3e}"
              f"  directional {r.dir_rel_err:.3e}  {status}")
    print(f"done in {time.time() - t0:.1f}s")
    return 0 if ok else 1


def cmd_selftest(args):
    from .selftest import run_selftest

    failures = run_selftest(print)
    return 1 if failures else 0


# parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bevnav", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--threads", type=_positive_int, default=1, help="BLAS threads (1 = deterministic)")
        if config:
            sp.add_argument("--config", help="JSON run config")
            sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")

    sp = sub.add_parser("gen", help="generate scenes, instructions and a manifest")
    sp.add_argument("--count", type=_positive_int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="output directory")
    common(sp)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("render", help="render the four views of one scene")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene", help="scene JSON file")
    src.add_argument("--id", help="sample id (with --manifest)")
    sp.add_argument("--manifest")
    sp.add_argument("--resolution", type=_positive_int, default=64)
    sp.add_argument("--out", required=True, help="output directory")
    common(sp, config=False)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("train", help="two-stage training")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--curve", help="loss CSV path (default <out>.loss.csv)")
    sp.add_argument("--stage", type=int, choices=(1, 2), help="run only this stage")
    sp.add_argument("--limit", type=_positive_int, help="use the first N training samples")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score predictions on a manifest split")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="report JSON path (table goes next to it as .txt)")
    sp.add_argument("--predict", choices=("model", "oracle", "random", "file"), default="model")
    sp.add_argument("--checkpoint")
    sp.add_argument("--predictions", help="JSON-lines predictions for --predict file")
    sp.add_argument("--split", default="val", choices=("train", "val", "all"))
    sp.add_argument("--limit", type=_positive_int)
    sp.add_argument("--seed", type=int, default=0, help="seed for --predict random")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("viz", help="write a top-down heatmap overlay (PPM or PNG)")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--id", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--threshold", type=float, default=0.40)
    sp.add_argument("--upscale", type=_positive_int, default=4)
    common(sp, config=False)
    sp.set_defaults(func=cmd_viz)

    sp = sub.add_parser("check-grad", help="finite-difference gradient check per parameter block")
    sp.add_argument("--per-block", type=_positive_int, default=200)
    sp.add_argument("--eps", type=float, default=1e-5)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--seed", type=int, default=0)
    common(sp, config=False)
    sp.set_defaults(func=cmd_check_grad)

    sp = sub.add_parser("selftest", help="quick end-to-end sanity checks")
    common(sp, config=False)
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    from threadpoolctl import threadpool_limits

    try:
        with threadpool_limits(args.threads):
            return args.func(args)
    except CommandError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, RuntimeError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
