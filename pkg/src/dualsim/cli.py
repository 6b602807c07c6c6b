"""``dualsim`` command line.

Every run writes into one output directory (``--out``, else ``$DUALSIM_OUT``,
else ``./dualsim_out/<command>``). Outputs are staged in a sibling temp
directory and moved into place only on success, so a failed run leaves
nothing behind. Exit codes: 0 ok, 2 usage/config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__, io
from .config import ConfigError, apply_overrides, as_float, as_int, as_vec, load_json, require
from .dataset import read_dataset, render_dataset, write_dataset
from .field import VoxelGridField, load_scene, make_synthetic_scene, save_checkpoint, serialize_scene
from .fit import TrainConfig, heldout_psnr, train
from .geometry import Pose, orbit_poses
from .metrics import DELTA_THRESHOLDS, ate_rmse, depth_error, psnr, ssim
from .render import RaySampling, render_camera, render_depth, render_lidar
from .world import intrinsics_from_config, lidar_spec_from_config, run_simulation, simulation_from_manifest

log = logging.getLogger("dualsim")

ENV_OUT = "DUALSIM_OUT"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- run plumbing


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    if os.environ.get(ENV_OUT):
        return Path(os.environ[ENV_OUT])
    return Path("dualsim_out") / args.command


def _check_overwritable(out: Path):
    # only replace empty dirs or earlier run dirs, never arbitrary data
    if out.exists():
        if not out.is_dir():
            raise UsageError(f"{out}: exists and is not a directory")
        if any(out.iterdir()) and not (out / "manifest.resolved").exists():
            raise UsageError(f"{out}: not empty and not a previous run directory; refusing to overwrite")


def _commit(staging: Path, out: Path):
    if out.exists():
        shutil.rmtree(out)
    os.replace(staging, out)


def _write_resolved(staging: Path, command: str, seed, config: dict, inputs: dict, overrides):
    doc = {"command": command, "version": __version__, "seed": seed, "inputs": inputs,
           "overrides": list(overrides or []), "config": config}
    (staging / "manifest.resolved").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _execute(args, handler) -> int:
    staging = None
    try:
        out = _out_dir(args)
        _check_overwritable(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        staging = Path(tempfile.mkdtemp(prefix=f".{out.name}.partial-", dir=out.parent))
        seed, config, inputs = handler(args, staging)
        _write_resolved(staging, args.command, seed, config, inputs, args.set)
        _commit(staging, out)
        staging = None
        print(f"wrote {out}")
        return EXIT_OK
    except (ConfigError, UsageError, FileNotFoundError) as e:
        print(f"dualsim {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - report any runtime failure as exit 3
        log.debug("runtime failure", exc_info=True)
        print(f"dualsim {args.command}: failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if staging is not None:
            shutil.rmtree(staging, ignore_errors=True)


def _need_file(path, what) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} {p} does not exist")
    return p


# ---------------------------------------------------------------- shared config bits


def _camera_cfg(args) -> dict:
    if args.intrinsics:
        cfg = load_json(_need_file(args.intrinsics, "intrinsics file"))
    else:
        cfg = {"width": args.width, "height": args.height, "hfov_deg": args.hfov}
    cfg = dict(cfg)
    cfg.setdefault("t_near", args.near)
    cfg.setdefault("t_far", args.far)
    return cfg


def _intrinsics(cfg) -> tuple:
    K = intrinsics_from_config(cfg, "camera")
    near = as_float(cfg.get("t_near", 0.05), "camera.t_near", positive=True)
    far = as_float(cfg.get("t_far", 10.0), "camera.t_far", positive=True)
    if far <= near:
        raise ConfigError("camera: t_far must exceed t_near")
    return K, near, far


def _sampling(cfg, seed) -> RaySampling:
    try:
        return RaySampling(as_int(cfg.get("n_samples", 64), "sampling.n_samples", minimum=1),
                           cfg.get("strategy", "stratified"), seed)
    except ValueError as e:
        raise ConfigError(f"sampling: {e}") from e


def _parse_pose(text: str) -> Pose:
    vals = text.replace(",", " ").split()
    if len(vals) != 7:
        raise UsageError(f"--pose expects 'tx ty tz qx qy qz qw', got {text!r}")
    tx, ty, tz, qx, qy, qz, qw = (float(v) for v in vals)
    return Pose((qw, qx, qy, qz), (tx, ty, tz))


def _poses_from_args(args) -> tuple:
    if args.poses:
        samples = io.read_tum(_need_file(args.poses, "pose file"))
        return [p for _, p in samples], {"poses": str(args.poses)}
    if args.pose:
        return [_parse_pose(s) for s in args.pose], {"pose": list(args.pose)}
    raise UsageError("give --poses FILE or at least one --pose")


# ---------------------------------------------------------------- commands


def cmd_make_synthetic(args, out: Path):
    cfg = {
        "scene": load_json(_need_file(args.scene, "scene spec")),
        "camera": _camera_cfg(args),
        "sampling": {"n_samples": args.samples, "strategy": args.strategy},
        "holdout_every": args.holdout_every,
    }
    if not args.poses:
        cfg["orbit"] = {"count": args.orbit, "radius": args.radius, "height": args.orbit_height}
    cfg = apply_overrides(cfg, args.set)
    seed = args.seed if args.seed is not None else 0
    scene = make_synthetic_scene(cfg["scene"])
    K, near, far = _intrinsics(cfg["camera"])
    if args.poses:
        poses = [p for _, p in io.read_tum(_need_file(args.poses, "pose file"))]
    else:
        o = cfg["orbit"]
        poses = orbit_poses(as_int(o["count"], "orbit.count", minimum=1),
                            as_float(o["radius"], "orbit.radius", positive=True),
                            as_float(o["height"], "orbit.height"))
    sampling = _sampling(cfg["sampling"], seed)
    holdout = as_int(cfg["holdout_every"], "holdout_every", minimum=0)
    images = render_dataset(scene, K, poses, near, far, sampling, threads=args.threads)
    write_dataset(out, K, poses, images, near, far, holdout)
    (out / "scene.json").write_text(json.dumps(serialize_scene(scene), indent=2, sort_keys=True) + "\n")
    cfg["scene"] = serialize_scene(scene)
    return seed, cfg, {"scene": str(args.scene), "poses": str(args.poses) if args.poses else None}


def cmd_train(args, out: Path):
    ds_path = Path(args.dataset)
    if not ds_path.is_dir():
        raise UsageError(f"dataset directory {ds_path} does not exist")
    images = read_dataset(ds_path)
    cfg = load_json(_need_file(args.config, "train config")) if args.config else {}
    grid_cfg = dict(cfg.get("grid", {}))
    grid_cfg.setdefault("resolution", [args.resolution] * 3)
    if "bbox" not in grid_cfg and (ds_path / "scene.json").exists():
        grid_cfg["bbox"] = load_json(ds_path / "scene.json")["bbox"]
    tcfg = {"iterations": args.iterations, "batch_rays": args.batch, "learning_rate": args.lr,
            "optimizer": args.optimizer, "n_samples": args.samples, "strategy": "stratified",
            "final_lr_fraction": 0.1, "tv_weight": 0.0, "holdout_every": images.holdout_every}
    tcfg.update(cfg.get("train", {}))
    cfg = apply_overrides({"grid": grid_cfg, "train": tcfg, "eval_samples": cfg.get("eval_samples", 128)},
                          args.set)
    seed = args.seed if args.seed is not None else as_int(cfg["train"].get("seed", 0), "train.seed")
    cfg["train"]["seed"] = seed

    bbox = require(cfg["grid"], "bbox", "grid")
    res = as_vec(require(cfg["grid"], "resolution", "grid"), "grid.resolution")
    if any(r < 2 or r != int(r) for r in res):
        raise ConfigError("grid.resolution: need integers >= 2")
    grid = VoxelGridField(as_vec(require(bbox, "min", "grid.bbox"), "grid.bbox.min"),
                          as_vec(require(bbox, "max", "grid.bbox"), "grid.bbox.max"),
                          tuple(int(r) for r in res))
    t = cfg["train"]
    images.holdout_every = as_int(t["holdout_every"], "train.holdout_every", minimum=0)
    try:
        tc = TrainConfig(
            iterations=as_int(t["iterations"], "train.iterations", minimum=0),
            batch_rays=as_int(t["batch_rays"], "train.batch_rays", minimum=1),
            learning_rate=as_float(t["learning_rate"], "train.learning_rate", positive=True),
            sampling=_sampling(t, seed), seed=seed, optimizer=t["optimizer"],
            final_lr_fraction=as_float(t["final_lr_fraction"], "train.final_lr_fraction", positive=True),
            holdout_every=images.holdout_every,
            tv_weight=as_float(t["tv_weight"], "train.tv_weight", nonneg=True),
        )
    except ValueError as e:
        raise ConfigError(f"train: {e}") from e

    def progress(it, loss):
        if it % 100 == 0:
            log.info("iteration %d loss %.6f", it, loss)

    result = train(grid, images, tc, callback=progress)
    save_checkpoint(result.field, out / "checkpoint.grid")
    io.write_csv(out / "loss.csv", ["iteration", "loss"],
                 [[i, repr(float(v))] for i, v in enumerate(result.losses)])
    eval_sampling = RaySampling(as_int(cfg["eval_samples"], "eval_samples", minimum=1), "uniform", seed)
    scores = heldout_psnr(result.field, images, eval_sampling, threads=args.threads)
    io.write_csv(out / "heldout.csv", ["view", "psnr"],
                 [[i, f"{s:.4f}"] for i, s in zip(images.heldout_indices, scores)])
    if scores:
        print(f"held-out PSNR: mean {np.mean(scores):.2f} dB, min {np.min(scores):.2f} dB "
              f"over {len(scores)} views")
    return seed, cfg, {"dataset": str(ds_path), "config": args.config}


def _render_images(args, out: Path, kind: str):
    scene_path = _need_file(args.scene, "scene")
    scene = load_scene(scene_path)
    poses, pose_inputs = _poses_from_args(args)
    cfg = apply_overrides({"camera": _camera_cfg(args),
                           "sampling": {"n_samples": args.samples, "strategy": args.strategy}}, args.set)
    seed = args.seed if args.seed is not None else 0
    K, near, far = _intrinsics(cfg["camera"])
    for i, pose in enumerate(poses):
        sampling = _sampling(cfg["sampling"], seed)
        if kind == "rgb":
            img = render_camera(K, pose, scene, sampling, t_near=near, t_far=far, threads=args.threads)
            io.write_ppm(out / f"camera_{i:05d}.ppm", img)
        else:
            d = render_depth(K, pose, scene, sampling, t_near=near, t_far=far, threads=args.threads)
            io.write_pfm(out / f"depth_{i:05d}.pfm", d)
    return seed, cfg, dict(pose_inputs, scene=str(scene_path))


def cmd_render_camera(args, out):
    return _render_images(args, out, "rgb")


def cmd_render_depth(args, out):
    return _render_images(args, out, "depth")


def cmd_render_lidar(args, out: Path):
    scene_path = _need_file(args.scene, "scene")
    scene = load_scene(scene_path)
    poses, pose_inputs = _poses_from_args(args)
    lidar = load_json(_need_file(args.lidar, "lidar spec")) if args.lidar else {
        "channels": args.channels, "vfov_min": args.vfov_min, "vfov_max": args.vfov_max,
        "azimuth_count": args.azimuth_count, "max_range": args.max_range, "min_range": 0.0}
    cfg = apply_overrides({"lidar": lidar, "sampling": {"n_samples": args.samples, "strategy": args.strategy}},
                          args.set)
    seed = args.seed if args.seed is not None else 0
    spec = lidar_spec_from_config(cfg["lidar"])
    cfg["lidar"] = spec.to_dict()
    for i, pose in enumerate(poses):
        cloud = render_lidar(spec, pose, scene, _sampling(cfg["sampling"], seed), threads=args.threads)
        io.write_ply(out / f"lidar_{i:05d}.ply", cloud)
    return seed, cfg, dict(pose_inputs, scene=str(scene_path))


def cmd_simulate(args, out: Path):
    path = _need_file(args.manifest, "manifest")
    manifest = apply_overrides(load_json(path), args.set)
    sim = simulation_from_manifest(manifest, path.parent, seed=args.seed)

    def progress(frame, state):
        if frame % 10 == 0:
            log.info("frame %d t=%.2f", frame, state.time)

    run_simulation(sim, out, threads=args.threads, progress=progress)
    return sim.sampling.seed, sim.resolved, {"manifest": str(path)}


def _pairs(pred: Path, gt: Path, ext: str) -> list:
    for d in (pred, gt):
        if not d.is_dir():
            raise UsageError(f"{d}: not a directory")
    a = {p.relative_to(pred).as_posix() for p in pred.rglob(f"*.{ext}")}
    b = {p.relative_to(gt).as_posix() for p in gt.rglob(f"*.{ext}")}
    if a != b:
        lines = [f"  missing in {gt}: {n}" for n in sorted(a - b)]
        lines += [f"  missing in {pred}: {n}" for n in sorted(b - a)]
        raise UsageError("unpaired files:\n" + "\n".join(lines))
    if not a:
        raise UsageError(f"no .{ext} files found")
    return sorted(a)


def _fmt(v: float) -> str:
    return "inf" if v == float("inf") else f"{v:.6f}"


def cmd_eval(args, out: Path):
    pred, gt = Path(args.pred), Path(args.gt)
    if args.kind == "rgb":
        rows = []
        for name in _pairs(pred, gt, "ppm"):
            a, b = io.read_ppm(pred / name), io.read_ppm(gt / name)
            s = ssim(a, b) if min(a.shape[:2]) >= 11 else float("nan")
            rows.append([name, _fmt(psnr(a, b)), f"{s:.6f}"])
        io.write_csv(out / "metrics.csv", ["file", "psnr", "ssim"], rows)
    elif args.kind == "depth":
        rows = []
        for name in _pairs(pred, gt, "pfm"):
            r = depth_error(io.read_pfm(pred / name), io.read_pfm(gt / name))
            rows.append([name, f"{r.abs_rel:.6f}", *(f"{d:.6f}" for d in r.delta), r.valid_pixel_count])
        header = ["file", "abs_rel", *(f"delta_{t:.7g}" for t in DELTA_THRESHOLDS), "valid_pixels"]
        io.write_csv(out / "metrics.csv", header, rows)
    else:
        est = io.read_tum(_need_file(pred, "estimated trajectory"))
        ref = io.read_tum(_need_file(gt, "reference trajectory"))
        try:
            ate = ate_rmse(est, ref, align=not args.no_align)
        except ValueError as e:
            raise UsageError(str(e)) from e
        io.write_csv(out / "metrics.csv", ["ate_rmse", "aligned"], [[f"{ate:.6f}", int(not args.no_align)]])
        rows = [[f"{ate:.6f}"]]
    print(f"{len(rows)} row(s) written to metrics.csv")
    return None, {"kind": args.kind, "align": not args.no_align}, {"pred": str(pred), "gt": str(gt)}


# ---------------------------------------------------------------- parser


def _add_common(p):
    p.add_argument("--out", help=f"run directory (default ${ENV_OUT} or ./dualsim_out/<command>)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1, help="worker cap; never changes results")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-key config override (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_camera(p, samples=64, strategy="stratified"):
    p.add_argument("--intrinsics", help="JSON with fx, fy, cx, cy, width, height (or hfov_deg)")
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--hfov", type=float, default=50.0, help="horizontal field of view, degrees")
    p.add_argument("--near", type=float, default=0.05)
    p.add_argument("--far", type=float, default=10.0)
    p.add_argument("--samples", type=int, default=samples)
    p.add_argument("--strategy", choices=["uniform", "stratified"], default=strategy)


def _add_poses(p):
    p.add_argument("--poses", help="TUM file of sensor poses (world_from_sensor)")
    p.add_argument("--pose", action="append", help="'tx ty tz qx qy qz qw' (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dualsim", description="Scene + human radiance field sensor simulator.")
    ap.add_argument("--version", action="version", version=f"dualsim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="render an analytic scene into a posed image set")
    p.add_argument("--scene", required=True, help="scene spec JSON")
    p.add_argument("--poses", help="TUM file of camera poses; default is an orbit")
    p.add_argument("--orbit", type=int, default=20, help="number of orbit views")
    p.add_argument("--radius", type=float, default=4.0)
    p.add_argument("--orbit-height", type=float, default=2.0)
    p.add_argument("--holdout-every", type=int, default=8)
    _add_camera(p, samples=512, strategy="uniform")
    p.set_defaults(func=cmd_make_synthetic, near=1.0, far=7.0)
    _add_common(p)

    p = sub.add_parser("train", help="fit a voxel grid to a posed image set")
    p.add_argument("dataset")
    p.add_argument("--config", help="JSON with 'grid' and 'train' sections")
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--batch", type=int, default=1024)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--optimizer", choices=["rmsprop", "adam", "sgd"], default="rmsprop")
    p.add_argument("--samples", type=int, default=64)
    p.set_defaults(func=cmd_train)
    _add_common(p)

    for name, fn, what in (("render-camera", cmd_render_camera, "RGB images (PPM)"),
                           ("render-depth", cmd_render_depth, "depth maps (PFM)")):
        p = sub.add_parser(name, help=f"render {what} from a scene spec or checkpoint")
        p.add_argument("scene")
        _add_poses(p)
        _add_camera(p)
        p.set_defaults(func=fn)
        _add_common(p)

    p = sub.add_parser("render-lidar", help="render LiDAR point clouds (PLY)")
    p.add_argument("scene")
    _add_poses(p)
    p.add_argument("--lidar", help="LiDAR spec JSON")
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--vfov-min", type=float, default=-15.0)
    p.add_argument("--vfov-max", type=float, default=15.0)
    p.add_argument("--azimuth-count", type=int, default=1024)
    p.add_argument("--max-range", type=float, default=30.0)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--strategy", choices=["uniform", "stratified"], default="stratified")
    p.set_defaults(func=cmd_render_lidar)
    _add_common(p)

    p = sub.add_parser("simulate", help="run a world simulation manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_simulate)
    _add_common(p)

    p = sub.add_parser("eval", help="compare prediction and ground truth")
    p.add_argument("pred", help="directory (rgb/depth) or TUM file (traj)")
    p.add_argument("gt")
    p.add_argument("--kind", choices=["rgb", "depth", "traj"], required=True)
    p.add_argument("--no-align", action="store_true", help="traj: skip rigid alignment")
    p.set_defaults(func=cmd_eval)
    _add_common(p)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print(f"dualsim {args.command}: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    return _execute(args, args.func)


if __name__ == "__main__":
    sys.exit(main())
