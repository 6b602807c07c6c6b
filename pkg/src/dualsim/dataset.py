"""On-disk posed image sets: ``images/*.ppm`` + ``poses.txt`` + ``intrinsics.json`` + ``index.csv``."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from . import io
from .config import ConfigError, as_float, load_json
from .fit import PosedImageSet, PosedView
from .geometry import CameraIntrinsics
from .render import RaySampling, render_camera

GT_SAMPLES = 512


def render_dataset(scene, K: CameraIntrinsics, poses, t_near: float, t_far: float,
                   sampling: RaySampling | None = None, threads: int = 1) -> list:
    """Ground-truth images of ``scene`` from each world_from_cam pose."""
    sampling = sampling or RaySampling(GT_SAMPLES, "uniform", 0)
    return [render_camera(K, p, scene, sampling, t_near=t_near, t_far=t_far, threads=threads)
            for p in poses]


def write_dataset(out_dir, K: CameraIntrinsics, poses, images, t_near: float, t_far: float,
                  holdout_every: int = 8) -> None:
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, img in enumerate(images):
        rel = f"images/view_{i:05d}.ppm"
        io.write_ppm(out_dir / rel, img)
        split = "heldout" if holdout_every > 0 and i % holdout_every == 0 and len(images) > 1 else "train"
        rows.append([i, rel, split])
    io.write_tum(out_dir / "poses.txt", [(float(i), p) for i, p in enumerate(poses)])
    intr = dict(K.to_dict(), t_near=t_near, t_far=t_far, holdout_every=holdout_every)
    (out_dir / "intrinsics.json").write_text(json.dumps(intr, indent=2, sort_keys=True) + "\n")
    io.write_csv(out_dir / "index.csv", ["view", "path", "split"], rows)


def read_dataset(path) -> PosedImageSet:
    path = Path(path)
    if not path.is_dir():
        raise ConfigError(f"{path}: dataset directory not found")
    intr = load_json(path / "intrinsics.json")
    try:
        K = CameraIntrinsics(*(intr[k] for k in ("fx", "fy", "cx", "cy", "width", "height")))
    except KeyError as e:
        raise ConfigError(f"{path / 'intrinsics.json'}: missing field {e.args[0]}") from e
    poses = [p for _, p in io.read_tum(path / "poses.txt")]
    index = path / "index.csv"
    try:
        with open(index, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as e:
        raise ConfigError(f"{index}: cannot read ({e.strerror})") from e
    if len(rows) != len(poses):
        raise ConfigError(f"{path}: {len(rows)} images but {len(poses)} poses")
    views = []
    for row, pose in zip(rows, poses):
        img_path = path / row["path"]
        if not img_path.exists():
            raise ConfigError(f"{img_path}: missing image")
        views.append(PosedView(pose, K, io.read_ppm(img_path)))
    return PosedImageSet(views, as_float(intr.get("t_near", 0.05), "intrinsics.t_near", positive=True),
                         as_float(intr.get("t_far", 10.0), "intrinsics.t_far", positive=True),
                         int(intr.get("holdout_every", 8)))

