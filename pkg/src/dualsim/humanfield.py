"""Articulated capsule humans, evaluable as radiance fields.

A ``CapsuleHuman`` lives in its own root frame: origin on the floor between
the feet, +x forward, +z up. Bones are capsules posed by the gait keyframes
(or their bind pose when no gait is attached). ``PosedHuman`` places one in
the world and is what the renderer queries.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .config import ConfigError, as_float, as_vec, load_json, require, resolve
from .crowd import GaitCycle, _pose_from_cfg, gait_from_config
from .field import RadianceSample
from .geometry import Pose

BBOX_PHASE_SAMPLES = 64  # per keyframe interval when sweeping the gait
BBOX_MARGIN = 0.02


@dataclass(frozen=True)
class Capsule:
    name: str
    a: tuple       # segment endpoints in the bone frame
    b: tuple
    radius: float
    color: tuple
    density: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"bone {self.name}: radius must be > 0")
        if self.density <= 0:
            raise ValueError(f"bone {self.name}: density must be > 0")


def _capsule_aabb(A, B, r):
    return np.minimum(A, B) - r, np.maximum(A, B) + r


class CapsuleHuman:
    def __init__(self, capsules, bind=None, gait: GaitCycle | None = None, bbox=None):
        self.capsules = tuple(capsules)
        names = [c.name for c in self.capsules]
        if len(set(names)) != len(names):
            raise ValueError("bone names must be unique")
        self.bind = dict(bind or {})
        for n in names:
            self.bind.setdefault(n, Pose())
        self.gait = gait
        lo, hi = self._swept_extent()
        if bbox is None:
            self.bbox_min, self.bbox_max = lo - BBOX_MARGIN, hi + BBOX_MARGIN
        else:
            bmin, bmax = (np.asarray(v, dtype=np.float64) for v in bbox)
            if np.any(lo < bmin) or np.any(hi > bmax):
                raise ValueError("declared bbox does not contain every posed capsule of the gait")
            self.bbox_min, self.bbox_max = bmin, bmax

    @property
    def bone_names(self):
        return [c.name for c in self.capsules]

    def bone_poses(self, phase: float) -> dict:
        poses = dict(self.bind)
        if self.gait is not None:
            g = self.gait.pose_at(phase)
            for n in self.bone_names:
                if n in g:
                    poses[n] = g[n]
        return poses

    def posed_segments(self, phase: float):
        """Capsule endpoints in the root frame: (A (C, 3), B (C, 3))."""
        poses = self.bone_poses(phase)
        A = np.array([poses[c.name].apply(np.asarray(c.a)) for c in self.capsules])
        B = np.array([poses[c.name].apply(np.asarray(c.b)) for c in self.capsules])
        return A, B

    def _phases(self):
        if self.gait is None:
            return [0.0]
        k = len(self.gait.keyframes) - 1
        return list(np.linspace(0.0, 1.0, k * BBOX_PHASE_SAMPLES + 1))

    def _swept_extent(self):
        # slerp arcs can bulge past the keyframe poses, so sweep the whole cycle
        radii = np.array([c.radius for c in self.capsules])[:, None]
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        for ph in self._phases():
            A, B = self.posed_segments(ph)
            cl, ch = _capsule_aabb(A, B, radii)
            lo = np.minimum(lo, cl.min(axis=0))
            hi = np.maximum(hi, ch.max(axis=0))
        return lo, hi

    def bbox_corners(self) -> np.ndarray:
        lo, hi = self.bbox_min, self.bbox_max
        return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])


@dataclass(frozen=True)
class PosedHuman:
    human: CapsuleHuman
    world_from_human: Pose
    gait_phase: float = 0.0

    def __post_init__(self):
        if self.world_from_human.translation[2] != 0.0:
            raise ValueError("humans stand on the ground plane (z = 0)")

    @classmethod
    def from_agent(cls, human: CapsuleHuman, position, heading: float, gait_phase: float) -> "PosedHuman":
        return cls(human, Pose.from_yaw(heading, (position[0], position[1], 0.0)), gait_phase)

    @cached_property
    def human_from_world(self) -> Pose:
        return self.world_from_human.inverse()

    @cached_property
    def segments(self):
        return self.human.posed_segments(self.gait_phase)

    @cached_property
    def _capsule_arrays(self):
        caps = self.human.capsules
        return (np.array([c.radius for c in caps]), np.array([c.density for c in caps]),
                np.array([c.color for c in caps], dtype=np.float64))

    def query(self, points, dirs=None):
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = len(p)
        rgb = np.zeros((n, 3))
        sigma = np.zeros(n)
        local = self.human_from_world.apply(p)
        inside = np.all((local >= self.human.bbox_min) & (local <= self.human.bbox_max), axis=-1)
        sel = np.nonzero(inside)[0]
        if len(sel) == 0:
            return rgb, sigma
        x = local[sel]
        A, B = self.segments
        radii, dens, cols = self._capsule_arrays
        ab = B - A
        L2 = np.sum(ab * ab, axis=-1)
        ap = x[:, None, :] - A[None, :, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            s = np.sum(ap * ab[None], axis=-1) / L2[None]
        s = np.clip(np.nan_to_num(s, nan=0.0), 0.0, 1.0)
        dist = np.linalg.norm(ap - s[..., None] * ab[None], axis=-1)
        hit = dist < radii[None]
        sig = np.where(hit, dens[None], -1.0)
        best = sig.max(axis=1)
        cand = hit & (sig == best[:, None])
        k = np.argmin(np.where(cand, dist, np.inf), axis=1)
        any_hit = hit.any(axis=1)
        sigma[sel] = np.where(any_hit, dens[k], 0.0)
        rgb[sel] = np.where(any_hit[:, None], cols[k], 0.0)
        return rgb, sigma

    def bbox_world(self) -> np.ndarray:
        return human_bbox_world(self)


def eval_human(posed: PosedHuman, x_world, direction=None) -> RadianceSample:
    rgb, sigma = posed.query(np.asarray(x_world, dtype=np.float64)[None])
    return RadianceSample(tuple(rgb[0]), float(sigma[0]))


def human_bbox_world(posed: PosedHuman) -> np.ndarray:
    """The local bbox's 8 corners mapped into the world frame, (8, 3)."""
    return posed.world_from_human.apply(posed.human.bbox_corners())


# ---------------------------------------------------------------- loading


def human_from_config(cfg: dict, base_dir=".") -> CapsuleHuman:
    bones_cfg = require(cfg, "bones", "human")
    if not isinstance(bones_cfg, list) or not bones_cfg:
        raise ConfigError("human.bones: expected a non-empty list")
    caps, bind = [], {}
    for i, b in enumerate(bones_cfg):
        where = f"human.bones[{i}]"
        name = require(b, "name", where)
        caps.append(Capsule(
            name,
            as_vec(require(b, "a", where), f"{where}.a"),
            as_vec(require(b, "b", where), f"{where}.b"),
            as_float(require(b, "radius", where), f"{where}.radius", positive=True),
            as_vec(require(b, "color", where), f"{where}.color", lo=0.0, hi=1.0),
            as_float(require(b, "density", where), f"{where}.density", positive=True),
        ))
        if "bind" in b:
            bind[name] = _pose_from_cfg(b["bind"], f"{where}.bind")
    gait = None
    if cfg.get("gait") is not None:
        gait = gait_from_config(resolve(cfg["gait"], base_dir, _load_data_or_path))
        unknown = set(gait.bones) - {c.name for c in caps}
        if unknown:
            raise ConfigError(f"human.gait: bones {sorted(unknown)} not defined in human.bones")
    bbox = None
    if "bbox" in cfg:
        bbox = (as_vec(require(cfg["bbox"], "min", "human.bbox"), "human.bbox.min"),
                as_vec(require(cfg["bbox"], "max", "human.bbox"), "human.bbox.max"))
    try:
        return CapsuleHuman(caps, bind, gait, bbox)
    except ValueError as e:
        raise ConfigError(f"human: {e}") from e


def _load_data_or_path(path):
    path = Path(path)
    if path.exists():
        return load_json(path)
    # fall back to the packaged data directory for bare names
    return load_json(resources.files("dualsim") / "data" / path.name)


def load_human(path) -> CapsuleHuman:
    path = Path(path)
    return human_from_config(_load_data_or_path(path), path.parent)


def default_human() -> CapsuleHuman:
    """Ten-bone walker with the packaged four-keyframe gait."""
    data = resources.files("dualsim") / "data"
    return human_from_config(load_json(data / "default_human.json"), data)
