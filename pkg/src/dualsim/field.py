"""Radiance fields: closed-form primitive scenes and a trainable voxel grid.

Any field exposes ``query(points, dirs) -> (rgb, sigma)`` over batches of
points, shapes ``(M, 3)`` and ``(M,)``. The view direction is part of the
interface but the fields here are Lambertian and ignore it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .config import ConfigError, as_float, as_vec, load_json, parse_json, require

CHECKPOINT_MAGIC = b"DUALSIM-VOXGRID1"
assert len(CHECKPOINT_MAGIC) == 16


@dataclass(frozen=True)
class RadianceSample:
    color: tuple
    sigma: float

    def __post_init__(self):
        c = np.asarray(self.color, dtype=np.float64)
        if c.shape != (3,) or not np.all(np.isfinite(c)) or np.any(c < 0) or np.any(c > 1):
            raise ValueError(f"color must be 3 finite values in [0, 1], got {self.color!r}")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError(f"density must be finite and >= 0, got {self.sigma!r}")
        object.__setattr__(self, "color", tuple(float(v) for v in c))
        object.__setattr__(self, "sigma", float(self.sigma))


def blend_samples(parts, n: int):
    """Density-additive blend of several (rgb, sigma) sample sets.

    Colour is the density-weighted mean of contributors with sigma > 0. A
    point with a single contributor takes its colour verbatim, so adding a
    part that is empty everywhere never perturbs the result.
    """
    sigma = np.zeros(n)
    num = np.zeros((n, 3))
    last = np.zeros((n, 3))
    count = np.zeros(n, dtype=np.int64)
    for rgb, s in parts:
        pos = s > 0
        sigma = sigma + s
        num = num + s[:, None] * rgb
        count += pos
        last = np.where(pos[:, None], rgb, last)
    with np.errstate(invalid="ignore", divide="ignore"):
        mixed = num / sigma[:, None]
    rgb = np.where((count == 1)[:, None], last, np.where((count > 1)[:, None], mixed, 0.0))
    return rgb, sigma


# ---------------------------------------------------------------- analytic


@dataclass(frozen=True)
class Box:
    min: tuple
    max: tuple
    color: tuple
    density: float

    def contains(self, p):
        return np.all((p >= np.asarray(self.min)) & (p <= np.asarray(self.max)), axis=-1)

    def to_dict(self):
        return {"kind": "box", "min": list(self.min), "max": list(self.max),
                "color": list(self.color), "density": self.density}


@dataclass(frozen=True)
class Sphere:
    """Solid ball, or a shell when ``inner_radius`` > 0."""

    center: tuple
    radius: float
    color: tuple
    density: float
    inner_radius: float = 0.0

    def contains(self, p):
        r2 = np.sum((p - np.asarray(self.center)) ** 2, axis=-1)
        inside = r2 <= self.radius ** 2
        if self.inner_radius > 0:
            inside &= r2 >= self.inner_radius ** 2
        return inside

    def to_dict(self):
        return {"kind": "sphere", "center": list(self.center), "radius": self.radius,
                "inner_radius": self.inner_radius, "color": list(self.color),
                "density": self.density}


@dataclass(frozen=True)
class AnalyticField:
    bbox_min: tuple
    bbox_max: tuple
    primitives: tuple = ()

    def query(self, points, dirs=None):
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = len(p)
        parts = []
        for prim in self.primitives:
            inside = prim.contains(p)
            s = np.where(inside, prim.density, 0.0)
            rgb = np.broadcast_to(np.asarray(prim.color), (n, 3))
            parts.append((rgb, s))
        return blend_samples(parts, n)

    def to_dict(self) -> dict:
        return {"bbox": {"min": list(self.bbox_min), "max": list(self.bbox_max)},
                "primitives": [p.to_dict() for p in self.primitives]}


def _parse_primitive(d, where, bmin, bmax):
    kind = require(d, "kind", where)
    color = as_vec(require(d, "color", where), f"{where}.color", lo=0.0, hi=1.0)
    density = as_float(require(d, "density", where), f"{where}.density", nonneg=True)
    if kind == "box":
        lo = as_vec(require(d, "min", where), f"{where}.min")
        hi = as_vec(require(d, "max", where), f"{where}.max")
        if any(a > b for a, b in zip(lo, hi)):
            raise ConfigError(f"{where}: min must be <= max componentwise")
        prim = Box(lo, hi, color, density)
        extent_lo, extent_hi = lo, hi
    elif kind == "sphere":
        c = as_vec(require(d, "center", where), f"{where}.center")
        r = as_float(require(d, "radius", where), f"{where}.radius", positive=True)
        ri = as_float(d.get("inner_radius", 0.0), f"{where}.inner_radius", nonneg=True)
        if ri >= r:
            raise ConfigError(f"{where}.inner_radius: must be < radius")
        prim = Sphere(c, r, color, density, ri)
        extent_lo = tuple(x - r for x in c)
        extent_hi = tuple(x + r for x in c)
    else:
        raise ConfigError(f"{where}.kind: unknown primitive {kind!r} (expected 'box' or 'sphere')")
    if any(a < b for a, b in zip(extent_lo, bmin)) or any(a > b for a, b in zip(extent_hi, bmax)):
        raise ConfigError(f"{where}: primitive extends outside the scene bbox")
    return prim


def make_synthetic_scene(spec) -> AnalyticField:
    """Build an AnalyticField from a parsed scene config (dict), JSON text or path."""
    if isinstance(spec, Path):
        spec = load_json(spec)
    elif isinstance(spec, str):
        spec = parse_json(spec)
    bbox = require(spec, "bbox", "scene")
    bmin = as_vec(require(bbox, "min", "scene.bbox"), "scene.bbox.min")
    bmax = as_vec(require(bbox, "max", "scene.bbox"), "scene.bbox.max")
    if any(a >= b for a, b in zip(bmin, bmax)):
        raise ConfigError("scene.bbox: min must be < max componentwise")
    prims = spec.get("primitives", [])
    if not isinstance(prims, list):
        raise ConfigError("scene.primitives: expected a list")
    parsed = tuple(_parse_primitive(p, f"scene.primitives[{i}]", bmin, bmax)
                   for i, p in enumerate(prims))
    return AnalyticField(bmin, bmax, parsed)


def serialize_scene(field: AnalyticField) -> dict:
    return field.to_dict()


def normalize_scene_spec(spec) -> dict:
    """Canonical form of a scene spec: floats everywhere, defaults filled in."""
    return make_synthetic_scene(spec).to_dict()


# ---------------------------------------------------------------- voxel grid


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    return np.log(np.expm1(y))


class VoxelGridField:
    """Dense grid of raw (r, g, b, density) parameters on the vertices of a box.

    ``params`` has shape ``(nz, ny, nx, 4)`` so that a C-order flatten walks
    vertices x-fastest. Queries interpolate *activated* vertex values
    (logistic colour, softplus density) trilinearly; outside the box the
    density is zero.
    """

    def __init__(self, bbox_min, bbox_max, resolution, params=None):
        self.bbox_min = np.asarray(bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(bbox_max, dtype=np.float64)
        if np.any(self.bbox_max <= self.bbox_min):
            raise ValueError("bbox min must be < max")
        self.resolution = tuple(int(r) for r in resolution)
        if len(self.resolution) != 3 or min(self.resolution) < 2:
            raise ValueError(f"resolution needs 3 entries >= 2, got {resolution}")
        nx, ny, nz = self.resolution
        if params is None:
            params = np.zeros((nz, ny, nx, 4))
            params[..., 3] = softplus_inv(0.01)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (nz, ny, nx, 4):
            raise ValueError(f"params shape {params.shape} != {(nz, ny, nx, 4)}")
        self.params = params

    def copy(self) -> "VoxelGridField":
        return VoxelGridField(self.bbox_min, self.bbox_max, self.resolution, self.params.copy())

    @property
    def n_vertices(self) -> int:
        nx, ny, nz = self.resolution
        return nx * ny * nz

    def activated(self) -> np.ndarray:
        """(V, 4) activated vertex values, vertex order x-fastest."""
        raw = self.params.reshape(-1, 4)
        return np.concatenate([expit(raw[:, :3]), softplus(raw[:, 3:])], axis=1)

    def vertex_positions(self) -> np.ndarray:
        nx, ny, nz = self.resolution
        axes = [np.linspace(self.bbox_min[i], self.bbox_max[i], n) for i, n in enumerate((nx, ny, nz))]
        z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        return np.stack([x, y, z], axis=-1).reshape(-1, 3)

    def interp_weights(self, points):
        """Corner vertex indices (M, 8), trilinear weights (M, 8) and inside mask (M,)."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        inside = np.all((p >= self.bbox_min) & (p <= self.bbox_max), axis=-1)
        res = np.array(self.resolution)
        g = (p - self.bbox_min) / (self.bbox_max - self.bbox_min) * (res - 1)
        i0 = np.clip(np.floor(g), 0, res - 2).astype(np.int64)
        f = np.clip(g - i0, 0.0, 1.0)
        nx, ny, _ = self.resolution
        idx = np.empty((len(p), 8), dtype=np.int64)
        w = np.empty((len(p), 8))
        k = 0
        for dz in (0, 1):
            wz = f[:, 2] if dz else 1.0 - f[:, 2]
            for dy in (0, 1):
                wy = f[:, 1] if dy else 1.0 - f[:, 1]
                for dx in (0, 1):
                    wx = f[:, 0] if dx else 1.0 - f[:, 0]
                    idx[:, k] = ((i0[:, 2] + dz) * ny + (i0[:, 1] + dy)) * nx + (i0[:, 0] + dx)
                    w[:, k] = wx * wy * wz
                    k += 1
        w[~inside] = 0.0
        idx[~inside] = 0
        return idx, w, inside

    def query(self, points, dirs=None, act=None):
        idx, w, _ = self.interp_weights(points)
        if act is None:
            act = self.activated()
        vals = w[:, 0, None] * act[idx[:, 0]]
        for k in range(1, 8):
            vals = vals + w[:, k, None] * act[idx[:, k]]
        return vals[:, :3], vals[:, 3]


def eval_field(field, x, direction) -> RadianceSample:
    """Single-point query returning a validated RadianceSample."""
    x = np.asarray(x, dtype=np.float64).reshape(3)
    d = np.asarray(direction, dtype=np.float64).reshape(3)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(d))):
        raise ValueError("eval_field: non-finite input")
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("eval_field: direction must be unit length")
    rgb, sigma = field.query(x[None], d[None])
    return RadianceSample(tuple(np.clip(rgb[0], 0.0, 1.0)), float(sigma[0]))


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(field: VoxelGridField, path) -> None:
    header = struct.pack("<6d3I", *field.bbox_min, *field.bbox_max, *field.resolution)
    body = field.params.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(CHECKPOINT_MAGIC + header + body)


def load_checkpoint(path) -> VoxelGridField:
    data = Path(path).read_bytes()
    if data[:16] != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path}: not a voxel grid checkpoint (bad magic)")
    hsize = struct.calcsize("<6d3I")
    if len(data) < 16 + hsize:
        raise ConfigError(f"{path}: truncated header")
    vals = struct.unpack("<6d3I", data[16:16 + hsize])
    bmin, bmax, res = vals[:3], vals[3:6], vals[6:]
    nx, ny, nz = res
    expected = nx * ny * nz * 4 * 4
    body = data[16 + hsize:]
    if len(body) != expected:
        raise ConfigError(f"{path}: expected {expected} bytes of params, found {len(body)}")
    params = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(nz, ny, nx, 4)
    return VoxelGridField(bmin, bmax, res, params)


def load_scene(path):
    """Scene from a JSON spec or a binary voxel checkpoint, sniffed by magic."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(16)
    if head == CHECKPOINT_MAGIC:
        return load_checkpoint(path)
    return make_synthetic_scene(load_json(path))
