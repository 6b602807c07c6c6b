"""Volume rendering of rays into colour, depth and LiDAR returns.

Per ray, with sample distances t_1 < ... < t_N in (t_near, t_far]::

    delta_i = t_{i+1} - t_i          (delta_N = t_far - t_N)
    alpha_i = 1 - exp(-sigma_i * delta_i)
    T_i     = exp(-sum_{j<i} sigma_j * delta_j)
    C       = sum_i alpha_i T_i c_i

Depth is the opacity-normalised expectation of t_i under the weights
alpha_i T_i; rays with accumulated opacity below ``opacity_floor`` have no
depth (NaN internally, 0 in depth images).

All reductions along a ray go through ``np.cumsum`` so a ray renders to the
same bits whatever batch or thread it lands in.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng
from .geometry import CameraIntrinsics, Pose, Ray, RayBatch, camera_rays, normalize_rows

OPACITY_FLOOR = 0.05
CHUNK_RAYS = 2048


@dataclass(frozen=True)
class RaySampling:
    n_samples: int = 64
    strategy: str = "stratified"
    seed: int = 0

    def __post_init__(self):
        if int(self.n_samples) != self.n_samples or self.n_samples < 1:
            raise ValueError(f"n_samples must be a positive integer, got {self.n_samples}")
        if self.strategy not in ("uniform", "stratified"):
            raise ValueError(f"strategy must be 'uniform' or 'stratified', got {self.strategy!r}")
        object.__setattr__(self, "n_samples", int(self.n_samples))
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)

    def with_seed(self, seed: int) -> "RaySampling":
        return RaySampling(self.n_samples, self.strategy, seed)

    def to_dict(self) -> dict:
        return {"n_samples": self.n_samples, "strategy": self.strategy, "seed": self.seed}


@dataclass(frozen=True)
class RayRadiance:
    color: tuple
    opacity: float
    depth: float | None  # None when opacity is below the floor


def sample_distances(rays: RayBatch, sampling: RaySampling) -> np.ndarray:
    """(R, N) strictly increasing distances in (t_near, t_far].

    Uniform puts sample i at the far end of stratum i; stratified draws one
    offset in (0, 1] per stratum from the counter-based RNG keyed on ray id.
    """
    n = sampling.n_samples
    h = (rays.t_far - rays.t_near) / n
    if sampling.strategy == "uniform":
        offs = np.ones((len(rays), n))
    else:
        offs = 1.0 - rng.uniform(sampling.seed, rays.ids, n)
    k = np.arange(n, dtype=np.float64)
    t = rays.t_near[:, None] + (k[None, :] + offs) * h[:, None]
    # keep the last sample inside the interval against rounding
    return np.minimum(t, rays.t_far[:, None])


def deltas_from(t: np.ndarray, t_far: np.ndarray) -> np.ndarray:
    return np.diff(np.concatenate([t, t_far[:, None]], axis=1), axis=1)


def _seqsum(x: np.ndarray, axis: int) -> np.ndarray:
    return np.take(np.cumsum(x, axis=axis), -1, axis=axis)


def composite_weights(sigma: np.ndarray, delta: np.ndarray):
    """alpha, T (N+1 entries, last is the residual transmittance) and weights."""
    tau = sigma * delta
    alpha = -np.expm1(-tau)
    acc = np.cumsum(tau, axis=-1)
    zero = np.zeros(acc.shape[:-1] + (1,))
    T = np.exp(-np.concatenate([zero, acc], axis=-1))
    weights = alpha * T[..., :-1]
    return alpha, T, weights


def composite_samples(sigma, rgb, t, delta, opacity_floor: float = OPACITY_FLOOR):
    """Composite per-sample (sigma, rgb) along rays.

    Shapes: sigma (R, N), rgb (R, N, 3), t (R, N), delta (R, N). Returns
    color (R, 3), opacity (R,), depth (R,) with NaN for invalid depth.
    """
    sigma = np.atleast_2d(sigma)
    rgb = np.asarray(rgb).reshape(sigma.shape + (3,))
    t = np.atleast_2d(t)
    delta = np.atleast_2d(delta)
    _, _, w = composite_weights(sigma, delta)
    color = np.clip(_seqsum(w[..., None] * rgb, axis=-2), 0.0, 1.0)
    opacity = np.clip(_seqsum(w, axis=-1), 0.0, 1.0)
    wt = _seqsum(w * t, axis=-1)
    valid = opacity >= opacity_floor
    with np.errstate(invalid="ignore", divide="ignore"):
        depth = np.where(valid, wt / np.where(valid, opacity, 1.0), np.nan)
    depth = np.where(valid, np.clip(depth, t[:, 0], t[:, -1]), np.nan)
    return color, opacity, depth


def _render_chunk(rays: RayBatch, field, sampling: RaySampling, opacity_floor: float):
    t = sample_distances(rays, sampling)
    delta = deltas_from(t, rays.t_far)
    R, N = t.shape
    pts = rays.origins[:, None, :] + t[..., None] * rays.directions[:, None, :]
    dirs = np.broadcast_to(rays.directions[:, None, :], (R, N, 3)).reshape(-1, 3)
    rgb, sigma = field.query(pts.reshape(-1, 3), dirs)
    return composite_samples(sigma.reshape(R, N), rgb.reshape(R, N, 3), t, delta, opacity_floor)


def render_rays(rays: RayBatch, field, sampling: RaySampling, *, threads: int = 1,
                opacity_floor: float = OPACITY_FLOOR, chunk: int = CHUNK_RAYS):
    """Render a ray batch. Chunk boundaries are fixed, so ``threads`` never changes results."""
    n = len(rays)
    if sampling.n_samples < 1:
        raise ValueError("zero samples per ray")
    color = np.zeros((n, 3))
    opacity = np.zeros(n)
    depth = np.full(n, np.nan)
    if n == 0:
        return color, opacity, depth
    slices = [slice(i, min(i + chunk, n)) for i in range(0, n, chunk)]

    def work(sl):
        return sl, _render_chunk(rays.subset(sl), field, sampling, opacity_floor)

    if threads > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, slices))
    else:
        results = [work(sl) for sl in slices]
    for sl, (c, o, d) in results:
        color[sl], opacity[sl], depth[sl] = c, o, d
    return color, opacity, depth


def composite_ray(ray: Ray, field, sampling: RaySampling, ray_id: int = 0,
                  opacity_floor: float = OPACITY_FLOOR) -> RayRadiance:
    batch = RayBatch.from_rays([ray], ids=[ray_id])
    c, o, d = render_rays(batch, field, sampling, opacity_floor=opacity_floor)
    depth = None if np.isnan(d[0]) else float(d[0])
    return RayRadiance(tuple(float(v) for v in c[0]), float(o[0]), depth)


# ---------------------------------------------------------------- cameras


def render_camera(K: CameraIntrinsics, cam_pose: Pose, field, sampling: RaySampling, *,
                  t_near: float = 0.05, t_far: float = 10.0, threads: int = 1) -> np.ndarray:
    """(H, W, 3) float image in [0, 1]."""
    rays = camera_rays(K, cam_pose, t_near, t_far)
    color, _, _ = render_rays(rays, field, sampling, threads=threads)
    return color.reshape(K.height, K.width, 3)


def render_depth(K: CameraIntrinsics, cam_pose: Pose, field, sampling: RaySampling, *,
                 t_near: float = 0.05, t_far: float = 10.0, threads: int = 1) -> np.ndarray:
    """(H, W) expected ray distance in metres; 0 marks pixels without a valid depth."""
    rays = camera_rays(K, cam_pose, t_near, t_far)
    _, _, depth = render_rays(rays, field, sampling, threads=threads)
    return np.nan_to_num(depth, nan=0.0).reshape(K.height, K.width)


# ---------------------------------------------------------------- lidar


@dataclass(frozen=True)
class LidarSpec:
    channels: int = 16
    vfov_min: float = -15.0
    vfov_max: float = 15.0
    azimuth_count: int = 1024
    max_range: float = 30.0
    min_range: float = 0.0
    opacity_threshold: float = 0.5

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if not self.vfov_min < self.vfov_max:
            raise ValueError("vfov_min must be < vfov_max")
        if self.azimuth_count < 1:
            raise ValueError("azimuth_count must be >= 1")
        if not 0.0 <= self.min_range < self.max_range:
            raise ValueError("need 0 <= min_range < max_range")
        if not 0.0 <= self.opacity_threshold <= 1.0:
            raise ValueError("opacity_threshold must lie in [0, 1]")

    def elevations_deg(self) -> np.ndarray:
        if self.channels == 1:
            return np.array([0.5 * (self.vfov_min + self.vfov_max)])
        return np.linspace(self.vfov_min, self.vfov_max, self.channels)

    def azimuths(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.azimuth_count) / self.azimuth_count

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def lidar_direction(theta, phi) -> np.ndarray:
    """Unit direction for azimuth ``theta`` and polar angle ``phi`` (from +z)."""
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    sp = np.sin(phi)
    return np.stack([np.cos(theta) * sp, np.sin(theta) * sp, np.cos(phi)], axis=-1)


@dataclass
class PointCloud:
    points: np.ndarray   # (P, 3) world frame
    beam: np.ndarray     # (P,)
    azimuth: np.ndarray  # (P,)
    range: np.ndarray    # (P,)

    def __len__(self) -> int:
        return len(self.points)


def lidar_rays(spec: LidarSpec, sensor_pose: Pose) -> RayBatch:
    """Rays beam-major (beam k, azimuth m -> id k*N + m)."""
    elev = np.radians(spec.elevations_deg())
    phi = np.pi / 2.0 - elev
    theta = spec.azimuths()
    P, TH = np.meshgrid(phi, theta, indexing="ij")
    d_local = lidar_direction(TH, P).reshape(-1, 3)
    d = normalize_rows(sensor_pose.rotate(d_local))
    n = len(d)
    return RayBatch(np.broadcast_to(sensor_pose.t, (n, 3)), d, spec.min_range, spec.max_range,
                    np.arange(n, dtype=np.uint64))


def render_lidar(spec: LidarSpec, sensor_pose: Pose, field, sampling: RaySampling, *,
                 threads: int = 1) -> PointCloud:
    rays = lidar_rays(spec, sensor_pose)
    _, opacity, depth = render_rays(rays, field, sampling, threads=threads)
    hit = (opacity >= spec.opacity_threshold) & np.isfinite(depth) & (depth <= spec.max_range)
    idx = np.nonzero(hit)[0]
    pts = rays.origins[idx] + depth[idx, None] * rays.directions[idx]
    n_az = spec.azimuth_count
    return PointCloud(pts, (idx // n_az).astype(np.int64), (idx % n_az).astype(np.int64), depth[idx])
