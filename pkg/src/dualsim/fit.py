"""Fitting a VoxelGridField to posed RGB images by gradient descent.

The gradient is derived by hand through trilinear interpolation, the
activations and alpha compositing; ``tests/test_fit.py`` checks it against
central finite differences.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from . import rng
from .field import VoxelGridField
from .geometry import CameraIntrinsics, Pose, RayBatch, camera_rays, ray_box_intersect
from .render import RaySampling, composite_weights, deltas_from, render_camera, sample_distances

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_rays: int = 1024
    learning_rate: float = 0.05
    sampling: RaySampling = RaySampling(64, "stratified", 0)
    seed: int = 0
    optimizer: str = "rmsprop"  # rmsprop | adam | sgd
    final_lr_fraction: float = 0.1  # exponential decay to lr * this at the last iteration
    decay: float = 0.99
    eps: float = 1e-8
    holdout_every: int = 8
    clip_to_grid: bool = True
    tv_weight: float = 0.0  # smoothness penalty on raw params, training only

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_rays < 1 or self.learning_rate <= 0:
            raise ValueError("batch_rays and learning_rate must be positive")
        if self.optimizer not in ("rmsprop", "adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["sampling"] = self.sampling.to_dict()
        return d


@dataclass
class PosedView:
    pose: Pose
    K: CameraIntrinsics
    image: np.ndarray  # (H, W, 3) float in [0, 1]


@dataclass
class PosedImageSet:
    views: list
    t_near: float = 0.05
    t_far: float = 10.0
    holdout_every: int = 8

    def __post_init__(self):
        for i, v in enumerate(self.views):
            if v.image.shape != (v.K.height, v.K.width, 3):
                raise ValueError(f"view {i}: image shape {v.image.shape} does not match intrinsics")
            if not np.all(np.isfinite(v.pose.t)):
                raise ValueError(f"view {i}: non-finite pose")

    def is_heldout(self, i: int) -> bool:
        return self.holdout_every > 0 and i % self.holdout_every == 0 and len(self.views) > 1

    @property
    def train_indices(self) -> list:
        return [i for i in range(len(self.views)) if not self.is_heldout(i)]

    @property
    def heldout_indices(self) -> list:
        return [i for i in range(len(self.views)) if self.is_heldout(i)]

    def training_rays(self):
        """All training pixels as one RayBatch with unique ids, plus target colours."""
        batches, targets = [], []
        offset = 0
        for i in self.train_indices:
            v = self.views[i]
            rb = camera_rays(v.K, v.pose, self.t_near, self.t_far)
            rb.ids = rb.ids + np.uint64(offset)
            offset += len(rb)
            batches.append(rb)
            targets.append(v.image.reshape(-1, 3))
        rays = RayBatch(np.concatenate([b.origins for b in batches]),
                        np.concatenate([b.directions for b in batches]),
                        np.concatenate([b.t_near for b in batches]),
                        np.concatenate([b.t_far for b in batches]),
                        np.concatenate([b.ids for b in batches]))
        return rays, np.concatenate(targets)


def clip_rays_to_box(rays: RayBatch, box_min, box_max):
    """Restrict each ray's [t_near, t_far] to its overlap with a box; drop rays that miss.

    Returns the clipped batch and the kept row indices.
    """
    t0, t1 = ray_box_intersect(rays.origins, rays.directions, box_min, box_max)
    lo = np.maximum(rays.t_near, t0)
    hi = np.minimum(rays.t_far, t1)
    keep = np.nonzero(hi > lo)[0]
    out = rays.subset(keep)
    out.t_near, out.t_far = lo[keep], hi[keep]
    return out, keep


def _forward(grid: VoxelGridField, rays: RayBatch, sampling: RaySampling):
    t = sample_distances(rays, sampling)
    delta = deltas_from(t, rays.t_far)
    R, N = t.shape
    pts = (rays.origins[:, None, :] + t[..., None] * rays.directions[:, None, :]).reshape(-1, 3)
    idx, w, _ = grid.interp_weights(pts)
    act = grid.activated()
    vals = w[:, 0, None] * act[idx[:, 0]]
    for k in range(1, 8):
        vals = vals + w[:, k, None] * act[idx[:, k]]
    sigma = vals[:, 3].reshape(R, N)
    rgb = vals[:, :3].reshape(R, N, 3)
    _, T, weights = composite_weights(sigma, delta)
    color = np.cumsum(weights[..., None] * rgb, axis=1)
    return dict(idx=idx, w=w, rgb=rgb, sigma=sigma, delta=delta, T=T, weights=weights,
                wc_cum=color, color=color[:, -1, :])


def photometric_loss(grid: VoxelGridField, rays: RayBatch, targets, sampling: RaySampling) -> float:
    """Mean over rays and channels of the squared colour error."""
    if len(rays) == 0:
        raise ValueError("empty ray batch")
    color = _forward(grid, rays, sampling)["color"]
    return float(np.mean((color - np.asarray(targets)) ** 2))


def _backward(grid: VoxelGridField, fw: dict, targets) -> tuple:
    color = fw["color"]
    R = len(color)
    resid = color - targets
    loss = float(np.mean(resid ** 2))
    g = 2.0 * resid / (3.0 * R)                              # dL/dC   (R, 3)
    weights, T, rgb, delta = fw["weights"], fw["T"], fw["rgb"], fw["delta"]
    d_rgb = weights[..., None] * g[:, None, :]               # dL/dc_i (R, N, 3)
    suffix = fw["wc_cum"][:, -1:, :] - fw["wc_cum"]          # sum_{k>i} w_k c_k
    dC_dtau = rgb * T[:, 1:, None] - suffix
    d_sigma = np.sum(dC_dtau * g[:, None, :], axis=-1) * delta

    idx, w = fw["idx"], fw["w"]
    raw = grid.params.reshape(-1, 4)
    V = len(raw)
    s_col = expit(raw[:, :3])
    dact_col = s_col * (1.0 - s_col)
    dact_sig = expit(raw[:, 3])
    flat_idx = idx.reshape(-1)
    d_rgb = d_rgb.reshape(-1, 3)
    d_sigma = d_sigma.reshape(-1)
    grad = np.empty((V, 4))
    for c in range(3):
        grad[:, c] = np.bincount(flat_idx, weights=(w * d_rgb[:, c:c + 1]).reshape(-1), minlength=V)
    grad[:, 3] = np.bincount(flat_idx, weights=(w * d_sigma[:, None]).reshape(-1), minlength=V)
    grad[:, :3] *= dact_col
    grad[:, 3] *= dact_sig
    return loss, grad.reshape(grid.params.shape)


def loss_gradient(grid: VoxelGridField, rays: RayBatch, targets, sampling: RaySampling) -> np.ndarray:
    """Exact gradient of ``photometric_loss`` w.r.t. the raw grid params."""
    if len(rays) == 0:
        raise ValueError("empty ray batch")
    fw = _forward(grid, rays, sampling)
    return _backward(grid, fw, np.asarray(targets))[1]


def loss_and_gradient(grid, rays, targets, sampling):
    fw = _forward(grid, rays, sampling)
    return _backward(grid, fw, np.asarray(targets))


def tv_penalty(params: np.ndarray, weight: float):
    """Squared-difference smoothness over grid edges, mean-normalised per vertex.

    Returns (value, gradient).
    """
    value = 0.0
    grad = np.zeros_like(params)
    scale = weight / (params.shape[0] * params.shape[1] * params.shape[2])
    for axis in range(3):
        d = np.diff(params, axis=axis)
        value += scale * float(np.sum(d * d))
        g = 2.0 * scale * d
        lead = [slice(None)] * 4
        trail = [slice(None)] * 4
        lead[axis] = slice(1, None)
        trail[axis] = slice(None, -1)
        grad[tuple(lead)] += g
        grad[tuple(trail)] -= g
    return value, grad


@dataclass
class TrainResult:
    field: VoxelGridField
    losses: list = dc_field(default_factory=list)


def train(grid: VoxelGridField, images: PosedImageSet, cfg: TrainConfig,
          callback: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    """Fit ``grid`` (a copy is trained; the input is left untouched)."""
    if not images.train_indices:
        raise ValueError("need at least one training image")
    grid = grid.copy()
    if cfg.iterations == 0:
        return TrainResult(grid, [])
    rays, targets = images.training_rays()
    if cfg.clip_to_grid:
        # rays missing the grid see zero density whatever the params
        rays, keep = clip_rays_to_box(rays, grid.bbox_min, grid.bbox_max)
        targets = targets[keep]
    picker = np.random.default_rng(cfg.seed)
    m1 = np.zeros_like(grid.params)
    m2 = np.zeros_like(grid.params)
    losses = []
    beta1 = 0.9
    for it in range(cfg.iterations):
        sel = picker.integers(0, len(rays), size=min(cfg.batch_rays, len(rays)))
        sampling = cfg.sampling.with_seed(rng.derive_seed(cfg.seed, "iter", it))
        loss, g = loss_and_gradient(grid, rays.subset(sel), targets[sel], sampling)
        if not np.isfinite(loss) or not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite loss/gradient at iteration {it} (loss={loss})")
        losses.append(loss)
        if cfg.tv_weight > 0:
            g = g + tv_penalty(grid.params, cfg.tv_weight)[1]
        lr = cfg.learning_rate * cfg.final_lr_fraction ** (it / max(cfg.iterations - 1, 1))
        if cfg.optimizer == "sgd":
            grid.params -= lr * g
        elif cfg.optimizer == "rmsprop":
            m2 = cfg.decay * m2 + (1.0 - cfg.decay) * g * g
            vh = m2 / (1.0 - cfg.decay ** (it + 1))
            grid.params -= lr * g / (np.sqrt(vh) + cfg.eps)
        else:
            m1 = beta1 * m1 + (1.0 - beta1) * g
            m2 = cfg.decay * m2 + (1.0 - cfg.decay) * g * g
            mh = m1 / (1.0 - beta1 ** (it + 1))
            vh = m2 / (1.0 - cfg.decay ** (it + 1))
            grid.params -= lr * mh / (np.sqrt(vh) + cfg.eps)
        if callback is not None:
            callback(it, loss)
        if it % 250 == 0:
            log.debug("iter %d loss %.6f", it, loss)
    return TrainResult(grid, losses)


def heldout_psnr(grid, images: PosedImageSet, sampling: RaySampling, threads: int = 1) -> list:
    from .metrics import psnr

    out = []
    for i in images.heldout_indices:
        v = images.views[i]
        img = render_camera(v.K, v.pose, grid, sampling, t_near=images.t_near,
                            t_far=images.t_far, threads=threads)
        out.append(psnr(img, v.image))
    return out
