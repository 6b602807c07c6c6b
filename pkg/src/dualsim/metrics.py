"""Image, depth and trajectory error metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

DELTA_THRESHOLDS = (1.05, 1.10, 1.25, 1.25 ** 2, 1.25 ** 3)


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def psnr(a, b) -> float:
    """PSNR in dB for images with channels in [0, 1]; ``inf`` for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _luma(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114
    return img


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x, g):
    # separable correlation, keeping only fully-covered positions
    r = len(g) // 2
    y = correlate1d(correlate1d(x, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return y[r:x.shape[0] - r, r:x.shape[1] - r]


def ssim(a, b, *, win: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Mean SSIM over luma with a Gaussian window (no padding)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    x, y = _luma(a), _luma(b)
    if min(x.shape) < win:
        raise ValueError(f"image too small for SSIM: min side {min(x.shape)} < {win}")
    g = gaussian_window(win, sigma)
    C1 = (k1 * data_range) ** 2
    C2 = (k2 * data_range) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + C1) * (2 * sxy + C2)
    den = (mx * mx + my * my + C1) * (sxx + syy + C2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class DepthErrorReport:
    abs_rel: float
    delta: tuple  # fractions for DELTA_THRESHOLDS
    valid_pixel_count: int

    def row(self) -> list:
        return [self.abs_rel, *self.delta, self.valid_pixel_count]


def depth_error(pred, gt) -> DepthErrorReport:
    """AbsRel (as a ratio) and threshold accuracies over pixels valid (> 0) in both maps."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_same_shape(pred, gt)
    mask = (pred > 0) & (gt > 0) & np.isfinite(pred) & np.isfinite(gt)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("no jointly valid depth pixels")
    p, g = pred[mask], gt[mask]
    abs_rel = float(np.mean(np.abs(g - p) / g))
    ratio = np.maximum(g / p, p / g)
    deltas = tuple(float(np.mean(ratio < t)) for t in DELTA_THRESHOLDS)
    return DepthErrorReport(abs_rel, deltas, n)


def associate(t_est, t_ref, max_dt: float = 0.02):
    """Greedy nearest-timestamp matching; returns index pairs (i_est, i_ref)."""
    t_ref = np.asarray(t_ref, dtype=np.float64)
    order = np.argsort(t_ref)
    ts = t_ref[order]
    pairs = []
    used = set()
    for i, t in enumerate(t_est):
        j = np.searchsorted(ts, t)
        best = None
        for k in (j - 1, j):
            if 0 <= k < len(ts) and abs(ts[k] - t) <= max_dt:
                if best is None or abs(ts[k] - t) < abs(ts[best] - t):
                    best = k
        if best is not None and order[best] not in used:
            used.add(order[best])
            pairs.append((i, int(order[best])))
    return pairs


def align_rigid(src, dst):
    """Least-squares rotation R and translation t minimising |R src + t - dst| (Kabsch)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    H = (src - ms).T @ (dst - md)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return R, md - R @ ms


def ate_rmse(estimated, reference, *, align: bool = True, max_dt: float = 0.02) -> float:
    """Translational RMSE between trajectories (lists of (timestamp, Pose) or Trajectory)."""
    est = list(getattr(estimated, "samples", estimated))
    ref = list(getattr(reference, "samples", reference))
    pairs = associate([s[0] for s in est], [s[0] for s in ref], max_dt)
    if len(pairs) < 3:
        raise ValueError(f"need >= 3 associated pose pairs, found {len(pairs)}")
    P = np.array([est[i][1].t for i, _ in pairs])
    Q = np.array([ref[j][1].t for _, j in pairs])
    if align:
        R, t = align_rigid(P, Q)
        P = P @ R.T + t
    return float(np.sqrt(np.mean(np.sum((P - Q) ** 2, axis=1))))
