"""Rigid transforms, pinhole cameras and rays.

Conventions
-----------
Quaternions are stored scalar-first ``(w, x, y, z)``. A ``Pose`` maps points
from its child frame into its parent frame, so ``world_from_cam.apply(p_cam)``
gives world coordinates.

Camera frame: +z forward, +x right, +y down, which lines up with image axes
``u`` (right) and ``v`` (down). Rays go through pixel centres ``(u+0.5, v+0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"degenerate quaternion {q!r}")
    q = q / n
    # canonical hemisphere keeps w >= 0 so equal rotations compare equal
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R) -> np.ndarray:
    """Rotation matrix to unit quaternion (Shepperd's method)."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def quat_slerp(q0, q1, s: float) -> np.ndarray:
    """Spherical-linear interpolation along the shorter arc; exact at s=0 and s=1."""
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    if s == 0.0:
        return q0.copy()
    if s == 1.0:
        return q1.copy()
    d = float(np.dot(q0, q1))
    if d < 0.0:
        q1 = -q1
        d = -d
    if d > 0.9995:
        return quat_normalize(q0 + s * (q1 - q0))
    omega = np.arccos(d)
    so = np.sin(omega)
    return quat_normalize((np.sin((1.0 - s) * omega) / so) * q0 + (np.sin(s * omega) / so) * q1)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return quat_normalize(np.concatenate([[np.cos(h)], np.sin(h) * axis]))


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``p -> R p + t``.

    ``rotation`` is a unit quaternion (w, x, y, z); ``translation`` is in metres.
    """

    rotation: tuple = (1.0, 0.0, 0.0, 0.0)
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        q = quat_normalize(self.rotation)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError(f"non-finite translation {t!r}")
        object.__setattr__(self, "rotation", tuple(float(v) for v in q))
        object.__setattr__(self, "translation", tuple(float(v) for v in t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        return cls(tuple(matrix_to_quat(T[:3, :3])), tuple(T[:3, 3]))

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(tuple(quat_from_axis_angle((0.0, 0.0, 1.0), yaw)), tuple(translation))

    @cached_property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @cached_property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def apply(self, points) -> np.ndarray:
        """Transform points of shape (3,) or (..., 3)."""
        return self.rotate(points) + self.t

    def rotate(self, vectors) -> np.ndarray:
        # elementwise rather than matmul: results must not depend on batch size
        v = np.asarray(vectors, dtype=np.float64)
        R = self.R
        x, y, z = v[..., 0], v[..., 1], v[..., 2]
        return np.stack([R[0, 0] * x + R[0, 1] * y + R[0, 2] * z,
                         R[1, 0] * x + R[1, 1] * y + R[1, 2] * z,
                         R[2, 0] * x + R[2, 1] * y + R[2, 2] * z], axis=-1)

    def inverse(self) -> "Pose":
        w, x, y, z = self.rotation
        q_inv = (w, -x, -y, -z)
        R_inv = quat_to_matrix(q_inv)
        return Pose(q_inv, tuple(-(R_inv @ self.t)))

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def yaw(self) -> float:
        R = self.R
        return float(np.arctan2(R[1, 0], R[0, 0]))


def compose(a: Pose, b: Pose) -> Pose:
    """Pose with ``compose(a, b).apply(p) == a.apply(b.apply(p))``."""
    q = quat_multiply(a.rotation, b.rotation)
    t = a.R @ b.t + a.t
    return Pose(tuple(q), tuple(t))


def inverse(p: Pose) -> Pose:
    return p.inverse()


def interpolate_pose(a: Pose, b: Pose, s: float) -> Pose:
    """Linear in translation, spherical-linear in rotation."""
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    t = (1.0 - s) * a.t + s * b.t
    return Pose(tuple(quat_slerp(a.rotation, b.rotation, s)), tuple(t))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError("image size must be integral")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be >= 1, got {self.width}x{self.height}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "CameraIntrinsics":
        f = 0.5 * width / np.tan(np.radians(hfov_deg) / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, width, height)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(frozen=True)
class Ray:
    origin: tuple
    direction: tuple
    t_near: float = 0.0
    t_far: float = 10.0

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(o)) and np.all(np.isfinite(d))):
            raise ValueError("ray origin/direction must be finite")
        n = np.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        if n == 0.0:
            raise ValueError("zero ray direction")
        if abs(n - 1.0) > 1e-12:
            d = d / n
        if not (0.0 <= self.t_near < self.t_far):
            raise ValueError(f"need 0 <= t_near < t_far, got {self.t_near}, {self.t_far}")
        object.__setattr__(self, "origin", tuple(float(v) for v in o))
        object.__setattr__(self, "direction", tuple(float(v) for v in d))

    def at(self, t):
        return np.asarray(self.origin) + np.multiply.outer(t, np.asarray(self.direction))


@dataclass
class RayBatch:
    """Structure-of-arrays bundle of rays; what the renderers consume."""

    origins: np.ndarray      # (R, 3)
    directions: np.ndarray   # (R, 3), unit
    t_near: np.ndarray       # (R,)
    t_far: np.ndarray        # (R,)
    ids: np.ndarray = field(default=None)  # (R,) uint64 keys for per-ray RNG

    def __post_init__(self):
        self.origins = np.atleast_2d(np.asarray(self.origins, dtype=np.float64))
        self.directions = np.atleast_2d(np.asarray(self.directions, dtype=np.float64))
        n = len(self.origins)
        self.t_near = np.broadcast_to(np.asarray(self.t_near, dtype=np.float64), (n,)).copy()
        self.t_far = np.broadcast_to(np.asarray(self.t_far, dtype=np.float64), (n,)).copy()
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.uint64)
        else:
            self.ids = np.broadcast_to(np.asarray(self.ids, dtype=np.uint64), (n,)).copy()

    def __len__(self) -> int:
        return len(self.origins)

    @classmethod
    def from_rays(cls, rays: Sequence[Ray], ids=None) -> "RayBatch":
        return cls(
            np.array([r.origin for r in rays]),
            np.array([r.direction for r in rays]),
            np.array([r.t_near for r in rays]),
            np.array([r.t_far for r in rays]),
            ids,
        )

    def subset(self, sl) -> "RayBatch":
        return RayBatch(self.origins[sl], self.directions[sl], self.t_near[sl], self.t_far[sl], self.ids[sl])


def normalize_rows(v: np.ndarray) -> np.ndarray:
    n = np.sqrt(v[..., 0] * v[..., 0] + v[..., 1] * v[..., 1] + v[..., 2] * v[..., 2])
    return v / n[..., None]


def project(point_cam, K: CameraIntrinsics):
    """Pinhole projection of camera-frame points.

    Returns ``(u, v, z, valid)``; ``valid`` is False where z <= 0 and u, v are
    then NaN rather than mirrored coordinates.
    """
    p = np.asarray(point_cam, dtype=np.float64)
    X, Y, Z = p[..., 0], p[..., 1], p[..., 2]
    valid = Z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(valid, K.fx * X / Z + K.cx, np.nan)
        v = np.where(valid, K.fy * Y / Z + K.cy, np.nan)
    if p.ndim == 1:
        return float(u), float(v), float(Z), bool(valid)
    return u, v, Z, valid


def pixel_ray(u: int, v: int, K: CameraIntrinsics, cam_pose: Pose,
              t_near: float = 0.05, t_far: float = 10.0) -> Ray:
    if not (0 <= u < K.width and 0 <= v < K.height):
        raise IndexError(f"pixel ({u}, {v}) outside {K.width}x{K.height} image")
    d_cam = np.array([[(u + 0.5 - K.cx) / K.fx, (v + 0.5 - K.cy) / K.fy, 1.0]])
    d = normalize_rows(cam_pose.rotate(d_cam))[0]
    return Ray(cam_pose.translation, tuple(d), t_near, t_far)


def camera_rays(K: CameraIntrinsics, cam_pose: Pose, t_near: float = 0.05,
                t_far: float = 10.0) -> RayBatch:
    """All pixel-centre rays in row-major order (v outer, u inner).

    Ray ids are ``v * W + u``.
    """
    vv, uu = np.meshgrid(np.arange(K.height), np.arange(K.width), indexing="ij")
    d_cam = np.stack([(uu + 0.5 - K.cx) / K.fx, (vv + 0.5 - K.cy) / K.fy,
                      np.ones_like(uu, dtype=np.float64)], axis=-1).reshape(-1, 3)
    d = normalize_rows(cam_pose.rotate(d_cam))
    n = len(d)
    origins = np.broadcast_to(cam_pose.t, (n, 3))
    ids = (vv * K.width + uu).reshape(-1).astype(np.uint64)
    return RayBatch(origins, d, t_near, t_far, ids)


def ray_box_intersect(origins, directions, box_min, box_max):
    """Slab test. Returns (t_enter, t_exit); no hit where t_enter > t_exit."""
    o = np.atleast_2d(origins)
    d = np.atleast_2d(directions)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (np.asarray(box_min) - o) * inv
        t1 = (np.asarray(box_max) - o) * inv
    # 0 * inf for rays parallel to a slab and lying on its plane
    lo = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
    hi = np.where(np.isnan(t1), np.inf, np.maximum(t0, t1))
    return lo.max(axis=-1), hi.min(axis=-1)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """world_from_cam pose for a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z = z / np.linalg.norm(z)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        raise ValueError("look_at: view direction parallel to up vector")
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    T = np.eye(4)
    T[:3, :3] = np.stack([x, y, z], axis=1)
    T[:3, 3] = eye
    return Pose.from_matrix(T)


def orbit_poses(n: int, radius: float, height: float, target=(0.0, 0.0, 0.0)) -> list:
    """``n`` cameras evenly spaced on a horizontal circle, all looking at ``target``.

    Heights alternate around ``height`` so views are not coplanar.
    """
    poses = []
    for i in range(n):
        a = 2.0 * np.pi * i / n
        h = height * (1.0 if i % 2 == 0 else 0.5)
        eye = (target[0] + radius * np.cos(a), target[1] + radius * np.sin(a), target[2] + h)
        poses.append(look_at(eye, target))
    return poses
