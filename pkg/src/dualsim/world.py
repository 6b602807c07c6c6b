"""World orchestration: scene + humans + robot rig on one clock.

Per tick the robot follows its scripted trajectory, the crowd takes one
social-force step, humans are re-posed from their agents, and every sensor
renders the composited world. Humans are culled per sensor with a
conservative bounding-box test before any of their rays are evaluated.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import io, rng
from .config import ConfigError, as_float, as_int, as_vec, load_json, require, resolve
from .crowd import CrowdScenario, scenario_from_config, step_crowd
from .field import RadianceSample, blend_samples, load_scene, make_synthetic_scene
from .geometry import CameraIntrinsics, Pose, interpolate_pose, matrix_to_quat
from .humanfield import CapsuleHuman, PosedHuman, default_human, human_bbox_world, load_human
from .render import (LidarSpec, RaySampling, render_camera, render_depth,
                     render_lidar)

log = logging.getLogger(__name__)

# corner i of a box has bits (x, y, z) = (i >> 2, i >> 1, i) & 1
_BOX_EDGES = [(i, i | bit) for bit in (4, 2, 1) for i in range(8) if not i & bit]


# ---------------------------------------------------------------- rig


@dataclass(frozen=True)
class CameraMount:
    name: str
    K: CameraIntrinsics
    mount: Pose              # body_from_camera
    near: float = 0.05
    far: float = 10.0
    every: int = 1           # capture decimation in ticks


@dataclass(frozen=True)
class LidarMount:
    name: str
    spec: LidarSpec
    mount: Pose              # body_from_lidar
    every: int = 1


@dataclass(frozen=True)
class SensorRig:
    cameras: tuple = ()
    depth_cameras: tuple = ()
    lidars: tuple = ()
    robot_radius: float = 0.5

    def __post_init__(self):
        names = self.sensor_names()
        if len(set(names)) != len(names):
            raise ValueError(f"sensor names must be unique, got {names}")

    def sensor_names(self) -> list:
        return [s.name for s in (*self.cameras, *self.depth_cameras, *self.lidars)]


def camera_mount_rotation(yaw_deg: float = 0.0, pitch_deg: float = 0.0) -> tuple:
    """body_from_camera rotation for a camera looking along body yaw, pitched down by ``pitch_deg``.

    Body frame: +x forward, +y left, +z up.
    """
    base = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    p = np.radians(pitch_deg)
    # pitch about the camera x axis tilts +z (view) toward +y (down)
    Rx = np.array([[1, 0, 0], [0, np.cos(p), -np.sin(p)], [0, np.sin(p), np.cos(p)]])
    y = np.radians(yaw_deg)
    Rz = np.array([[np.cos(y), -np.sin(y), 0], [np.sin(y), np.cos(y), 0], [0, 0, 1]])
    return tuple(matrix_to_quat(Rz @ base @ Rx.T))


def _mount_from_cfg(d, where, camera: bool) -> Pose:
    t = as_vec(d.get("translation", [0, 0, 0]), f"{where}.translation")
    if "rotation" in d:
        q = as_vec(d["rotation"], f"{where}.rotation", n=4)
    elif camera:
        q = camera_mount_rotation(as_float(d.get("yaw_deg", 0.0), f"{where}.yaw_deg"),
                                  as_float(d.get("pitch_deg", 0.0), f"{where}.pitch_deg"))
    else:
        yaw = np.radians(as_float(d.get("yaw_deg", 0.0), f"{where}.yaw_deg"))
        q = (np.cos(yaw / 2), 0.0, 0.0, np.sin(yaw / 2))
    return Pose(tuple(q), t)


def _intrinsics_from_cfg(d, where) -> CameraIntrinsics:
    w = as_int(require(d, "width", where), f"{where}.width", minimum=1)
    h = as_int(require(d, "height", where), f"{where}.height", minimum=1)
    if "hfov_deg" in d:
        return CameraIntrinsics.from_fov(w, h, as_float(d["hfov_deg"], f"{where}.hfov_deg", positive=True))
    return CameraIntrinsics(
        as_float(require(d, "fx", where), f"{where}.fx", positive=True),
        as_float(require(d, "fy", where), f"{where}.fy", positive=True),
        as_float(require(d, "cx", where), f"{where}.cx"),
        as_float(require(d, "cy", where), f"{where}.cy"), w, h)


def intrinsics_from_config(d, where="intrinsics") -> CameraIntrinsics:
    return _intrinsics_from_cfg(d, where)


def lidar_spec_from_config(d, where="lidar") -> LidarSpec:
    try:
        return LidarSpec(
            channels=as_int(d.get("channels", 16), f"{where}.channels", minimum=1),
            vfov_min=as_float(d.get("vfov_min", -15.0), f"{where}.vfov_min"),
            vfov_max=as_float(d.get("vfov_max", 15.0), f"{where}.vfov_max"),
            azimuth_count=as_int(d.get("azimuth_count", 1024), f"{where}.azimuth_count", minimum=1),
            max_range=as_float(d.get("max_range", 30.0), f"{where}.max_range", positive=True),
            min_range=as_float(d.get("min_range", 0.0), f"{where}.min_range", nonneg=True),
            opacity_threshold=as_float(d.get("opacity_threshold", 0.5), f"{where}.opacity_threshold",
                                       lo=0.0, hi=1.0),
        )
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from e


def rig_from_config(cfg: dict) -> SensorRig:
    def cams(key):
        out = []
        for i, c in enumerate(cfg.get(key, [])):
            where = f"rig.{key}[{i}]"
            out.append(CameraMount(
                require(c, "name", where),
                _intrinsics_from_cfg(require(c, "intrinsics", where), f"{where}.intrinsics"),
                _mount_from_cfg(c.get("mount", {}), f"{where}.mount", camera=True),
                as_float(c.get("near", 0.05), f"{where}.near", positive=True),
                as_float(c.get("far", 10.0), f"{where}.far", positive=True),
                as_int(c.get("every", 1), f"{where}.every", minimum=1),
            ))
        return tuple(out)

    lidars = []
    for i, c in enumerate(cfg.get("lidars", [])):
        where = f"rig.lidars[{i}]"
        lidars.append(LidarMount(
            require(c, "name", where),
            lidar_spec_from_config(c.get("spec", {}), f"{where}.spec"),
            _mount_from_cfg(c.get("mount", {}), f"{where}.mount", camera=False),
            as_int(c.get("every", 1), f"{where}.every", minimum=1),
        ))
    try:
        return SensorRig(cams("cameras"), cams("depth_cameras"), tuple(lidars),
                         as_float(cfg.get("robot_radius", 0.5), "rig.robot_radius", positive=True))
    except ValueError as e:
        raise ConfigError(f"rig: {e}") from e


def spot_rig_config() -> dict:
    return load_json(resources.files("dualsim") / "data" / "spot_rig.json")


# ---------------------------------------------------------------- trajectory


@dataclass(frozen=True)
class Trajectory:
    samples: tuple  # ((t, Pose), ...)

    def __post_init__(self):
        if not self.samples:
            raise ValueError("trajectory needs at least one sample")
        ts = [s[0] for s in self.samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("trajectory timestamps must be strictly increasing")

    @property
    def times(self) -> list:
        return [s[0] for s in self.samples]

    @property
    def end_time(self) -> float:
        return self.samples[-1][0]

    def pose_at(self, t: float):
        """(Pose, finished); clamps outside the sampled interval."""
        ts = self.times
        if t <= ts[0]:
            return self.samples[0][1], len(ts) == 1
        if t >= ts[-1]:
            return self.samples[-1][1], True
        j = bisect.bisect_right(ts, t)
        i = j - 1
        if ts[i] == t:
            return self.samples[i][1], False
        s = (t - ts[i]) / (ts[j] - ts[i])
        return interpolate_pose(self.samples[i][1], self.samples[j][1], s), False

    @classmethod
    def from_tum(cls, path) -> "Trajectory":
        try:
            return cls(tuple(io.read_tum(path)))
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"{path}: {e}") from e


def trajectory_from_config(value, base_dir) -> Trajectory:
    if isinstance(value, str):
        return Trajectory.from_tum(Path(base_dir) / value)
    if not isinstance(value, list):
        raise ConfigError("trajectory: expected a TUM file path or a list of rows")
    rows = []
    for i, r in enumerate(value):
        t, tx, ty, tz, qx, qy, qz, qw = as_vec(r, f"trajectory[{i}]", n=8)
        rows.append((t, Pose((qw, qx, qy, qz), (tx, ty, tz))))
    try:
        return Trajectory(tuple(rows))
    except ValueError as e:
        raise ConfigError(f"trajectory: {e}") from e


# ---------------------------------------------------------------- world state


class WorldField:
    """Scene field plus a set of posed humans, blended by density."""

    def __init__(self, scene, humans=()):
        self.scene = scene
        self.humans = tuple(humans)

    def query(self, points, dirs=None):
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        parts = [self.scene.query(p, dirs)]
        parts += [h.query(p, dirs) for h in self.humans]
        if len(parts) == 1:
            return parts[0]
        return blend_samples(parts, len(p))


@dataclass(frozen=True)
class WorldState:
    time: float
    scene: object
    agents: tuple
    humans: tuple            # PosedHuman per agent, same order
    robot_pose: Pose
    human_model: CapsuleHuman
    trajectory: Trajectory
    obstacles: tuple = ()
    robot_radius: float = 0.5
    finished: bool = False

    def __post_init__(self):
        if len(self.humans) != len(self.agents):
            raise ValueError("exactly one posed human per agent")


def pose_humans(model: CapsuleHuman, agents) -> tuple:
    return tuple(PosedHuman.from_agent(model, a.position, a.heading, a.gait_phase) for a in agents)


def initial_state(scene, scenario: CrowdScenario, trajectory: Trajectory,
                  human_model: CapsuleHuman | None = None, robot_radius: float = 0.5) -> WorldState:
    model = human_model or default_human()
    cycle = model.gait.cycle_length if model.gait else 1.4
    agents = tuple(replace(a, cycle_length=cycle) for a in scenario.agents)
    robot, done = trajectory.pose_at(trajectory.samples[0][0])
    return WorldState(trajectory.samples[0][0], scene, agents, pose_humans(model, agents), robot,
                      model, trajectory, tuple(scenario.obstacles), robot_radius, done)


def step(state: WorldState, dt: float) -> WorldState:
    if dt <= 0:
        raise ValueError("dt must be > 0")
    agents = tuple(step_crowd(state.agents, state.robot_pose, state.obstacles, dt, state.robot_radius))
    t = state.time + dt
    robot, done = state.trajectory.pose_at(t)
    return replace(state, time=t, agents=agents, humans=pose_humans(state.human_model, agents),
                   robot_pose=robot, finished=done)


def composite_world(x_world, direction, state: WorldState, active_humans=None) -> RadianceSample:
    humans = state.humans if active_humans is None else active_humans
    rgb, sigma = WorldField(state.scene, humans).query(np.asarray(x_world, dtype=np.float64)[None])
    return RadianceSample(tuple(np.clip(rgb[0], 0, 1)), float(sigma[0]))


# ---------------------------------------------------------------- culling


def visible(posed: PosedHuman, K: CameraIntrinsics, world_from_cam: Pose, W: int | None = None,
            H: int | None = None, near: float = 1e-3) -> bool:
    """Conservative test: can the human's bounding box cover any pixel?

    The box is clipped to the half-space Z >= ``near`` in camera coordinates
    and the rectangle hull of the projected clipped polytope is intersected
    with [0, W) x [0, H). Pass ``near`` no larger than the smallest camera-Z
    any rendered sample can have.
    """
    W = K.width if W is None else W
    H = K.height if H is None else H
    cam = world_from_cam.inverse().apply(human_bbox_world(posed))
    Z = cam[:, 2]
    pts = [cam[Z >= near]]
    for i, j in _BOX_EDGES:
        zi, zj = Z[i], Z[j]
        if (zi < near) != (zj < near):
            s = (near - zi) / (zj - zi)
            pts.append((cam[i] + s * (cam[j] - cam[i]))[None])
    P = np.concatenate(pts)
    if len(P) == 0:
        return False
    u = K.fx * P[:, 0] / P[:, 2] + K.cx
    v = K.fy * P[:, 1] / P[:, 2] + K.cy
    return bool(u.max() >= 0 and u.min() < W and v.max() >= 0 and v.min() < H)


def bbox_within_range(posed: PosedHuman, center, radius: float) -> bool:
    """Does the human's (oriented) bbox intersect the ball around ``center``?"""
    c = posed.human_from_world.apply(np.asarray(center, dtype=np.float64))
    closest = np.clip(c, posed.human.bbox_min, posed.human.bbox_max)
    return bool(np.linalg.norm(c - closest) <= radius)


def min_camera_z(cam: CameraMount) -> float:
    """Smallest camera-frame Z of any sample: near distance times the most oblique ray's z."""
    K = cam.K
    us = np.array([0.5 - K.cx, K.width - 0.5 - K.cx]) / K.fx
    vs = np.array([0.5 - K.cy, K.height - 0.5 - K.cy]) / K.fy
    r = np.sqrt(1.0 + np.max(us ** 2) + np.max(vs ** 2))
    return 0.999 * cam.near / r


# ---------------------------------------------------------------- capture


def sensor_sampling(sampling: RaySampling, frame: int, name: str) -> RaySampling:
    return sampling.with_seed(rng.derive_seed(sampling.seed, "frame", frame, name))


def capture(state: WorldState, rig: SensorRig, sampling: RaySampling, *, frame: int = 0,
            cull: bool = True, threads: int = 1, sensors=None) -> dict:
    """Render every (or the named) sensor; returns name -> (kind, data, active human count)."""
    out = {}
    body = state.robot_pose
    for kind, group in (("rgb", rig.cameras), ("depth", rig.depth_cameras)):
        for cam in group:
            if sensors is not None and cam.name not in sensors:
                continue
            world_from_cam = body @ cam.mount
            if cull:
                zmin = min_camera_z(cam)
                active = [h for h in state.humans if visible(h, cam.K, world_from_cam, near=zmin)]
            else:
                active = list(state.humans)
            fld = WorldField(state.scene, active)
            smp = sensor_sampling(sampling, frame, cam.name)
            fn = render_camera if kind == "rgb" else render_depth
            data = fn(cam.K, world_from_cam, fld, smp, t_near=cam.near, t_far=cam.far, threads=threads)
            out[cam.name] = (kind, data, len(active))
    for lid in rig.lidars:
        if sensors is not None and lid.name not in sensors:
            continue
        world_from_lidar = body @ lid.mount
        if cull:
            active = [h for h in state.humans
                      if bbox_within_range(h, world_from_lidar.translation, lid.spec.max_range)]
        else:
            active = list(state.humans)
        fld = WorldField(state.scene, active)
        smp = sensor_sampling(sampling, frame, lid.name)
        out[lid.name] = ("lidar", render_lidar(lid.spec, world_from_lidar, fld, smp, threads=threads),
                         len(active))
    return out


_EXT = {"rgb": "ppm", "depth": "pfm", "lidar": "ply"}


def write_capture(outputs: dict, out_dir: Path, frame: int, time: float, index_rows: list) -> None:
    for name, (kind, data, _) in outputs.items():
        rel = Path("frames") / f"{name}_{frame:05d}.{_EXT[kind]}"
        path = out_dir / rel
        if kind == "rgb":
            io.write_ppm(path, data)
        elif kind == "depth":
            io.write_pfm(path, data)
        else:
            io.write_ply(path, data)
        index_rows.append([frame, f"{time:.6f}", name, rel.as_posix()])


# ---------------------------------------------------------------- manifest


@dataclass
class Simulation:
    state: WorldState
    rig: SensorRig
    sampling: RaySampling
    dt: float = 0.05
    ticks: int = 50
    cull: bool = True
    resolved: dict = field(default_factory=dict)


def _load_rig(value, base_dir) -> SensorRig:
    if value == "spot":
        return rig_from_config(spot_rig_config())
    return rig_from_config(resolve(value, base_dir))


def _load_human_model(value, base_dir) -> CapsuleHuman:
    from .humanfield import human_from_config

    if value in (None, "default"):
        return default_human()
    if isinstance(value, str):
        return load_human(Path(base_dir) / value)
    return human_from_config(value, base_dir)


def _load_scene_value(value, base_dir):
    if isinstance(value, str):
        path = Path(base_dir) / value
        if not path.exists():
            raise ConfigError(f"scene: {path} does not exist")
        return load_scene(path)
    return make_synthetic_scene(value)


def simulation_from_manifest(manifest: dict, base_dir=".", seed: int | None = None) -> Simulation:
    base_dir = Path(base_dir)
    scene = _load_scene_value(require(manifest, "scene", "manifest"), base_dir)
    model = _load_human_model(manifest.get("human"), base_dir)
    crowd_cfg = manifest.get("crowd")
    cycle = model.gait.cycle_length if model.gait else 1.4
    scenario = scenario_from_config(resolve(crowd_cfg, base_dir), cycle) if crowd_cfg else CrowdScenario()
    rig = _load_rig(require(manifest, "rig", "manifest"), base_dir)
    traj = trajectory_from_config(require(manifest, "trajectory", "manifest"), base_dir)
    s_cfg = manifest.get("sampling", {})
    run_seed = seed if seed is not None else as_int(manifest.get("seed", 0), "manifest.seed")
    try:
        sampling = RaySampling(as_int(s_cfg.get("n_samples", 64), "sampling.n_samples", minimum=1),
                               s_cfg.get("strategy", "stratified"), run_seed)
    except ValueError as e:
        raise ConfigError(f"sampling: {e}") from e
    dt = as_float(manifest.get("dt", 0.05), "manifest.dt", positive=True)
    if "ticks" in manifest:
        ticks = as_int(manifest["ticks"], "manifest.ticks", minimum=0)
    else:
        ticks = int(np.floor((traj.end_time - traj.samples[0][0]) / dt + 1e-9)) + 1
    state = initial_state(scene, scenario, traj, model, rig.robot_radius)
    resolved = dict(manifest)
    resolved.update(seed=run_seed, dt=dt, ticks=ticks, sampling=sampling.to_dict(),
                    cull=bool(manifest.get("cull", True)))
    return Simulation(state, rig, sampling, dt, ticks, resolved["cull"], resolved)


def run_simulation(sim: Simulation, out_dir, threads: int = 1, progress=None) -> list:
    """Step and capture ``sim.ticks`` frames into ``out_dir``; returns the index rows."""
    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    rows = []
    state = sim.state
    all_sensors = sim.rig.cameras + sim.rig.depth_cameras + sim.rig.lidars
    for frame in range(sim.ticks):
        due = {s.name for s in all_sensors if frame % s.every == 0}
        outputs = capture(state, sim.rig, sim.sampling, frame=frame, cull=sim.cull,
                          threads=threads, sensors=due)
        write_capture(outputs, out_dir, frame, state.time, rows)
        if progress:
            progress(frame, state)
        if frame + 1 < sim.ticks:
            state = step(state, sim.dt)
    io.write_csv(out_dir / "index.csv", ["frame", "time", "sensor", "path"], rows)
    return rows
