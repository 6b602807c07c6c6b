"""Social-force pedestrians on the ground plane.

Isotropic Helbing forces: a goal-seeking relaxation term plus exponential
repulsion from other pedestrians, wall segments and the robot. Each agent
carries a behaviour profile; presets differ only in their constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, as_float, as_int, as_vec, load_json, require
from .geometry import Pose, quat_normalize, quat_slerp

SPEED_CAP_FACTOR = 1.3
HEADING_MIN_SPEED = 0.05


class CrowdError(RuntimeError):
    pass


@dataclass(frozen=True)
class BehaviorProfile:
    name: str = "calm"
    desired_speed: float = 1.4
    relaxation_time: float = 0.5
    body_radius: float = 0.3
    A_ped: float = 2.1
    B_ped: float = 0.3
    A_obs: float = 10.0
    B_obs: float = 0.2
    A_rob: float = 3.0
    B_rob: float = 0.5

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if k != "name" and not (isinstance(v, (int, float)) and v > 0):
                raise ValueError(f"profile {self.name!r}: {k} must be > 0, got {v!r}")


PRESETS = {
    "calm": BehaviorProfile("calm"),
    "scared": BehaviorProfile("scared", A_rob=6.0),
    "ignoring": BehaviorProfile("ignoring", A_rob=0.3),
}


def profile_from_config(preset: str = "calm", overrides: dict | None = None) -> BehaviorProfile:
    if preset not in PRESETS:
        raise ConfigError(f"unknown behaviour preset {preset!r}; known: {sorted(PRESETS)}")
    base = PRESETS[preset]
    if not overrides:
        return base
    bad = set(overrides) - set(base.__dict__) - {"name"}
    if bad:
        raise ConfigError(f"unknown profile override(s) {sorted(bad)}")
    try:
        return replace(base, **overrides)
    except ValueError as e:
        raise ConfigError(str(e)) from e


@dataclass(frozen=True)
class Agent:
    id: int
    position: tuple
    velocity: tuple = (0.0, 0.0)
    waypoints: tuple = ()
    profile: BehaviorProfile = PRESETS["calm"]
    arrival_radius: float = 0.3
    patrol: bool = False
    gait_phase: float = 0.0
    heading: float = 0.0
    cycle_length: float = 1.4

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        object.__setattr__(self, "waypoints", tuple(tuple(float(c) for c in w) for w in self.waypoints))

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)


def driving_force(agent: Agent) -> np.ndarray:
    """(v0 * e_goal - v) / tau toward the current waypoint; zero with no waypoint."""
    if not agent.waypoints:
        return np.zeros(2)
    p = np.asarray(agent.position)
    to_goal = np.asarray(agent.waypoints[0]) - p
    dist = np.hypot(to_goal[0], to_goal[1])
    e = to_goal / dist if dist > 0 else np.zeros(2)
    prof = agent.profile
    return (prof.desired_speed * e - np.asarray(agent.velocity)) / prof.relaxation_time


def repulsion_force(self_pos, self_radius, other_pos, other_radius, A, B):
    """A * exp((r_i + r_j - d) / B) along the unit vector from other to self.

    Returns ``(force, coincident)``; coincident positions push along +x.
    """
    diff = np.asarray(self_pos, dtype=np.float64) - np.asarray(other_pos, dtype=np.float64)
    d = float(np.hypot(diff[0], diff[1]))
    mag = A * math.exp((self_radius + other_radius - d) / B)
    if d == 0.0:
        return np.array([mag, 0.0]), True
    return mag * diff / d, False


def closest_point_on_segment(p, a, b) -> np.ndarray:
    p, a, b = (np.asarray(x, dtype=np.float64) for x in (p, a, b))
    ab = b - a
    L2 = float(ab @ ab)
    if L2 == 0.0:
        return a
    s = min(max(float((p - a) @ ab) / L2, 0.0), 1.0)
    return a + s * ab


def _closest_points(P, segs):
    """(n, m, 2) closest points on each of m segments to each of n points."""
    a = segs[None, :, 0, :]
    ab = segs[None, :, 1, :] - a
    L2 = np.sum(ab * ab, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.sum((P[:, None, :] - a) * ab, axis=-1) / L2
    s = np.clip(np.nan_to_num(s, nan=0.0), 0.0, 1.0)
    return a + s[..., None] * ab


def _pair_repulsion(P, radii, A, B):
    """Summed pedestrian-pedestrian forces on each agent, (n, 2)."""
    n = len(P)
    if n < 2:
        return np.zeros((n, 2))
    diff = P[:, None, :] - P[None, :, :]
    d = np.hypot(diff[..., 0], diff[..., 1])
    mag = A[:, None] * np.exp((radii[:, None] + radii[None, :] - d) / B[:, None])
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = diff / d[..., None]
    coincident = d == 0.0
    unit = np.where(coincident[..., None], np.array([1.0, 0.0]), unit)
    f = mag[..., None] * unit
    f[np.arange(n), np.arange(n)] = 0.0
    # sequential sum over neighbours keeps results order-stable
    return np.cumsum(f, axis=1)[:, -1, :]


def _disc_repulsion(P, radii, q, q_radius, A, B):
    diff = P - q
    d = np.hypot(diff[:, 0], diff[:, 1])
    mag = A * np.exp((radii + q_radius - d) / B)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = diff / d[:, None]
    unit = np.where((d == 0.0)[:, None], np.array([1.0, 0.0]), unit)
    return mag[:, None] * unit


def step_crowd(agents, robot_pose: Pose | None = None, obstacles=(), dt: float = 0.05,
               robot_radius: float = 0.5) -> list:
    """Advance every agent by ``dt`` using forces from the pre-step snapshot."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    agents = list(agents)
    n = len(agents)
    if n == 0:
        return []
    P = np.array([a.position for a in agents])
    V = np.array([a.velocity for a in agents])
    radii = np.array([a.profile.body_radius for a in agents])
    prof = [a.profile for a in agents]

    F = np.zeros((n, 2))
    for i, a in enumerate(agents):
        if a.waypoints:
            F[i] = driving_force(a)
        else:
            # no goal left: relax to standing still
            F[i] = -V[i] / a.profile.relaxation_time
    F = F + _pair_repulsion(P, radii, np.array([p.A_ped for p in prof]), np.array([p.B_ped for p in prof]))

    segs = np.asarray(obstacles, dtype=np.float64).reshape(-1, 2, 2)
    if len(segs):
        C = _closest_points(P, segs)
        diff = P[:, None, :] - C
        d = np.hypot(diff[..., 0], diff[..., 1])
        A_obs = np.array([p.A_obs for p in prof])[:, None]
        B_obs = np.array([p.B_obs for p in prof])[:, None]
        mag = A_obs * np.exp((radii[:, None] - d) / B_obs)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = diff / d[..., None]
        unit = np.where((d == 0.0)[..., None], np.array([1.0, 0.0]), unit)
        F = F + np.cumsum(mag[..., None] * unit, axis=1)[:, -1, :]

    if robot_pose is not None:
        q = np.asarray(robot_pose.translation[:2])
        F = F + _disc_repulsion(P, radii, q, robot_radius,
                                np.array([p.A_rob for p in prof]), np.array([p.B_rob for p in prof]))

    V_new = V + F * dt
    speed = np.hypot(V_new[:, 0], V_new[:, 1])
    cap = SPEED_CAP_FACTOR * np.array([p.desired_speed for p in prof])
    over = speed > cap
    V_new[over] *= (cap[over] / speed[over])[:, None]
    P_new = P + V_new * dt
    speed = np.hypot(V_new[:, 0], V_new[:, 1])

    out = []
    for i, a in enumerate(agents):
        if not (np.all(np.isfinite(P_new[i])) and np.all(np.isfinite(V_new[i]))):
            raise CrowdError(f"agent {a.id}: non-finite state after step")
        wps = a.waypoints
        if wps:
            w = wps[0]
            if math.hypot(P_new[i, 0] - w[0], P_new[i, 1] - w[1]) < a.arrival_radius:
                wps = wps[1:] + ((w,) if a.patrol else ())
        heading = math.atan2(V_new[i, 1], V_new[i, 0]) if speed[i] > HEADING_MIN_SPEED else a.heading
        phase = (a.gait_phase + speed[i] * dt / a.cycle_length) % 1.0
        out.append(replace(a, position=tuple(P_new[i]), velocity=tuple(V_new[i]), waypoints=wps,
                           heading=heading, gait_phase=phase))
    return out


# ---------------------------------------------------------------- gait


@dataclass(frozen=True)
class GaitCycle:
    """Keyframed skeletal poses, keyframe k at phase k / (K - 1).

    Each keyframe maps bone name -> Pose of that bone in the body's root
    frame. A cycle is periodic when the first and last keyframes agree.
    """

    bones: tuple
    keyframes: tuple  # of dict name -> Pose
    cycle_length: float = 1.4

    def __post_init__(self):
        if len(self.keyframes) < 2:
            raise ValueError("gait needs at least 2 keyframes")
        for k, kf in enumerate(self.keyframes):
            if set(kf) != set(self.bones):
                raise ValueError(f"keyframe {k}: bone set differs from the gait's bone list")
        if self.cycle_length <= 0:
            raise ValueError("cycle_length must be > 0")

    def segment(self, phase: float):
        """Bracketing keyframe indices and the blend factor for ``phase``."""
        k = len(self.keyframes) - 1
        x = min(max(float(phase), 0.0), 1.0) * k
        i = min(int(math.floor(x)), k - 1)
        return i, i + 1, x - i

    def pose_at(self, phase: float) -> dict:
        i, j, s = self.segment(phase)
        a, b = self.keyframes[i], self.keyframes[j]
        out = {}
        for name in self.bones:
            pa, pb = a[name], b[name]
            if s == 0.0:
                out[name] = pa
            elif s == 1.0:
                out[name] = pb
            else:
                t = (1.0 - s) * pa.t + s * pb.t
                out[name] = Pose(tuple(quat_slerp(pa.rotation, pb.rotation, s)), tuple(t))
        return out


def _pose_from_cfg(d, where) -> Pose:
    t = as_vec(d.get("translation", [0, 0, 0]), f"{where}.translation")
    q = as_vec(d.get("rotation", [1, 0, 0, 0]), f"{where}.rotation", n=4)
    try:
        quat_normalize(q)
    except ValueError as e:
        raise ConfigError(f"{where}.rotation: {e}") from e
    return Pose(q, t)


def pose_to_cfg(p: Pose) -> dict:
    return {"translation": list(p.translation), "rotation": list(p.rotation)}


def gait_from_config(cfg: dict) -> GaitCycle:
    bones = require(cfg, "bones", "gait")
    if not isinstance(bones, list) or not all(isinstance(b, str) for b in bones):
        raise ConfigError("gait.bones: expected a list of bone names")
    cycle = as_float(cfg.get("cycle_length", 1.4), "gait.cycle_length", positive=True)
    kfs_cfg = require(cfg, "keyframes", "gait")
    if not isinstance(kfs_cfg, list) or len(kfs_cfg) < 2:
        raise ConfigError("gait.keyframes: need a list of at least 2 keyframes")
    kfs = []
    for k, kf in enumerate(kfs_cfg):
        where = f"gait.keyframes[{k}]"
        if not isinstance(kf, dict) or set(kf) != set(bones):
            raise ConfigError(f"{where}: must hold exactly the bones {bones}")
        kfs.append({name: _pose_from_cfg(kf[name], f"{where}.{name}") for name in bones})
    return GaitCycle(tuple(bones), tuple(kfs), cycle)


def gait_to_config(g: GaitCycle) -> dict:
    return {"cycle_length": g.cycle_length, "bones": list(g.bones),
            "keyframes": [{n: pose_to_cfg(kf[n]) for n in g.bones} for kf in g.keyframes]}


def load_gait(path) -> GaitCycle:
    return gait_from_config(load_json(path))


# ---------------------------------------------------------------- scenarios


@dataclass
class CrowdScenario:
    agents: list = field(default_factory=list)
    obstacles: list = field(default_factory=list)  # [((x1, y1), (x2, y2)), ...]


def scenario_from_config(cfg: dict, cycle_length: float = 1.4) -> CrowdScenario:
    agents = []
    for i, a in enumerate(cfg.get("agents", [])):
        where = f"crowd.agents[{i}]"
        start = as_vec(require(a, "start", where), f"{where}.start", n=2)
        wps = a.get("waypoints", [])
        if not isinstance(wps, list):
            raise ConfigError(f"{where}.waypoints: expected a list")
        wps = tuple(as_vec(w, f"{where}.waypoints[{k}]", n=2) for k, w in enumerate(wps))
        overrides = a.get("overrides", {})
        if not isinstance(overrides, dict):
            raise ConfigError(f"{where}.overrides: expected an object")
        try:
            profile = profile_from_config(a.get("preset", "calm"), overrides)
        except ConfigError as e:
            raise ConfigError(f"{where}: {e}") from e
        agents.append(Agent(
            id=as_int(a.get("id", i), f"{where}.id"),
            position=start,
            velocity=as_vec(a.get("velocity", [0.0, 0.0]), f"{where}.velocity", n=2),
            waypoints=wps,
            profile=profile,
            arrival_radius=as_float(a.get("arrival_radius", 0.3), f"{where}.arrival_radius", positive=True),
            patrol=bool(a.get("patrol", False)),
            heading=as_float(a.get("heading", 0.0), f"{where}.heading"),
            cycle_length=cycle_length,
        ))
    ids = [a.id for a in agents]
    if len(set(ids)) != len(ids):
        raise ConfigError("crowd.agents: ids must be unique")
    obstacles = []
    for k, seg in enumerate(cfg.get("obstacles", [])):
        if not isinstance(seg, list) or len(seg) != 2:
            raise ConfigError(f"crowd.obstacles[{k}]: expected [[x1, y1], [x2, y2]]")
        obstacles.append((as_vec(seg[0], f"crowd.obstacles[{k}][0]", n=2),
                          as_vec(seg[1], f"crowd.obstacles[{k}][1]", n=2)))
    return CrowdScenario(agents, obstacles)


def load_scenario(path, cycle_length: float = 1.4) -> CrowdScenario:
    return scenario_from_config(load_json(Path(path)), cycle_length)
