"""Shared hypothesis strategies and small scene builders for the tests."""

import numpy as np
from hypothesis import strategies as st

from dualsim.geometry import Pose, quat_normalize

finite = st.floats(-5.0, 5.0, allow_nan=False, allow_infinity=False)
vec3 = st.tuples(finite, finite, finite)


@st.composite
def unit_quats(draw):
    q = np.array(draw(st.tuples(*(st.floats(-1, 1) for _ in range(4)))))
    if np.linalg.norm(q) < 1e-3:
        q = np.array([1.0, 0.0, 0.0, 0.0])
    return tuple(quat_normalize(q))


@st.composite
def poses(draw):
    return Pose(draw(unit_quats()), draw(vec3))


def random_pose(rng, scale=2.0):
    q = rng.normal(size=4)
    return Pose(tuple(q / np.linalg.norm(q)), tuple(rng.uniform(-scale, scale, 3)))


def box(lo, hi, color=(1.0, 0.0, 0.0), density=1.0):
    return {"kind": "box", "min": list(lo), "max": list(hi), "color": list(color), "density": density}


def sphere(center, radius, color=(1.0, 0.0, 0.0), density=1.0, inner_radius=0.0):
    d = {"kind": "sphere", "center": list(center), "radius": radius, "color": list(color), "density": density}
    if inner_radius:
        d["inner_radius"] = inner_radius
    return d


def scene_spec(primitives, lo=(-10, -10, -10), hi=(10, 10, 10)):
    return {"bbox": {"min": list(lo), "max": list(hi)}, "primitives": list(primitives)}


def gradcheck_instance(seed, h=1e-4, n_rays=8, res=4, n_samples=16):
    """Relative error between the analytic loss gradient and central differences
    on one random (grid, rays, targets) instance: |g_a - g_fd| / max(|g_a|, |g_fd|)."""
    from dualsim.field import VoxelGridField
    from dualsim.fit import loss_gradient, photometric_loss
    from dualsim.geometry import RayBatch
    from dualsim.render import RaySampling

    rng = np.random.default_rng(seed)
    grid = VoxelGridField((-1, -1, -1), (1, 1, 1), (res, res, res),
                          rng.normal(0.0, 1.0, (res, res, res, 4)))
    origins = rng.uniform(-0.5, 0.5, (n_rays, 3)) + np.array([0.0, 0.0, -2.5])
    targets_pts = rng.uniform(-0.7, 0.7, (n_rays, 3))
    d = targets_pts - origins
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    rays = RayBatch(origins, d, 1.0, 4.0, np.arange(n_rays))
    targets = rng.uniform(0, 1, (n_rays, 3))
    sampling = RaySampling(n_samples, "stratified", seed)
    g = loss_gradient(grid, rays, targets, sampling).ravel()
    fd = np.zeros_like(g)
    flat = grid.params.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        lp = photometric_loss(grid, rays, targets, sampling)
        flat[k] = old - h
        lm = photometric_loss(grid, rays, targets, sampling)
        flat[k] = old
        fd[k] = (lp - lm) / (2 * h)
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd)))


# -------------------------------------------------------------- crowd scenarios


def lone_agent(goal_x=100.0):
    from dualsim.crowd import Agent
    return [Agent(0, (0.0, 0.0), waypoints=((goal_x, 0.0),))]


def head_on_pair():
    from dualsim.crowd import Agent
    return [Agent(0, (-5.0, 0.1), waypoints=((5.0, 0.1),)),
            Agent(1, (5.0, -0.1), waypoints=((-5.0, -0.1),))]


def drive_by_min_clearance(preset, dt=0.05, seconds=14.0):
    """Agent walks +x along y=0.6 while the robot drives -x along y=0; min centre distance."""
    from dualsim.crowd import PRESETS, Agent, step_crowd
    from dualsim.geometry import Pose

    agents = [Agent(0, (-8.0, 0.6), waypoints=((8.0, 0.6),), profile=PRESETS[preset])]
    best = np.inf
    for k in range(int(round(seconds / dt))):
        robot = Pose(translation=(8.0 - 1.0 * k * dt, 0.0, 0.0))
        best = min(best, float(np.hypot(agents[0].position[0] - robot.translation[0],
                                        agents[0].position[1] - robot.translation[1])))
        agents = step_crowd(agents, robot, (), dt, robot_radius=0.5)
    return best


def twenty_agent_scenario(seed=0):
    """Twenty patrolling agents in a walled 12 m square with a circling robot."""
    from dualsim.crowd import PRESETS, Agent

    rng = np.random.default_rng(seed)
    names = sorted(PRESETS)
    agents = []
    for i in range(20):
        start = tuple(rng.uniform(-5, 5, 2))
        wps = tuple(tuple(rng.uniform(-5, 5, 2)) for _ in range(3))
        agents.append(Agent(i, start, waypoints=wps, patrol=True, profile=PRESETS[names[i % 3]]))
    walls = [((-6, -6), (6, -6)), ((6, -6), (6, 6)), ((6, 6), (-6, 6)), ((-6, 6), (-6, -6))]
    return agents, walls


def circling_robot(k, dt):
    from dualsim.geometry import Pose
    a = 0.3 * k * dt
    return Pose.from_yaw(a + np.pi / 2, (3.0 * np.cos(a), 3.0 * np.sin(a), 0.0))


# -------------------------------------------------------------- world / culling


def pixel_oracle_hits(posed, K, world_from_cam, t_near, t_far):
    """Does any pixel-centre ray meet the human's bbox inside [t_near, t_far]?"""
    from dualsim.geometry import camera_rays, ray_box_intersect

    rays = camera_rays(K, world_from_cam, t_near, t_far)
    h2w = posed.human_from_world
    o = h2w.apply(rays.origins)
    d = h2w.rotate(rays.directions)
    t0, t1 = ray_box_intersect(o, d, posed.human.bbox_min, posed.human.bbox_max)
    return bool(np.any((t0 <= t1) & (t1 >= t_near) & (t0 <= t_far)))


def random_camera_near(rng, target, spread=3.0):
    """A random camera somewhere around ``target``, looking roughly at it (or not)."""
    from dualsim.geometry import look_at

    eye = np.asarray(target) + rng.uniform(-spread, spread, 3)
    eye[2] = abs(eye[2]) + 0.1
    aim = np.asarray(target) + rng.normal(0.0, 1.5, 3)
    try:
        return look_at(eye, aim)
    except ValueError:
        return look_at(eye, aim + [0.1, 0.0, 0.0])


def sim_manifest(ticks=6, width=16, height=12, lidar=(4, 32), n_samples=16, agents=None, seed=3):
    """Small manifest with two cameras (rgb + depth) and one lidar."""
    if agents is None:
        agents = [{"start": [2.5, -2.0], "waypoints": [[2.5, 2.0]], "preset": "calm"},
                  {"start": [-1.0, 1.5], "waypoints": [[3.0, 1.5]], "preset": "scared"}]
    intr = {"width": width, "height": height, "hfov_deg": 90}
    mount = {"translation": [0.4, 0, 0.6], "pitch_deg": 5}
    return {
        "scene": scene_spec([box((-6, -6, -0.5), (6, 6, 0.0), (0.5, 0.5, 0.5), 20),
                             box((3, -1, 0), (4, 1, 1.5), (0.8, 0.3, 0.2), 20)],
                            (-6, -6, -0.5), (6, 6, 3)),
        "crowd": {"agents": agents},
        "human": "default",
        "rig": {"robot_radius": 0.5,
                "cameras": [{"name": "front", "intrinsics": intr, "mount": mount, "far": 12.0}],
                "depth_cameras": [{"name": "front_depth", "intrinsics": intr, "mount": mount, "far": 12.0}],
                "lidars": [{"name": "lidar", "mount": {"translation": [0, 0, 0.7]},
                            "spec": {"channels": lidar[0], "azimuth_count": lidar[1], "max_range": 8.0}}]},
        "trajectory": [[0.0, 0, 0, 0, 0, 0, 0, 1], [2.5, 1.5, 0, 0, 0, 0, 0, 1]],
        "sampling": {"n_samples": n_samples, "strategy": "stratified"},
        "seed": seed,
        "dt": 0.05,
        "ticks": ticks,
    }


def tree_bytes(root):
    """{relative path: bytes} for every file under ``root``."""
    from pathlib import Path

    root = Path(root)
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
