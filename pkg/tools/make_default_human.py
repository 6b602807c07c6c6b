"""Regenerate the packaged default human and walking gait JSON files."""

import json
import math
from pathlib import Path

import numpy as np

from dualsim.crowd import gait_to_config, GaitCycle
from dualsim.geometry import Pose, quat_from_axis_angle

OUT = Path(__file__).resolve().parents[1] / "src" / "dualsim" / "data"

SHIRT = [0.2, 0.35, 0.75]
PANTS = [0.25, 0.25, 0.3]
SKIN = [0.9, 0.72, 0.58]
DENSITY = 40.0

BONES = [
    # name, a, b, radius, color
    ("torso", [0, 0, 0], [0, 0, 0.45], 0.16, SHIRT),
    ("head", [0, 0, 0], [0, 0, 0.12], 0.11, SKIN),
    ("upper_arm_l", [0, 0, 0], [0, 0, -0.28], 0.05, SHIRT),
    ("upper_arm_r", [0, 0, 0], [0, 0, -0.28], 0.05, SHIRT),
    ("lower_arm_l", [0, 0, 0], [0, 0, -0.26], 0.045, SKIN),
    ("lower_arm_r", [0, 0, 0], [0, 0, -0.26], 0.045, SKIN),
    ("thigh_l", [0, 0, 0], [0, 0, -0.45], 0.08, PANTS),
    ("thigh_r", [0, 0, 0], [0, 0, -0.45], 0.08, PANTS),
    ("shin_l", [0, 0, 0], [0, 0, -0.45], 0.06, PANTS),
    ("shin_r", [0, 0, 0], [0, 0, -0.45], 0.06, PANTS),
]


def ry(angle):
    return Pose(tuple(quat_from_axis_angle((0, 1, 0), angle)))


def keyframe(swing):
    kf = {"torso": Pose((1, 0, 0, 0), (0, 0, 1.0)), "head": Pose((1, 0, 0, 0), (0, 0, 1.58))}
    for side, sign in (("l", 1.0), ("r", -1.0)):
        y = 0.1 * sign
        th = -0.45 * swing * sign          # negative pitch swings the leg forward (+x)
        hip = np.array([0.0, y, 0.99])
        knee = hip + ry(th).apply([0, 0, -0.45])
        kf[f"thigh_{side}"] = Pose(ry(th).rotation, tuple(hip))
        kf[f"shin_{side}"] = Pose(ry(th + 0.1 + 0.5 * max(th, 0.0)).rotation, tuple(knee))
        ph = 0.35 * swing * sign           # arms counter-swing the legs
        shoulder = np.array([0.0, 0.22 * sign, 1.42])
        elbow = shoulder + ry(ph).apply([0, 0, -0.28])
        kf[f"upper_arm_{side}"] = Pose(ry(ph).rotation, tuple(shoulder))
        kf[f"lower_arm_{side}"] = Pose(ry(ph - 0.3).rotation, tuple(elbow))
    return kf


def main():
    swings = [0.0, math.sqrt(3) / 2, -math.sqrt(3) / 2, 0.0]
    kfs = tuple(keyframe(s) for s in swings)
    gait = GaitCycle(tuple(b[0] for b in BONES), kfs, 1.4)
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "walk_gait.json").write_text(json.dumps(gait_to_config(gait), indent=1) + "\n")
    human = {
        "gait": "walk_gait.json",
        "bones": [{"name": n, "a": a, "b": b, "radius": r, "color": c, "density": DENSITY}
                  for n, a, b, r, c in BONES],
    }
    (OUT / "default_human.json").write_text(json.dumps(human, indent=1) + "\n")


if __name__ == "__main__":
    main()
