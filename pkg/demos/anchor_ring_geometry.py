"""
Coverage of the four-anchor AOA ring.

Prints the deadzone radius for a few fields of view, cross-checks it against
a direct intersection of neighbouring cone edges, and shows which anchors
report a tag placed at several bearings around the robot.

    python demos/anchor_ring_geometry.py
"""

import math

import numpy as np

from uwbslam.aoa import AnchorRingConfig, UncoveredGeometry, deadzone_radius
from uwbslam.geometry import Pose2D
from uwbslam.sim import NoiseConfig, Simulator, TrajectoryScript, WorldModel


def cone_edge_crossing(ring):
    """Where the left edge of anchor 0 meets the right edge of anchor 1."""
    half = ring.fov / 2
    a0, a1 = ring.anchor_pose(0), ring.anchor_pose(1)
    d0 = np.array([math.cos(a0.theta + half), math.sin(a0.theta + half)])
    d1 = np.array([math.cos(a1.theta - half), math.sin(a1.theta - half)])
    s = np.linalg.solve(np.column_stack([d0, -d1]), [a1.x - a0.x, a1.y - a0.y])
    return float(np.hypot(a0.x + s[0] * d0[0], a0.y + s[0] * d0[1]))


def main():
    print("deadzone radius of a 10 cm ring with four anchors")
    for fov in (100, 120, 150, 170):
        ring = AnchorRingConfig(fov=math.radians(fov))
        print(f"  fov {fov:3d} deg: formula {deadzone_radius(ring):.4f} m, cone edges cross at "
              f"{cone_edge_crossing(ring):.4f} m")
    try:
        deadzone_radius(AnchorRingConfig(fov=math.radians(80)))
    except UncoveredGeometry as exc:
        print(f"  fov  80 deg: {exc}")

    print("\nanchors reporting a tag 3 m away (zero noise)")
    for bearing in (0, 30, 45, 90, 135, 180):
        b = math.radians(bearing)
        world = WorldModel(tags={0: [3 * math.cos(b), 3 * math.sin(b)]})
        sim = Simulator(world, TrajectoryScript(Pose2D(), []), NoiseConfig.zero())
        ids = sorted(r.anchor_id for r in sim.aoa_readings())
        print(f"  bearing {bearing:3d} deg: anchors {ids}")


if __name__ == "__main__":
    main()
