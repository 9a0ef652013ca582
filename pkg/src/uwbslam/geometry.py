"""
Planar rigid-body geometry shared by the radar, AOA and EKF code.

Angles live on the half-open interval (-pi, pi] everywhere in the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    if not math.isfinite(theta):
        raise ValueError(f"cannot wrap non-finite angle {theta!r}")
    if -math.pi < theta <= math.pi:
        return float(theta)
    wrapped = math.pi - ((math.pi - theta) % TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


def wrap_angles(theta):
    """Vectorised :func:`wrap_angle` for numpy arrays."""
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("cannot wrap non-finite angles")
    out = np.pi - np.mod(np.pi - theta, TWO_PI)
    out = np.where(out <= -np.pi, out + TWO_PI, out)
    inside = (theta > -np.pi) & (theta <= np.pi)
    return np.where(inside, theta, out)


@dataclass(frozen=True)
class Pose2D:
    """Robot or sensor pose; ``theta`` is wrapped on construction."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @classmethod
    def from_array(cls, arr) -> "Pose2D":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def oplus(self, other: "Pose2D") -> "Pose2D":
        """Compose ``self`` with a pose expressed in ``self``'s frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )

    def ominus(self, other: "Pose2D") -> "Pose2D":
        """Pose of ``self`` expressed in the frame of ``other``."""
        c, s = math.cos(other.theta), math.sin(other.theta)
        dx, dy = self.x - other.x, self.y - other.y
        return Pose2D(c * dx + s * dy, -s * dx + c * dy, self.theta - other.theta)

    def transform_points(self, pts) -> np.ndarray:
        """Map points from this pose's local frame into the parent frame."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        c, s = math.cos(self.theta), math.sin(self.theta)
        rot = np.array([[c, -s], [s, c]])
        return pts @ rot.T + np.array([self.x, self.y])

    def inverse_transform_points(self, pts) -> np.ndarray:
        """Map parent-frame points into this pose's local frame."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        c, s = math.cos(self.theta), math.sin(self.theta)
        rot = np.array([[c, -s], [s, c]])
        return (pts - np.array([self.x, self.y])) @ rot

    def distance_to(self, other: "Pose2D") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)


@dataclass(frozen=True)
class Transform2D:
    """3x3 homogeneous planar transform."""

    matrix: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("transform matrix must be 3x3")
        if not np.allclose(m[2], [0.0, 0.0, 1.0], atol=0.0, rtol=0.0):
            raise ValueError("bottom row of a homogeneous transform must be [0 0 1]")
        if abs(np.linalg.det(m[:2, :2]) - 1.0) > 1e-9:
            raise ValueError("rotation block must have unit determinant")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def rotation(self) -> float:
        return math.atan2(self.matrix[1, 0], self.matrix[0, 0])

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:2, 2].copy()

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, 2)
        out = flat @ self.matrix[:2, :2].T + self.matrix[:2, 2]
        return out.reshape(pts.shape)

    def __matmul__(self, other: "Transform2D") -> "Transform2D":
        return compose(self, other)


def make_transform(theta_z: float, d: float) -> Transform2D:
    """Rotation by ``theta_z`` followed by a step of ``d`` along the new x axis."""
    if not (math.isfinite(theta_z) and math.isfinite(d)):
        raise ValueError("transform parameters must be finite")
    c, s = math.cos(theta_z), math.sin(theta_z)
    return Transform2D(np.array([[c, -s, d * c], [s, c, d * s], [0.0, 0.0, 1.0]]))


def compose(a: Transform2D, b: Transform2D) -> Transform2D:
    return Transform2D(a.matrix @ b.matrix)


def pose_to_transform(pose: Pose2D) -> Transform2D:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    return Transform2D(np.array([[c, -s, pose.x], [s, c, pose.y], [0.0, 0.0, 1.0]]))


@dataclass(frozen=True)
class CircularStats:
    mean_theta: float
    std_theta: float
    resultant_R: float


def circular_mean_std(angles) -> CircularStats:
    """Circular mean, resultant length and ``sqrt(-2 ln R)`` spread of a set of angles.

    Raises
    ------
    ValueError
        On an empty input, or when the resultant vanishes and the mean is undefined.
    """
    a = np.asarray(angles, dtype=float).ravel()
    if a.size == 0:
        raise ValueError("circular statistics need at least one angle")
    xbar = float(np.mean(np.cos(a)))
    ybar = float(np.mean(np.sin(a)))
    R = math.sqrt(xbar * xbar + ybar * ybar)
    if R <= 1e-12:
        raise ValueError("resultant length is zero; circular mean is undefined")
    R = min(R, 1.0)
    mean = wrap_angle(math.atan2(ybar, xbar))
    std = math.sqrt(max(-2.0 * math.log(R), 0.0))
    return CircularStats(mean, std, R)


@dataclass(frozen=True)
class MotionIncrement:
    """rot1-trans-rot2 odometry increment."""

    rot1: float
    trans: float
    rot2: float

    def __post_init__(self):
        if self.trans < 0:
            raise ValueError("translation of a motion increment must be non-negative")
        object.__setattr__(self, "rot1", wrap_angle(float(self.rot1)))
        object.__setattr__(self, "rot2", wrap_angle(float(self.rot2)))
        object.__setattr__(self, "trans", float(self.trans))

    @property
    def rotation(self) -> float:
        return wrap_angle(self.rot1 + self.rot2)


# Below this translation the heading of travel is meaningless.
MIN_TRANSLATION = 1e-6


def odometry_motion_model(pose_a: Pose2D, pose_b: Pose2D) -> MotionIncrement:
    """Decompose the motion from ``pose_a`` to ``pose_b``."""
    dx, dy = pose_b.x - pose_a.x, pose_b.y - pose_a.y
    trans = math.hypot(dx, dy)
    if trans < MIN_TRANSLATION:
        return MotionIncrement(0.0, trans, wrap_angle(pose_b.theta - pose_a.theta))
    rot1 = wrap_angle(math.atan2(dy, dx) - pose_a.theta)
    rot2 = wrap_angle(pose_b.theta - pose_a.theta - rot1)
    return MotionIncrement(rot1, trans, rot2)


def apply_motion(u: MotionIncrement, pose: Pose2D) -> Pose2D:
    heading = pose.theta + u.rot1
    return Pose2D(
        pose.x + u.trans * math.cos(heading),
        pose.y + u.trans * math.sin(heading),
        heading + u.rot2,
    )
