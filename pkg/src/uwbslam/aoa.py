"""
UWB angle-of-arrival anchor ring: geometry, reading gates, tag filtering and
tag initialisation.

Anchors sit on a ring around the robot origin and report range ``D`` and
bearing ``phi`` of a tag in their own frame. Tags are the deployed beacons.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from itertools import chain
from typing import Optional

import numpy as np

from .features import dbscan
from .geometry import Pose2D, circular_mean_std, compose, make_transform, wrap_angle, wrap_angles


@dataclass(frozen=True)
class AnchorRingConfig:
    n_anchors: int = 4
    radius: float = 0.10
    psi: tuple = (0.0, math.pi / 2, math.pi, -math.pi / 2)
    fov: float = math.radians(150.0)
    det_range_min: float = 1.5
    det_range_max: float = 10.0

    def __post_init__(self):
        if self.n_anchors < 1 or len(self.psi) != self.n_anchors:
            raise ValueError("psi needs one mounting angle per anchor")
        if not 0 < self.fov < 2 * math.pi:
            raise ValueError("anchor fov must lie in (0, 2 pi)")
        if not 0 <= self.det_range_min < self.det_range_max:
            raise ValueError("need 0 <= det_range_min < det_range_max")
        if self.n_anchors > 1:
            ordered = np.sort(np.mod(np.asarray(self.psi, dtype=float), 2 * math.pi))
            gaps = np.diff(np.append(ordered, ordered[0] + 2 * math.pi))
            if not np.allclose(gaps, self.lam, atol=1e-9):
                raise ValueError("anchors must be equi-spaced around the ring")
        object.__setattr__(self, "psi", tuple(float(p) for p in self.psi))

    @property
    def lam(self) -> float:
        return 2 * math.pi / self.n_anchors

    def anchor_pose(self, anchor_id: int) -> Pose2D:
        if not 0 <= anchor_id < self.n_anchors:
            raise KeyError(f"unknown anchor id {anchor_id}")
        p = self.psi[anchor_id]
        return Pose2D(self.radius * math.cos(p), self.radius * math.sin(p), p)


@dataclass(frozen=True)
class AoaReading:
    anchor_id: int
    tag_id: int
    D: float
    phi: float
    fp_rssi: float
    rx_rssi: float
    v_trans: float = 0.0
    v_rot: float = 0.0
    t: float = 0.0
    # simulator provenance; never consulted by the estimator
    ghost: bool = False
    seq: int = -1

    def __post_init__(self):
        if self.D < 0:
            raise ValueError("AOA range must be non-negative")

    def to_record(self) -> dict:
        rec = {
            "t": float(self.t),
            "anchor_id": int(self.anchor_id),
            "tag_id": int(self.tag_id),
            "D": float(self.D),
            "phi": float(self.phi),
            "fp_rssi": float(self.fp_rssi),
            "rx_rssi": float(self.rx_rssi),
            "v_trans": float(self.v_trans),
            "v_rot": float(self.v_rot),
        }
        if self.seq >= 0:
            rec["seq"] = int(self.seq)
            rec["ghost"] = bool(self.ghost)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "AoaReading":
        return cls(
            anchor_id=int(rec["anchor_id"]),
            tag_id=int(rec["tag_id"]),
            D=float(rec["D"]),
            phi=float(rec["phi"]),
            fp_rssi=float(rec["fp_rssi"]),
            rx_rssi=float(rec["rx_rssi"]),
            v_trans=float(rec.get("v_trans", 0.0)),
            v_rot=float(rec.get("v_rot", 0.0)),
            t=float(rec["t"]),
            ghost=bool(rec.get("ghost", False)),
            seq=int(rec.get("seq", -1)),
        )


def anchor_to_robot_frame(reading: AoaReading, ring: AnchorRingConfig) -> np.ndarray:
    """Robot-frame position of the tag: ``T(psi, r) . T(phi, D) . [0 0 1]``."""
    if not 0 <= reading.anchor_id < ring.n_anchors:
        raise KeyError(f"unknown anchor id {reading.anchor_id}")
    T = compose(make_transform(ring.psi[reading.anchor_id], ring.radius), make_transform(reading.phi, reading.D))
    return T.matrix[:2, 2].copy()


def readings_to_robot_frame(readings, ring: AnchorRingConfig) -> np.ndarray:
    """Vectorised :func:`anchor_to_robot_frame` over many readings."""
    if not readings:
        return np.empty((0, 2))
    psi = np.array([ring.psi[r.anchor_id] for r in readings])
    phi = np.array([r.phi for r in readings])
    D = np.array([r.D for r in readings])
    x = ring.radius * np.cos(psi) + D * np.cos(psi + phi)
    y = ring.radius * np.sin(psi) + D * np.sin(psi + phi)
    return np.column_stack([x, y])


class UncoveredGeometry(ValueError):
    pass


def deadzone_radius(ring: AnchorRingConfig) -> float:
    """Radius inside which adjacent anchor cones leave gaps."""
    half = ring.fov / 2.0
    lam = ring.lam
    denom = math.tan(half) * math.cos(lam / 2) - math.sin(lam / 2)
    if not denom > 0:
        raise UncoveredGeometry("adjacent anchor cones never meet")
    return ring.radius * math.tan(half) / denom


def los_check(reading: AoaReading, threshold_db: float = 6.0) -> bool:
    """True for line of sight: total minus first-path RSSI below the threshold."""
    return (reading.rx_rssi - reading.fp_rssi) < threshold_db


def motion_gate(reading: AoaReading, min_vel_trans: float = 0.03, min_vel_rot: float = 0.01) -> bool:
    return reading.v_trans > min_vel_trans or abs(reading.v_rot) > min_vel_rot


def coverage_gate(reading: AoaReading, ring: AnchorRingConfig) -> bool:
    return abs(reading.phi) <= ring.fov / 2 and ring.det_range_min <= reading.D <= ring.det_range_max


@dataclass(frozen=True)
class GateConfig:
    los_threshold_db: float = 6.0
    min_vel_trans: float = 0.03
    min_vel_rot: float = 0.01


def gate_reading(reading: AoaReading, ring: AnchorRingConfig, gates: GateConfig) -> Optional[str]:
    """Name of the first failing gate, or ``None`` when the reading is admissible."""
    if not coverage_gate(reading, ring):
        return "coverage"
    if not los_check(reading, gates.los_threshold_db):
        return "nlos"
    if not motion_gate(reading, gates.min_vel_trans, gates.min_vel_rot):
        return "motion"
    return None


@dataclass
class TagEntry:
    acc_index: int
    point: np.ndarray
    seq: int


class TagBuffer:
    """Per-tag odometry-frame AOA points, bounded by accumulation index."""

    def __init__(self, horizon: int):
        self.horizon = horizon
        # per tag: deque of (acc_index, x, y, seq) tuples
        self._tags: dict = defaultdict(deque)

    def add(self, tag_id: int, acc_index: int, point, seq: int = -1):
        self._tags[tag_id].append((acc_index, float(point[0]), float(point[1]), int(seq)))

    def evict(self, current_index: int):
        oldest = current_index - self.horizon
        for q in self._tags.values():
            while q and q[0][0] <= oldest:
                q.popleft()

    def tag_ids(self) -> list:
        return sorted(k for k, q in self._tags.items() if q)

    def entries(self, tag_id: int) -> list:
        return [TagEntry(e[0], np.array(e[1:3]), e[3]) for e in self._tags.get(tag_id, ())]

    def _table(self, tag_id: int) -> np.ndarray:
        q = self._tags.get(tag_id)
        if not q:
            return np.empty((0, 4))
        return np.fromiter(chain.from_iterable(q), dtype=float, count=4 * len(q)).reshape(-1, 4)

    def points(self, tag_id: int) -> np.ndarray:
        return self._table(tag_id)[:, 1:3].copy()

    def seqs(self, tag_id: int) -> np.ndarray:
        return self._table(tag_id)[:, 3].astype(int)


@dataclass(frozen=True)
class TagObservation:
    centroid: np.ndarray
    members: np.ndarray
    mahalanobis2: Optional[float] = None


def filter_tag_observations(
    points,
    eps: float = 0.05,
    min_samples: int = 10,
    estimate: Optional[tuple] = None,
    alpha_t: float = 4.0,
) -> Optional[TagObservation]:
    """Single-cluster centroid of buffered tag points, or ``None``.

    More than one cluster means ghosts have condensed, and the whole set is
    discarded. ``estimate`` is ``(mean, cov)`` of the current tag estimate in
    the same frame as ``points``; centroids farther than ``alpha_t`` in squared
    Mahalanobis distance are rejected.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < min_samples:
        return None
    res = dbscan(pts, eps, min_samples)
    if len(res.clusters) != 1:
        return None
    members = res.clusters[0]
    c = pts[members].mean(axis=0)
    m2 = None
    if estimate is not None:
        mean, cov = estimate
        d = c - np.asarray(mean, dtype=float)
        m2 = float(d @ np.linalg.solve(np.asarray(cov, dtype=float), d))
        if m2 > alpha_t:
            return None
    return TagObservation(c, members, m2)


@dataclass(frozen=True)
class TagInit:
    position: np.ndarray  # odometry frame
    range_mean: float
    range_std: float
    bearing_mean: float
    bearing_std: float
    n_used: int


class TagInitError(ValueError):
    pass


def initialize_tag(samples, robot_pose: Pose2D, min_count: int = 30, min_survivors: int = 5) -> TagInit:
    """Initialise a tag from (range, bearing) samples taken while halted.

    Samples outside mean +- std in range (arithmetic) or bearing (circular) are
    dropped; the survivors' mean is placed relative to ``robot_pose``.
    """
    s = np.asarray(samples, dtype=float).reshape(-1, 2)
    if len(s) < min_count:
        raise TagInitError(f"{len(s)} samples, need at least {min_count}")
    rng, brg = s[:, 0], s[:, 1]
    mu_r, sd_r = float(rng.mean()), float(rng.std())
    circ = circular_mean_std(brg)
    mu_b, sd_b = circ.mean_theta, circ.std_theta
    # small slack so that samples sitting exactly on mu +- sigma survive rounding
    keep = (np.abs(rng - mu_r) <= sd_r + 1e-12) & (np.abs(wrap_angles(brg - mu_b)) <= sd_b + 1e-12)
    if keep.sum() < min_survivors:
        raise TagInitError(f"only {int(keep.sum())} samples survive the spread filter")
    r_f = float(rng[keep].mean())
    b_stats = circular_mean_std(brg[keep])
    local = np.array([r_f * math.cos(b_stats.mean_theta), r_f * math.sin(b_stats.mean_theta)])
    pos = robot_pose.transform_points(local)[0]
    return TagInit(pos, r_f, float(rng[keep].std()), b_stats.mean_theta, b_stats.std_theta, int(keep.sum()))


@dataclass
class DeploymentMonitor:
    dep_dist: float = 1.0
    distance_since_last_feature: float = 0.0

    def update(self, displacement: float, feature_seen: bool) -> bool:
        return deployment_monitor_update(self, displacement, feature_seen)


def deployment_monitor_update(monitor: DeploymentMonitor, displacement: float, feature_seen: bool) -> bool:
    if displacement < 0:
        raise ValueError("displacement must be non-negative")
    if feature_seen:
        monitor.distance_since_last_feature = 0.0
        return False
    monitor.distance_since_last_feature += displacement
    if monitor.distance_since_last_feature > monitor.dep_dist:
        monitor.distance_since_last_feature = 0.0
        return True
    return False
