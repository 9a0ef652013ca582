"""
Moving-window point-feature extraction.

Scan points are stored in the odometry frame together with the pose at which
they were taken. The window holds ``m1 + n + m2`` entries; clusters are searched
in the central ``n`` entries and isolated against every point in the window.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import Pose2D, wrap_angle


@dataclass(frozen=True)
class WindowConfig:
    n: int = 50
    m1: int = 150
    m2: int = 50
    w: int = 2
    min_disp_trans: float = 0.005
    min_disp_rot: float = 2.5e-3
    r1: float = 0.30
    r2: float = 0.15
    dbscan_eps: float = 0.20
    dbscan_min_samples: int = 10

    def __post_init__(self):
        if not 0 < self.w < self.n:
            raise ValueError("need 0 < w < n")
        if self.m1 < 0 or self.m2 < 0:
            raise ValueError("window margins must be non-negative")
        if not 0 < self.r2 < self.r1:
            raise ValueError("need 0 < r2 < r1")
        if not self.dbscan_eps > 0:
            raise ValueError("dbscan eps must be positive")
        if self.dbscan_min_samples < 1:
            raise ValueError("dbscan min_samples must be at least 1")

    @property
    def capacity(self) -> int:
        return self.m1 + self.n + self.m2


# absorbs rounding in pose differences that are nominally equal to the threshold
_DISP_TOL = 1e-12


def should_accumulate(prev_pose: Pose2D, new_pose: Pose2D, cfg: WindowConfig) -> bool:
    trans = prev_pose.distance_to(new_pose)
    rot = abs(wrap_angle(new_pose.theta - prev_pose.theta))
    return trans >= cfg.min_disp_trans - _DISP_TOL or rot >= cfg.min_disp_rot - _DISP_TOL


@dataclass
class ScanEntry:
    t: float
    pose: Pose2D
    points: np.ndarray  # (k, 2) odometry frame


class ScanBuffer:
    """Fixed-capacity FIFO of pose-stamped scans."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._entries: deque = deque()

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __getitem__(self, idx):
        return self._entries[idx]

    @property
    def entries(self) -> list:
        return list(self._entries)

    def push(self, pose: Pose2D, points, t: float = 0.0) -> Optional[ScanEntry]:
        """Append a scan; returns the evicted entry when the buffer overflows."""
        if self._entries and t < self._entries[-1].t:
            raise ValueError("scans must be pushed in time order")
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        self._entries.append(ScanEntry(t, pose, pts))
        if len(self._entries) > self.capacity:
            return self._entries.popleft()
        return None

    def to_records(self) -> list:
        return [
            {"t": e.t, "pose": [e.pose.x, e.pose.y, e.pose.theta], "points": e.points.tolist()}
            for e in self._entries
        ]


@dataclass
class DbscanResult:
    labels: np.ndarray  # -1 for noise
    clusters: list  # index arrays, in discovery order
    noise: np.ndarray


# above this size the O(n^2) distance matrix gives way to a kd-tree
_DENSE_LIMIT = 300


def dbscan(points, eps: float, min_samples: int) -> DbscanResult:
    """Density-based clustering with Euclidean distance.

    A point is core when at least ``min_samples`` points (itself included) lie
    within ``eps``. Clusters are numbered in order of their lowest-index core
    point, and a border point reachable from several clusters joins the one
    discovered first.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if min_samples < 1:
        raise ValueError("min_samples must be at least 1")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        return DbscanResult(np.full(0, -1, dtype=int), [], np.empty(0, dtype=int))
    if n <= _DENSE_LIMIT:
        labels, n_clusters = _dbscan_dense(pts, eps, min_samples)
    else:
        labels, n_clusters = _dbscan_tree(pts, eps, min_samples)
    clusters = [np.flatnonzero(labels == r) for r in range(n_clusters)]
    return DbscanResult(labels, clusters, np.flatnonzero(labels == -1))


def _dbscan_dense(pts: np.ndarray, eps: float, min_samples: int) -> tuple:
    n = len(pts)
    x, y = pts[:, 0], pts[:, 1]
    dx = x[:, None] - x[None, :]
    dy = y[:, None] - y[None, :]
    adj = dx * dx + dy * dy <= eps * eps
    core = np.count_nonzero(adj, axis=1) >= min_samples
    labels = np.full(n, -1, dtype=int)
    core_idx = np.flatnonzero(core)
    if core_idx.size == 0:
        return labels, 0
    # rows: every point, columns: core points only
    core_adj = adj[:, core_idx]
    cc = core_adj[core_idx]  # core-to-core adjacency in core index space
    core_labels = np.full(core_idx.size, -1, dtype=int)
    rank = 0
    for seed in range(core_idx.size):
        if core_labels[seed] != -1:
            continue
        members = cc[seed].copy()
        frontier = members
        while True:
            grown = cc[frontier].any(axis=0) & ~members
            if not grown.any():
                break
            members |= grown
            frontier = grown
        core_labels[members] = rank
        rank += 1
    labels[core_idx] = core_labels
    border = ~core & core_adj.any(axis=1)
    if border.any():
        cand = np.where(core_adj[border], core_labels[None, :], rank)
        labels[border] = cand.min(axis=1)
    return labels, rank


def _dbscan_tree(pts: np.ndarray, eps: float, min_samples: int) -> tuple:
    n = len(pts)
    labels = np.full(n, -1, dtype=int)
    pairs = cKDTree(pts).query_pairs(eps, output_type="ndarray")
    i, j = (pairs[:, 0], pairs[:, 1]) if len(pairs) else (np.empty(0, int), np.empty(0, int))
    degree = np.bincount(i, minlength=n) + np.bincount(j, minlength=n) + 1
    core = degree >= min_samples
    core_idx = np.flatnonzero(core)
    if core_idx.size == 0:
        return labels, 0

    both = core[i] & core[j]
    graph = csr_matrix((np.ones(int(both.sum()), dtype=np.int8), (i[both], j[both])), shape=(n, n))
    n_comp, comp = connected_components(graph, directed=False)

    # rank components by their lowest core index (= discovery order)
    first = np.full(n_comp, n)
    np.minimum.at(first, comp[core_idx], core_idx)
    used = np.flatnonzero(first < n)
    order = used[np.argsort(first[used], kind="stable")]
    rank_of = np.full(n_comp, -1)
    rank_of[order] = np.arange(order.size)
    labels[core_idx] = rank_of[comp[core_idx]]

    # border points: smallest cluster rank among neighbouring cores
    src = np.concatenate([i, j])
    dst = np.concatenate([j, i])
    sel = ~core[src] & core[dst]
    if sel.any():
        big = np.iinfo(int).max
        best = np.full(n, big)
        np.minimum.at(best, src[sel], labels[dst[sel]])
        border = best < big
        labels[border] = best[border]
    return labels, int(order.size)


def prominence_test(center, window_points, r1: float, r2: float) -> bool:
    """True when the annulus ``r2 < d <= r1`` around ``center`` holds no point."""
    if not r2 < r1:
        raise ValueError("need r2 < r1")
    pts = np.asarray(window_points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return True
    d = np.hypot(pts[:, 0] - center[0], pts[:, 1] - center[1])
    return int(np.count_nonzero(d <= r1)) == int(np.count_nonzero(d <= r2))


@dataclass(frozen=True)
class PointFeatureObservation:
    range: float
    bearing: float
    reference_pose: Pose2D
    position: tuple  # odometry-frame cluster mean


@dataclass
class FeatureExtraction:
    x0: Pose2D
    xt: Pose2D
    t0: float
    tt: float
    observations: list
    candidates: int = 0


class WindowNotReady(RuntimeError):
    pass


def _merge_close(centers: list, radius: float) -> list:
    centers = [np.asarray(c, dtype=float) for c in centers]
    merged = True
    while merged and len(centers) > 1:
        merged = False
        for a in range(len(centers)):
            for b in range(a + 1, len(centers)):
                if np.hypot(*(centers[a] - centers[b])) < radius:
                    centers[a] = 0.5 * (centers[a] + centers[b])
                    del centers[b]
                    merged = True
                    break
            if merged:
                break
    return centers


def window_layout(length: int, cfg: WindowConfig) -> tuple:
    """Slice bounds (start, stop) of the central region for a buffer of ``length``."""
    stop = length - cfg.m2
    return stop - cfg.n, stop


def extract_features(buffer: ScanBuffer, cfg: WindowConfig) -> FeatureExtraction:
    """Prominent point features of the central window, as seen from ``x_t'``."""
    L = len(buffer)
    if L < cfg.n + cfg.m2:
        raise WindowNotReady(f"window holds {L} scans, needs {cfg.n + cfg.m2}")
    start, stop = window_layout(L, cfg)
    entries = buffer.entries
    central = entries[start:stop]
    x0, xt = central[0].pose, central[cfg.w].pose
    t0, tt = central[0].t, central[cfg.w].t

    central_pts = [e.points for e in central if len(e.points)]
    if not central_pts:
        return FeatureExtraction(x0, xt, t0, tt, [])
    cpts = np.vstack(central_pts)
    all_pts = np.vstack([e.points for e in entries if len(e.points)])

    res = dbscan(cpts, cfg.dbscan_eps, cfg.dbscan_min_samples)
    centers = []
    for members in res.clusters:
        if len(members) < cfg.dbscan_min_samples:
            continue
        c = cpts[members].mean(axis=0)
        if prominence_test(c, all_pts, cfg.r1, cfg.r2):
            centers.append(c)
    if len(centers) > 1:
        merged = _merge_close(centers, cfg.r2)
        if len(merged) != len(centers):
            centers = [c for c in merged if prominence_test(c, all_pts, cfg.r1, cfg.r2)]

    obs = []
    for c in centers:
        local = xt.inverse_transform_points(c)[0]
        rng = float(np.hypot(*local))
        if rng <= 0:
            continue
        obs.append(
            PointFeatureObservation(rng, wrap_angle(math.atan2(local[1], local[0])), xt, (float(c[0]), float(c[1])))
        )
    return FeatureExtraction(x0, xt, t0, tt, obs, candidates=len(res.clusters))
