"""
Trajectory alignment, absolute trajectory error, landmark error and the
ablation harness.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .ekf import POINT, TAG, SlamState
from .geometry import Pose2D, Transform2D

ABLATION_MODES = ("full", "radar_only", "aoa_only", "odom_only")
SPURIOUS_DISTANCE = 1.0


class Unalignable(ValueError):
    pass


@dataclass
class TrajectoryPair:
    """Estimated and true positions sharing one time index."""

    t: np.ndarray
    est: np.ndarray  # (N, 2) or (N, 3)
    gt: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.est = np.asarray(self.est, dtype=float)
        self.gt = np.asarray(self.gt, dtype=float)
        if self.est.ndim != 2 or self.gt.ndim != 2:
            raise ValueError("poses must be 2-D arrays")
        if len(self.est) != len(self.gt) or len(self.t) != len(self.est):
            raise ValueError("estimated and true trajectories must have equal length")
        if len(self.est) < 2:
            raise ValueError("need at least two poses")

    @property
    def est_xy(self) -> np.ndarray:
        return self.est[:, :2]

    @property
    def gt_xy(self) -> np.ndarray:
        return self.gt[:, :2]


def _transform(R: np.ndarray, t: np.ndarray) -> Transform2D:
    M = np.eye(3)
    M[:2, :2] = R
    M[:2, 2] = t
    return Transform2D(M)


def align_trajectories(pair: TrajectoryPair) -> Transform2D:
    """Least-squares rigid transform taking estimated positions onto the truth."""
    P, G = pair.est_xy, pair.gt_xy
    cp, cg = P.mean(axis=0), G.mean(axis=0)
    Pc, Gc = P - cp, G - cg
    if min(float(np.abs(Pc).max()), float(np.abs(Gc).max())) < 1e-12:
        raise Unalignable("all positions coincide; rotation is undetermined")
    C = Pc.T @ Gc  # cross-covariance, est -> gt
    # optimal 2-D rotation angle maximises trace(R C^T)
    ang = math.atan2(C[0, 1] - C[1, 0], C[0, 0] + C[1, 1])
    c, s = math.cos(ang), math.sin(ang)
    R = np.array([[c, -s], [s, c]])
    return _transform(R, cg - R @ cp)


def apply_transform(transform: Transform2D, xy) -> np.ndarray:
    return transform.apply(np.asarray(xy, dtype=float).reshape(-1, 2))


def position_residuals(pair: TrajectoryPair, transform: Optional[Transform2D] = None) -> np.ndarray:
    est = pair.est_xy if transform is None else apply_transform(transform, pair.est_xy)
    return np.hypot(*(est - pair.gt_xy).T)


def rms_ate(pair: TrajectoryPair, transform: Optional[Transform2D] = None) -> float:
    r = position_residuals(pair, transform)
    return float(math.sqrt(np.mean(r**2)))


@dataclass(frozen=True)
class LandmarkError:
    landmark_id: int
    kind: str
    ext_id: Optional[int]
    error: float
    matched: Optional[str]  # "tag:<id>" or "feature:<index>"
    spurious: bool


def landmark_error(state: SlamState, world, transform: Optional[Transform2D] = None,
                   spurious_distance: float = SPURIOUS_DISTANCE) -> list:
    """Distance of every mapped landmark to its true counterpart.

    Tags are compared with the true tag of the same id, point landmarks with the
    nearest true feature. Anything farther than ``spurious_distance`` is
    flagged.
    """
    out = []
    feats = np.asarray(world.features, dtype=float).reshape(-1, 2)
    for rec in state.landmarks:
        p = state.landmark_position(rec)
        if transform is not None:
            p = apply_transform(transform, p)[0]
        if rec.kind == TAG and rec.ext_id in world.tags:
            err = float(np.hypot(*(p - world.tags[rec.ext_id])))
            match = f"tag:{rec.ext_id}"
        elif len(feats):
            d = np.hypot(*(feats - p).T)
            j = int(np.argmin(d))
            err, match = float(d[j]), f"feature:{j}"
        else:
            err, match = math.inf, None
        out.append(LandmarkError(rec.id, rec.kind, rec.ext_id, err, match, err > spurious_distance))
    return out


@dataclass
class MetricsReport:
    rms_ate: float
    landmark_errors: list
    transform: list  # 3x3 nested list
    mode: str
    seed: int
    config_hash: str
    scenario: str = ""
    final_pose_error: float = math.nan
    n_poses: int = 0
    n_landmarks: int = 0
    n_deployments: int = 0
    runtime: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.rms_ate >= 0:
            raise ValueError("rms_ate must be non-negative")

    def tag_error(self, tag_id: int) -> Optional[float]:
        for e in self.landmark_errors:
            if e.kind == TAG and e.ext_id == tag_id:
                return e.error
        return None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["landmark_errors"] = [asdict(e) for e in self.landmark_errors]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["landmark_errors"] = [LandmarkError(**e) for e in d.get("landmark_errors", [])]
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))


def trajectory_pair(trajectory, truth: dict) -> TrajectoryPair:
    """Pair ``(pose_t, mu)`` estimates with ground truth keyed by the same time."""
    ts, est, gt = [], [], []
    for t, mu in trajectory:
        if t in truth:
            g = truth[t]
            ts.append(t)
            est.append(np.asarray(mu, dtype=float)[:3])
            gt.append(g.as_array() if isinstance(g, Pose2D) else np.asarray(g, dtype=float))
    return TrajectoryPair(np.array(ts), np.array(est).reshape(-1, 3), np.array(gt).reshape(-1, 3))


def residuals_csv(pair: TrajectoryPair, transform: Optional[Transform2D] = None) -> str:
    est = pair.est_xy if transform is None else apply_transform(transform, pair.est_xy)
    err = np.hypot(*(est - pair.gt_xy).T)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "gt_x", "gt_y", "est_x", "est_y", "err"])
    for k in range(len(err)):
        w.writerow([repr(float(pair.t[k])), repr(float(pair.gt[k, 0])), repr(float(pair.gt[k, 1])),
                    repr(float(est[k, 0])), repr(float(est[k, 1])), repr(float(err[k]))])
    return buf.getvalue()


def read_residuals_csv(text: str) -> dict:
    rows = list(csv.DictReader(io.StringIO(text)))
    return {k: np.array([float(r[k]) for r in rows]) for k in ("t", "gt_x", "gt_y", "est_x", "est_y", "err")}


def evaluate(trajectory, truth: dict, state: SlamState, world, mode: str = "full", seed: int = 0,
             config_hash: str = "", scenario: str = "", n_deployments: int = 0, runtime: float = 0.0):
    """Metrics of one finished run; returns ``(report, pair, transform)``."""
    pair = trajectory_pair(trajectory, truth)
    T = align_trajectories(pair)
    lm = landmark_error(state, world, T)
    # the map frame is anchored at the known start pose, so the final error is unaligned
    final = float(np.hypot(*(pair.est_xy[-1] - pair.gt_xy[-1])))
    report = MetricsReport(
        rms_ate=rms_ate(pair, T),
        landmark_errors=lm,
        transform=T.matrix.tolist(),
        mode=mode,
        seed=int(seed),
        config_hash=config_hash,
        scenario=scenario,
        final_pose_error=final,
        n_poses=len(pair.t),
        n_landmarks=len(state.landmarks),
        n_deployments=int(n_deployments),
        runtime=float(runtime),
    )
    return report, pair, T


def evaluate_run(result):
    """Metrics of a :class:`~uwbslam.runner.RunResult`."""
    d = result.driver
    report, pair, T = evaluate(
        d.trajectory,
        result.truth,
        d.state,
        result.world,
        mode=result.mode,
        seed=result.seed,
        config_hash=result.config_hash,
        scenario=result.scenario,
        n_deployments=len(d.deployments),
        runtime=result.runtime,
    )
    report.extra = {
        "init_failures": [list(f) for f in d.init_failures],
        "tag_observations": d.tag_obs_count,
        "violations": len(d.violations),
        "ticks": result.ticks,
    }
    return report, pair, T


def run_ablation(scenario, mode: str = "full", seed: Optional[int] = None, schedule=None, audit: bool = False):
    """Run one ablation mode; non-full modes replay the full run's deployment schedule.

    Returns ``(report, result)``.
    """
    from .runner import run_scenario

    if mode not in ABLATION_MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {', '.join(ABLATION_MODES)}")
    if mode != "full" and schedule is None:
        schedule = run_scenario(scenario, seed, "full").schedule
    result = run_scenario(scenario, seed, mode, schedule=schedule if mode != "full" else None, audit=audit)
    report, _, _ = evaluate_run(result)
    return report, result


def run_ablations(scenario, modes=ABLATION_MODES, seed: Optional[int] = None) -> list:
    """Reports for each requested mode, in order, sharing one physical run."""
    from .runner import run_scenario

    for m in modes:
        if m not in ABLATION_MODES:
            raise ValueError(f"unknown mode {m!r}")
    full = run_scenario(scenario, seed, "full")
    reports = []
    for m in modes:
        if m == "full":
            rep, _, _ = evaluate_run(full)
        else:
            rep, _ = run_ablation(scenario, m, seed, schedule=full.schedule)
        reports.append(rep)
    return reports
