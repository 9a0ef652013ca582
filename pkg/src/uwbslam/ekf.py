"""
EKF-SLAM over a planar robot pose and 2-D point landmarks.

Tags are updated with known correspondence; radar point features go through
nearest-neighbour association on the squared Mahalanobis distance and are
added as new landmarks when nothing is close enough.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import MotionIncrement, wrap_angle

TAG = "tag"
POINT = "point"


@dataclass(frozen=True)
class LandmarkRecord:
    id: int
    kind: str
    index: int  # position of the x coordinate in the mean vector
    ext_id: Optional[int] = None


@dataclass
class SlamState:
    mu: np.ndarray
    sigma: np.ndarray
    landmarks: list = field(default_factory=list)

    @classmethod
    def initial(cls, pose=(0.0, 0.0, 0.0), cov=None) -> "SlamState":
        mu = np.asarray(pose, dtype=float).copy()
        sigma = np.zeros((3, 3)) if cov is None else np.asarray(cov, dtype=float).copy()
        return cls(mu, sigma, [])

    def copy(self) -> "SlamState":
        return SlamState(self.mu.copy(), self.sigma.copy(), list(self.landmarks))

    @property
    def pose(self) -> np.ndarray:
        return self.mu[:3].copy()

    def landmark(self, lm_id: int) -> LandmarkRecord:
        for rec in self.landmarks:
            if rec.id == lm_id:
                return rec
        raise KeyError(f"no landmark with id {lm_id}")

    def tag_record(self, tag_id: int) -> LandmarkRecord:
        for rec in self.landmarks:
            if rec.kind == TAG and rec.ext_id == tag_id:
                return rec
        raise KeyError(f"tag {tag_id} is not in the map")

    def has_tag(self, tag_id: int) -> bool:
        return any(rec.kind == TAG and rec.ext_id == tag_id for rec in self.landmarks)

    def landmark_position(self, rec: LandmarkRecord) -> np.ndarray:
        return self.mu[rec.index : rec.index + 2].copy()

    def check(self, tol: float = 1e-9):
        """Raise ``AssertionError`` when the covariance invariants break."""
        n = len(self.mu)
        assert self.sigma.shape == (n, n), "covariance shape does not match the mean"
        assert 3 + 2 * len(self.landmarks) == n, "registry does not match the mean"
        asym = float(np.max(np.abs(self.sigma - self.sigma.T))) if n else 0.0
        assert asym < tol, f"covariance asymmetry {asym:.3e}"
        eig = float(np.linalg.eigvalsh(self.sigma).min())
        assert eig >= -tol, f"covariance eigenvalue {eig:.3e}"

    def snapshot(self, t: float, pose_t: Optional[float] = None, with_sigma: bool = True) -> dict:
        rec = {"t": float(t)}
        if pose_t is not None:
            rec["pose_t"] = float(pose_t)
        rec["mu"] = [float(v) for v in self.mu]
        if with_sigma:
            rec["sigma_flat"] = [float(v) for v in self.sigma.ravel()]
        rec["landmarks"] = [
            {
                "id": lm.id,
                "kind": lm.kind,
                "ext_id": lm.ext_id,
                "x": float(self.mu[lm.index]),
                "y": float(self.mu[lm.index + 1]),
            }
            for lm in self.landmarks
        ]
        return rec

    @classmethod
    def from_snapshot(cls, rec: dict) -> "SlamState":
        mu = np.asarray(rec["mu"], dtype=float)
        n = len(mu)
        sigma = np.asarray(rec.get("sigma_flat", np.zeros(n * n)), dtype=float).reshape(n, n)
        lms = [LandmarkRecord(d["id"], d["kind"], 3 + 2 * k, d.get("ext_id")) for k, d in enumerate(rec["landmarks"])]
        return cls(mu, sigma, lms)


@dataclass(frozen=True)
class RangeBearingObs:
    range: float
    bearing: float
    kind: str = POINT
    ext_id: Optional[int] = None

    def __post_init__(self):
        if not self.range > 0:
            raise ValueError("observation range must be positive")
        object.__setattr__(self, "bearing", wrap_angle(float(self.bearing)))


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def motion_jacobian(pose, u: MotionIncrement) -> np.ndarray:
    heading = pose[2] + u.rot1
    return np.array(
        [
            [1.0, 0.0, -u.trans * math.sin(heading)],
            [0.0, 1.0, u.trans * math.cos(heading)],
            [0.0, 0.0, 1.0],
        ]
    )


def motion_model(pose, u: MotionIncrement) -> np.ndarray:
    heading = pose[2] + u.rot1
    return np.array(
        [
            pose[0] + u.trans * math.cos(heading),
            pose[1] + u.trans * math.sin(heading),
            wrap_angle(heading + u.rot2),
        ]
    )


def predict(state: SlamState, u: MotionIncrement, R) -> SlamState:
    """Propagate the robot block; ``R`` is additive noise on (x, y, theta)."""
    R = np.asarray(R, dtype=float)
    if R.ndim == 1:
        R = np.diag(R)
    G = motion_jacobian(state.mu, u)
    mu = state.mu.copy()
    mu[:3] = motion_model(state.mu, u)
    sigma = state.sigma.copy()
    sigma[:3, :3] = G @ state.sigma[:3, :3] @ G.T + R
    sigma[:3, 3:] = G @ state.sigma[:3, 3:]
    sigma[3:, :3] = sigma[:3, 3:].T
    return SlamState(mu, _symmetrize(sigma), list(state.landmarks))


class SingularObservation(ValueError):
    pass


def observation_model(pose, landmark):
    """Range and bearing of ``landmark`` from ``pose`` with Jacobians.

    Returns ``(z, H_pose, H_landmark)`` with ``H_pose`` 2x3 and ``H_landmark`` 2x2.
    """
    dx = landmark[0] - pose[0]
    dy = landmark[1] - pose[1]
    q = dx * dx + dy * dy
    if q <= 1e-24:
        raise SingularObservation("landmark coincides with the robot position")
    r = math.sqrt(q)
    z = np.array([r, wrap_angle(math.atan2(dy, dx) - pose[2])])
    H_l = np.array([[dx / r, dy / r], [-dy / q, dx / q]])
    H_p = np.hstack([-H_l, np.array([[0.0], [-1.0]])])
    return z, H_p, H_l


def inverse_observation(pose, z):
    """Landmark position from an observation plus its Jacobians w.r.t. pose and z."""
    ang = pose[2] + z[1]
    c, s = math.cos(ang), math.sin(ang)
    lm = np.array([pose[0] + z[0] * c, pose[1] + z[0] * s])
    G_p = np.array([[1.0, 0.0, -z[0] * s], [0.0, 1.0, z[0] * c]])
    G_z = np.array([[c, -z[0] * s], [s, z[0] * c]])
    return lm, G_p, G_z


def innovation(state: SlamState, rec: LandmarkRecord, z, Q):
    """Innovation vector, its covariance and the full observation Jacobian."""
    j = rec.index
    zhat, H_p, H_l = observation_model(state.mu[:3], state.mu[j : j + 2])
    n = len(state.mu)
    H = np.zeros((2, n))
    H[:, :3] = H_p
    H[:, j : j + 2] = H_l
    nu = np.asarray(z, dtype=float) - zhat
    nu[1] = wrap_angle(nu[1])
    S = H @ state.sigma @ H.T + np.asarray(Q, dtype=float)
    return nu, S, H


def _kalman_update(state: SlamState, nu, S, H, Q) -> SlamState:
    PHt = state.sigma @ H.T
    K = np.linalg.solve(S.T, PHt.T).T
    mu = state.mu + K @ nu
    mu[2] = wrap_angle(mu[2])
    IKH = np.eye(len(mu)) - K @ H
    sigma = IKH @ state.sigma @ IKH.T + K @ Q @ K.T
    return SlamState(mu, _symmetrize(sigma), list(state.landmarks))


def _as_cov(Q) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    return np.diag(Q) if Q.ndim == 1 else Q


def update_landmark(state: SlamState, rec: LandmarkRecord, obs: RangeBearingObs, Q) -> SlamState:
    Q = _as_cov(Q)
    nu, S, H = innovation(state, rec, (obs.range, obs.bearing), Q)
    return _kalman_update(state, nu, S, H, Q)


def update_known(state: SlamState, obs: RangeBearingObs, Q) -> SlamState:
    """EKF update of the tag named by ``obs.ext_id``."""
    if obs.ext_id is None:
        raise KeyError("known-correspondence update needs a tag id")
    rec = state.tag_record(obs.ext_id)
    return update_landmark(state, rec, obs, Q)


def augment_landmark(state: SlamState, obs: RangeBearingObs, kind: str, Q, ext_id: Optional[int] = None) -> SlamState:
    """Append a landmark initialised through the inverse observation model."""
    Q = _as_cov(Q)
    lm, G_p, G_z = inverse_observation(state.mu[:3], (obs.range, obs.bearing))
    n = len(state.mu)
    mu = np.concatenate([state.mu, lm])
    sigma = np.zeros((n + 2, n + 2))
    sigma[:n, :n] = state.sigma
    cross = G_p @ state.sigma[:3, :]
    sigma[n:, :n] = cross
    sigma[:n, n:] = cross.T
    sigma[n:, n:] = G_p @ state.sigma[:3, :3] @ G_p.T + G_z @ Q @ G_z.T
    next_id = max((r.id for r in state.landmarks), default=-1) + 1
    recs = list(state.landmarks) + [LandmarkRecord(next_id, kind, n, ext_id)]
    return SlamState(mu, _symmetrize(sigma), recs)


def mahalanobis_to_points(state: SlamState, z, Q) -> list:
    """Squared Mahalanobis distance of ``z`` to every point landmark, as (d2, id, record)."""
    Q = _as_cov(Q)
    recs = [r for r in state.landmarks if r.kind == POINT]
    if not recs:
        return []
    idx = np.array([r.index for r in recs])
    pose = state.mu[:3]
    L = np.column_stack([state.mu[idx], state.mu[idx + 1]])
    dx = L[:, 0] - pose[0]
    dy = L[:, 1] - pose[1]
    q = dx * dx + dy * dy
    q = np.maximum(q, 1e-24)
    r = np.sqrt(q)
    zhat_b = np.arctan2(dy, dx) - pose[2]
    m = len(recs)
    # H_l rows per landmark, H_p = [-H_l, (0, -1)]
    Hl = np.empty((m, 2, 2))
    Hl[:, 0, 0] = dx / r
    Hl[:, 0, 1] = dy / r
    Hl[:, 1, 0] = -dy / q
    Hl[:, 1, 1] = dx / q
    Hp = np.zeros((m, 2, 3))
    Hp[:, :, :2] = -Hl
    Hp[:, 1, 2] = -1.0
    P = state.sigma
    Prr = P[:3, :3]
    sel = np.stack([idx, idx + 1], axis=1)  # (m, 2)
    Prl = P[:3][:, sel].transpose(1, 0, 2)  # (m, 3, 2)
    Pll = P[sel[:, :, None], sel[:, None, :]]  # (m, 2, 2)
    S = (
        Hp @ Prr @ Hp.transpose(0, 2, 1)
        + Hp @ Prl @ Hl.transpose(0, 2, 1)
        + Hl @ Prl.transpose(0, 2, 1) @ Hp.transpose(0, 2, 1)
        + Hl @ Pll @ Hl.transpose(0, 2, 1)
        + Q
    )
    nu = np.empty((m, 2))
    nu[:, 0] = z[0] - r
    nu[:, 1] = np.pi - np.mod(np.pi - (z[1] - zhat_b), 2 * np.pi)
    d2 = np.einsum("mi,mi->m", nu, np.linalg.solve(S, nu[:, :, None])[:, :, 0])
    return [(float(d2[k]), recs[k].id, recs[k]) for k in range(m)]


@dataclass(frozen=True)
class Association:
    obs_index: int
    landmark_id: int
    mahalanobis2: Optional[float]
    new: bool


def associate_and_update_unknown(state: SlamState, observations, Q, alpha: float = 1.0):
    """Nearest-neighbour association of point observations, processed in order.

    Returns ``(state, report)`` where ``report`` lists one :class:`Association`
    per observation.
    """
    report = []
    for k, obs in enumerate(observations):
        z = (obs.range, obs.bearing)
        cands = mahalanobis_to_points(state, z, Q)
        best = min(cands, key=lambda c: (c[0], c[1])) if cands else None
        if best is not None and best[0] <= alpha:
            state = update_landmark(state, best[2], obs, Q)
            report.append(Association(k, best[1], best[0], False))
        else:
            state = augment_landmark(state, obs, POINT, Q)
            report.append(Association(k, state.landmarks[-1].id, None if best is None else best[0], True))
    return state, report
