"""
Sequential SLAM driver.

The driver consumes time-ordered odometry, radar frames and AOA readings and
runs the displacement-gated accumulation loop:

* AOA readings pass the motion/LOS/coverage gates on every tick and go into a
  per-tag buffer in the odometry frame;
* radar frames are turned into scan points only when the odometry moved by
  ``min_disp``;
* once the window holds ``n + m2`` scans, every accumulation runs feature
  extraction, tag filtering, EKF prediction, the radar update and then the tag
  update.

The EKF robot state always stands for the odometry pose ``x_t'`` of the last
processed window; the prediction carries it from that pose to the new one.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import aoa as aoa_mod
from . import ekf
from .aoa import AnchorRingConfig, AoaReading, DeploymentMonitor, GateConfig, TagBuffer
from .features import ScanBuffer, WindowConfig, extract_features, should_accumulate
from .geometry import Pose2D, odometry_motion_model, wrap_angle
from .radar import RadarPipelineConfig, default_radar_sensors, default_sensor_pairs, scan_points

MODES = ("full", "radar_only", "aoa_only", "odom_only")


@dataclass(frozen=True)
class DriverConfig:
    """Every tunable of the estimator."""

    n: int = 50
    m1: int = 150
    m2: int = 50
    w: int = 2
    min_disp: tuple = (0.005, 2.5e-3)
    N_A: int = 4
    r: float = 0.10
    psi_deg: tuple = (0.0, 90.0, 180.0, -90.0)
    fov_deg: float = 150.0
    det_range: tuple = (1.5, 10.0)
    min_vel: tuple = (0.03, 0.01)
    dep_dist: float = 1.0
    eps_t: float = 0.05
    n_t: int = 10
    r1: float = 0.30
    r2: float = 0.15
    eps_r: float = 0.20
    n_r: int = 10
    R: tuple = (1e-6, 1e-6, 2.5e-5)
    Q_t: tuple = (0.09, 1.0)
    Q_r: tuple = (0.04, 0.5)
    alpha_t: float = 4.0
    alpha_r: float = 1.0
    los_threshold_db: float = 6.0
    tag_horizon: int = 50  # accumulations a tag reading stays buffered
    init_samples: int = 30
    init_min_survivors: int = 5
    init_var_floor: float = 1e-4
    init_timeout: float = 30.0
    deploy_at_start: bool = True
    sg_window: int = 11
    sg_polyorder: int = 3
    peak_threshold_factor: float = 3.0
    peak_threshold_floor: float = 0.1
    peak_min_separation: int = 10
    subbin: bool = True
    radar_baseline: float = 0.2
    radar_side_offset: float = 0.17
    radar_fov_deg: float = 60.0
    radar_min_range: float = 0.3
    radar_max_range: float = 4.0

    def __post_init__(self):
        for name in ("min_disp", "psi_deg", "det_range", "min_vel", "R", "Q_t", "Q_r"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if len(self.R) != 3 or len(self.Q_t) != 2 or len(self.Q_r) != 2:
            raise ValueError("R has three variances, Q_t and Q_r two each")
        if any(v < 0 for v in self.R) or any(v <= 0 for v in self.Q_t + self.Q_r):
            raise ValueError("noise variances must be non-negative (Q strictly positive)")
        if self.tag_horizon < 1:
            raise ValueError("tag_horizon must be at least one accumulation")
        if self.init_samples < 1 or self.init_min_survivors < 1:
            raise ValueError("tag initialisation counts must be positive")
        # component configs validate the cross-field constraints (w < n, r2 < r1, ...)
        self.window
        self.ring
        self.radar_pipeline
        self.radar_sensors

    @property
    def window(self) -> WindowConfig:
        return WindowConfig(
            n=self.n,
            m1=self.m1,
            m2=self.m2,
            w=self.w,
            min_disp_trans=self.min_disp[0],
            min_disp_rot=self.min_disp[1],
            r1=self.r1,
            r2=self.r2,
            dbscan_eps=self.eps_r,
            dbscan_min_samples=self.n_r,
        )

    @property
    def ring(self) -> AnchorRingConfig:
        return AnchorRingConfig(
            n_anchors=self.N_A,
            radius=self.r,
            psi=tuple(math.radians(p) for p in self.psi_deg),
            fov=math.radians(self.fov_deg),
            det_range_min=self.det_range[0],
            det_range_max=self.det_range[1],
        )

    @property
    def gates(self) -> GateConfig:
        return GateConfig(self.los_threshold_db, self.min_vel[0], self.min_vel[1])

    @property
    def radar_pipeline(self) -> RadarPipelineConfig:
        return RadarPipelineConfig(
            self.sg_window,
            self.sg_polyorder,
            self.peak_threshold_factor,
            self.peak_threshold_floor,
            self.peak_min_separation,
            self.subbin,
        )

    @property
    def radar_sensors(self) -> list:
        return default_radar_sensors(
            self.radar_baseline,
            self.radar_side_offset,
            math.radians(self.radar_fov_deg),
            self.radar_min_range,
            self.radar_max_range,
        )

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "DriverConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown driver parameter(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class OutOfOrder(ValueError):
    pass


@dataclass
class TickOutput:
    deploy_request: bool = False
    resume: bool = False
    snapshot: Optional[dict] = None


@dataclass
class _TagInitJob:
    tag_id: int
    t_start: float
    samples: list = field(default_factory=list)


class Driver:
    """Single-owner pipeline state; feed it with :meth:`tick` in time order."""

    def __init__(self, config: DriverConfig = DriverConfig(), mode: str = "full", audit: bool = False, log=None):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
        self.cfg = config
        self.mode = mode
        self.use_radar = mode in ("full", "radar_only")
        self.use_tags = mode in ("full", "aoa_only")
        self.audit = audit
        self.log = log

        self._wcfg = config.window
        self._ring = config.ring
        self._gates = config.gates
        self._rcfg = config.radar_pipeline
        self._pairs = default_sensor_pairs(config.radar_sensors)
        self._R = np.diag(config.R)
        self._Q_t = np.diag(config.Q_t)
        self._Q_r = np.diag(config.Q_r)

        self.state = ekf.SlamState.initial()
        self.state_odom_pose = Pose2D()
        self.state_t = 0.0
        self.scans = ScanBuffer(self._wcfg.capacity)
        self.tag_buffer = TagBuffer(config.tag_horizon)
        self.monitor = DeploymentMonitor(config.dep_dist)

        self.i = 1  # accumulation counter, first SLAM step once i > n + m2
        self.s = 1  # SLAM step counter
        self.t_last: Optional[float] = None
        self.odom_last: Optional[Pose2D] = None
        self.prev_pose: Optional[Pose2D] = None
        self.velocity = (0.0, 0.0)
        self.next_tag_id = 0
        self._init_job: Optional[_TagInitJob] = None
        self._started = False

        # instrumentation
        self.trajectory: list = []  # (pose_t, mu[:3])
        self.odom_at_steps: list = []
        self.order_log: list = []
        self.accepted_seqs: set = set()
        self.buffered_readings: list = []
        self.rejections: dict = {"coverage": 0, "nlos": 0, "motion": 0}
        self.associations: list = []
        self.feature_counts: list = []
        self.tag_obs_count = 0
        self.deployments: list = []
        self.init_failures: list = []
        self.violations: list = []

    # ------------------------------------------------------------------ helpers
    def _record(self, rec: dict):
        if self.log is not None:
            self.log.append(rec)

    def _audit(self, label: str, before: Optional[ekf.SlamState] = None):
        if not self.audit:
            return
        try:
            self.state.check()
        except AssertionError as exc:
            self.violations.append((self.s, label, str(exc)))
        if before is not None:
            n = len(before.mu)
            tr_before = float(np.trace(before.sigma[:n, :n]))
            tr_after = float(np.trace(self.state.sigma[:n, :n]))
            if tr_after > tr_before + 1e-9 * max(1.0, tr_before):
                self.violations.append((self.s, label, f"trace grew {tr_before:.6e} -> {tr_after:.6e}"))

    def _set_state(self, new: ekf.SlamState, label: str, check_trace: bool = False):
        before = self.state if check_trace else None
        self.state = new
        self._audit(label, before)

    @property
    def initializing(self) -> Optional[int]:
        return None if self._init_job is None else self._init_job.tag_id

    # --------------------------------------------------------------- deployment
    def begin_deployment(self, tag_id: int, t: float, position=None):
        """Start a halted tag initialisation for ``tag_id``."""
        self.next_tag_id = max(self.next_tag_id, tag_id + 1)
        self.deployments.append((t, tag_id))
        rec = {"type": "deploy", "t": float(t), "tag_id": int(tag_id)}
        if position is not None:
            rec["position"] = [float(position[0]), float(position[1])]
        self._record(rec)
        self.monitor.distance_since_last_feature = 0.0
        if self.use_tags:
            self._init_job = _TagInitJob(tag_id, t)

    def _collect_init_samples(self, t: float, readings) -> bool:
        """Feed halted readings to the pending initialisation; True when it is finished."""
        job = self._init_job
        moving = self.velocity[0] > self.cfg.min_vel[0] or self.velocity[1] > self.cfg.min_vel[1]
        if not moving:
            good = [
                r
                for r in readings
                if r.tag_id == job.tag_id
                and aoa_mod.coverage_gate(r, self._ring)
                and aoa_mod.los_check(r, self.cfg.los_threshold_db)
            ]
            for p in aoa_mod.readings_to_robot_frame(good, self._ring):
                job.samples.append((math.hypot(p[0], p[1]), math.atan2(p[1], p[0])))
        if len(job.samples) >= self.cfg.init_samples:
            try:
                init = aoa_mod.initialize_tag(
                    job.samples, self.odom_last, self.cfg.init_samples, self.cfg.init_min_survivors
                )
            except aoa_mod.TagInitError as exc:
                self.init_failures.append((job.tag_id, str(exc)))
            else:
                self._augment_tag(job.tag_id, init)
            self._init_job = None
            return True
        if t - job.t_start > self.cfg.init_timeout:
            self.init_failures.append((job.tag_id, "timeout"))
            self._init_job = None
            return True
        return False

    def _augment_tag(self, tag_id: int, init: aoa_mod.TagInit):
        # tag position relative to the pose the EKF state stands for
        local = self.state_odom_pose.inverse_transform_points(init.position)[0]
        rng = math.hypot(local[0], local[1])
        brg = math.atan2(local[1], local[0])
        # spread of the halted samples, rotated into the state frame
        c, s = math.cos(init.bearing_mean), math.sin(init.bearing_mean)
        J = np.array([[c, -init.range_mean * s], [s, init.range_mean * c]])
        C = J @ np.diag([init.range_std**2, init.bearing_std**2]) @ J.T
        dth = self.odom_last.theta - self.state_odom_pose.theta
        Rot = np.array([[math.cos(dth), -math.sin(dth)], [math.sin(dth), math.cos(dth)]])
        C = Rot @ C @ Rot.T + self.cfg.init_var_floor * np.eye(2)
        cb, sb = math.cos(brg), math.sin(brg)
        Jz = np.array([[cb, -rng * sb], [sb, rng * cb]])
        Jinv = np.linalg.inv(Jz)
        Q = Jinv @ C @ Jinv.T
        Q = 0.5 * (Q + Q.T)
        obs = ekf.RangeBearingObs(rng, brg, ekf.TAG, tag_id)
        self._set_state(ekf.augment_landmark(self.state, obs, ekf.TAG, Q, ext_id=tag_id), "augment_tag")
        self._record({"type": "feature", "t": float(self.t_last), "tag_init": int(tag_id),
                      "position": [float(init.position[0]), float(init.position[1])], "n_used": init.n_used})

    # ------------------------------------------------------------------- inputs
    def _gate_readings(self, readings):
        if not readings:
            return
        v_t, v_r = self.velocity
        admitted = []
        for r in readings:
            gated = replace(r, v_trans=v_t, v_rot=v_r)
            why = aoa_mod.gate_reading(gated, self._ring, self._gates)
            if why is not None:
                self.rejections[why] += 1
                continue
            admitted.append(gated)
        if not admitted:
            return
        pts_robot = aoa_mod.readings_to_robot_frame(admitted, self._ring)
        pts_odom = self.odom_last.transform_points(pts_robot)
        for r, p in zip(admitted, pts_odom):
            self.tag_buffer.add(r.tag_id, self.i - 1, p, r.seq)
            if self.audit:
                self.buffered_readings.append(r)

    def tick(self, t: float, odom: Pose2D, frames: Optional[dict] = None, readings=()) -> TickOutput:
        """Process one time step of sensor data.

        ``frames`` maps radar sensor id to :class:`RadarFrame`; ``readings`` is a
        sequence of :class:`AoaReading` captured during this step.
        """
        if self.t_last is not None and t < self.t_last:
            raise OutOfOrder(f"tick at t={t} precedes t={self.t_last}")
        out = TickOutput()

        if self.odom_last is not None and t > self.t_last:
            dt = t - self.t_last
            dth = abs(wrap_angle(odom.theta - self.odom_last.theta))
            self.velocity = (self.odom_last.distance_to(odom) / dt, dth / dt)
        elif self.odom_last is None:
            self.velocity = (0.0, 0.0)
        self.t_last = t
        self.odom_last = odom

        if not self._started:
            self._started = True
            self.prev_pose = odom
            self.state_odom_pose = odom
            self.state_t = t
            self.state = ekf.SlamState.initial(pose=(0.0, 0.0, 0.0))
            self.state.mu[:3] = [odom.x, odom.y, odom.theta]
            if self.cfg.deploy_at_start:
                out.deploy_request = True
            return out

        if self._init_job is not None:
            if self._collect_init_samples(t, readings):
                out.resume = True
        if self.use_tags:
            self._gate_readings([r for r in readings])

        if should_accumulate(self.prev_pose, odom, self._wcfg):
            out.snapshot = self._accumulate(t, odom, frames or {})
            self.prev_pose = odom

        if out.snapshot is not None and self._deploy_due:
            out.deploy_request = True
            self._deploy_due = False
        return out

    _deploy_due = False

    def _accumulate(self, t: float, odom: Pose2D, frames: dict) -> Optional[dict]:
        if self.use_radar:
            local = scan_points(frames, self._pairs, self._rcfg)
            pts = odom.transform_points(local) if len(local) else np.empty((0, 2))
        else:
            pts = np.empty((0, 2))
        self.scans.push(odom, pts, t)
        self.i += 1
        snap = None
        if self.i > self.cfg.n + self.cfg.m2:
            snap = self._slam_step(t)
        self.tag_buffer.evict(self.i - 1)
        return snap

    # ---------------------------------------------------------------- SLAM step
    def _tag_candidates(self) -> dict:
        cands = {}
        for tag_id in self.tag_buffer.tag_ids():
            if not self.state.has_tag(tag_id):
                continue
            pts = self.tag_buffer.points(tag_id)
            if len(pts) < self.cfg.n_t:
                continue
            res = aoa_mod.dbscan(pts, self.cfg.eps_t, self.cfg.n_t)
            if len(res.clusters) == 1:
                cands[tag_id] = (pts, res.clusters[0])
        return cands

    def _tag_observation(self, tag_id, pts, members, xt: Pose2D):
        rec = self.state.tag_record(tag_id)
        lm = self.state.landmark_position(rec)
        nu_dummy, S, _ = ekf.innovation(self.state, rec, (1.0, 0.0), self._Q_t)
        zhat, _, _ = ekf.observation_model(self.state.mu[:3], lm)
        # predicted tag position and covariance expressed in the odometry frame
        ang = xt.theta + zhat[1]
        c, s = math.cos(ang), math.sin(ang)
        mean = np.array([xt.x + zhat[0] * c, xt.y + zhat[0] * s])
        J = np.array([[c, -zhat[0] * s], [s, zhat[0] * c]])
        cov = J @ S @ J.T
        # clustering already done; re-use members for the single-cluster outcome
        centroid = pts[members].mean(axis=0)
        d = centroid - mean
        m2 = float(d @ np.linalg.solve(cov, d))
        if m2 > self.cfg.alpha_t:
            return None, m2
        local = xt.inverse_transform_points(centroid)[0]
        rng = math.hypot(local[0], local[1])
        if rng <= 0:
            return None, m2
        return ekf.RangeBearingObs(rng, math.atan2(local[1], local[0]), ekf.TAG, tag_id), m2

    def _slam_step(self, t: float) -> dict:
        wcfg = self._wcfg
        # filter(Rad_Obs)
        if self.use_radar:
            fx = extract_features(self.scans, wcfg)
            xt, tt = fx.xt, fx.tt
            radar_obs = [ekf.RangeBearingObs(o.range, o.bearing) for o in fx.observations]
        else:
            L = len(self.scans)
            start = L - wcfg.m2 - wcfg.n
            entry = self.scans[start + wcfg.w]
            xt, tt = entry.pose, entry.t
            radar_obs = []
        # filter(Tag_Obs): clustering now, Mahalanobis gate against the current estimate below
        tag_cands = self._tag_candidates() if self.use_tags else {}

        # prediction from the pose the state stands for to x_t'
        u = odometry_motion_model(self.state_odom_pose, xt)
        k = max(1, self._steps_between(self.state_t, tt))
        self._set_state(ekf.predict(self.state, u, self._R * k), "predict")
        self.order_log.append((self.s, "predict"))
        disp = self.state_odom_pose.distance_to(xt)
        self.state_odom_pose = xt
        self.state_t = tt

        # radar update, unknown correspondences
        if radar_obs:
            before = self.state
            new, report = ekf.associate_and_update_unknown(self.state, radar_obs, self._Q_r, self.cfg.alpha_r)
            self.state = new
            self._audit("radar_update", before if self.audit else None)
            self.associations.append((self.s, report))
            self.order_log.append((self.s, "radar_update"))
            self._record(
                {
                    "type": "feature",
                    "t": float(t),
                    "pose_t": float(tt),
                    "obs": [[o.range, o.bearing] for o in radar_obs],
                    "assoc": [[a.landmark_id, bool(a.new)] for a in report],
                }
            )
        self.feature_counts.append(len(radar_obs))

        # tag update, known correspondences
        n_tag = 0
        for tag_id in sorted(tag_cands):
            pts, members = tag_cands[tag_id]
            obs, _ = self._tag_observation(tag_id, pts, members, xt)
            if obs is None:
                continue
            self._set_state(ekf.update_known(self.state, obs, self._Q_t), "tag_update", check_trace=True)
            self.order_log.append((self.s, "tag_update"))
            seqs = self.tag_buffer.seqs(tag_id)[members]
            self.accepted_seqs.update(seqs[seqs >= 0].tolist())
            n_tag += 1
        self.tag_obs_count += n_tag

        self.trajectory.append((tt, self.state.mu[:3].copy()))
        self.odom_at_steps.append((tt, xt.as_array()))

        if self._init_job is None and self.s > 0:
            # only radar point features count as features here; tags do not
            if self.monitor.update(disp, bool(radar_obs)):
                self._deploy_due = True

        snap = self.state.snapshot(t, pose_t=tt, with_sigma=False)
        snap = {"type": "snapshot", "s": self.s, **snap}
        self._record(snap)
        self.s += 1
        return snap

    def _steps_between(self, t_a: float, t_b: float) -> int:
        """Number of accumulations between two scan timestamps."""
        n = 0
        for e in reversed(self.scans.entries):
            if e.t <= t_a:
                break
            if e.t <= t_b:
                n += 1
        return n

    def final_snapshot(self) -> dict:
        snap = self.state.snapshot(self.t_last or 0.0, pose_t=self.state_t, with_sigma=True)
        return {"type": "snapshot", "s": self.s - 1, "final": True, **snap}


# ---------------------------------------------------------------------- log
class MalformedLog(ValueError):
    pass


RECORD_TYPES = ("odom", "radar", "aoa", "feature", "snapshot", "deploy")


class RunLog:
    """Append-only list of JSON-serialisable records with non-decreasing ``t``.

    Files are JSON lines; a ``.gz`` suffix selects gzip compression with a
    fixed header timestamp so that identical runs give identical bytes.
    """

    def __init__(self, records=None):
        self.records: list = []
        for r in records or ():
            self.append(r)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, rec: dict):
        if rec.get("type") not in RECORD_TYPES:
            raise MalformedLog(f"unknown record type {rec.get('type')!r}")
        if "t" not in rec:
            raise MalformedLog("record without timestamp")
        if self.records and rec["t"] < self.records[-1]["t"]:
            raise MalformedLog(f"timestamp {rec['t']} precedes {self.records[-1]['t']}")
        self.records.append(rec)

    def of_type(self, kind: str) -> list:
        return [r for r in self.records if r["type"] == kind]

    def dumps(self) -> str:
        return "".join(self._lines())

    def _lines(self):
        for r in self.records:
            yield json.dumps(r, separators=(",", ":")) + "\n"

    def write(self, path) -> None:
        path = str(path)
        with open(path, "wb") as fh:
            if path.endswith(".gz"):
                import gzip

                with gzip.GzipFile(filename="", mode="wb", fileobj=fh, mtime=0) as gz:
                    for line in self._lines():
                        gz.write(line.encode())
            else:
                for line in self._lines():
                    fh.write(line.encode())

    @classmethod
    def read(cls, path) -> "RunLog":
        path = str(path)
        if path.endswith(".gz"):
            import gzip

            with gzip.open(path, "rt") as fh:
                text = fh.read()
        else:
            with open(path) as fh:
                text = fh.read()
        return cls.loads(text)

    @classmethod
    def loads(cls, text: str) -> "RunLog":
        log = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                # a cut-off final line is a truncated log, anything else is corrupt
                if lineno == len(text.splitlines()):
                    break
                raise MalformedLog(f"line {lineno}: {exc}") from exc
            try:
                log.append(rec)
            except MalformedLog as exc:
                raise MalformedLog(f"line {lineno}: {exc}") from exc
        return log


def log_inputs(log: Optional[RunLog], t: float, odom: Pose2D, frames=None, readings=(), truth: Optional[Pose2D] = None):
    """Append the sensor records of one tick; ``truth`` is kept for evaluation only."""
    if log is None:
        return
    rec = {"type": "odom", "t": float(t), "x": odom.x, "y": odom.y, "theta": odom.theta}
    if truth is not None:
        rec["gt"] = [truth.x, truth.y, truth.theta]
    log.append(rec)
    for sid in sorted(frames or {}):
        log.append({"type": "radar", **frames[sid].to_record()})
    for r in readings:
        log.append({"type": "aoa", **r.to_record()})


@dataclass
class ReplayResult:
    driver: Driver
    snapshots: list
    truth: dict  # pose_t -> ground-truth pose, when recorded


def replay(log: RunLog, config: DriverConfig = DriverConfig(), mode: str = "full") -> ReplayResult:
    """Feed the sensor records of ``log`` through a fresh driver.

    Output records of the original run (features, snapshots) are ignored; a
    truncated log simply yields a shorter run.
    """
    from .radar import RadarFrame

    driver = Driver(config, mode)
    snaps = []
    truth = {}
    pending = None

    def flush():
        nonlocal pending
        if pending is None:
            return
        t, odom, frames, readings = pending
        out = driver.tick(t, odom, frames, readings)
        if out.snapshot is not None:
            snaps.append(out.snapshot)
        pending = None

    for k, rec in enumerate(log):
        kind = rec.get("type")
        try:
            if kind == "odom":
                flush()
                pending = (rec["t"], Pose2D(rec["x"], rec["y"], rec["theta"]), {}, [])
                if "gt" in rec:
                    truth[rec["t"]] = Pose2D(*rec["gt"])
            elif kind == "radar":
                if pending is None:
                    raise MalformedLog("radar record before any odometry")
                pending[2][rec["sensor_id"]] = RadarFrame.from_record(rec)
            elif kind == "aoa":
                if pending is None:
                    raise MalformedLog("aoa record before any odometry")
                pending[3].append(AoaReading.from_record(rec))
            elif kind == "deploy":
                flush()
                driver.begin_deployment(int(rec["tag_id"]), rec["t"], rec.get("position"))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, MalformedLog):
                raise
            raise MalformedLog(f"record {k}: {exc!r}") from exc
    flush()
    return ReplayResult(driver, snaps, truth)
