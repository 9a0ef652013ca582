"""
Deterministic planar world simulator.

The world holds isolated point reflectors (the radar features), clutter discs
of closely spaced scatterers, wall segments and deployed tags. A robot follows
a waypoint script with a rotate-then-translate controller; odometry, radar
frames and AOA readings are synthesised from independent random streams that
all derive from one seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .aoa import AnchorRingConfig, AoaReading
from .geometry import MotionIncrement, Pose2D, apply_motion, odometry_motion_model, wrap_angle, wrap_angles
from .radar import BIN_RESOLUTION, RadarFrame, default_radar_sensors


@dataclass(frozen=True)
class ClutterDisc:
    center: tuple
    radius: float
    n_scatterers: int = 12
    rcs: float = 0.4


@dataclass(frozen=True)
class SlipZone:
    """Region where the wheels slip: extra multiplicative odometry bias."""

    center: tuple
    radius: float
    trans_bias: float = 0.0
    rot_bias: float = 0.0
    heading_rate: float = 0.0  # heading drift in rad per meter driven

    def contains(self, x: float, y: float) -> bool:
        return math.hypot(x - self.center[0], y - self.center[1]) <= self.radius


@dataclass
class WorldModel:
    features: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    feature_rcs: Optional[np.ndarray] = None
    clutter: list = field(default_factory=list)
    walls: np.ndarray = field(default_factory=lambda: np.empty((0, 2, 2)))
    tags: dict = field(default_factory=dict)
    slip_zones: list = field(default_factory=list)
    wall_rcs: float = 0.6
    seed: int = 0
    bounds: Optional[tuple] = None  # (xmin, ymin, xmax, ymax)

    def __post_init__(self):
        for name, arr in (("features", self.features), ("walls", self.walls)):
            if not np.all(np.isfinite(np.asarray(arr, dtype=float))):
                raise ValueError(f"{name} must be finite")
        self.features = np.asarray(self.features, dtype=float).reshape(-1, 2)
        if self.feature_rcs is None:
            self.feature_rcs = np.ones(len(self.features))
        self.feature_rcs = np.asarray(self.feature_rcs, dtype=float).reshape(-1)
        if len(self.feature_rcs) != len(self.features):
            raise ValueError("one rcs value per feature")
        self.walls = np.asarray(self.walls, dtype=float).reshape(-1, 2, 2)
        self.tags = {int(k): np.asarray(v, dtype=float) for k, v in self.tags.items()}
        self._scatterers = None

    @property
    def scatterers(self) -> tuple:
        """Clutter scatterer positions and rcs, fixed by ``seed``."""
        if self._scatterers is None:
            pts, rcs = [], []
            for k, disc in enumerate(self.clutter):
                rng = np.random.default_rng([self.seed, k])
                ang = rng.uniform(-math.pi, math.pi, disc.n_scatterers)
                rad = disc.radius * np.sqrt(rng.uniform(0, 1, disc.n_scatterers))
                pts.append(np.column_stack([disc.center[0] + rad * np.cos(ang), disc.center[1] + rad * np.sin(ang)]))
                rcs.append(np.full(disc.n_scatterers, disc.rcs))
            if pts:
                self._scatterers = (np.vstack(pts), np.concatenate(rcs))
            else:
                self._scatterers = (np.empty((0, 2)), np.empty(0))
        return self._scatterers

    def reflectors(self) -> tuple:
        if getattr(self, "_reflectors", None) is None:
            sp, sr = self.scatterers
            self._reflectors = (np.vstack([self.features, sp]), np.concatenate([self.feature_rcs, sr]))
        return self._reflectors

    def slip_at(self, x: float, y: float) -> tuple:
        tb = rb = hr = 0.0
        for z in self.slip_zones:
            if z.contains(x, y):
                tb += z.trans_bias
                rb += z.rot_bias
                hr += z.heading_rate
        return tb, rb, hr


def deploy_tag(world: WorldModel, position, tag_id: int) -> WorldModel:
    """World with one more tag; tag ids are unique."""
    if tag_id in world.tags:
        raise ValueError(f"tag {tag_id} is already deployed")
    tags = dict(world.tags)
    tags[int(tag_id)] = np.asarray(position, dtype=float).reshape(2)
    new = WorldModel(
        world.features,
        world.feature_rcs,
        list(world.clutter),
        world.walls,
        tags,
        list(world.slip_zones),
        world.wall_rcs,
        world.seed,
        world.bounds,
    )
    new._scatterers = world._scatterers
    new._reflectors = getattr(world, "_reflectors", None)
    return new


# --------------------------------------------------------------------- script
@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float
    speed: float = 0.05


@dataclass(frozen=True)
class Halt:
    duration: float


@dataclass
class TrajectoryScript:
    start: Pose2D = field(default_factory=Pose2D)
    directives: list = field(default_factory=list)
    turn_rate: float = 0.2

    def __post_init__(self):
        for d in self.directives:
            if isinstance(d, Waypoint) and not d.speed > 0:
                raise ValueError("waypoint speed must be positive")
            if isinstance(d, Halt) and d.duration < 0:
                raise ValueError("halt duration must be non-negative")
        if not self.turn_rate > 0:
            raise ValueError("turn rate must be positive")

    def path_length(self) -> float:
        total, p = 0.0, np.array([self.start.x, self.start.y])
        for d in self.directives:
            if isinstance(d, Waypoint):
                q = np.array([d.x, d.y])
                total += float(np.hypot(*(q - p)))
                p = q
        return total


class ScriptExhausted(StopIteration):
    pass


# ---------------------------------------------------------------------- noise
@dataclass(frozen=True)
class NoiseConfig:
    odom_trans_sigma: float = 0.01  # per sqrt(m)
    odom_rot_sigma: float = 0.01  # per sqrt(rad)
    odom_heading_sigma: float = 0.005  # per sqrt(m)
    odom_trans_bias: float = 0.0
    odom_rot_bias: float = 0.0
    odom_heading_rate: float = 0.0  # rad per meter
    radar_range_sigma: float = 0.002
    radar_amp_sigma: float = 0.01
    radar_quantum: float = 1e-4
    aoa_range_sigma: float = 0.03
    aoa_bearing_sigma: float = 0.01
    p_ghost: float = 0.0
    ghost_near_dist: float = 1.0
    nlos_range_bias: float = 0.3
    nlos_bearing_sigma: float = 0.15
    rssi_rx_base: float = -80.0
    los_delta_max: float = 5.0
    nlos_attenuation: float = 8.0
    ghost_delta: tuple = (2.0, 12.0)

    @classmethod
    def zero(cls) -> "NoiseConfig":
        return cls(
            odom_trans_sigma=0.0,
            odom_rot_sigma=0.0,
            odom_heading_sigma=0.0,
            radar_range_sigma=0.0,
            radar_amp_sigma=0.0,
            radar_quantum=0.0,
            aoa_range_sigma=0.0,
            aoa_bearing_sigma=0.0,
            nlos_bearing_sigma=0.0,
            p_ghost=0.0,
        )


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    n_bins: int = 656
    pulse_sigma_bins: float = 4.0
    min_amp_distance: float = 0.3
    aoa_rate_divider: int = 1  # one reading per anchor and tag every this many ticks
    sensors: tuple = ()
    ring: AnchorRingConfig = AnchorRingConfig()

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.sensors:
            object.__setattr__(self, "sensors", tuple(default_radar_sensors()))


@dataclass(frozen=True)
class SimStep:
    k: int
    t: float
    truth: Pose2D
    odom: Pose2D
    v_trans: float
    v_rot: float
    halted: bool


# ------------------------------------------------------------------ geometry
def _segments_cross(p, q, walls) -> np.ndarray:
    """For segments ``p[i] -> q[i]``, whether any wall properly intersects them."""
    if len(walls) == 0 or len(p) == 0:
        return np.zeros(len(p), dtype=bool)
    a = walls[:, 0][None]  # (1, M, 2)
    b = walls[:, 1][None]
    p = p[:, None]
    q = q[:, None]

    def cross(u, v):
        return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]

    d1 = cross(b - a, p - a)
    d2 = cross(b - a, q - a)
    d3 = cross(q - p, a - p)
    d4 = cross(q - p, b - p)
    hit = (d1 * d2 < 0) & (d3 * d4 < 0)
    return hit.any(axis=1)


def _closest_on_segments(p, walls) -> np.ndarray:
    a, b = walls[:, 0], walls[:, 1]
    ab = b - a
    t = np.clip(np.einsum("mi,mi->m", p - a, ab) / np.einsum("mi,mi->m", ab, ab), 0.0, 1.0)
    return a + t[:, None] * ab


def _mirror(p, a, b) -> np.ndarray:
    ab = b - a
    t = np.dot(p - a, ab) / np.dot(ab, ab)
    foot = a + t * ab
    return 2 * foot - p


class Simulator:
    """Step-driven simulator; every call to :meth:`step` advances one ``dt``."""

    def __init__(self, world: WorldModel, script: TrajectoryScript, noise: NoiseConfig = NoiseConfig(),
                 config: SimConfig = SimConfig(), seed: int = 0):
        self.world = world
        self.script = script
        self.noise = noise
        self.cfg = config
        self.seed = seed
        ss = np.random.SeedSequence(seed)
        odom_ss, radar_ss, aoa_ss = ss.spawn(3)
        self.rng_odom = np.random.default_rng(odom_ss)
        self.rng_radar = np.random.default_rng(radar_ss)
        self.rng_aoa = np.random.default_rng(aoa_ss)

        self.k = 0
        self.truth = script.start
        self.odom = script.start
        self._cursor = 0
        self._halt_left: Optional[int] = None
        self._seg_start: Optional[np.ndarray] = None
        self._seg_done = 0.0
        self._held = False
        self._seq = 0
        self.injected_ghosts: list = []
        self.last_step = SimStep(0, 0.0, self.truth, self.odom, 0.0, 0.0, True)

    # ----------------------------------------------------------- kinematics
    def hold(self):
        """Stop in place until :meth:`release` (used while a tag initialises)."""
        self._held = True

    def release(self):
        self._held = False

    @property
    def finished(self) -> bool:
        return self._cursor >= len(self.script.directives)

    def _advance_truth(self) -> Pose2D:
        dt = self.cfg.dt
        while True:
            if self._held:
                return self.truth
            if self._cursor >= len(self.script.directives):
                raise ScriptExhausted("trajectory script finished")
            d = self.script.directives[self._cursor]
            if isinstance(d, Halt):
                if self._halt_left is None:
                    self._halt_left = int(round(d.duration / dt))
                if self._halt_left > 0:
                    self._halt_left -= 1
                    return self.truth
                self._halt_left = None
                self._cursor += 1
                continue
            target = np.array([d.x, d.y])
            pos = np.array([self.truth.x, self.truth.y])
            dist = float(np.hypot(*(target - pos))) if self._seg_start is None else None
            if self._seg_start is None:
                if dist < 1e-9:
                    self._cursor += 1
                    continue
                err = wrap_angle(math.atan2(target[1] - pos[1], target[0] - pos[0]) - self.truth.theta)
                if abs(err) > 1e-12:
                    step = max(-self.script.turn_rate * dt, min(self.script.turn_rate * dt, err))
                    return Pose2D(self.truth.x, self.truth.y, self.truth.theta + step)
                self._seg_start = pos
                self._seg_heading = self.truth.theta
                self._seg_len = dist
                self._seg_done = 0.0
            step = d.speed * dt
            self._seg_done = min(self._seg_len, self._seg_done + step)
            c, s = math.cos(self._seg_heading), math.sin(self._seg_heading)
            if self._seg_len - self._seg_done < 1e-9:
                self._seg_done = self._seg_len
                new = Pose2D(float(target[0]), float(target[1]), self._seg_heading)
                self._seg_start = None
                self._cursor += 1
                return new
            p = self._seg_start + self._seg_done * np.array([c, s])
            return Pose2D(float(p[0]), float(p[1]), self._seg_heading)

    def _noisy_increment(self, u: MotionIncrement) -> MotionIncrement:
        nz = self.noise
        e = self.rng_odom.standard_normal(4)
        tb, rb, hr = self.world.slip_at(self.truth.x, self.truth.y)
        trans = u.trans * (1.0 + nz.odom_trans_bias + tb) + nz.odom_trans_sigma * math.sqrt(u.trans) * e[0]
        rot1 = u.rot1 * (1.0 + nz.odom_rot_bias + rb) + nz.odom_rot_sigma * math.sqrt(abs(u.rot1)) * e[1]
        rot2 = u.rot2 * (1.0 + nz.odom_rot_bias + rb) + nz.odom_rot_sigma * math.sqrt(abs(u.rot2)) * e[2]
        rot2 += (nz.odom_heading_rate + hr) * u.trans + nz.odom_heading_sigma * math.sqrt(u.trans) * e[3]
        return MotionIncrement(rot1, max(trans, 0.0), rot2)

    def step(self) -> SimStep:
        prev = self.truth
        new = self._advance_truth()
        self.k += 1
        t = self.k * self.cfg.dt
        u = odometry_motion_model(prev, new)
        moved = u.trans > 0 or abs(u.rotation) > 0
        if moved:
            self.odom = apply_motion(self._noisy_increment(u), self.odom)
        else:
            # keep the stream aligned whether or not the robot moved
            self.rng_odom.standard_normal(4)
        self.truth = new
        dt = self.cfg.dt
        self.last_step = SimStep(self.k, t, new, self.odom, u.trans / dt, abs(u.rotation) / dt, not moved)
        return self.last_step

    # --------------------------------------------------------------- radar
    def radar_frames(self, step: Optional[SimStep] = None) -> dict:
        step = step or self.last_step
        nz, cfg = self.noise, self.cfg
        refl, rcs = self.world.reflectors()
        walls = self.world.walls
        sensors = cfg.sensors
        S, M = len(sensors), len(walls)
        poses = [step.truth.oplus(sn.mount) for sn in sensors]
        origin = np.array([[p.x, p.y] for p in poses])  # (S, 2)
        heading = np.array([p.theta for p in poses])

        # targets per sensor: point reflectors then the closest point of every wall
        P = np.repeat(refl[None], S, axis=0)
        A = np.repeat(rcs[None], S, axis=0)
        if M:
            a0, ab = walls[:, 0], walls[:, 1] - walls[:, 0]
            tt = np.einsum("smi,mi->sm", origin[:, None, :] - a0[None], ab) / np.einsum("mi,mi->m", ab, ab)
            closest = a0[None] + np.clip(tt, 0.0, 1.0)[..., None] * ab[None]
            P = np.concatenate([P, closest], axis=1)
            A = np.concatenate([A, np.full((S, M), self.world.wall_rcs)], axis=1)
        rel = P - origin[:, None, :]
        d = np.hypot(rel[..., 0], rel[..., 1])
        ang = wrap_angles(np.arctan2(rel[..., 1], rel[..., 0]) - heading[:, None])
        half = np.array([sn.fov_halfangle for sn in sensors])[:, None]
        rmin = np.array([sn.min_range for sn in sensors])[:, None]
        rmax = np.array([sn.max_range for sn in sensors])[:, None]
        vis = (np.abs(ang) <= half) & (d >= rmin) & (d <= rmax)
        if M and vis.any():
            si, ti = np.nonzero(vis)
            # pull targets slightly towards the sensor so walls do not occlude their own return
            tgt = origin[si] + rel[si, ti] * (1 - 1e-6)
            vis[si, ti] = ~_segments_cross(origin[si], tgt, walls)

        jitter = self.rng_radar.standard_normal(P.shape[:2]) * nz.radar_range_sigma
        sig = self.rng_radar.standard_normal((S, cfg.n_bins)) * nz.radar_amp_sigma
        width = cfg.pulse_sigma_bins
        bins = np.arange(cfg.n_bins, dtype=float)
        for si, ti in zip(*np.nonzero(vis)):
            dist = d[si, ti] + jitter[si, ti]
            centre = dist / BIN_RESOLUTION
            lo = max(0, int(centre - 6 * width))
            hi = min(cfg.n_bins, int(centre + 6 * width) + 2)
            if lo >= hi:
                continue
            amp = A[si, ti] / max(dist, cfg.min_amp_distance)
            sig[si, lo:hi] += amp * np.exp(-0.5 * ((bins[lo:hi] - centre) / width) ** 2)
        if nz.radar_quantum > 0:
            sig = np.round(sig / nz.radar_quantum) * nz.radar_quantum
        q = max(nz.radar_quantum, 0.0)
        return {sn.sensor_id: RadarFrame(sn.sensor_id, sig[k], BIN_RESOLUTION, step.t, q) for k, sn in enumerate(sensors)}

    # ----------------------------------------------------------------- AOA
    def _near_occluder(self, pos) -> bool:
        if len(self.world.walls) == 0:
            return False
        c = _closest_on_segments(np.repeat(pos[None], len(self.world.walls), 0), self.world.walls)
        return bool(np.min(np.hypot(*(c - pos).T)) <= self.noise.ghost_near_dist)

    def aoa_readings(self, step: Optional[SimStep] = None) -> list:
        step = step or self.last_step
        if step.k % self.cfg.aoa_rate_divider != 0 or not self.world.tags:
            return []
        nz, ring = self.noise, self.cfg.ring
        walls = self.world.walls
        half = ring.fov / 2
        tag_ids = sorted(self.world.tags)
        tpos = np.array([self.world.tags[i] for i in tag_ids])  # (T, 2)
        A, T = ring.n_anchors, len(tag_ids)
        # one block of draws per tick keeps the stream layout independent of geometry
        e = self.rng_aoa.standard_normal((A, T, 3))
        u = self.rng_aoa.uniform(0.0, 1.0, (A, T, 4))

        poses = [step.truth.oplus(ring.anchor_pose(a)) for a in range(A)]
        apos = np.array([[p.x, p.y] for p in poses])
        ath = np.array([p.theta for p in poses])
        rel = tpos[None, :, :] - apos[:, None, :]  # (A, T, 2)
        D_true = np.hypot(rel[..., 0], rel[..., 1])
        phi_true = wrap_angles(np.arctan2(rel[..., 1], rel[..., 0]) - ath[:, None])
        nlos = _segments_cross(
            np.repeat(apos, T, axis=0), np.tile(tpos, (A, 1)), walls
        ).reshape(A, T)
        in_range = (D_true >= ring.det_range_min) & (D_true <= ring.det_range_max)
        rx = nz.rssi_rx_base - 10.0 * np.log10(np.maximum(D_true, 0.1))

        robot_pos = np.array([step.truth.x, step.truth.y])
        near = False
        img = None
        if len(walls):
            c = _closest_on_segments(np.repeat(robot_pos[None], len(walls), 0), walls)
            dist = np.hypot(*(c - robot_pos).T)
            near = bool(dist.min() <= nz.ghost_near_dist)
            w = int(np.argmin(dist))
            img = np.array([_mirror(p, walls[w, 0], walls[w, 1]) for p in tpos])

        out = []
        for a in range(A):
            for j, tag_id in enumerate(tag_ids):
                ea, ua = e[a, j], u[a, j]
                if abs(phi_true[a, j]) <= half and in_range[a, j]:
                    D = D_true[a, j] + nz.aoa_range_sigma * ea[0]
                    phi = phi_true[a, j] + nz.aoa_bearing_sigma * ea[1]
                    if nlos[a, j]:
                        D += nz.nlos_range_bias
                        phi += nz.nlos_bearing_sigma * ea[2]
                        delta = nz.nlos_attenuation + 6.0 * ua[0]
                    else:
                        delta = nz.los_delta_max * ua[0]
                    phi = wrap_angle(phi)
                    if abs(phi) <= half:
                        out.append(self._reading(a, tag_id, D, phi, rx[a, j], delta, step, ghost=False))
                if not (nz.p_ghost > 0 and near and ua[1] < nz.p_ghost):
                    continue
                cands = []
                mirrored = wrap_angle(math.pi - phi_true[a, j])
                if abs(phi_true[a, j]) > half and abs(mirrored) <= half and in_range[a, j]:
                    cands.append((D_true[a, j], mirrored))
                if img is not None:
                    li = poses[a].inverse_transform_points(img[j])[0]
                    Di, pi_ = float(np.hypot(*li)), math.atan2(li[1], li[0])
                    if abs(pi_) <= half and ring.det_range_min <= Di <= ring.det_range_max:
                        cands.append((Di, pi_))
                if cands:
                    Dg, pg = cands[min(int(ua[2] * len(cands)), len(cands) - 1)]
                    Dg += nz.aoa_range_sigma * ea[0]
                    pg = wrap_angle(pg + nz.aoa_bearing_sigma * ea[1])
                    if abs(pg) <= half:
                        lo, hi = nz.ghost_delta
                        delta = lo + (hi - lo) * ua[3]
                        out.append(self._reading(a, tag_id, Dg, pg, rx[a, j], delta, step, ghost=True))
        return out

    def _reading(self, aid, tag_id, D, phi, rx, delta, step, ghost) -> AoaReading:
        seq = self._seq
        self._seq += 1
        if ghost:
            self.injected_ghosts.append(seq)
        return AoaReading(
            anchor_id=aid,
            tag_id=tag_id,
            D=max(float(D), 0.0),
            phi=float(phi),
            fp_rssi=float(rx - delta),
            rx_rssi=float(rx),
            v_trans=step.v_trans,
            v_rot=step.v_rot,
            t=step.t,
            ghost=ghost,
            seq=seq,
        )

    def deploy_tag(self, position, tag_id: int):
        self.world = deploy_tag(self.world, position, tag_id)


def synth_radar_frames(sim: Simulator, step: Optional[SimStep] = None) -> dict:
    return sim.radar_frames(step)


def synth_aoa_readings(sim: Simulator, step: Optional[SimStep] = None) -> list:
    return sim.aoa_readings(step)
