"""
UWB radar preprocessing: raw amplitude time series to robot-frame scan points.

A frame is rectified, Savitzky-Golay smoothed, thresholded into peaks, the peak
bins are converted to ranges, and peaks of two sensors with overlapping fields
of view are trilaterated.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from functools import lru_cache

from scipy.signal import savgol_coeffs, savgol_filter

from .geometry import Pose2D, wrap_angle

BIN_RESOLUTION = 0.0064  # meters per bin


@dataclass(frozen=True)
class RadarFrame:
    sensor_id: str
    amplitudes: np.ndarray
    bin_resolution: float = BIN_RESOLUTION
    t: float = 0.0
    # amplitude quantisation step of the source, 0 when unquantised
    quantum: float = 0.0

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=float)
        if amps.ndim != 1 or amps.size == 0:
            raise ValueError("a radar frame needs a non-empty 1-D amplitude array")
        if not self.bin_resolution > 0:
            raise ValueError("bin resolution must be positive")
        object.__setattr__(self, "amplitudes", amps)

    def with_amplitudes(self, amps) -> "RadarFrame":
        return RadarFrame(self.sensor_id, amps, self.bin_resolution, self.t)

    def to_record(self) -> dict:
        """JSON-ready record; quantised frames are stored as exact integer counts."""
        rec = {"t": float(self.t), "sensor_id": self.sensor_id, "bin_resolution": float(self.bin_resolution)}
        q = float(self.quantum)
        if q > 0:
            counts = np.rint(self.amplitudes / q)
            # counts * q must give back the very same floats, otherwise fall back
            if np.array_equal(counts * q, self.amplitudes):
                rec["quantum"] = q
                rec["counts"] = counts.astype(np.int64).tolist()
                return rec
        rec["amplitudes"] = self.amplitudes.tolist()
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "RadarFrame":
        if "counts" in rec:
            q = float(rec["quantum"])
            amps = np.asarray(rec["counts"], dtype=float) * q
        else:
            q = 0.0
            amps = np.asarray(rec["amplitudes"], dtype=float)
        return cls(
            sensor_id=str(rec["sensor_id"]),
            amplitudes=amps,
            bin_resolution=float(rec["bin_resolution"]),
            t=float(rec["t"]),
            quantum=q,
        )


@dataclass(frozen=True)
class RadarSensorConfig:
    sensor_id: str
    mount: Pose2D
    fov_halfangle: float
    min_range: float
    max_range: float

    def __post_init__(self):
        if not 0 < self.fov_halfangle < math.pi:
            raise ValueError("fov half-angle must lie in (0, pi)")
        if not 0 <= self.min_range < self.max_range:
            raise ValueError("need 0 <= min_range < max_range")

    def sees(self, point) -> bool:
        """Whether a robot-frame point lies inside this sensor's cone and range."""
        dx, dy = point[0] - self.mount.x, point[1] - self.mount.y
        d = math.hypot(dx, dy)
        if not self.min_range <= d <= self.max_range:
            return False
        return abs(wrap_angle(math.atan2(dy, dx) - self.mount.theta)) <= self.fov_halfangle


@dataclass(frozen=True)
class RadarPeak:
    range: float
    amplitude: float
    bin: float


@dataclass(frozen=True)
class TrilateratedPoint:
    position: np.ndarray
    sensors: tuple


@dataclass(frozen=True)
class RadarPipelineConfig:
    sg_window: int = 11
    sg_polyorder: int = 3
    threshold_factor: float = 3.0
    threshold_floor: float = 0.1
    min_separation_bins: int = 10
    subbin: bool = True


def default_radar_sensors(
    baseline: float = 0.2,
    side_offset: float = 0.17,
    fov_halfangle: float = math.radians(60.0),
    min_range: float = 0.3,
    max_range: float = 4.0,
) -> list:
    """Two sensors per side, both arrays looking sideways."""
    half = baseline / 2.0
    sensors = []
    for side, heading in (("L", math.pi / 2), ("R", -math.pi / 2)):
        y = side_offset if side == "L" else -side_offset
        for k, x in enumerate((-half, half)):
            sensors.append(
                RadarSensorConfig(f"{side}{k}", Pose2D(x, y, heading), fov_halfangle, min_range, max_range)
            )
    return sensors


def default_sensor_pairs(sensors: Sequence[RadarSensorConfig]) -> list:
    by_id = {s.sensor_id: s for s in sensors}
    return [(by_id["L0"], by_id["L1"]), (by_id["R0"], by_id["R1"])]


def rectify(frame: RadarFrame) -> RadarFrame:
    return frame.with_amplitudes(np.abs(frame.amplitudes))


def smooth(frame: RadarFrame, window: int = 11, polyorder: int = 3) -> RadarFrame:
    """Savitzky-Golay smoothing; polynomials up to ``polyorder`` pass unchanged."""
    if window % 2 == 0 or window < 1:
        raise ValueError("Savitzky-Golay window must be a positive odd count")
    if polyorder >= window:
        raise ValueError("polyorder must be smaller than the window")
    if frame.amplitudes.size < window:
        raise ValueError("frame is shorter than the smoothing window")
    return frame.with_amplitudes(_savgol(frame.amplitudes, window, polyorder))


@lru_cache(maxsize=32)
def _savgol_operators(window: int, polyorder: int) -> tuple:
    # the edge fits are linear in the first/last ``window`` samples, so filtering
    # an identity matrix yields them once for all frames
    half = window // 2
    edge = savgol_filter(np.eye(window), window, polyorder, axis=0, mode="interp")
    return savgol_coeffs(window, polyorder), edge[:half], edge[window - half :]


def _savgol(a: np.ndarray, window: int, polyorder: int) -> np.ndarray:
    coeffs, left, right = _savgol_operators(window, polyorder)
    half = window // 2
    out = np.empty_like(a)
    out[half : a.size - half] = np.convolve(a, coeffs, mode="valid")
    out[:half] = left @ a[:window]
    out[a.size - half :] = right @ a[a.size - window :]
    return out


def bin_to_range(bin_index: float, bin_resolution: float = BIN_RESOLUTION) -> float:
    if bin_index < 0:
        raise ValueError("bin index must be non-negative")
    return bin_index * bin_resolution


def default_threshold(frame: RadarFrame, factor: float = 3.0, floor: float = 0.1) -> float:
    return max(factor * float(np.median(np.abs(frame.amplitudes))), floor)


def _subbin_offset(a_left: float, a_mid: float, a_right: float) -> float:
    # log-parabola is exact on Gaussian pulses; plain parabola otherwise
    if a_left > 0 and a_right > 0 and a_mid > 0:
        l, m, r = math.log(a_left), math.log(a_mid), math.log(a_right)
    else:
        l, m, r = a_left, a_mid, a_right
    denom = l - 2.0 * m + r
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (l - r) / denom, -0.5, 0.5))


def detect_peaks(
    frame: RadarFrame,
    amplitude_threshold: float,
    min_separation_bins: int = 10,
    subbin: bool = False,
) -> list:
    """Strict interior local maxima above threshold, suppressed greedily by amplitude.

    Returned peaks are sorted by bin. With ``subbin`` the range is refined by a
    three-point interpolation around the maximum.
    """
    if not amplitude_threshold > 0:
        raise ValueError("amplitude threshold must be positive")
    a = frame.amplitudes
    if a.size < 3:
        return []
    mid = a[1:-1]
    is_max = (mid > a[:-2]) & (mid > a[2:]) & (mid >= amplitude_threshold)
    cand = np.flatnonzero(is_max) + 1
    if cand.size == 0:
        return []
    order = sorted(cand.tolist(), key=lambda i: (-a[i], i))
    kept = []
    for i in order:
        if all(abs(i - j) >= min_separation_bins for j in kept):
            kept.append(i)
    peaks = []
    for i in sorted(kept):
        b = float(i)
        if subbin:
            b += _subbin_offset(a[i - 1], a[i], a[i + 1])
        peaks.append(RadarPeak(bin_to_range(b, frame.bin_resolution), float(a[i]), b))
    return peaks


def _off_boresight(cfg: RadarSensorConfig, p) -> float:
    return abs(wrap_angle(math.atan2(p[1] - cfg.mount.y, p[0] - cfg.mount.x) - cfg.mount.theta))


def trilaterate(
    range_a: float,
    range_b: float,
    cfg_a: RadarSensorConfig,
    cfg_b: RadarSensorConfig,
) -> Optional[TrilateratedPoint]:
    """Intersect the two range circles and keep the solution seen by both sensors."""
    pa = np.array([cfg_a.mount.x, cfg_a.mount.y])
    pb = np.array([cfg_b.mount.x, cfg_b.mount.y])
    base = pb - pa
    d = float(np.hypot(*base))
    if d < 1e-12:
        raise ValueError("sensor centres coincide; trilateration is undefined")
    if range_a <= 0 or range_b <= 0:
        return None
    along = (range_a**2 - range_b**2 + d**2) / (2.0 * d)
    h2 = range_a**2 - along**2
    if h2 < 0:
        if h2 > -1e-12 * range_a**2:
            h2 = 0.0
        else:
            return None
    h = math.sqrt(h2)
    e = base / d
    perp = np.array([-e[1], e[0]])
    foot = pa + along * e
    valid = []
    for cand in (foot + h * perp, foot - h * perp):
        if cfg_a.sees(cand) and cfg_b.sees(cand):
            valid.append(cand)
    if not valid:
        return None
    best = min(valid, key=lambda p: max(_off_boresight(cfg_a, p), _off_boresight(cfg_b, p)))
    return TrilateratedPoint(best, (cfg_a.sensor_id, cfg_b.sensor_id))


def preprocess(frame: RadarFrame, cfg: RadarPipelineConfig, sensor: Optional[RadarSensorConfig] = None) -> list:
    """Steps rectify, smooth, threshold and range conversion for one frame."""
    f = smooth(rectify(frame), cfg.sg_window, cfg.sg_polyorder)
    thr = default_threshold(f, cfg.threshold_factor, cfg.threshold_floor)
    peaks = detect_peaks(f, thr, cfg.min_separation_bins, subbin=cfg.subbin)
    if sensor is not None:
        # returns inside min_range are the direct path and self reflections
        peaks = [p for p in peaks if sensor.min_range <= p.range <= sensor.max_range]
    return peaks


def scan_points(frames: dict, pairs, cfg: RadarPipelineConfig) -> np.ndarray:
    """Robot-frame scan points from one set of simultaneous frames.

    ``frames`` maps sensor id to :class:`RadarFrame`. Every peak combination of
    a sensor pair is tried; only solutions inside both cones survive.
    """
    peaks = {}
    out = []
    for cfg_a, cfg_b in pairs:
        for c in (cfg_a, cfg_b):
            if c.sensor_id not in peaks:
                fr = frames.get(c.sensor_id)
                peaks[c.sensor_id] = [] if fr is None else preprocess(fr, cfg, c)
        for pk_a, pk_b in itertools.product(peaks[cfg_a.sensor_id], peaks[cfg_b.sensor_id]):
            tp = trilaterate(pk_a.range, pk_b.range, cfg_a, cfg_b)
            if tp is not None:
                out.append(tp.position)
    if not out:
        return np.empty((0, 2))
    return np.vstack(out)
