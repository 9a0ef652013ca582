import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from uwbslam.geometry import Pose2D
from uwbslam.radar import (
    BIN_RESOLUTION,
    RadarFrame,
    RadarPipelineConfig,
    RadarSensorConfig,
    bin_to_range,
    default_radar_sensors,
    default_sensor_pairs,
    detect_peaks,
    preprocess,
    rectify,
    scan_points,
    smooth,
    trilaterate,
)


def frame(values, sid="L0"):
    return RadarFrame(sid, np.asarray(values, dtype=float))


def polyfit_smooth(a, window, order):
    """Brute-force Savitzky-Golay: a least-squares polynomial per output sample.

    Interior samples use the window centred on them; the first and last
    ``window // 2`` samples are read off the fit to the first / last window.
    """
    n, half = len(a), window // 2
    out = np.empty(n)
    x = np.arange(window, dtype=float)
    for i in range(n):
        lo = min(max(i - half, 0), n - window)
        coef = np.linalg.lstsq(np.vander(x, order + 1), a[lo : lo + window], rcond=None)[0]
        out[i] = np.polyval(coef, float(i - lo))
    return out


# --------------------------------------------------------------------- rectify


@pytest.mark.parametrize("vals, expected", [([0, 0, 0], [0, 0, 0]), ([-1, 2, -3], [1, 2, 3]), ([1, 2, 3], [1, 2, 3])])
def test_rectify_examples(vals, expected):
    out = rectify(frame(vals, "R1"))
    np.testing.assert_array_equal(out.amplitudes, expected)
    assert out.sensor_id == "R1"


def test_frame_invariants():
    with pytest.raises(ValueError):
        RadarFrame("a", np.array([]))
    with pytest.raises(ValueError):
        RadarFrame("a", np.ones(3), bin_resolution=0.0)
    rec = RadarFrame("x", np.array([0.1, -0.2]), t=1.5).to_record()
    back = RadarFrame.from_record(rec)
    assert back.t == 1.5 and back.sensor_id == "x"
    np.testing.assert_array_equal(back.amplitudes, [0.1, -0.2])


def test_quantised_frame_record_is_exact(rng):
    q = 1e-4
    amps = np.round(rng.normal(0, 0.05, 656) / q) * q
    rec = json.loads(json.dumps(RadarFrame("x", amps, quantum=q).to_record()))
    assert "counts" in rec and all(isinstance(c, int) for c in rec["counts"])
    back = RadarFrame.from_record(rec)
    assert back.amplitudes.tobytes() == amps.tobytes()
    # amplitudes that are not multiples of the quantum keep the float form
    rec = RadarFrame("x", amps + 1e-7, quantum=q).to_record()
    assert "amplitudes" in rec
    assert RadarFrame.from_record(json.loads(json.dumps(rec))).amplitudes.tobytes() == (amps + 1e-7).tobytes()


# ---------------------------------------------------------------------- smooth


def test_smooth_constant_and_quadratic():
    c = smooth(frame(np.full(50, 2.5)), 11, 3)
    np.testing.assert_allclose(c.amplitudes, 2.5, atol=1e-12)
    x = np.arange(80, dtype=float)
    q = 0.01 * x**2 - 0.7 * x + 3.0
    np.testing.assert_allclose(smooth(frame(q), 7, 2).amplitudes, q, atol=1e-9)


def test_smooth_impulse_centre_coefficient():
    a = np.zeros(21)
    a[10] = 1.0
    out = smooth(frame(a), 5, 2).amplitudes
    assert out[10] == pytest.approx(17 / 35, abs=1e-12)
    assert out[10] == pytest.approx(polyfit_smooth(a, 5, 2)[10], abs=1e-12)


@pytest.mark.parametrize("window, order", [(5, 2), (11, 3), (9, 4), (7, 0), (13, 6)])
def test_smooth_exact_on_polynomials_up_to_order(window, order, rng):
    x = np.linspace(-1, 1, 60)
    for deg in range(order + 1):
        p = np.polyval(rng.normal(size=deg + 1), x)
        np.testing.assert_allclose(smooth(frame(p), window, order).amplitudes, p, atol=1e-9)


@pytest.mark.parametrize("window, order", [(5, 2), (11, 3), (9, 1)])
def test_smooth_matches_polyfit_oracle(window, order, rng):
    for n in (window, window + 1, 40):
        a = rng.normal(size=n)
        np.testing.assert_allclose(smooth(frame(a), window, order).amplitudes, polyfit_smooth(a, window, order), atol=1e-9)


def test_smooth_rejects_bad_parameters():
    f = frame(np.ones(20))
    with pytest.raises(ValueError):
        smooth(f, 4, 2)
    with pytest.raises(ValueError):
        smooth(f, 5, 5)
    with pytest.raises(ValueError):
        smooth(frame(np.ones(3)), 5, 2)


@given(arrays(float, st.integers(11, 120), elements=st.floats(-5, 5)))
def test_rectify_and_smooth_preserve_length(a):
    f = smooth(rectify(frame(a, "R0")), 11, 3)
    assert f.amplitudes.shape == a.shape and f.sensor_id == "R0"


# ------------------------------------------------------------------- peaks


@pytest.mark.parametrize("b, expected", [(0, 0.0), (100, 0.64), (1, 0.0064)])
def test_bin_to_range(b, expected):
    assert bin_to_range(b, 0.0064) == pytest.approx(expected)


def test_bin_to_range_rejects_negative():
    with pytest.raises(ValueError):
        bin_to_range(-1)


def test_detect_peaks_examples():
    assert detect_peaks(frame(np.zeros(300)), 0.1) == []
    bins = np.arange(300)
    g = np.exp(-0.5 * ((bins - 100) / 4.0) ** 2)
    peaks = detect_peaks(frame(g), 0.5)
    assert len(peaks) == 1
    assert peaks[0].range == pytest.approx(0.64)
    two = np.zeros(300)
    two[100], two[103] = 5.0, 3.0
    peaks = detect_peaks(frame(two), 1.0, min_separation_bins=10)
    assert [p.bin for p in peaks] == [100.0]


def test_detect_peaks_rejects_non_positive_threshold():
    with pytest.raises(ValueError):
        detect_peaks(frame(np.ones(5)), 0.0)


def test_subbin_refinement_on_gaussian():
    bins = np.arange(400)
    for centre in (150.0, 150.3, 150.49, 149.8):
        g = np.exp(-0.5 * ((bins - centre) / 4.0) ** 2)
        (p,) = detect_peaks(frame(g), 0.5, subbin=True)
        assert p.bin == pytest.approx(centre, abs=1e-9)


def _brute_force_peaks(a, thr, sep):
    cand = [i for i in range(1, len(a) - 1) if a[i] > a[i - 1] and a[i] > a[i + 1] and a[i] >= thr]
    kept = []
    for i in sorted(cand, key=lambda i: (-a[i], i)):
        if all(abs(i - j) >= sep for j in kept):
            kept.append(i)
    return sorted(kept)


@given(arrays(float, st.integers(3, 200), elements=st.floats(0, 10)), st.floats(0.1, 8), st.integers(1, 15))
def test_peaks_satisfy_predicates(a, thr, sep):
    peaks = detect_peaks(frame(a), thr, sep)
    idx = [int(p.bin) for p in peaks]
    assert idx == _brute_force_peaks(a, thr, sep)
    for i in idx:
        assert a[i] > a[i - 1] and a[i] > a[i + 1] and a[i] >= thr
    assert all(b - a_ >= sep for a_, b in zip(idx, idx[1:]))


# --------------------------------------------------------------- trilateration


def forward_pair(fov=math.radians(60)):
    a = RadarSensorConfig("A", Pose2D(0.0, 0.0, math.pi / 2), fov, 0.0, 5.0)
    b = RadarSensorConfig("B", Pose2D(0.2, 0.0, math.pi / 2), fov, 0.0, 5.0)
    return a, b


def test_trilaterate_examples():
    a, b = forward_pair()
    p = trilaterate(1.0, 1.0, a, b)
    np.testing.assert_allclose(p.position, [0.1, 0.99499], atol=1e-5)
    assert p.sensors == ("A", "B")
    assert trilaterate(0.05, 0.05, a, b) is None


def test_trilaterate_coincident_sensors():
    a, _ = forward_pair()
    with pytest.raises(ValueError):
        trilaterate(1.0, 1.0, a, a)


def test_trilaterate_round_trip(rng):
    a, b = forward_pair()
    hits = 0
    for _ in range(500):
        p = np.array([rng.uniform(-1.5, 1.7), rng.uniform(0.3, 4.0)])
        if not (a.sees(p) and b.sees(p)):
            continue
        ra = math.hypot(*(p - [0.0, 0.0]))
        rb = math.hypot(*(p - [0.2, 0.0]))
        out = trilaterate(ra, rb, a, b)
        np.testing.assert_allclose(out.position, p, atol=1e-9)
        assert a.sees(out.position) and b.sees(out.position)
        hits += 1
    assert hits > 100


def test_sensor_config_invariants():
    with pytest.raises(ValueError):
        RadarSensorConfig("x", Pose2D(), 0.0, 0.1, 1.0)
    with pytest.raises(ValueError):
        RadarSensorConfig("x", Pose2D(), 0.5, 2.0, 1.0)


def test_preprocess_drops_peaks_outside_sensor_range():
    sensor = RadarSensorConfig("L0", Pose2D(0, 0, math.pi / 2), 1.0, 0.3, 4.0)
    bins = np.arange(700)
    amps = sum(np.exp(-0.5 * ((bins - c) / 4.0) ** 2) for c in (20, 200))  # 0.128 m and 1.28 m
    peaks = preprocess(frame(amps), RadarPipelineConfig(), sensor)
    assert [round(p.range, 2) for p in peaks] == [1.28]


def test_scan_points_recovers_feature():
    sensors = default_radar_sensors()
    pairs = default_sensor_pairs(sensors)
    target = np.array([0.05, 1.2])  # left side of the robot
    bins = np.arange(656)
    frames = {}
    for s in sensors:
        d = math.hypot(target[0] - s.mount.x, target[1] - s.mount.y)
        amps = np.exp(-0.5 * ((bins - d / BIN_RESOLUTION) / 4.0) ** 2) if s.sees(target) else np.zeros(656)
        frames[s.sensor_id] = RadarFrame(s.sensor_id, amps)
    pts = scan_points(frames, pairs, RadarPipelineConfig())
    assert pts.shape == (1, 2)
    np.testing.assert_allclose(pts[0], target, atol=BIN_RESOLUTION)
